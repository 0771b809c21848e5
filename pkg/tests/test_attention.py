import math

import numpy as np
import pytest

import modalmask.engine.tensor as T
from modalmask.attention import (
    init_encoder_layer,
    masked_attention,
    masked_encoder_layer,
    masked_encoder_stack,
    multi_head_masked_attention,
)
from modalmask.engine.tensor import ShapeMismatch, Tensor, backward


def softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def reference_attention(q, k, v):
    return softmax_rows(q @ k.T / math.sqrt(q.shape[-1])) @ v


def test_single_head_full_availability():
    q = np.array([[1.0], [2.0]])
    out, _ = masked_attention(q, q, q, [1, 1])
    # closed-form softmax oracle
    assert np.allclose(out.data, reference_attention(q, q, q), atol=1e-12)
    assert np.allclose(out.data.ravel(), [1.7311, 1.8808], atol=1e-4)


def test_single_head_one_key_masked():
    q = np.array([[1.0], [2.0]])
    out, w = masked_attention(q, q, q, [1, 0])
    # row 1 attends only to key 1; row 2 is zeroed by the transposed mask + relu
    assert np.array_equal(out.data, [[1.0], [0.0]])
    assert np.array_equal(w.data, [[1.0, 0.0], [0.0, 0.0]])


def test_all_ones_equals_unmasked():
    rng = np.random.default_rng(1)
    q, k, v = (rng.normal(size=(6, 4)) for _ in range(3))
    out, _ = masked_attention(q, k, v, np.ones(6))
    assert np.abs(out.data - reference_attention(q, k, v)).max() < 1e-12


def test_relu_neutral_for_available_rows():
    rng = np.random.default_rng(2)
    q, k, v = (rng.normal(size=(5, 3)) for _ in range(3))
    avail = np.array([1.0, 1.0, 0.0, 1.0, 1.0])
    _, w = masked_attention(q, k, v, avail)
    live = avail > 0
    logits = q @ k.T / math.sqrt(3)
    logits[:, ~live] = -np.inf
    expect = softmax_rows(logits)
    assert np.abs(w.data[live] - expect[live]).max() < 1e-12


def _mh_reference(x, p, n_heads):
    # independent plain-numpy multi-head oracle (no masking)
    q = x @ p.wq.data + p.bq.data
    k = x @ p.wk.data + p.bk.data
    v = x @ p.wv.data + p.bv.data
    d_h = x.shape[-1] // n_heads
    outs = []
    for h in range(n_heads):
        sl = slice(h * d_h, (h + 1) * d_h)
        outs.append(reference_attention(q[:, sl], k[:, sl], v[:, sl]))
    return np.concatenate(outs, axis=-1) @ p.wo.data + p.bo.data


def test_multi_head_matches_reference_when_unmasked():
    rng = np.random.default_rng(3)
    p = init_encoder_layer(8, 2, rng, "g", "l")
    x = rng.normal(size=(5, 8))
    out = multi_head_masked_attention(Tensor(x), p, np.ones(5))
    assert np.abs(out.data - _mh_reference(x, p, 2)).max() < 1e-9


def test_single_head_count_degenerates():
    rng = np.random.default_rng(4)
    p = init_encoder_layer(6, 1, rng, "g", "l")
    x = rng.normal(size=(4, 6))
    avail = np.array([1.0, 0.0, 1.0, 1.0])
    out = multi_head_masked_attention(Tensor(x), p, avail)
    q = T.add(T.matmul(Tensor(x), p.wq), p.bq)
    k = T.add(T.matmul(Tensor(x), p.wk), p.bk)
    v = T.add(T.matmul(Tensor(x), p.wv), p.bv)
    att, _ = masked_attention(q, k, v, avail)
    manual = T.add(T.matmul(att, p.wo), p.bo)
    expect = manual.data * avail[:, None]
    assert np.abs(out.data - expect).max() < 1e-12


def test_multi_head_masks_all_but_first_row():
    rng = np.random.default_rng(5)
    p = init_encoder_layer(8, 4, rng, "g", "l")
    x = rng.normal(size=(6, 8))
    avail = np.zeros(6)
    avail[0] = 1.0
    out = multi_head_masked_attention(Tensor(x), p, avail)
    assert np.array_equal(out.data[1:], np.zeros((5, 8)))


def test_multi_head_rejects_indivisible_width():
    rng = np.random.default_rng(6)
    with pytest.raises(ShapeMismatch):
        init_encoder_layer(8, 3, rng, "g", "l")


def test_encoder_layer_zero_ffn_is_layernormed_attention():
    rng = np.random.default_rng(7)
    p = init_encoder_layer(8, 2, rng, "g", "l")
    p.w1.data = np.zeros_like(p.w1.data)
    p.b1.data = np.zeros_like(p.b1.data)
    p.w2.data = np.zeros_like(p.w2.data)
    p.b2.data = np.zeros_like(p.b2.data)
    x = rng.normal(size=(5, 8))
    avail = np.ones(5)
    out = masked_encoder_layer(Tensor(x), p, avail)
    att = multi_head_masked_attention(Tensor(x), p, avail)
    h = T.layer_norm(T.add(Tensor(x), att), p.ln1_g, p.ln1_b)
    # second layer norm of an already-normalized row is identity up to eps
    assert np.abs(out.data - h.data).max() < 1e-3


def test_encoder_layer_masked_row_exactly_zero():
    rng = np.random.default_rng(8)
    p = init_encoder_layer(8, 2, rng, "g", "l")
    x = rng.normal(size=(2, 8))
    out = masked_encoder_layer(Tensor(x), p, np.array([1.0, 0.0]))
    assert np.array_equal(out.data[1], np.zeros(8))


def test_subsequence_equivalence_stack():
    rng = np.random.default_rng(9)
    layers = [init_encoder_layer(8, 2, rng, "g", f"l{i}") for i in range(2)]
    for trial in range(10):
        L = int(rng.integers(2, 8))
        avail = (rng.uniform(size=L) < 0.6).astype(float)
        if avail.sum() == 0:
            avail[int(rng.integers(L))] = 1.0
        x = rng.normal(size=(L, 8))
        full = masked_encoder_stack(Tensor(x), layers, avail)
        sub = masked_encoder_stack(Tensor(x[avail > 0]), layers, np.ones(int(avail.sum())))
        assert np.abs(full.data[avail > 0] - sub.data).max() < 1e-9
        assert np.array_equal(full.data[avail == 0], np.zeros((int((avail == 0).sum()), 8)))


def test_gradient_isolation_masked_inputs_and_params():
    rng = np.random.default_rng(10)
    layers = [init_encoder_layer(8, 2, rng, "g", f"l{i}") for i in range(2)]
    x = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
    avail = np.array([1.0, 0.0, 1.0, 0.0, 1.0])
    out = masked_encoder_stack(x, layers, avail)
    loss = T.tmean(T.mul(out, Tensor(rng.normal(size=(5, 8)))))
    grads = backward(loss)
    gx = grads[x]
    assert np.array_equal(gx[avail == 0], np.zeros((2, 8)))
    assert np.abs(gx[avail > 0]).max() > 0


def test_batched_matches_per_sample():
    rng = np.random.default_rng(11)
    layers = [init_encoder_layer(8, 2, rng, "g", f"l{i}") for i in range(2)]
    x = rng.normal(size=(3, 4, 8))
    avail = np.array([[1, 1, 0, 1], [1, 0, 0, 1], [1, 1, 1, 1]], dtype=float)
    batch = masked_encoder_stack(Tensor(x), layers, avail)
    for b in range(3):
        single = masked_encoder_stack(Tensor(x[b]), layers, avail[b])
        assert np.abs(batch.data[b] - single.data).max() < 1e-12


def test_attention_sink_records_weights():
    rng = np.random.default_rng(12)
    layers = [init_encoder_layer(8, 2, rng, "g", f"l{i}") for i in range(2)]
    x = rng.normal(size=(2, 4, 8))
    avail = np.ones((2, 4))
    sink = []
    masked_encoder_stack(Tensor(x), layers, avail, attn_sink=sink)
    assert len(sink) == 2
    assert sink[0].shape == (2, 2, 4, 4)
    assert np.allclose(sink[0].sum(axis=-1), 1.0, atol=1e-12)
