"""Self-attention in which unavailable tokens neither send nor receive.

The weight matrix is ReLU(Softmax(q k^T / sqrt(d_h) + log M) + log M^T)
with M the row-replicated availability matrix: the log-mask on the logits
removes missing keys from every softmax, and the transposed log-mask plus
the ReLU zeroes the rows of missing queries after the softmax. Encoder
layers re-apply a row mask after each sub-layer so that residual streams
and layer-norm offsets cannot resurrect missing tokens; consequently the
outputs at available positions are identical to running the stack on the
compacted sequence of available tokens alone.

All functions accept a single sequence (L x d, avail length L) or a batch
(B x L x d, avail B x L).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .engine import tensor as T
from .engine.tensor import Parameter, ShapeMismatch, Tensor


def log_mask(avail):
    """0 where available, -inf where not (log of the binary mask)."""
    avail = np.asarray(avail, dtype=np.float64)
    return np.where(avail > 0, 0.0, -np.inf)


def row_mask(x, avail):
    """Multiply every token row by its availability bit."""
    return T.mul(x, Tensor(np.asarray(avail, dtype=np.float64)[..., None]))


def masked_attention(q, k, v, avail):
    """Single-head doubly-masked attention over L x d_h inputs (leading
    batch/head axes broadcast; avail aligns with the leading axes of q)."""
    q, k, v = (x if isinstance(x, Tensor) else Tensor(x) for x in (q, k, v))
    if q.shape[-2] != k.shape[-2] or q.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"masked_attention: token counts differ: {q.shape}, {k.shape}, {v.shape}")
    lm = log_mask(avail)
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = T.mul(T.matmul(q, T.swap_last2(k)), Tensor(scale))
    logits = T.add(logits, Tensor(lm[..., None, :]))
    weights = T.safe_softmax(logits, axis=-1)
    weights = T.relu(T.add(weights, Tensor(lm[..., :, None])))
    return T.matmul(weights, v), weights


@dataclass
class EncoderLayerParams:
    """One post-norm transformer encoder layer: fused QKV/output
    projections, a two-layer ReLU feed-forward, and two layer norms."""

    n_heads: int
    wq: Parameter
    bq: Parameter
    wk: Parameter
    bk: Parameter
    wv: Parameter
    bv: Parameter
    wo: Parameter
    bo: Parameter
    w1: Parameter
    b1: Parameter
    w2: Parameter
    b2: Parameter
    ln1_g: Parameter
    ln1_b: Parameter
    ln2_g: Parameter
    ln2_b: Parameter

    @property
    def d(self):
        return self.wq.shape[0]

    def parameters(self):
        return [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo,
            self.w1, self.b1, self.w2, self.b2,
            self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b,
        ]


def init_encoder_layer(d, n_heads, rng, group, name, ffn_mult=4):
    """Fresh layer parameters: N(0, 1/sqrt(fan_in)) weights, zero biases,
    identity layer norms."""
    if d % n_heads:
        raise ShapeMismatch(f"model width {d} not divisible by head count {n_heads}")
    h = ffn_mult * d

    def w(rows, cols, tag):
        return Parameter(rng.normal(0.0, 1.0 / math.sqrt(rows), size=(rows, cols)), group, f"{name}/{tag}")

    def b(n, tag):
        return Parameter(np.zeros(n), group, f"{name}/{tag}")

    return EncoderLayerParams(
        n_heads=n_heads,
        wq=w(d, d, "wq"), bq=b(d, "bq"),
        wk=w(d, d, "wk"), bk=b(d, "bk"),
        wv=w(d, d, "wv"), bv=b(d, "bv"),
        wo=w(d, d, "wo"), bo=b(d, "bo"),
        w1=w(d, h, "w1"), b1=b(h, "b1"),
        w2=w(h, d, "w2"), b2=b(d, "b2"),
        ln1_g=Parameter(np.ones(d), group, f"{name}/ln1_g"),
        ln1_b=b(d, "ln1_b"),
        ln2_g=Parameter(np.ones(d), group, f"{name}/ln2_g"),
        ln2_b=b(d, "ln2_b"),
    )


def _split_heads(x, n_heads):
    # (..., L, d) -> (..., h, L, d_h)
    lead = x.shape[:-2]
    L, d = x.shape[-2], x.shape[-1]
    x = T.reshape(x, lead + (L, n_heads, d // n_heads))
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return T.transpose(x, perm)


def _join_heads(x):
    # (..., h, L, d_h) -> (..., L, d)
    lead = x.shape[:-3]
    h, L, dh = x.shape[-3], x.shape[-2], x.shape[-1]
    perm = tuple(range(len(lead))) + (len(lead) + 1, len(lead), len(lead) + 2)
    return T.reshape(T.transpose(x, perm), lead + (L, h * dh))


def multi_head_masked_attention(x, params, avail, attn_sink=None):
    """Per-head doubly-masked attention, concatenated and projected, with
    the availability row mask re-applied so the output-projection bias
    cannot leak into missing rows. The mask is shared across heads.

    `attn_sink`, when given, receives the detached weight array
    (..., heads, L, L) for attribution."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    d = x.shape[-1]
    if d % params.n_heads:
        raise ShapeMismatch(f"model width {d} not divisible by head count {params.n_heads}")
    avail = np.asarray(avail, dtype=np.float64)
    q = T.add(T.matmul(x, params.wq), params.bq)
    k = T.add(T.matmul(x, params.wk), params.bk)
    v = T.add(T.matmul(x, params.wv), params.bv)
    qh, kh, vh = (_split_heads(t, params.n_heads) for t in (q, k, v))
    out, weights = masked_attention(qh, kh, vh, avail[..., None, :])
    if attn_sink is not None:
        attn_sink.append(weights.data.copy())
    out = _join_heads(out)
    out = T.add(T.matmul(out, params.wo), params.bo)
    return row_mask(out, avail)


def _ffn(x, params):
    h = T.relu(T.add(T.matmul(x, params.w1), params.b1))
    return T.add(T.matmul(h, params.w2), params.b2)


def masked_encoder_layer(x, params, avail, attn_sink=None):
    """out = RowMask(LN(h + FFN(h))), h = RowMask(LN(x + MHA(x))).

    Missing rows are exactly zero on exit regardless of the input, and
    available rows match the layer run on the compacted sequence."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    att = multi_head_masked_attention(x, params, avail, attn_sink)
    h = T.layer_norm(T.add(x, att), params.ln1_g, params.ln1_b)
    h = row_mask(h, avail)
    out = T.layer_norm(T.add(h, _ffn(h, params)), params.ln2_g, params.ln2_b)
    return row_mask(out, avail)


def masked_encoder_stack(x, layers, avail, attn_sink=None):
    """Sequential masked encoder layers sharing one availability pattern."""
    for layer in layers:
        x = masked_encoder_layer(x, layer, avail, attn_sink)
    return x
