import math

import numpy as np
import pytest

import modalmask.engine.tensor as T
from modalmask.engine import kernels
from modalmask.engine.tensor import Parameter, ShapeMismatch, Tensor, backward


def t(x, rg=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=rg)


def test_matmul_identity():
    out = T.matmul(t(np.eye(2)), t([[3.0, 4.0], [5.0, 6.0]]))
    assert np.array_equal(out.data, [[3.0, 4.0], [5.0, 6.0]])


def test_relu_definition():
    assert np.array_equal(T.relu(t([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_matmul_hand_case():
    assert np.array_equal(T.matmul(t([[1.0, 2.0]]), t([[3.0], [4.0]])).data, [[11.0]])


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ShapeMismatch) as e:
        T.matmul(t(np.zeros((2, 3))), t(np.zeros((2, 3))))
    assert "(2, 3)" in str(e.value)
    with pytest.raises(ShapeMismatch) as e:
        T.add(t(np.zeros((2, 3))), t(np.zeros((4,))))
    assert "(2, 3)" in str(e.value) and "(4,)" in str(e.value)


def test_safe_softmax_symmetric():
    assert np.allclose(T.safe_softmax(t([0.0, 0.0])).data, [0.5, 0.5])


def test_safe_softmax_all_masked_row_is_zero():
    out = T.safe_softmax(t([-np.inf, -np.inf])).data
    assert np.array_equal(out, [0.0, 0.0])


def test_safe_softmax_closed_form():
    # oracle: e^x / sum e^x
    x = np.array([1.0, 2.0])
    expect = np.exp(x) / np.exp(x).sum()
    assert np.allclose(T.safe_softmax(t(x)).data, expect, atol=1e-12)
    assert abs(T.safe_softmax(t(x)).data[0] - 0.26894) < 1e-4


def test_safe_softmax_rows_sum_one_or_zero_never_nan():
    rng = np.random.default_rng(0)
    for _ in range(50):
        x = rng.normal(size=(5, 6))
        mask = rng.uniform(size=(5, 6)) < 0.4
        x[mask] = -np.inf
        out = T.safe_softmax(t(x), axis=-1).data
        assert not np.isnan(out).any()
        sums = out.sum(axis=-1)
        for i, s in enumerate(sums):
            if np.isinf(x[i]).all():
                assert s == 0.0
            else:
                assert abs(s - 1.0) < 1e-12


def test_backward_square():
    x = t(3.0, rg=True)
    grads = backward(T.mul(x, x))
    assert grads[x] == 6.0


def test_backward_inactive_relu_branch():
    x = t(2.0, rg=True)
    grads = backward(T.relu(T.neg(x)))
    assert grads[x] == 0.0


def test_backward_requires_scalar():
    x = t([1.0, 2.0], rg=True)
    with pytest.raises(ShapeMismatch):
        backward(T.add(x, x))


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(2)
    w = Parameter(rng.normal(size=(3, 3)), "g", "w")
    x = t(rng.normal(size=(3, 1)))

    def f():
        return T.tmean(T.sigmoid(T.matmul(w, x)))

    grads = backward(f())[w]
    eps = 1e-5
    for i in range(3):
        for j in range(3):
            orig = w.data[i, j]
            w.data[i, j] = orig + eps
            hi = f().item()
            w.data[i, j] = orig - eps
            lo = f().item()
            w.data[i, j] = orig
            fd = (hi - lo) / (2 * eps)
            assert abs(grads[i, j] - fd) / max(abs(grads[i, j]), 1e-8) < 1e-4


def test_reshape_transpose_roundtrip_bits():
    rng = np.random.default_rng(3)
    x = t(rng.normal(size=(4, 6)))
    back = T.reshape(T.reshape(x, (2, 12)), (4, 6))
    assert np.array_equal(back.data, x.data)
    twice = T.transpose(T.transpose(x))
    assert np.array_equal(twice.data, x.data)


def _gradcheck(build, params, eps=1e-5, tol=1e-4):
    grads = backward(build())
    for p in params:
        g = grads.get(p)
        assert g is not None
        flat = p.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = build().item()
            flat[i] = orig - eps
            lo = build().item()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            a = g.ravel()[i]
            assert abs(a - fd) / max(abs(a), 1e-8) < tol, f"{p.name}[{i}]"


def test_randomized_op_gradients():
    rng = np.random.default_rng(4)

    cases = []
    a = Parameter(rng.normal(size=(3, 4)), "g", "a")
    b = Parameter(rng.normal(size=(3, 4)), "g", "b")
    cases.append((lambda: T.tmean(T.mul(T.add(a, b), T.exp(T.mul(a, Tensor(0.3))))), [a, b]))
    m1 = Parameter(rng.normal(size=(2, 5)), "g", "m1")
    m2 = Parameter(rng.normal(size=(5, 3)), "g", "m2")
    cases.append((lambda: T.tsum(T.relu(T.matmul(m1, m2))), [m1, m2]))
    lg = Parameter(rng.uniform(0.5, 2.0, size=(4,)), "g", "lg")
    cases.append((lambda: T.tsum(T.log(lg)), [lg]))
    sm = Parameter(rng.normal(size=(3, 5)), "g", "sm")
    sm_c = Tensor(rng.normal(size=(3, 5)))
    cases.append((lambda: T.tmean(T.mul(T.safe_softmax(sm, axis=-1), sm_c)), [sm]))
    ln_x = Parameter(rng.normal(size=(4, 6)), "g", "ln_x")
    ln_g = Parameter(rng.uniform(0.5, 1.5, size=(6,)), "g", "ln_g")
    ln_b = Parameter(rng.normal(size=(6,)), "g", "ln_b")
    cases.append((lambda: T.tmean(T.sigmoid(T.layer_norm(ln_x, ln_g, ln_b))), [ln_x, ln_g, ln_b]))
    c1 = Parameter(rng.normal(size=(2, 3)), "g", "c1")
    c2 = Parameter(rng.normal(size=(2, 2)), "g", "c2")
    cases.append((lambda: T.tsum(T.sigmoid(T.concat([c1, c2], axis=1))), [c1, c2]))
    cw = Parameter(rng.normal(size=(2, 1, 3, 3)) * 0.5, "g", "cw")
    cx = Parameter(rng.normal(size=(2, 1, 4, 4)), "g", "cx")
    cases.append((lambda: T.tmean(T.maxpool2(T.conv2d(cx, cw, 1))), [cw, cx]))
    tab = Parameter(rng.normal(size=(5, 4)), "g", "tab")
    idx = np.array([0, 2, 4, 2])
    tab_c = Tensor(rng.normal(size=(4, 4)))
    cases.append((lambda: T.tsum(T.mul(T.embedding(tab, idx), tab_c)), [tab]))
    cl = Parameter(rng.normal(size=(6,)), "g", "cl")
    cases.append((lambda: T.tsum(T.clip(cl, -0.5, 0.5)), [cl]))
    st1 = Parameter(rng.normal(size=(3,)), "g", "st1")
    st2 = Parameter(rng.normal(size=(3,)), "g", "st2")
    st_c = Tensor(rng.normal(size=(2, 3)))
    cases.append((lambda: T.tmean(T.mul(T.stack([st1, st2], axis=0), st_c)), [st1, st2]))

    for build, params in cases:
        _gradcheck(build, params)


def test_embedding_rejects_out_of_range():
    tab = Parameter(np.zeros((3, 2)), "g", "tab")
    with pytest.raises(ShapeMismatch):
        T.embedding(tab, np.array([0, 3]))


def test_gradient_accumulates_over_reuse():
    x = t(2.0, rg=True)
    y = T.add(T.mul(x, x), T.mul(x, Tensor(3.0)))  # x^2 + 3x -> 2x + 3 = 7
    assert backward(y)[x] == 7.0


def test_kernel_backends_agree():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(2, 3, 6, 6))
    w = rng.normal(size=(4, 3, 3, 3))
    fwd = kernels.conv2d_forward(x, w, 1)
    assert np.allclose(fwd, kernels.conv2d_forward_numpy(x, w, 1), atol=1e-12)
    dy = rng.normal(size=fwd.shape)
    assert np.allclose(kernels.conv2d_backward_w(x, dy, 1, 3, 3),
                       kernels.conv2d_backward_w_numpy(x, dy, 1, 3, 3), atol=1e-12)
    assert np.allclose(kernels.conv2d_backward_x(dy, w, 1, 6, 6),
                       kernels.conv2d_backward_x_numpy(dy, w, 1, 6, 6), atol=1e-12)
    xp = rng.normal(size=(2, 3, 4, 4))
    o1, a1 = kernels.maxpool2_forward(xp)
    o2, a2 = kernels.maxpool2_forward_numpy(xp)
    assert np.array_equal(o1, o2) and np.array_equal(a1, a2)
    dyp = rng.normal(size=o1.shape)
    assert np.array_equal(kernels.maxpool2_backward(dyp, a1, 4, 4),
                          kernels.maxpool2_backward_numpy(dyp, a2, 4, 4))
