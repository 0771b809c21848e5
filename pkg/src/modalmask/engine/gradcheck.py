"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .tensor import backward


class NonFiniteEvaluation(RuntimeError):
    """f produced a non-finite value at a perturbed point."""


def finite_diff_check(f, params, eps=1e-5, max_coords_per_param=None, rng=None):
    """Max relative error between analytic gradients and central differences.

    `f(params) -> scalar Tensor` is evaluated once for the analytic
    gradients and twice per checked coordinate for the differences. The
    error at a coordinate is |analytic - fd| / max(|analytic|, 1e-8) and
    the maximum over all checked coordinates is returned. By default every
    coordinate of every parameter is checked; `max_coords_per_param` with
    an `rng` subsamples coordinates for large parameter sets.
    """
    out = f(params)
    if out.size != 1:
        raise ValueError("finite_diff_check: f must return a scalar")
    grads = backward(out)
    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat_idx = np.arange(p.data.size)
        if max_coords_per_param is not None and p.data.size > max_coords_per_param:
            flat_idx = rng.choice(p.data.size, size=max_coords_per_param, replace=False)
            flat_idx.sort()
        base = p.data.ravel()
        for i in flat_idx:
            orig = base[i]
            base[i] = orig + eps
            hi = f(params).item()
            base[i] = orig - eps
            lo = f(params).item()
            base[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteEvaluation(
                    f"non-finite evaluation at {p.name or 'param'}[{i}]: f+={hi}, f-={lo}"
                )
            fd = (hi - lo) / (2.0 * eps)
            a = analytic.ravel()[i]
            err = abs(a - fd) / max(abs(a), 1e-8)
            if err > worst:
                worst = err
    return worst
