"""Dense float64 tensors with reverse-mode gradient support.

Every operation eagerly computes its value and, when any operand has
``requires_grad``, records parents plus a vector-Jacobian closure on the
result. ``backward(loss)`` replays that record in reverse topological
order and returns one gradient per reachable leaf. The op set is exactly
what the encoders, attention stacks, and losses in this package need; no
more. All arithmetic is 64-bit and single-threaded-deterministic: no
non-associative parallel reductions, so seeded runs are bit-reproducible.

Tensors are immutable values (mutating ``.data`` in place voids the
gradient contract); a recorded graph belongs to one training thread.
"""

import numpy as np

from . import kernels


class ShapeMismatch(ValueError):
    """Operand shapes do not conform to the operation's contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def is_leaf(self):
        return self._vjp is None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are wrapped as constants
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


class Parameter(Tensor):
    """Trainable leaf. ``group`` routes it to one optimizer/lr bucket;
    ``update_mask`` (0/1, same shape) pins frozen entries such as padding
    embedding rows."""

    __slots__ = ("group", "update_mask")

    def __init__(self, data, group, name, update_mask=None):
        super().__init__(data, requires_grad=True, name=name)
        self.group = group
        self.update_mask = None if update_mask is None else np.asarray(update_mask, dtype=np.float64)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out, parents, vjp):
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, opname):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b):
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def mul(a, b):
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data)
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are not conformable")
    out = Tensor(np.matmul(a.data, b.data))

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record(out, (a, b), vjp)


def transpose(a, axes=None):
    out = Tensor(np.transpose(a.data, axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _record(out, (a,), lambda g: (np.transpose(g, inv),))


def swap_last2(a):
    if a.ndim < 2:
        raise ShapeMismatch(f"swap_last2: needs >=2 axes, got shape {a.shape}")
    out = Tensor(np.swapaxes(a.data, -1, -2))
    return _record(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors, axis):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), vjp)


def tsum(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return (np.full(a.shape, g),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    n = a.size if axis is None else a.shape[axis]
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(1.0 / n))


def log(a):
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def exp(a):
    e = np.exp(a.data)
    out = Tensor(e)
    return _record(out, (a,), lambda g: (g * e,))


def relu(a):
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0
    return _record(out, (a,), lambda g: (g * mask,))


def sigmoid(a):
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(s)
    return _record(out, (a,), lambda g: (g * s * (1.0 - s),))


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient is zero where the clamp engages."""
    out = Tensor(np.clip(a.data, lo, hi))
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(out, (a,), lambda g: (g * inside,))


def safe_softmax(a, axis=-1):
    """Softmax tolerating -inf entries: slices that are entirely -inf come
    back as all-zero instead of NaN; every other slice sums to 1."""
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - shift)
    z = e.sum(axis=axis, keepdims=True)
    s = e / np.where(z > 0.0, z, 1.0)
    out = Tensor(s)

    def vjp(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (a,), vjp)


def layer_norm(a, gain, offset, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then scale and
    shift. Statistics are strictly per-row, so rows never contaminate each
    other."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + offset.data)
    d = x.shape[-1]

    def vjp(g):
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        red = tuple(range(g.ndim - 1))
        dg = (g * xhat).sum(axis=red) if red else g * xhat
        doff = g.sum(axis=red) if red else g.copy()
        return dx, _unbroadcast(dg, gain.shape), _unbroadcast(doff, offset.shape)

    return _record(out, (a, gain, offset), vjp)


def conv2d(x, w, pad):
    """Stride-1 2-D convolution, NCHW by OIKK weights, zero padding `pad`."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: shapes {x.shape} and {w.shape} are not conformable")
    out = Tensor(kernels.conv2d_forward(x.data, w.data, pad))
    h, wd = x.shape[2], x.shape[3]
    kh, kw = w.shape[2], w.shape[3]

    def vjp(g):
        g = np.ascontiguousarray(g)
        dx = kernels.conv2d_backward_x(g, w.data, pad, h, wd)
        dw = kernels.conv2d_backward_w(x.data, g, pad, kh, kw)
        return dx, dw

    return _record(out, (x, w), vjp)


def maxpool2(x):
    """2x2 max pooling with stride 2; ties route the gradient to the first
    maximum in row-major window order."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeMismatch(f"maxpool2: needs even NCHW spatial dims, got {x.shape}")
    val, arg = kernels.maxpool2_forward(x.data)
    out = Tensor(val)
    h, w = x.shape[2], x.shape[3]

    def vjp(g):
        return (kernels.maxpool2_backward(np.ascontiguousarray(g), arg, h, w),)

    return _record(out, (x,), vjp)


def embedding(table, indices):
    """Row lookup `table[indices]`; gradient scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeMismatch(
            f"embedding: index out of range for table with {table.shape[0]} rows"
        )
    out = Tensor(table.data[idx])

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _record(out, (table,), vjp)


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis))

    def vjp(g):
        parts = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in parts)

    return _record(out, tuple(tensors), vjp)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out):
    """Reverse sweep from a scalar; returns {leaf Tensor: gradient array}
    for every requires_grad leaf reachable from `out`, gradient shaped like
    the leaf."""
    if out.size != 1:
        raise ShapeMismatch(f"backward: output must be scalar, got shape {out.shape}")
    order = _toposort(out)
    grads = {id(out): np.ones_like(out.data)}
    leaves = {}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is None:
            if node.requires_grad:
                leaves[node] = leaves[node] + g if node in leaves else g
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg
    return leaves
