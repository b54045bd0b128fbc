"""Dense tensors with reverse-mode differentiation.

Every operation returns a new :class:`Tensor` that remembers its parents and
a closure mapping the output gradient to one gradient per parent. Calling
:meth:`Tensor.backward` on a scalar replays those closures in reverse
topological order. Leaf tensors with ``requires_grad`` accumulate into
``.grad`` until :meth:`Tensor.zero_grad` clears it.

Activations use the ``(B, C, T, N)`` layout (batch, channels, frames,
joints); the single-sample ``(C, T, N)`` form is accepted wherever the
operation is defined per sample.
"""

import contextlib

import numpy as np

from . import _kernels

DEFAULT_DTYPE = np.float64

# When a list, piecewise operations (relu, frame gathering) append the branch
# they took, so gradient checks can tell whether a probe crossed a kink.
_patterns = None


@contextlib.contextmanager
def recording_patterns():
    global _patterns
    saved, _patterns = _patterns, []
    try:
        yield _patterns
    finally:
        _patterns = saved


def _note(pattern):
    if _patterns is not None:
        _patterns.append(np.packbits(pattern).tobytes() if pattern.dtype == bool
                         else pattern.tobytes())


class ShapeError(ValueError):
    """Operand extents are incompatible with the requested operation."""


class Tensor:
    """A numpy array plus the bookkeeping needed for backpropagation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        if dtype is None:
            dtype = getattr(data, "dtype", None)
            if dtype not in (np.float32, np.float64):
                dtype = DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype, copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @classmethod
    def _from_op(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.op = op
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self):
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if self.data.size != 1 or self.data.ndim > 1:
            raise ShapeError(f"backward needs a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("tensor does not depend on any requires_grad leaf")
        order = computation_record(self)
        pending = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def computation_record(root):
    """Nodes reachable from ``root`` in forward (topological) order.

    Each node appears once, so replaying the list backwards visits every
    operation exactly one time.
    """
    order, seen = [], set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _coerce(a, b):
    a_t, b_t = isinstance(a, Tensor), isinstance(b, Tensor)
    if a_t and not b_t:
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif b_t and not a_t:
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif not a_t and not b_t:
        a, b = Tensor(a), Tensor(b)
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._from_op(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _coerce(a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._from_op(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _coerce(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad * bd, (a, b), backward, "mul")


def tsum(x, axis=None, keepdims=False):
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._from_op(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)),
                           (x,), backward, "sum")


def mean(x, axis=None, keepdims=False):
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return mul(tsum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return Tensor._from_op(x.data.reshape(shape), (x,), backward, "reshape")


def transpose(x, axes=None):
    """Permute axes (reverse them when ``axes`` is None)."""
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.ascontiguousarray(g.transpose(inverse)),)

    return Tensor._from_op(np.ascontiguousarray(x.data.transpose(axes)), (x,), backward,
                           "transpose")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis),
                           tensors, backward, "concat")


def matmul(a, b):
    """Matrix product of 2-D operands, or a 1-D row vector times a matrix."""
    a, b = _coerce(a, b)
    if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        if ad.ndim == 1:
            return g @ bd.T, np.outer(ad, g)
        return g @ bd.T, ad.T @ g

    return Tensor._from_op(ad @ bd, (a, b), backward, "matmul")


def matmul_last(x, m):
    """Contract the last (joint) axis: ``out[..., i] = sum_j x[..., j] * m[j, i]``."""
    x, m = _coerce(x, m)
    n = x.shape[-1]
    if m.ndim != 2 or m.shape != (n, n):
        raise ShapeError(f"matmul_last: expected a {n}x{n} matrix, got {m.shape}")
    xd, md = x.data, m.data

    def backward(g):
        gx = g @ md.T if x.requires_grad else None
        gm = None
        if m.requires_grad:
            gm = xd.reshape(-1, n).T @ g.reshape(-1, n)
        return gx, gm

    return Tensor._from_op(xd @ md, (x, m), backward, "matmul_last")


def conv2d(x, kernel, bias=None, stride_t=1, pad_t=0):
    """Cross-correlation along frames with a ``(C_out, C_in, k_t, 1)`` kernel.

    ``x`` is ``(C_in, T, N)`` or ``(B, C_in, T, N)``; padding is applied
    symmetrically on the frame axis only, so the joint extent is preserved.
    """
    x, kernel = _coerce(x, kernel)
    squeeze = x.ndim == 3
    if x.ndim not in (3, 4):
        raise ShapeError(f"conv2d: input must be (C,T,N) or (B,C,T,N), got {x.shape}")
    if kernel.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be 4-D, got {kernel.shape}")
    c_out, c_in, k_t, k_n = kernel.shape
    if k_n != 1:
        raise ShapeError("conv2d: only k_n = 1 kernels are supported")
    xd = x.data[None] if squeeze else x.data
    if xd.shape[1] != c_in:
        raise ShapeError(f"conv2d: kernel expects {c_in} input channels, got {xd.shape[1]}")
    t = xd.shape[2]
    if stride_t < 1:
        raise ValueError("conv2d: stride_t must be >= 1")
    if k_t > t + 2 * pad_t:
        raise ShapeError(f"conv2d: kernel length {k_t} exceeds padded extent {t + 2 * pad_t}")
    dtype = np.result_type(xd, kernel.data)
    xd = np.ascontiguousarray(xd, dtype=dtype)
    w3 = np.ascontiguousarray(kernel.data[..., 0], dtype=dtype)
    out = _kernels.temporal_conv_forward(xd, w3, stride_t, pad_t)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"conv2d: bias must have shape ({c_out},), got {bias.shape}")
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def backward(g):
        g4 = np.ascontiguousarray(g[None] if squeeze else g)
        gx = gw = gb = None
        if x.requires_grad:
            gx = _kernels.temporal_conv_backward_input(g4, w3, t, stride_t, pad_t)
            gx = gx[0] if squeeze else gx
        if kernel.requires_grad:
            gw = _kernels.temporal_conv_backward_weight(g4, xd, k_t, stride_t, pad_t)[..., None]
        if bias is not None and bias.requires_grad:
            gb = g4.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    return Tensor._from_op(out[0] if squeeze else out, parents, backward, "conv2d")


def batch_norm(x, gamma, beta, running_mean, running_var, training,
               momentum=0.1, eps=1e-5):
    """Per-channel standardization followed by ``gamma * x_hat + beta``.

    The channel axis is 1 for batched input and 0 for a single sample.
    ``running_mean``/``running_var`` are numpy arrays updated in place in
    training mode (unbiased variance, as in the usual running estimate).
    """
    x, gamma = _coerce(x, gamma)
    beta = as_tensor(beta)
    axis = 1 if x.ndim == 4 else 0
    c = x.shape[axis]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: affine parameters must have shape ({c},)")
    red = tuple(i for i in range(x.ndim) if i != axis)
    view = [1] * x.ndim
    view[axis] = c
    xd = x.data
    if training:
        mu = xd.mean(axis=red)
        var = xd.var(axis=red)
        count = xd.size // c
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        unbiased = var * count / (count - 1) if count > 1 else var
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(view)) * inv.reshape(view)
    out = gamma.data.reshape(view) * xhat + beta.data.reshape(view)
    gd = gamma.data

    def backward(g):
        gg = (g * xhat).sum(axis=red)
        gbeta = g.sum(axis=red)
        gx = None
        if x.requires_grad:
            scale = (gd * inv).reshape(view)
            if training:
                m = xd.size // c
                gx = scale * (g - gbeta.reshape(view) / m - xhat * gg.reshape(view) / m)
            else:
                gx = scale * g
        return gx, gg, gbeta

    return Tensor._from_op(out.astype(xd.dtype, copy=False), (x, gamma, beta), backward,
                           "batch_norm")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    _note(mask)

    def backward(g):
        return (g * mask,)

    # NaN passes through so divergence stays visible downstream
    out = np.where(mask | np.isnan(x.data), x.data, 0.0).astype(x.dtype, copy=False)
    return Tensor._from_op(out, (x,), backward, "relu")


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    xd = x.data
    e = np.exp(-np.abs(xd))
    s = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor._from_op(s, (x,), backward, "sigmoid")


def global_avg_pool(x):
    """Mean over frames and joints: ``(C,T,N) -> (C,)``, ``(B,C,T,N) -> (B,C)``."""
    x = as_tensor(x)
    if x.ndim not in (3, 4):
        raise ShapeError(f"global_avg_pool: expected (C,T,N) or (B,C,T,N), got {x.shape}")
    return mean(x, axis=(x.ndim - 2, x.ndim - 1))


def gather_frames(x, indices):
    """Pick frames per sample: ``x`` is ``(B,C,T,N)``, ``indices`` is ``(B,K)``."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    b, c, t, n = x.shape
    if idx.ndim != 2 or idx.shape[0] != b:
        raise ShapeError(f"gather_frames: indices must be ({b}, K), got {idx.shape}")
    _note(idx)
    rows = np.arange(b)[:, None]
    out = x.data[rows, :, idx, :]            # (B, K, C, N)
    out = np.ascontiguousarray(out.transpose(0, 2, 1, 3))

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (rows, slice(None), idx, slice(None)), g.transpose(0, 2, 1, 3))
        return (gx,)

    return Tensor._from_op(out, (x,), backward, "gather_frames")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    top = np.argmax(x.data, axis=axis)
    shifted = x.data - np.take_along_axis(x.data, np.expand_dims(top, axis), axis)
    # log1p over the non-maximal terms keeps precision for confident logits
    rest = np.exp(shifted)
    np.put_along_axis(rest, np.expand_dims(top, axis), 0.0, axis)
    lse = np.log1p(rest.sum(axis=axis, keepdims=True))
    out = shifted - lse
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward, "log_softmax")


def pick(x, indices):
    """``out[b] = x[b, indices[b]]`` for a 2-D tensor."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(x.shape[0])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[rows, idx] = g
        return (gx,)

    return Tensor._from_op(x.data[rows, idx], (x,), backward, "pick")


def _leaves(point):
    if isinstance(point, (list, tuple)):
        return [np.array(p, dtype=DEFAULT_DTYPE) for p in point], True
    return [np.array(point, dtype=DEFAULT_DTYPE)], False


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _evaluate(loss_fn):
    with recording_patterns() as patterns:
        value = loss_fn().item()
    return value, patterns


def check_tensors(loss_fn, tensors, step=1e-5, max_coords=None, rng=None, skipped=None):
    """Compare backprop gradients of ``loss_fn()`` with central differences.

    ``tensors`` is a dict of named leaf tensors that ``loss_fn`` reads; their
    data is perturbed in place and restored. When ``max_coords`` is given, at
    most that many randomly chosen coordinates per tensor are probed.

    A probe whose +/- step changes any relu sign pattern or frame selection
    has crossed a point of non-differentiability; it is left out and counted
    in ``skipped[name]`` when a dict is passed. Returns
    ``{name: max relative error}``.
    """
    for t in tensors.values():
        t.zero_grad()
    with recording_patterns() as base:
        loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for name, t in tensors.items()}
    rng = rng if rng is not None else np.random.default_rng(0)
    errors = {}
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
        worst, dropped = 0.0, 0
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up, pat_up = _evaluate(loss_fn)
            flat[i] = orig - step
            down, pat_down = _evaluate(loss_fn)
            flat[i] = orig
            if pat_up != base or pat_down != base:
                dropped += 1
                continue
            numeric = (up - down) / (2 * step)
            worst = max(worst, relative_error(analytic[name].reshape(-1)[i], numeric))
        errors[name] = worst
        if skipped is not None:
            skipped[name] = dropped
        t.zero_grad()
    return errors


def grad_check(function, point, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``function`` maps one Tensor (or a sequence of them, matching ``point``)
    to a scalar Tensor. The error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    arrays, multi = _leaves(point)
    tensors = {str(i): Tensor(a, requires_grad=True) for i, a in enumerate(arrays)}
    args = list(tensors.values())

    def loss():
        return function(args) if multi else function(args[0])

    errors = check_tensors(loss, tensors, step)
    return max(errors.values()) if errors else 0.0
