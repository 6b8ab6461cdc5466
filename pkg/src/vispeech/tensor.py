"""Reverse-mode automatic differentiation over numpy buffers.

A ``Tensor`` wraps a row-major float32 (or float64, for checking) numpy
array together with an optional gradient buffer.  Primitive operations
build a computation graph on the fly; calling :meth:`Tensor.backward` on a
scalar result walks the graph in reverse topological order and accumulates
gradients into every tensor that requires them.

Only scalar-with-tensor broadcasting is supported.  Anything fancier must
go through an explicit primitive (``add_bias``, ``rowsum``, ...) so that
shape bugs surface as errors instead of silently broadcast results.

``grad_check`` compares the analytic gradients of any registered primitive
against central finite differences and is the basis of the gradient test
suite.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "Tensor",
    "ShapeMismatch",
    "GradCheckReport",
    "no_grad",
    "add",
    "multiply",
    "sub",
    "neg",
    "scale",
    "matmul",
    "transpose",
    "conv2d",
    "relu",
    "maxpool",
    "spatial_mean",
    "concat",
    "dot",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "pixel_softmax",
    "add_bias",
    "upsample_nearest",
    "tsum",
    "tmean",
    "rowsum",
    "as_column",
    "logsumexp",
    "log_expdiff",
    "grad_check",
    "finite_difference_report",
    "PRIMITIVES",
]

_FLOATS = (np.float32, np.float64)


class ShapeMismatch(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""

    def __init__(self, op: str, *shapes, detail: str = ""):
        self.op = op
        self.shapes = shapes
        msg = f"{op}: incompatible shapes {' and '.join(str(tuple(s)) for s in shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class _GradMode:
    enabled = True


class no_grad:
    """Context manager that disables graph construction (cheap inference)."""

    def __enter__(self):
        self.prev = _GradMode.enabled
        _GradMode.enabled = False
        return self

    def __exit__(self, *exc):
        _GradMode.enabled = self.prev
        return False


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _FLOATS else np.float32
    return np.ascontiguousarray(arr, dtype=dtype)


class Tensor:
    """A node in the autodiff graph: value, optional grad, backward rule."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _from_op(cls, data, parents, op, backward):
        t = cls.__new__(cls)
        t.data = data
        t.requires_grad = any(p.requires_grad for p in parents)
        t.grad = None
        if _GradMode.enabled and t.requires_grad:
            t._parents = tuple(parents)
            t._backward = backward
        else:
            t._parents = ()
            t._backward = None
        t._op = op
        return t

    # -- basic properties -----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, grad={self.requires_grad})"

    # -- autodiff -------------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self, seed=None):
        """Backpropagate from this tensor.

        Without an explicit ``seed`` the tensor must be scalar (size 1); the
        seed then defaults to 1.  Gradients accumulate into ``.grad`` of
        every reachable tensor with ``requires_grad``.
        """
        if seed is None:
            if self.data.size != 1:
                raise ValueError(
                    f"backward() without seed requires a scalar, got shape {self.data.shape}"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.data.shape:
                raise ShapeMismatch("backward", seed.shape, self.data.shape)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(seed)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    __radd__ = __add__

    def __mul__(self, other):
        return multiply(self, _coerce(other, self.dtype))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __rsub__(self, other):
        return sub(_coerce(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _coerce(value, dtype):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _check_finite(name, *tensors):
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise ValueError(f"{name}: non-finite values in operand")


# ---------------------------------------------------------------------------
# elementwise primitives


def _binary_shapes(op, a, b):
    if a.shape == b.shape:
        return a.shape
    if a.size == 1 or b.size == 1:
        return a.shape if b.size == 1 else b.shape
    raise ShapeMismatch(op, a.shape, b.shape, detail="only scalar broadcast allowed")


def _reduce_to(g, shape):
    # collapse a broadcast gradient back to a scalar operand
    if g.shape == shape:
        return g
    return g.sum().reshape(shape) if np.prod(shape, dtype=int) == 1 else g


def add(a: Tensor, b: Tensor) -> Tensor:
    out_shape = _binary_shapes("add", a, b)
    data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g, b.shape))

    return Tensor._from_op(data, (a, b), "add", backward)


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("multiply", a, b)
    data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(g * a.data, b.shape))

    return Tensor._from_op(data, (a, b), "multiply", backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)
    data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_reduce_to(g, a.shape))
        if b.requires_grad:
            b._accumulate(_reduce_to(-g, b.shape))

    return Tensor._from_op(data, (a, b), "sub", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return Tensor._from_op(-a.data, (a,), "neg", backward)


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python constant (no gradient for the constant)."""
    c = a.data.dtype.type(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return Tensor._from_op(a.data * c, (a,), "scale", backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0))

    return Tensor._from_op(data, (a,), "relu", backward)


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * data)

    return Tensor._from_op(data, (a,), "exp", backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise ValueError("log: requires strictly positive input")
    data = np.log(a.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor._from_op(data, (a,), "log", backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor._from_op(data, (a, b), "matmul", backward)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeMismatch("transpose", a.shape, detail="2-D only")
    data = np.ascontiguousarray(a.data.T)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return Tensor._from_op(data, (a,), "transpose", backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeMismatch("dot", a.shape, b.shape, detail="1-D vectors of equal length")
    if a.size == 0:
        raise ShapeMismatch("dot", a.shape, b.shape, detail="empty input rejected")
    data = np.array(a.data @ b.data, dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return Tensor._from_op(data, (a, b), "dot", backward)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Explicit bias broadcast: (N,F)+(F,) rows or (N,C,H,W)+(C,) channels."""
    if x.data.ndim == 2 and b.data.ndim == 1 and x.shape[1] == b.shape[0]:
        data = x.data + b.data

        def backward(g):
            if x.requires_grad:
                x._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0))

    elif x.data.ndim == 4 and b.data.ndim == 1 and x.shape[1] == b.shape[0]:
        data = x.data + b.data[None, :, None, None]

        def backward(g):
            if x.requires_grad:
                x._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=(0, 2, 3)))

    else:
        raise ShapeMismatch("add_bias", x.shape, b.shape)
    return Tensor._from_op(data, (x, b), "add_bias", backward)


# ---------------------------------------------------------------------------
# convolution and spatial ops


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D convolution (cross-correlation), NCHW input, OIHW kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeMismatch("conv2d", x.shape, w.shape, detail="need NCHW and OIHW")
    N, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if Cw != C:
        raise ShapeMismatch("conv2d", x.shape, w.shape, detail="channel mismatch")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: bad stride={stride} padding={padding}")
    if H + 2 * padding < kh or W + 2 * padding < kw:
        raise ShapeMismatch("conv2d", x.shape, w.shape, detail="kernel larger than input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    sw = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = sw.shape[2], sw.shape[3]
    cols = np.ascontiguousarray(sw.transpose(0, 2, 3, 1, 4, 5)).reshape(N * Ho * Wo, C * kh * kw)
    wmat = w.data.reshape(O, -1)
    out = (cols @ wmat.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        if w.requires_grad:
            w._accumulate((g2.T @ cols).reshape(w.shape))
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(N, Ho, Wo, C, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[
                        :, :, :, :, i, j
                    ]
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    return Tensor._from_op(out, (x, w), "conv2d", backward)


def maxpool(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; spatial dims must be even."""
    if x.data.ndim != 4:
        raise ShapeMismatch("maxpool", x.shape, detail="need NCHW")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeMismatch("maxpool", x.shape, detail="odd spatial size")
    blocks = x.data.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(N, C, H // 2, W // 2, 4)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out)

    def backward(g):
        if x.requires_grad:
            dflat = np.zeros_like(flat)
            np.put_along_axis(dflat, idx[..., None], g[..., None], axis=-1)
            dx = dflat.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
            x._accumulate(dx.reshape(N, C, H, W))

    return Tensor._from_op(out, (x,), "maxpool", backward)


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over the spatial axes: (N,C,H,W) -> (N,C)."""
    if x.data.ndim != 4:
        raise ShapeMismatch("spatial_mean", x.shape, detail="need NCHW")
    N, C, H, W = x.shape
    data = x.data.mean(axis=(2, 3))

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g[:, :, None, None] / (H * W), x.shape).copy())

    return Tensor._from_op(data, (x,), "spatial_mean", backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Nearest-neighbour upsampling of the spatial axes by an integer factor."""
    if x.data.ndim != 4:
        raise ShapeMismatch("upsample_nearest", x.shape, detail="need NCHW")
    if factor < 1:
        raise ValueError(f"upsample_nearest: factor must be >= 1, got {factor}")
    data = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward(g):
        if x.requires_grad:
            N, C, H, W = x.shape
            gb = g.reshape(N, C, H, factor, W, factor)
            x._accumulate(gb.sum(axis=(3, 5)))

    return Tensor._from_op(data, (x,), "upsample_nearest", backward)


def concat(tensors) -> Tensor:
    """Concatenate 2-D tensors along the feature axis (axis 1)."""
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat: empty input list")
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.data.ndim != 2 or t.shape[0] != rows:
            raise ShapeMismatch("concat", *(u.shape for u in tensors))
    data = np.concatenate([t.data for t in tensors], axis=1)
    widths = [t.shape[1] for t in tensors]

    def backward(g):
        off = 0
        for t, w in zip(tensors, widths):
            if t.requires_grad:
                t._accumulate(g[:, off : off + w])
            off += w

    return Tensor._from_op(data, tuple(tensors), "concat", backward)


# ---------------------------------------------------------------------------
# reductions and normalizers


def tsum(x: Tensor) -> Tensor:
    data = np.array(x.data.sum(), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g, x.shape).copy())

    return Tensor._from_op(data, (x,), "sum", backward)


def tmean(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ShapeMismatch("mean", x.shape, detail="empty input rejected")
    n = x.size
    data = np.array(x.data.mean(), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g / n, x.shape).copy())

    return Tensor._from_op(data, (x,), "mean", backward)


def rowsum(x: Tensor) -> Tensor:
    """Sum along the last axis: (N,M) -> (N,)."""
    if x.data.ndim != 2:
        raise ShapeMismatch("rowsum", x.shape, detail="2-D only")
    data = x.data.sum(axis=1)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.broadcast_to(g[:, None], x.shape).copy())

    return Tensor._from_op(data, (x,), "rowsum", backward)


def as_column(x: Tensor) -> Tensor:
    """View a vector (N,) as a column (N,1)."""
    if x.data.ndim != 1:
        raise ShapeMismatch("as_column", x.shape, detail="1-D only")
    data = x.data[:, None].copy()

    def backward(g):
        if x.requires_grad:
            x._accumulate(g[:, 0])

    return Tensor._from_op(data, (x,), "as_column", backward)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax for (N,C), or plain softmax for a 1-D vector."""
    if x.data.ndim not in (1, 2):
        raise ShapeMismatch("softmax", x.shape, detail="1-D or 2-D only")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    data = ez / ez.sum(axis=-1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            inner = (g * data).sum(axis=-1, keepdims=True)
            x._accumulate(data * (g - inner))

    return Tensor._from_op(data, (x,), "softmax", backward)


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim not in (1, 2):
        raise ShapeMismatch("log_softmax", x.shape, detail="1-D or 2-D only")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    data = z - lse
    sm = np.exp(data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g - sm * g.sum(axis=-1, keepdims=True))

    return Tensor._from_op(data, (x,), "log_softmax", backward)


def pixel_softmax(x: Tensor) -> Tensor:
    """Softmax over all pixels of a 2-D map; accepts (H,W) or (N,1,H,W)."""
    if x.data.ndim == 2:
        flat = x.data.reshape(1, -1)
        restore = x.data.shape
    elif x.data.ndim == 4 and x.shape[1] == 1:
        flat = x.data.reshape(x.shape[0], -1)
        restore = x.data.shape
    else:
        raise ShapeMismatch("pixel_softmax", x.shape, detail="(H,W) or (N,1,H,W)")
    z = flat - flat.max(axis=1, keepdims=True)
    ez = np.exp(z)
    p = ez / ez.sum(axis=1, keepdims=True)
    data = p.reshape(restore)

    def backward(g):
        if x.requires_grad:
            gf = g.reshape(p.shape)
            inner = (gf * p).sum(axis=1, keepdims=True)
            x._accumulate((p * (gf - inner)).reshape(restore))

    return Tensor._from_op(data, (x,), "pixel_softmax", backward)


def logsumexp(x: Tensor) -> Tensor:
    """Row-wise log(sum(exp(x))): (N,M) -> (N,), numerically stable."""
    if x.data.ndim != 2:
        raise ShapeMismatch("logsumexp", x.shape, detail="2-D only")
    m = x.data.max(axis=1, keepdims=True)
    ez = np.exp(x.data - m)
    s = ez.sum(axis=1, keepdims=True)
    data = (m + np.log(s)).reshape(-1)
    sm = ez / s

    def backward(g):
        if x.requires_grad:
            x._accumulate(sm * g[:, None])

    return Tensor._from_op(data, (x,), "logsumexp", backward)


def log_expdiff(p: Tensor, n: Tensor, floor: float = 1e-8) -> Tensor:
    """Elementwise log(max(exp(p) - exp(n), floor)) for 1-D p, n.

    Stable for large magnitudes: computed as p + log1p(-exp(n - p)) off the
    floor.  On the floor (exp(p) - exp(n) <= floor) the value is
    log(floor) and the gradient is zero, matching a hard clamp.
    """
    if p.data.ndim != 1 or p.shape != n.shape:
        raise ShapeMismatch("log_expdiff", p.shape, n.shape, detail="equal 1-D vectors")
    if floor <= 0:
        raise ValueError("log_expdiff: floor must be positive")
    d = n.data.astype(np.float64) - p.data.astype(np.float64)
    neg_d = d < 0
    d_safe = np.where(neg_d, d, -1.0)
    raw = np.where(neg_d, p.data + np.log1p(-np.exp(d_safe)), -np.inf)
    log_floor = math.log(floor)
    clamped = ~(raw > log_floor)
    data = np.where(clamped, log_floor, raw).astype(p.dtype)
    # off the floor: d/dp = 1/(1 - e^{n-p}), d/dn = -1/(e^{p-n} - 1)
    with np.errstate(divide="ignore", over="ignore"):
        gp = np.where(clamped, 0.0, 1.0 / -np.expm1(np.where(clamped, -1.0, d)))
        gn = np.where(clamped, 0.0, -1.0 / np.expm1(np.where(clamped, 1.0, -d)))

    def backward(g):
        if p.requires_grad:
            p._accumulate((g * gp).astype(p.dtype))
        if n.requires_grad:
            n._accumulate((g * gn).astype(n.dtype))

    return Tensor._from_op(data, (p, n), "log_expdiff", backward)


# ---------------------------------------------------------------------------
# gradient checking


class GradCheckReport:
    """Outcome of a finite-difference check: pass flag plus the worst error."""

    def __init__(self, name, passed, max_rel_err, tolerance, seeds):
        self.name = name
        self.passed = passed
        self.max_rel_err = max_rel_err
        self.tolerance = tolerance
        self.seeds = seeds

    def __bool__(self):
        return self.passed

    def __repr__(self):
        flag = "ok" if self.passed else "FAIL"
        return (
            f"GradCheckReport({self.name}: {flag}, max_rel_err={self.max_rel_err:.3g}, "
            f"tol={self.tolerance:g}, seeds={self.seeds})"
        )


def _rel_err(a, n):
    return abs(a - n) / max(1.0, abs(a), abs(n))


def finite_difference_report(
    fn,
    inputs,
    tolerance: float = 1e-4,
    step: float = 1e-3,
    rng=None,
    max_coords: int | None = None,
    name: str = "fn",
) -> GradCheckReport:
    """Compare analytic gradients of ``fn(*inputs)`` to central differences.

    ``inputs`` are float64 arrays; each is treated as differentiable.  The
    objective is ``sum(fn(...) * R)`` for a fixed random ``R`` so that every
    output element contributes.  When ``max_coords`` is set, only a random
    subset of coordinates per input is probed (used for large composites).
    """
    rng = rng or np.random.default_rng(0)
    tensors = [Tensor(np.asarray(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    seedv = rng.uniform(-1.0, 1.0, size=out.shape)
    out.backward(seed=seedv)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def objective():
        with no_grad():
            val = fn(*tensors)
        return float((val.data * seedv).sum())

    worst = 0.0
    for t, an in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        an_flat = an.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for c in coords:
            keep = flat[c]
            flat[c] = keep + step
            hi = objective()
            flat[c] = keep - step
            lo = objective()
            flat[c] = keep
            numeric = (hi - lo) / (2 * step)
            worst = max(worst, _rel_err(an_flat[c], numeric))
    return GradCheckReport(name, worst < tolerance, worst, tolerance, 1)


# Registered primitives: name -> (default shapes, input sampler, callable).
# The sampler keeps inputs away from kinks (relu zero crossings, pooling
# ties) so that the finite-difference reference is valid.


def _sample_plain(rng, shapes):
    return [rng.uniform(-1.0, 1.0, size=s) for s in shapes]


def _sample_offz(rng, shapes):
    xs = []
    for s in shapes:
        x = rng.uniform(-1.0, 1.0, size=s)
        x = x + np.sign(x) * 0.05
        xs.append(x)
    return xs


def _sample_pos(rng, shapes):
    return [rng.uniform(0.2, 2.0, size=s) for s in shapes]


def _sample_pool(rng, shapes):
    (s,) = shapes
    N, C, H, W = s
    # enforce pairwise gaps >= 0.1 within every 2x2 window so the max
    # never flips under the finite-difference step
    vals = rng.uniform(-1.0, 1.0, size=(N, C, H // 2, W // 2, 4))
    vals.sort(axis=-1)
    vals += np.array([0.0, 0.1, 0.2, 0.3])
    vals = rng.permuted(vals, axis=-1)
    x = np.empty(s)
    blocks = x.reshape(N, C, H // 2, 2, W // 2, 2)
    blocks[...] = vals.reshape(N, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return [x]


PRIMITIVES = {
    "add": (((3, 4), (3, 4)), _sample_plain, add),
    "multiply": (((3, 4), (3, 4)), _sample_plain, multiply),
    "sub": (((3, 4), (3, 4)), _sample_plain, sub),
    "neg": (((3, 4),), _sample_plain, neg),
    "matmul": (((3, 5), (5, 4)), _sample_plain, matmul),
    "transpose": (((3, 5),), _sample_plain, transpose),
    "dot": (((7,), (7,)), _sample_plain, dot),
    "add_bias": (((4, 6), (6,)), _sample_plain, add_bias),
    "conv2d": (
        ((2, 2, 6, 6), (3, 2, 3, 3)),
        _sample_plain,
        lambda x, w: conv2d(x, w, stride=1, padding=1),
    ),
    "conv2d_s2": (
        ((2, 2, 7, 7), (3, 2, 3, 3)),
        _sample_plain,
        lambda x, w: conv2d(x, w, stride=2, padding=1),
    ),
    "relu": (((4, 5),), _sample_offz, relu),
    "maxpool": (((2, 3, 6, 6),), _sample_pool, maxpool),
    "spatial_mean": (((2, 3, 4, 4),), _sample_plain, spatial_mean),
    "upsample_nearest": (((2, 3, 3, 3),), _sample_plain, lambda x: upsample_nearest(x, 2)),
    "concat": (((3, 4), (3, 2), (3, 5)), _sample_plain, lambda *ts: concat(ts)),
    "exp": (((3, 4),), _sample_plain, exp),
    "log": (((3, 4),), _sample_pos, log),
    "softmax": (((4, 6),), _sample_plain, softmax),
    "log_softmax": (((4, 6),), _sample_plain, log_softmax),
    "pixel_softmax": (((2, 1, 4, 4),), _sample_plain, pixel_softmax),
    "sum": (((3, 4),), _sample_plain, tsum),
    "mean": (((3, 4),), _sample_plain, tmean),
    "rowsum": (((3, 6),), _sample_plain, rowsum),
    "as_column": (((5,),), _sample_plain, as_column),
    "logsumexp": (((4, 6),), _sample_plain, logsumexp),
    "log_expdiff": (((6,), (6,)), lambda rng, s: _sample_expdiff(rng, s), log_expdiff),
}


def _sample_expdiff(rng, shapes):
    # keep exp(p)-exp(n) well off the clamp floor
    p = rng.uniform(0.5, 1.5, size=shapes[0])
    n = p - rng.uniform(0.5, 1.5, size=shapes[1])
    return [p, n]


def grad_check(
    primitive: str,
    input_shapes=None,
    tolerance: float = 1e-4,
    seeds=range(10),
    step: float = 1e-3,
    max_coords: int | None = None,
) -> GradCheckReport:
    """Finite-difference check of a registered primitive over several seeds.

    Passes iff the worst relative error over all probed coordinates and all
    seeds stays below ``tolerance``.  Raises for unknown primitives and for
    empty input shapes.
    """
    if primitive not in PRIMITIVES:
        raise KeyError(f"grad_check: unknown primitive '{primitive}'")
    shapes, sampler, fn = PRIMITIVES[primitive]
    if input_shapes is not None:
        shapes = tuple(tuple(s) for s in input_shapes)
    for s in shapes:
        if int(np.prod(s)) == 0:
            raise ShapeMismatch(primitive, *shapes, detail="empty input rejected")
    worst = 0.0
    n_seeds = 0
    for seed in seeds:
        rng = np.random.default_rng(seed)
        inputs = sampler(rng, shapes)
        rep = finite_difference_report(
            fn, inputs, tolerance=tolerance, step=step, rng=rng,
            max_coords=max_coords, name=primitive,
        )
        worst = max(worst, rep.max_rel_err)
        n_seeds += 1
    return GradCheckReport(primitive, worst < tolerance, worst, tolerance, n_seeds)
