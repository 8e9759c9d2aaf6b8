"""Dense tensors with a recording tape for reverse-mode differentiation.

Every op in this module is a plain function that computes its result with
numpy. When a :class:`Graph` is active and at least one input requires a
gradient, the op appends a node (output, parents, backward closure) to the
graph. ``Graph.backward`` replays those nodes in reverse order exactly once.

Outside an active graph nothing is recorded, which is what inference uses.
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

DEFAULT_DTYPE = np.float32


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class StaleGraphError(RuntimeError):
    """Raised when a graph is replayed a second time."""


_DEBUG = False
_local = threading.local()


def set_debug(flag: bool) -> None:
    """Check every forward result for NaN/Inf when ``flag`` is true."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    """N-dimensional array with an optional gradient buffer."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            if not np.issubdtype(arr.dtype, np.floating):
                arr = arr.astype(DEFAULT_DTYPE)
        else:
            arr = np.asarray(data, dtype=dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.data.shape[0]

    # arithmetic operators broadcast like numpy; the named ops below do not
    def __add__(self, other):
        return _binary_add(self, other)

    def __radd__(self, other):
        return _binary_add(other, self)

    def __sub__(self, other):
        return _binary_sub(self, other)

    def __rsub__(self, other):
        return _binary_sub(other, self)

    def __mul__(self, other):
        return _binary_mul(self, other)

    def __rmul__(self, other):
        return _binary_mul(other, self)

    def __truediv__(self, other):
        return _binary_div(self, other)

    def __rtruediv__(self, other):
        return _binary_div(other, self)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class Graph:
    """Tape of executed operations, in execution (topological) order.

    Use as a context manager::

        with Graph() as g:
            loss = ...
        g.backward(loss)
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._consumed = False

    def __enter__(self) -> "Graph":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, out: Tensor, parents, backward) -> None:
        if self._consumed:
            raise StaleGraphError("cannot record onto a graph that was already replayed")
        self._nodes.append(_Node(out, parents, backward))

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise StaleGraphError("graph was already replayed; run a new forward pass first")
        if loss.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires a gradient")
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.backward(g)
            for parent, gp in zip(node.parents, grads):
                if gp is None or not parent.requires_grad:
                    continue
                if gp.dtype != parent.data.dtype:
                    gp = gp.astype(parent.data.dtype)
                if gp.shape != parent.shape:
                    gp = gp.reshape(parent.shape)
                # rebind instead of +=: sibling parents may share the same array
                parent.grad = gp if parent.grad is None else parent.grad + gp
        self._consumed = True
        self._nodes.clear()


def backward(graph: Graph, loss: Tensor) -> None:
    """Populate ``.grad`` of every tensor on ``graph`` that ``loss`` depends on."""
    graph.backward(loss)


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def _active_graph() -> Graph | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


class no_record:
    """Suspend recording inside an active graph."""

    def __enter__(self):
        self._saved = list(_tape_stack())
        _tape_stack().clear()
        return self

    def __exit__(self, *exc):
        _tape_stack()[:] = self._saved


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if _DEBUG and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError("non-finite value produced from finite inputs")
    graph = _active_graph()
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        graph._record(out, tuple(parents), backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return as_tensor(a), as_tensor(b)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise


def _binary_add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def _binary_sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def _binary_mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw)


def _binary_div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _same_shape(a, b, "add")
    return _binary_add(a, b)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _same_shape(a, b, "sub")
    return _binary_sub(a, b)


def hadamard(a, b) -> Tensor:
    a, b = _pair(a, b)
    _same_shape(a, b, "hadamard")
    return _binary_mul(a, b)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _same_shape(a, b, "div")
    return _binary_div(a, b)


def scale(x, s: float) -> Tensor:
    x = as_tensor(x)
    s = float(s)
    return _make(x.data * x.data.dtype.type(s), (x,), lambda g: (g * s,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def minimum(a, b) -> Tensor:
    """Pointwise minimum; at ties the gradient is split evenly."""
    a, b = _pair(a, b)
    out = np.minimum(a.data, b.data)
    wa = np.where(a.data < b.data, 1.0, np.where(a.data == b.data, 0.5, 0.0)).astype(out.dtype)

    def bw(g):
        return _unbroadcast(g * wa, a.shape), _unbroadcast(g * (1 - wa), b.shape)

    return _make(out, (a, b), bw)


def elementwise(op: str, *inputs, factor: float = 1.0) -> Tensor:
    """Dispatch by name: sigmoid, tanh, relu, add, hadamard, scale."""
    table = {
        "sigmoid": sigmoid, "tanh": tanh, "relu": relu,
        "add": add, "hadamard": hadamard,
    }
    if op == "scale":
        return scale(inputs[0], factor)
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*inputs)


# ---------------------------------------------------------------------------
# reductions and statistics


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(out), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise ValueError("mean of an empty tensor")
    return scale(sum(x, axes, keepdims), 1.0 / n)


def std(x, axis=None, keepdims: bool = False) -> Tensor:
    """Population (divide-by-n) standard deviation."""
    x = as_tensor(x)
    centered = x - mean(x, axis, keepdims=True)
    return sqrt(mean(centered * centered, axis, keepdims=keepdims))


def cov(a, b, axis=None, keepdims: bool = False) -> Tensor:
    """Population covariance of two equally shaped tensors."""
    a, b = _pair(a, b)
    _same_shape(a, b, "cov")
    da = a - mean(a, axis, keepdims=True)
    db = b - mean(b, axis, keepdims=True)
    return mean(da * db, axis, keepdims=keepdims)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(x.data.transpose(axes)), (x,), lambda g: (g.transpose(inv),))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat of an empty list")
    if len(xs) == 1:
        return xs[0]
    ref = xs[0].shape
    ax = axis % len(ref)
    for i, x in enumerate(xs[1:], 1):
        if x.ndim != len(ref) or any(x.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError(f"concat: argument {i} has shape {x.shape}, incompatible with {ref} off axis {ax}")
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=ax), xs,
                 lambda g: tuple(np.split(g, bounds, axis=ax)))


def concat_channels(xs: Sequence) -> Tensor:
    """Concatenate N×C_i×H×W tensors along channels, in argument order."""
    xs = [as_tensor(x) for x in xs]
    for i, x in enumerate(xs):
        if x.ndim != 4:
            raise ShapeError(f"concat_channels: argument {i} is not 4-D")
        if (x.shape[0], x.shape[2], x.shape[3]) != (xs[0].shape[0], xs[0].shape[2], xs[0].shape[3]):
            raise ShapeError(
                f"concat_channels: argument {i} has N,H,W={x.shape[0]},{x.shape[2]},{x.shape[3]}, "
                f"expected {xs[0].shape[0]},{xs[0].shape[2]},{xs[0].shape[3]}")
    return concat(xs, axis=1)


def split(x, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    x = as_tensor(x)
    ax = axis % x.ndim
    if int(np.sum(sizes)) != x.shape[ax]:
        raise ShapeError(f"split: sizes {list(sizes)} do not add up to extent {x.shape[ax]}")
    outs = []
    start = 0
    for n in sizes:
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(start, start + n)
        sl = tuple(sl)

        def bw(g, sl=sl):
            full = np.zeros_like(x.data)
            full[sl] = g
            return (full,)

        outs.append(_make(x.data[sl], (x,), bw))
        start += n
    return outs


def split_channels(x, sizes: Sequence[int]) -> list[Tensor]:
    return split(x, sizes, axis=1)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather slabs along ``axis``; repeated indices accumulate gradient."""
    x = as_tensor(x)
    idx = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(np.moveaxis(full, ax, 0), idx, np.moveaxis(g, ax, 0))
        return (full,)

    return _make(np.take(x.data, idx, axis=ax), (x,), bw)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    expanded = [reshape(x, x.shape[:axis % (x.ndim + 1)] + (1,) + x.shape[axis % (x.ndim + 1):]) for x in xs]
    return concat(expanded, axis=axis)


# ---------------------------------------------------------------------------
# spatial ops


def _conv_out(n: int, k: int, stride: int, pad: int, dilation: int) -> int:
    return (n + 2 * pad - dilation * (k - 1) - 1) // stride + 1


def conv2d(x, weight, bias=None, stride: int = 1, pad: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding, N×C×H×W layout."""
    x, weight = as_tensor(x), as_tensor(weight)
    if pad < 0 or stride < 1 or dilation < 1:
        raise ValueError(f"conv2d: need pad >= 0, stride >= 1, dilation >= 1 (got {pad}, {stride}, {dilation})")
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if c != ci:
        raise ShapeError(f"conv2d: input channels (dim 1) = {c} but weight expects {ci}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise ShapeError(f"conv2d: bias shape {bias.shape} does not match C_out = {o}")
    ho = _conv_out(h, kh, stride, pad, dilation)
    wo = _conv_out(w, kw, stride, pad, dilation)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output extent {ho}x{wo} for input {h}x{w}")

    parents = (x, weight) if bias is None else (x, weight, bias)
    wmat = weight.data.reshape(o, -1)

    if kh == 1 and kw == 1 and stride == 1 and pad == 0:
        xf = x.data.reshape(n, c, h * w)
        out = np.matmul(wmat, xf)
        if bias is not None:
            out += bias.data[:, None]

        def bw_1x1(g):
            gf = g.reshape(n, o, h * w)
            gx = np.matmul(wmat.T, gf).reshape(x.shape) if x.requires_grad else None
            gw = np.matmul(gf, xf.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape) if weight.requires_grad else None
            grads = (gx, gw)
            if bias is not None:
                grads += (gf.sum(axis=(0, 2)),)
            return grads

        return _make(out.reshape(n, o, h, w), parents, bw_1x1)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    span_h, span_w = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    taps = [(i, j, i * dilation, j * dilation) for i in range(kh) for j in range(kw)]
    dt = np.result_type(x.dtype, weight.dtype)
    # im2col by one slice copy per tap. Thin inputs use channel-major columns
    # (long contiguous rows); wide ones use channels-last columns, which keep
    # the copy chunks at C elements and the matmul tall and narrow.
    chan_major = c < wo

    if chan_major:
        xs = xp.transpose(1, 0, 2, 3)
        cols = np.empty((c, kh, kw, n, ho, wo), dtype=dt)
        for i, j, y0, x0 in taps:
            cols[:, i, j] = xs[:, :, y0:y0 + span_h:stride, x0:x0 + span_w:stride]
        cols = cols.reshape(c * kh * kw, n * ho * wo)
        out = wmat @ cols
        if bias is not None:
            out += bias.data[:, None]
        out = np.ascontiguousarray(out.reshape(o, n, ho, wo).transpose(1, 0, 2, 3))
    else:
        xs = xp.transpose(0, 2, 3, 1)
        cols = np.empty((n, ho, wo, kh, kw, c), dtype=dt)
        for i, j, y0, x0 in taps:
            cols[:, :, :, i, j] = xs[:, y0:y0 + span_h:stride, x0:x0 + span_w:stride]
        cols = cols.reshape(n * ho * wo, kh * kw * c)
        wl = weight.data.transpose(0, 2, 3, 1).reshape(o, -1)
        out = cols @ wl.T
        if bias is not None:
            out += bias.data
        out = np.ascontiguousarray(out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2))

    def bw(g):
        gw = gx = None
        if chan_major:
            gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
            if weight.requires_grad:
                gw = (gm @ cols.T).reshape(weight.shape)
            if x.requires_grad:
                gcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
                gxp = np.zeros((c, n) + xp.shape[2:], dtype=xp.dtype)
                for i, j, y0, x0 in taps:
                    gxp[:, :, y0:y0 + span_h:stride, x0:x0 + span_w:stride] += gcols[:, i, j]
                gx = gxp.transpose(1, 0, 2, 3)
        else:
            gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
            if weight.requires_grad:
                gw = np.ascontiguousarray((gm.T @ cols).reshape(o, kh, kw, c).transpose(0, 3, 1, 2))
            if x.requires_grad:
                gcols = (gm @ wl).reshape(n, ho, wo, kh, kw, c)
                gxp = np.zeros((n,) + xp.shape[2:] + (c,), dtype=xp.dtype)
                for i, j, y0, x0 in taps:
                    gxp[:, y0:y0 + span_h:stride, x0:x0 + span_w:stride] += gcols[:, :, :, i, j]
                gx = gxp.transpose(0, 3, 1, 2)
        if gx is not None:
            gx = np.ascontiguousarray(gx[:, :, pad:pad + h, pad:pad + w] if pad else gx)
        grads = (gx, gw)
        if bias is not None:
            grads += (g.sum(axis=(0, 2, 3)),)
        return grads

    return _make(out, parents, bw)


def bilinear_sample(x, coords) -> Tensor:
    """Sample ``x`` (N×C×H×W) at fractional positions.

    ``coords`` has shape N×Ho×Wo×2 holding (y, x) in input pixel units; the
    result is N×C×Ho×Wo. Each of the four neighbours outside the image reads
    zero. Differentiable in both ``x`` and ``coords``.
    """
    x, coords = as_tensor(x), as_tensor(coords)
    if x.ndim != 4:
        raise ShapeError(f"bilinear_sample: input must be 4-D, got {x.shape}")
    if coords.ndim != 4 or coords.shape[-1] != 2 or coords.shape[0] != x.shape[0]:
        raise ShapeError(f"bilinear_sample: coords must be N×Ho×Wo×2 with N={x.shape[0]}, got {coords.shape}")
    if np.isnan(coords.data).any():
        raise ValueError("bilinear_sample: NaN coordinate")
    if not np.isfinite(coords.data).all():
        raise ValueError("bilinear_sample: infinite coordinate")
    n, c, h, w = x.shape
    _, ho, wo, _ = coords.shape
    p = ho * wo
    dt = x.dtype
    cy = coords.data[..., 0].reshape(-1).astype(dt, copy=False)
    cx = coords.data[..., 1].reshape(-1).astype(dt, copy=False)
    y0f, x0f = np.floor(cy), np.floor(cx)
    wy, wx = cy - y0f, cx - x0f
    y0, x0 = y0f.astype(np.intp), x0f.astype(np.intp)
    batch = np.repeat(np.arange(n, dtype=np.intp) * (h * w), p)

    # the four corners as columns of a sparse (N·P)×(N·H·W) interpolation
    # matrix; out-of-image corners get weight zero
    cols, valid = [], []
    for dy, dx in ((0, 0), (0, 1), (1, 0), (1, 1)):
        yy, xx = y0 + dy, x0 + dx
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        cols.append(batch + np.clip(yy, 0, h - 1) * w + np.clip(xx, 0, w - 1))
        valid.append(ok.astype(dt))
    indices = np.stack(cols, axis=1).ravel()
    indptr = np.arange(0, 4 * n * p + 1, 4)

    def interp(vals):
        return sparse.csr_matrix((np.stack(vals, axis=1).ravel(), indices, indptr), shape=(n * p, n * h * w))

    m00, m01, m10, m11 = valid
    s = interp([(1 - wy) * (1 - wx) * m00, (1 - wy) * wx * m01, wy * (1 - wx) * m10, wy * wx * m11])
    xf = np.ascontiguousarray(x.data.transpose(0, 2, 3, 1)).reshape(n * h * w, c)
    out = np.asarray(s @ xf).reshape(n, p, c).transpose(0, 2, 1)

    def bw(g):
        gl = np.ascontiguousarray(g.reshape(n, c, p).transpose(0, 2, 1)).reshape(n * p, c)
        gx = gc = None
        if x.requires_grad:
            gx = np.asarray(s.T @ gl).reshape(n, h, w, c).transpose(0, 3, 1, 2)
            gx = np.ascontiguousarray(gx, dtype=dt)
        if coords.requires_grad:
            sy = interp([-(1 - wx) * m00, -wx * m01, (1 - wx) * m10, wx * m11])
            sx = interp([-(1 - wy) * m00, (1 - wy) * m01, -wy * m10, wy * m11])
            gy = np.einsum("pc,pc->p", gl, np.asarray(sy @ xf))
            gxx = np.einsum("pc,pc->p", gl, np.asarray(sx @ xf))
            gc = np.stack([gy, gxx], axis=-1).reshape(coords.shape).astype(coords.dtype, copy=False)
        return gx, gc

    return _make(out.reshape(n, c, ho, wo), (x, coords), bw)


def _upsample_matrix(n: int, dtype) -> np.ndarray:
    # half-pixel centres: output i samples input (i + 0.5) / 2 - 0.5, clamped to the edge
    src = np.clip((np.arange(2 * n) + 0.5) / 2 - 0.5, 0, n - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n - 1)
    frac = src - lo
    m = np.zeros((2 * n, n))
    rows = np.arange(2 * n)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def upsample2x(x) -> Tensor:
    """Bilinear 2x upsampling, N×C×H×W -> N×C×2H×2W."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample2x: input must be 4-D, got {x.shape}")
    _, _, h, w = x.shape
    if h < 1 or w < 1:
        raise ShapeError("upsample2x: empty spatial extent")
    uh = _upsample_matrix(h, x.dtype)
    uw = _upsample_matrix(w, x.dtype)
    out = np.matmul(np.matmul(uh, x.data), uw.T)
    return _make(out, (x,), lambda g: (np.matmul(np.matmul(uh.T, g), uw),))


def maxpool2x2(x) -> Tensor:
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2: spatial extent {h}x{w} is not even")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def bw(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        return (gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(x.shape),)

    return _make(out, (x,), bw)
