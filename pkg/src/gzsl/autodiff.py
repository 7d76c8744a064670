"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Operations executed while a :class:`Graph` is active are appended to that
graph's tape; ``Graph.backward`` walks the tape in reverse insertion order,
so each node is visited exactly once. Outside a graph the same functions
just compute forward values (inference mode).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

_DTYPE = [np.float32]
_ACTIVE: list["Graph"] = []


class ShapeError(ValueError):
    """Operand extents do not line up."""


class NonFiniteError(FloatingPointError):
    def __init__(self, op: str, node: int | None, phase: str = "forward"):
        self.op = op
        self.node = node
        self.phase = phase
        super().__init__(f"non-finite value in {phase} of {op!r} (node {node})")


class GraphError(RuntimeError):
    pass


def get_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily change the float type new tensors are created with.

    The engine runs in float32; float64 is only used for gradient checks.
    """
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=get_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: int | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, node={self.node})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class _Node:
    __slots__ = ("id", "op", "inputs", "output", "backward")

    def __init__(self, id, op, inputs, output, backward):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Graph:
    """Insertion-ordered tape of differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._done = False

    def __enter__(self) -> "Graph":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()
        self._done = False

    def record(self, op: str, inputs: Sequence[Tensor], out: Tensor, backward: Callable) -> None:
        node = _Node(len(self.nodes), op, tuple(inputs), out, backward)
        out.node = node.id
        out.requires_grad = True
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        if self._done:
            raise GraphError("backward already ran on this graph; reset it first")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.node is None or loss.node >= len(self.nodes) or self.nodes[loss.node].output is not loss:
            raise GraphError("loss was not produced on this graph")
        self._done = True
        pending = {loss.node: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.node + 1]):
            g = pending.pop(node.id, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if not np.all(np.isfinite(gi)):
                    raise NonFiniteError(node.op, node.id, "backward")
                if t.node is None:
                    t.grad = gi.copy() if t.grad is None else t.grad + gi
                elif t.node in pending:
                    pending[t.node] = pending[t.node] + gi
                else:
                    pending[t.node] = gi


def backward(graph: Graph, loss: Tensor) -> None:
    graph.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward: Callable) -> Tensor:
    graph = _ACTIVE[-1] if _ACTIVE else None
    node = len(graph.nodes) if graph is not None else None
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(op, node)
    out = Tensor(out_data)
    if graph is not None and any(t.requires_grad for t in inputs):
        graph.record(op, inputs, out, backward)
    return out


# ---------------------------------------------------------------- elementwise

def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data, lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data, lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data, lambda g: (g * b.data, g * a.data))


def scale(a: Tensor, c: float) -> Tensor:
    c = get_dtype()(c)
    return _emit("scale", (a,), a.data * c, lambda g: (g * c,))


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    slope = get_dtype()(slope)
    out = np.maximum(x.data, x.data * slope)
    factor = np.where(x.data > 0, get_dtype()(1), slope)
    return _emit("leaky_relu", (x,), out, lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _emit("relu", (x,), x.data * pos, lambda g: (g * pos,))


def sigmoid(x: Tensor) -> Tensor:
    # exp of a non-positive argument never overflows, and tiny outputs keep a nonzero slope
    e = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.data.dtype, copy=False)
    return _emit("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


# ------------------------------------------------------------ reductions/loss

def sum(x: Tensor) -> Tensor:  # noqa: A001
    return _emit("sum", (x,), np.asarray(x.data.sum(), dtype=x.data.dtype),
                 lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.size
    return _emit("mean", (x,), np.asarray(x.data.mean(), dtype=x.data.dtype),
                 lambda g: (np.full(x.shape, g / n, dtype=x.data.dtype),))


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference over every element."""
    target = _as_tensor(target)
    _same_shape("l1_loss", pred, target)
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=diff.dtype)

    def bw(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return _emit("l1_loss", (pred, target), out, bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy; ``labels`` are integer class ids."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {labels.shape} labels for {n} rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"cross_entropy: label outside [0, {k})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.data.dtype)

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return _emit("cross_entropy", (logits,), out, bw)


# ------------------------------------------------------------------ structure

def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _emit("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(src),))


def take(x: Tensor, idx) -> Tensor:
    """Rows ``x[idx]`` along the leading axis (indices may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return _emit("take", (x,), x.data[idx], bw)


def narrow(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``."""
    if not 0 <= start <= stop <= x.shape[axis]:
        raise ShapeError(f"narrow: [{start}, {stop}) outside axis {axis} of extent {x.shape[axis]}")
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def bw(g):
        gx = np.zeros_like(x.data)
        gx[index] = g
        return (gx,)

    return _emit("narrow", (x,), x.data[index], bw)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return _emit("concat", xs, np.concatenate([t.data for t in xs], axis=axis),
                 lambda g: tuple(np.split(g, bounds, axis=axis)))


def mix(a: Tensor, b: Tensor, mask) -> Tensor:
    """Elementwise select: ``b`` where ``mask`` is true, ``a`` elsewhere."""
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mix", a, b)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    zero = get_dtype()(0)
    return _emit("mix", (a, b), np.where(mask, b.data, a.data),
                 lambda g: (np.where(mask, zero, g), np.where(mask, g, zero)))


# --------------------------------------------------------------------- layers

def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError(f"dense: expected 2-d operands, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"dense: input axis 1 has extent {x.shape[1]} but weights expect {w.shape[0]}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bw(g):
        grads = [g @ w.data.T, x.data.T @ g]
        if b is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("dense", inputs, out, bw)


def conv_output_extent(extent: int, k: int, stride: int, pad: int) -> int:
    return (extent + 2 * pad - k) // stride + 1


def _check_geometry(op, shape, k, stride, pad):
    if k < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"{op}: need k >= 1, stride >= 1, pad >= 0 (got {k}, {stride}, {pad})")
    for axis, name in ((2, "height"), (3, "width")):
        if shape[axis] + 2 * pad < k:
            raise ShapeError(f"{op}: {name} axis ({axis}) extent {shape[axis]} + 2*{pad} < kernel {k}")


def _im2col(xh: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Channels-last patches: ``[N*Ho*Wo, k*k*C]`` with C fastest."""
    n, h, w, c = xh.shape
    ho, wo = conv_output_extent(h, k, stride, pad), conv_output_extent(w, k, stride, pad)
    if pad:
        xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=xh.dtype)
        xp[:, pad:pad + h, pad:pad + w, :] = xh
    else:
        xp = np.ascontiguousarray(xh)
    s = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, shape=(n, ho, wo, k, k, c),
        strides=(s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]), writeable=False)
    return win.reshape(n * ho * wo, k * k * c), ho, wo


def _col2im(cols: np.ndarray, shape, k: int, stride: int, pad: int, ho: int, wo: int) -> np.ndarray:
    """Scatter-add channels-last patches back into an ``[N, H, W, C]`` array."""
    n, h, w, c = shape
    xp = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=cols.dtype)
    c6 = cols.reshape(n, ho, wo, k, k, c)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += c6[:, :, :, i, j, :]
    return xp[:, pad:pad + h, pad:pad + w, :]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with ``[F, C, k, k]`` filters."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d operands, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel axes 2/3 differ ({k} vs {k2})")
    if c != cw:
        raise ShapeError(f"conv2d: input channel axis (1) has extent {c} but weights expect {cw}")
    if b is not None and b.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({f},)")
    _check_geometry("conv2d", x.shape, k, stride, pad)
    # activations are kept channels-last in memory behind an NCHW view
    cols, ho, wo = _im2col(x.data.transpose(0, 2, 3, 1), k, stride, pad)
    wm = w.data.transpose(0, 2, 3, 1).reshape(f, -1)
    out = cols @ wm.T
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    same = stride == 1 and 2 * pad == k - 1

    def bw(g):
        gh = g.transpose(0, 2, 3, 1)
        gm = gh.reshape(-1, f)
        if same:
            # stride-1 "same" conv: input grad is a conv with the flipped kernel
            gcols, _, _ = _im2col(gh, k, 1, k - 1 - pad)
            wf = w.data[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(-1, c)
            gx = (gcols @ wf).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        else:
            gx = _col2im(gm @ wm, (n, h, wd, c), k, stride, pad, ho, wo).transpose(0, 3, 1, 2)
        gw = np.ascontiguousarray((cols.T @ gm).reshape(k, k, c, f).transpose(3, 2, 0, 1))
        if b is None:
            return gx, gw
        return gx, gw, gm.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d", inputs, out, bw)


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; weights are ``[C_in, F_out, k, k]``."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose: expected 4-d operands, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    cw, f, k, k2 = w.shape
    if k != k2:
        raise ShapeError(f"conv2d_transpose: kernel axes 2/3 differ ({k} vs {k2})")
    if c != cw:
        raise ShapeError(f"conv2d_transpose: input channel axis (1) has extent {c} but weights expect {cw}")
    if b is not None and b.shape != (f,):
        raise ShapeError(f"conv2d_transpose: bias shape {b.shape} != ({f},)")
    if k < 1 or stride < 1 or pad < 0:
        raise ShapeError(f"conv2d_transpose: need k >= 1, stride >= 1, pad >= 0 (got {k}, {stride}, {pad})")
    ho, wo = (h - 1) * stride - 2 * pad + k, (wd - 1) * stride - 2 * pad + k
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d_transpose: output extent {ho}x{wo} is empty")
    xm = x.data.transpose(0, 2, 3, 1).reshape(-1, c)
    wm = w.data.transpose(0, 2, 3, 1).reshape(c, -1)
    out = _col2im(xm @ wm, (n, ho, wo, f), k, stride, pad, h, wd)
    if b is not None:
        out += b.data
    out = out.transpose(0, 3, 1, 2)

    def bw(g):
        gcols, _, _ = _im2col(g.transpose(0, 2, 3, 1), k, stride, pad)
        gx = (gcols @ wm.T).reshape(n, h, wd, c).transpose(0, 3, 1, 2)
        gw = np.ascontiguousarray((xm.T @ gcols).reshape(c, k, k, f).transpose(0, 3, 1, 2))
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _emit("conv2d_transpose", inputs, out, bw)
