"""Dense f64 tensors with reverse-mode automatic differentiation.

The design is a gradient tape: while a ``Graph`` is active (used as a context
manager), every operation whose inputs require gradients appends one node in
execution order, so append order is a topological order. ``Graph.backward``
seeds the scalar loss with gradient 1 and replays the nodes once, in reverse,
accumulating gradients additively into every tensor that requires them.

All data is float64. Operations are rank-polymorphic where that is natural in
numpy: the documented signatures below give the trailing dimensions, and any
leading dimensions are treated as independent batch slices.

Ops never clamp or repair non-finite values; ``Tensor.validate`` is the
explicit validation pass that rejects NaN/Inf, applied at module boundaries
(data ingestion, parameter updates, checkpoints) rather than inside the hot
path. Masking helpers intentionally build tensors containing -inf logits;
those are never validated.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BadKernelSizeError,
    FilterTooLongError,
    GraphError,
    NonFiniteError,
    NotScalarError,
    NumericsError,
    ShapeMismatchError,
)

_GRAPH_STACK: list["Graph"] = []

# Max admissible |imag| after the inverse FFT of a real convolution.
_FFT_IMAG_TOL = 1e-9


class Node:
    """One recorded operation: kind, inputs, output, and its backward rule."""

    __slots__ = ("op", "inputs", "out", "backward_fn")

    def __init__(self, op, inputs, out, backward_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn


class Graph:
    """Append-only gradient tape. Single-threaded per instance."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _GRAPH_STACK.pop()
        return False

    def backward(self, loss: "Tensor") -> None:
        """Populate .grad for every recorded tensor that requires it.

        Gradient accumulation is additive over fan-out; each node's rule runs
        exactly once, in reverse append order.
        """
        if loss.data.size != 1:
            raise NotScalarError(f"loss must be scalar, got shape {loss.shape}")
        if loss.grad is None:
            loss.grad = np.zeros_like(loss.data)
        loss.grad += 1.0
        for node in reversed(self.nodes):
            out_grad = node.out.grad
            if out_grad is None:
                continue
            input_grads = node.backward_fn(out_grad)
            for tensor, grad in zip(node.inputs, input_grads):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                tensor.grad += grad


def _active_graph() -> Graph | None:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Tensor:
    """Dense f64 array, optionally attached to a gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "graph")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id: int | None = None
        self.graph: Graph | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def validate(self, what: str = "tensor") -> "Tensor":
        """Hard-fail on NaN/Inf. The explicit validation pass; never clamps."""
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"{what} contains non-finite values")
        return self

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return add(self, scale(other, -1.0))


def as_tensor(x, requires_grad: bool = False) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, requires_grad=requires_grad)


def apply_op(op: str, inputs: Sequence[Tensor], out_data: np.ndarray,
             backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    """Create the output tensor of an operation and record it on the tape.

    ``backward_fn`` maps the output gradient to one gradient (or None) per
    input, in order. This is the public hook other modules use to register
    fused operations (e.g. the cross-entropy loss) alongside the built-ins.
    """
    out = Tensor(out_data, requires_grad=any(t.requires_grad for t in inputs))
    graph = _active_graph()
    if graph is not None and out.requires_grad:
        out.node_id = len(graph.nodes)
        out.graph = graph
        graph.nodes.append(Node(op, tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """Run the reverse pass from a scalar loss over its recorded graph."""
    if loss.data.size != 1:
        raise NotScalarError(f"loss must be scalar, got shape {loss.shape}")
    if loss.graph is None:
        raise GraphError("loss has no recorded graph; build it inside `with Graph():`")
    loss.graph.backward(loss)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape}")
    return apply_op("add", (a, b), a.data + b.data, lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    return apply_op("mul", (a, b), ad * bd, lambda g: (g * bd, g * ad))


def elementwise(a: Tensor, b: Tensor, kind: str) -> Tensor:
    """Pointwise combination of same-shape tensors; kind is "add" or "mul"."""
    if kind == "add":
        return add(a, b)
    if kind == "mul":
        return mul(a, b)
    raise ValueError(f"unknown elementwise kind {kind!r}")


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return apply_op("scale", (a,), a.data * s, lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError("matmul operands must have rank >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul inner dims: {a.shape} vs {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeMismatchError(f"matmul batch dims: {a.shape} vs {b.shape}") from exc
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward_fn(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return apply_op("matmul", (a, b), out, backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x[.., Din] @ w[Din, Dout] + b[Dout]."""
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatchError(
            f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    xd, wd = x.data, w.data
    out = xd @ wd + b.data

    def backward_fn(g):
        gx = g @ wd.T
        gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return apply_op("linear", (x, w, b), out, backward_fn)


# ---------------------------------------------------------------------------
# reductions and shape manipulation


def tsum(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("sum", (x,), np.asarray(xd.sum()),
                    lambda g: (np.full_like(xd, float(g)),))


def sum_lastdim(x: Tensor) -> Tensor:
    xd = x.data
    return apply_op("sum_lastdim", (x,), xd.sum(axis=-1),
                    lambda g: (np.repeat(g[..., None], xd.shape[-1], axis=-1),))


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = x.data.shape
    return apply_op("reshape", (x,), x.data.reshape(shape),
                    lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inv = tuple(np.argsort(axes))
    return apply_op("transpose", (x,), x.data.transpose(axes),
                    lambda g: (g.transpose(inv),))


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along an axis."""
    axis = axis % x.ndim
    idx = tuple(slice(None) if i != axis else slice(start, start + length)
                for i in range(x.ndim))
    xd = x.data

    def backward_fn(g):
        gx = np.zeros_like(xd)
        gx[idx] = g
        return (gx,)

    return apply_op("narrow", (x,), xd[idx].copy(), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    datas = [t.data for t in tensors]
    sizes = [d.shape[axis] for d in datas]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply_op("concat", tuple(tensors), np.concatenate(datas, axis=axis),
                    backward_fn)


def expand_leading(x: Tensor, n: int) -> Tensor:
    """Repeat x along a new leading axis of size n; backward sums it away."""
    out = np.broadcast_to(x.data, (n,) + x.data.shape).copy()
    return apply_op("expand_leading", (x,), out, lambda g: (g.sum(axis=0),))


def gather_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """table[V, D] indexed by integer ids[...] -> out[..., D]."""
    ids = np.asarray(ids)
    td = table.data

    def backward_fn(g):
        gt = np.zeros_like(td)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, td.shape[-1]))
        return (gt,)

    return apply_op("gather_rows", (table,), td[ids], backward_fn)


# ---------------------------------------------------------------------------
# nonlinearities and normalization


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stable softmax along the last axis (max subtraction).

    Tolerates -inf entries (masked logits); those positions get weight 0.
    A slice that is entirely -inf is the caller's error (AllKeysMasked).
    """
    xd = x.data
    m = xd.max(axis=-1, keepdims=True)
    e = np.exp(xd - m)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - dot) * y,)

    return apply_op("softmax", (x,), y, backward_fn)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each last-dim slice to mean 0 / variance 1, then affine."""
    d = x.shape[-1]
    if d < 1 or gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError(
            f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    if eps <= 0:
        raise ValueError("layer_norm eps must be > 0")
    xd = x.data
    mean = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mean) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean) * inv
    gd = gamma.data
    out = xhat * gd + beta.data

    def backward_fn(g):
        gbeta = g.reshape(-1, d).sum(axis=0)
        ggamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dxhat = g * gd
        dx = inv * (dxhat
                    - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, ggamma, gbeta

    return apply_op("layer_norm", (x, gamma, beta), out, backward_fn)


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def relu(x: Tensor) -> Tensor:
    xd = x.data
    pos = xd > 0
    return apply_op("relu", (x,), np.where(pos, xd, 0.0), lambda g: (g * pos,))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return apply_op("tanh", (x,), t, lambda g: (g * (1.0 - t * t),))


def gelu(x: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    xd = x.data
    u = _GELU_C * (xd + _GELU_A * xd**3)
    t = np.tanh(u)
    out = 0.5 * xd * (1.0 + t)

    def backward_fn(g):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * xd * xd)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return apply_op("gelu", (x,), out, backward_fn)


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "gelu": gelu}


def activation(x: Tensor, kind: str) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# convolution machinery


def unfold1d(x: Tensor, window: int, pad: int) -> Tensor:
    """Sliding-window view: x[.., L, D] -> out[.., L, D, window].

    out[.., i, d, k] = x_padded[.., i + k, d] with `pad` zero rows on each
    side, so position i covers input rows i-pad .. i+pad.
    """
    if window < 1 or window % 2 == 0:
        raise BadKernelSizeError(f"window must be odd and >= 1, got {window}")
    if pad != (window - 1) // 2:
        raise BadKernelSizeError(
            f"pad must be (window-1)/2 = {(window - 1) // 2}, got {pad}")
    if x.ndim < 2 or x.shape[-2] < 1:
        raise ShapeMismatchError(f"unfold1d needs [.., L>=1, D], got {x.shape}")
    length = x.shape[-2]
    pad_spec = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (0, 0)]
    xp = np.pad(x.data, pad_spec)
    out = np.stack([xp[..., k:k + length, :] for k in range(window)], axis=-1)

    def backward_fn(g):
        gxp = np.zeros_like(xp)
        for k in range(window):
            gxp[..., k:k + length, :] += g[..., k]
        return (gxp[..., pad:pad + length, :] if pad else gxp,)

    return apply_op("unfold1d", (x,), out, backward_fn)


def _fft_size(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _real_ifft(spectrum: np.ndarray, what: str) -> np.ndarray:
    y = np.fft.ifft(spectrum, axis=-2)
    residue = float(np.abs(y.imag).max()) if y.size else 0.0
    if residue > _FFT_IMAG_TOL:
        raise NumericsError(f"{what}: imaginary residue {residue:.3e} > {_FFT_IMAG_TOL}")
    return y.real


def fft_linear_conv(x: Tensor, h: Tensor) -> Tensor:
    """Per-channel linear convolution, truncated to the signal length.

    x[.., L, D], h[L_h, D] -> out[.., L, D] where out[.., :, d] is the first
    L samples of x[.., :, d] * h[:, d]. Both signals are zero-padded to the
    next power of two >= L + L_h - 1, multiplied in the spectral domain, and
    inverse-transformed; the imaginary residue is checked against 1e-9 before
    being discarded. No cross-channel mixing.
    """
    if x.ndim < 2 or h.ndim != 2:
        raise ShapeMismatchError(f"fft_linear_conv: x {x.shape}, h {h.shape}")
    length, d = x.shape[-2], x.shape[-1]
    filt_len = h.shape[0]
    if h.shape[1] != d:
        raise ShapeMismatchError(f"channel counts differ: x D={d}, h D={h.shape[1]}")
    if filt_len > length:
        raise FilterTooLongError(f"filter length {filt_len} > signal length {length}")
    n = _fft_size(length + filt_len - 1)
    xs = np.fft.fft(x.data, n=n, axis=-2)
    hs = np.fft.fft(h.data, n=n, axis=-2)
    out = _real_ifft(xs * hs, "fft_linear_conv")[..., :length, :]

    def backward_fn(g):
        gs = np.fft.fft(g, n=n, axis=-2)
        # Gradients are cross-correlations: conj in the spectral domain.
        gx = _real_ifft(gs * np.conj(hs), "fft_linear_conv backward")[..., :length, :]
        gh_full = _real_ifft(gs * np.conj(xs), "fft_linear_conv backward")[..., :filt_len, :]
        gh = _unbroadcast(gh_full, h.data.shape)
        return gx, gh

    return apply_op("fft_linear_conv", (x, h), out, backward_fn)
