"""Dense float64 tensors (order 1-4) with reverse-mode differentiation.

The engine is define-by-run: entering a ``Tape`` context makes every op on
grad-requiring tensors append one node to the tape, and ``Tape.backward``
replays the nodes in exact reverse append order, summing contributions into
``Tensor.grad``. Outside a tape context ops run grad-free (inference mode).

Storage is always row-major contiguous; no strided views escape an op.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > 4:
            raise ShapeError(f"tensor order must be 1..4, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar used throughout the layer code
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


_ACTIVE_TAPES: list["Tape"] = []


class Tape:
    """Append-only record of one forward pass.

    Node layout: ``(out_tensor, ((input, pull), ...))`` where ``pull`` maps
    the output gradient to that input's gradient contribution. A tensor
    consumed k times appears in k nodes and receives the sum of k pulls.
    """

    def __init__(self):
        self._nodes: list = []

    def __enter__(self) -> "Tape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPES.pop()
        return False

    def __len__(self):
        return len(self._nodes)

    def backward(self, loss: Tensor, leaves: Iterable[Tensor] = ()) -> dict:
        """Accumulate gradients of ``loss`` into every recorded tensor.

        Returns a map from tensor to gradient array covering all touched
        grad-requiring tensors plus the given ``leaves`` (zeros when the
        loss does not depend on a leaf). The tape is cleared afterwards.
        """
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, pulls in reversed(self._nodes):
            g = out.grad
            if g is None:
                continue
            for inp, pull in pulls:
                contrib = pull(g)
                inp.grad = contrib if inp.grad is None else inp.grad + contrib
        grads = {}
        for out, pulls in self._nodes:
            for inp, _ in pulls:
                if inp.grad is not None:
                    grads[inp] = inp.grad
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.data)
            grads[leaf] = leaf.grad
        self._nodes.clear()
        return grads


def backward(loss: Tensor, tape: Tape, leaves: Iterable[Tensor] = ()) -> dict:
    return tape.backward(loss, leaves)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _emit(data: np.ndarray, pulls: Sequence[tuple]) -> Tensor:
    """Wrap an op result, recording it on the active tape if needed."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _ACTIVE_TAPES:
        live = tuple((t, p) for t, p in pulls if t.requires_grad)
        if live:
            out.requires_grad = True
            _ACTIVE_TAPES[-1]._nodes.append((out, live))
            return out
    out.requires_grad = False
    return out


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _emit(data, (
        (a, lambda g, sh=a.shape: _unbroadcast(g, sh)),
        (b, lambda g, sh=b.shape: _unbroadcast(g, sh)),
    ))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _emit(data, (
        (a, lambda g, sh=a.shape: _unbroadcast(g, sh)),
        (b, lambda g, sh=b.shape: _unbroadcast(np.negative(g), sh)),
    ))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _emit(data, (
        (a, lambda g, o=b.data, sh=a.shape: _unbroadcast(g * o, sh)),
        (b, lambda g, o=a.data, sh=b.shape: _unbroadcast(g * o, sh)),
    ))


def silu(t: Tensor) -> Tensor:
    x = t.data
    s = 1.0 / (1.0 + np.exp(-x))
    data = x * s

    def pull(g, s=s, x=x):
        tmp = 1.0 - s
        tmp *= x
        tmp += 1.0
        tmp *= s
        tmp *= g
        return tmp

    return _emit(data, ((t, pull),))


def exp(t: Tensor) -> Tensor:
    data = np.exp(t.data)
    return _emit(data, ((t, lambda g, y=data: g * y),))


def log(t: Tensor) -> Tensor:
    data = np.log(t.data)
    return _emit(data, ((t, lambda g, x=t.data: g / x),))


def square(t: Tensor) -> Tensor:
    data = t.data * t.data
    return _emit(data, ((t, lambda g, x=t.data: g * (2.0 * x)),))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "silu": silu,
                "exp": exp, "log": log, "square": square}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name; supported ops: add, sub, mul, silu, exp, log, square."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes through the unclipped range."""
    x = t.data
    data = np.clip(x, lo, hi)
    mask = (x >= lo) & (x <= hi)
    return _emit(data, ((t, lambda g, m=mask: g * m),))


# ---------------------------------------------------------------------------
# reductions and normalizers


def sum_all(t: Tensor) -> Tensor:
    data = np.array([t.data.sum()])
    return _emit(data, ((t, lambda g, sh=t.data.shape: np.full(sh, g[0])),))


def sum_last(t: Tensor) -> Tensor:
    data = t.data.sum(axis=-1)
    if data.ndim == 0:
        data = data.reshape(1)
    return _emit(data, ((t, lambda g, sh=t.data.shape: np.broadcast_to(
        g.reshape(g.shape + (1,)), sh).copy()),))


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    if axis >= t.data.ndim or axis < -t.data.ndim:
        raise ShapeError(f"softmax axis {axis} out of bounds for shape {t.shape}")
    x = t.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def pull(g, y=data, ax=axis):
        return y * (g - (g * y).sum(axis=ax, keepdims=True))

    return _emit(data, ((t, pull),))


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x = t.data
    d = x.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")
    m = x.mean(axis=-1, keepdims=True)
    xc = x - m
    v = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(v + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def pull_x(g, xhat=xhat, inv=inv, w=gain.data, d=d):
        gg = g * w
        t1 = gg.mean(axis=-1, keepdims=True)
        t2 = (gg * xhat).mean(axis=-1, keepdims=True)
        return inv * (gg - t1 - xhat * t2)

    lead = tuple(range(x.ndim - 1))
    return _emit(data, (
        (t, pull_x),
        (gain, lambda g, xhat=xhat, ax=lead: (g * xhat).sum(axis=ax)),
        (bias, lambda g, ax=lead: g.sum(axis=ax)),
    ))


# ---------------------------------------------------------------------------
# contractions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs order >= 2 operands, got {a.shape} @ {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def pull_a(g, o=b.data, sh=a.data.shape):
        return _unbroadcast(g @ o.swapaxes(-1, -2), sh)

    def pull_b(g, o=a.data, sh=b.data.shape):
        return _unbroadcast(o.swapaxes(-1, -2) @ g, sh)

    return _emit(data, ((a, pull_a), (b, pull_b)))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b with the bias broadcast over leading axes."""
    xd, wd = x.data, w.data
    if xd.shape[-1] != wd.shape[0]:
        raise ShapeError(f"affine: inner dims differ for {x.shape} @ {w.shape}")
    if b.data.shape != (wd.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} vs weight {w.shape}")
    data = xd @ wd + b.data
    lead = tuple(range(xd.ndim - 1))

    def pull_w(g, xd=xd):
        return xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])

    return _emit(data, (
        (x, lambda g, wt=wd.T: g @ wt),
        (w, pull_w),
        (b, lambda g, ax=lead: g.sum(axis=ax)),
    ))


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float):
    """Fused softmax(scale * q k^T) v over the last two axes.

    Returns the context tensor and the (constant) attention weights.
    """
    qd, kd, vd = q.data, k.data, v.data
    scores = scale * (qd @ kd.swapaxes(-1, -2))
    m = scores.max(axis=-1, keepdims=True)
    e = np.exp(scores - m)
    a = e / e.sum(axis=-1, keepdims=True)
    data = a @ vd

    cache = []

    def score_grad(g, a=a, vd=vd, scale=scale):
        # shared between the q and k pulls for one backward sweep
        if not cache or cache[0][0] is not g:
            da = g @ vd.swapaxes(-1, -2)
            ds = a * (da - (da * a).sum(axis=-1, keepdims=True))
            ds *= scale
            cache[:] = [(g, ds)]
        return cache[0][1]

    return _emit(data, (
        (q, lambda g, kd=kd: score_grad(g) @ kd),
        (k, lambda g, qd=qd: score_grad(g).swapaxes(-1, -2) @ qd),
        (v, lambda g, at=a.swapaxes(-1, -2): at @ g),
    )), a


def contract(e: Tensor, w: Tensor) -> Tensor:
    """Contract an embedding matrix with an order-4 weight tensor.

    ``e`` is ``(M, d)`` or batched ``(B, M, d)``; ``w`` is ``(M, d, W, d)``.
    out[w, k] = sum_ij e[i, j] * w[i, j, w, k], per batch row.
    """
    if w.data.ndim != 4:
        raise ShapeError(f"contract: weight must be order 4, got {w.shape}")
    if e.data.ndim not in (2, 3):
        raise ShapeError(f"contract: input must be order 2 or 3, got {e.shape}")
    if e.data.shape[-2:] != w.data.shape[:2]:
        raise ShapeError(
            f"contract: contracted indices differ, input {e.shape} vs weight {w.shape}")
    batched = e.data.ndim == 3
    eb = e.data if batched else e.data.reshape((1,) + e.data.shape)
    out = kernels.contract_forward(eb, w.data)
    data = out if batched else out.reshape(out.shape[1:])

    def pull_e(g, w=w.data, batched=batched):
        gb = g if batched else g.reshape((1,) + g.shape)
        d = kernels.contract_backward_e(np.ascontiguousarray(gb), w)
        return d if batched else d.reshape(d.shape[1:])

    def pull_w(g, eb=eb, batched=batched):
        gb = g if batched else g.reshape((1,) + g.shape)
        return kernels.contract_backward_w(eb, np.ascontiguousarray(gb))

    return _emit(data, ((e, pull_e), (w, pull_w)))


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(t: Tensor, shape: tuple) -> Tensor:
    data = np.ascontiguousarray(t.data.reshape(shape))
    return _emit(data, ((t, lambda g, sh=t.data.shape: g.reshape(sh)),))


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along ``axis``."""
    idx = [slice(None)] * t.data.ndim
    idx[axis] = slice(start, start + length)
    data = np.ascontiguousarray(t.data[tuple(idx)])

    def pull(g, sh=t.data.shape, idx=tuple(idx)):
        out = np.zeros(sh)
        out[idx] = g
        return out

    return _emit(data, ((t, pull),))


def swap_last2(t: Tensor) -> Tensor:
    data = np.ascontiguousarray(t.data.swapaxes(-1, -2))
    return _emit(data, ((t, lambda g: np.ascontiguousarray(g.swapaxes(-1, -2))),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    pulls = []
    off = 0
    nd = data.ndim
    for t in tensors:
        n = t.data.shape[axis]
        idx = [slice(None)] * nd
        idx[axis] = slice(off, off + n)

        def pull(g, idx=tuple(idx)):
            return np.ascontiguousarray(g[idx])

        pulls.append((t, pull))
        off += n
    return _emit(data, tuple(pulls))


# ---------------------------------------------------------------------------
# losses


def cross_entropy_logits(logits: Tensor, target) -> Tensor:
    """Summed softmax cross-entropy from raw logits.

    ``target`` is either an index vector ``(B,)`` or a one-hot/probability
    matrix ``(B, C)``; returns the sum over the batch as a scalar tensor.
    """
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy_logits expects (B, C) logits, got {logits.shape}")
    tgt = np.asarray(target)
    if tgt.ndim == 1:
        onehot = np.zeros_like(x)
        onehot[np.arange(x.shape[0]), tgt.astype(np.int64)] = 1.0
    else:
        if tgt.shape != x.shape:
            raise ShapeError(
                f"cross_entropy_logits: target shape {tgt.shape} vs logits {x.shape}")
        onehot = tgt
    m = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - m).sum(axis=1, keepdims=True)) + m
    data = np.array([float(np.sum((lse - x) * onehot))])

    def pull(g, x=x, onehot=onehot, lse=lse):
        p = np.exp(x - lse)
        return g[0] * (p - onehot)

    return _emit(data, ((logits, pull),))


def mse_sum(pred: Tensor, target) -> Tensor:
    """Sum of squared errors against a constant target."""
    tgt = np.asarray(target, dtype=np.float64)
    if tgt.shape != pred.data.shape:
        raise ShapeError(f"mse_sum: target shape {tgt.shape} vs pred {pred.shape}")
    diff = pred.data - tgt
    data = np.array([float(np.sum(diff * diff))])
    return _emit(data, ((pred, lambda g, d=diff: g[0] * 2.0 * d),))


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                           h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, the gradient oracle."""
    x = x.astype(np.float64).copy()
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g
