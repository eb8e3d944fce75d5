"""Dense float64 tensors with reverse-mode differentiation.

Ops execute eagerly on numpy arrays and append their backward closures to a
module-level tape. ``backward(loss)`` replays the tape in reverse, accumulates
into ``.grad`` of every tensor that requires gradients, then clears the tape;
replaying the same tape twice raises. Everything is single-threaded by
contract; independent graphs must not interleave ops on the shared tape.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf


class ShapeError(ValueError):
    """Operand shapes do not conform."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


class TapeError(RuntimeError):
    """Backward requested on a missing or already-consumed tape."""


# Runtime switches. finite_checks costs one reduction per op; worth it at desk
# scale where a silent NaN would poison a whole training run.
finite_checks = True

_SQRT1_2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_epoch")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._epoch: int | None = None  # tape epoch of the producing op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"


def parameter(data, name: str | None = None) -> Tensor:
    """Leaf tensor that accumulates gradients."""
    return Tensor(data, requires_grad=True, name=name)


# --------------------------------------------------------------------------
# Tape
# --------------------------------------------------------------------------

class _Tape:
    def __init__(self):
        self.nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self.epoch = 0
        self.enabled = True


_tape = _Tape()


class no_grad:
    """Context manager: ops inside neither record nor require gradients."""

    def __enter__(self):
        self._prev = _tape.enabled
        _tape.enabled = False
        return self

    def __exit__(self, *exc):
        _tape.enabled = self._prev
        return False


def tape_size() -> int:
    return len(_tape.nodes)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if finite_checks and not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _result(data: np.ndarray, op: str, *inputs: Tensor) -> Tensor:
    _check_finite(data, op)
    rg = _tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=rg)
    return out


def _record(out: Tensor, backward_fn: Callable[[np.ndarray], None]) -> None:
    if out.requires_grad:
        out._epoch = _tape.epoch
        _tape.nodes.append((out, backward_fn))


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor the scalar ``loss`` depends on.

    Accumulation is additive; the tape is cleared afterwards and replaying it
    again raises ``TapeError``.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not require gradients; nothing was recorded")
    if loss._epoch is not None and loss._epoch != _tape.epoch:
        raise TapeError("tape already consumed by an earlier backward")
    _accum(loss, np.ones_like(loss.data))
    for out, fn in reversed(_tape.nodes):
        if out.grad is not None:
            fn(out.grad)
    _tape.nodes.clear()
    _tape.epoch += 1


# --------------------------------------------------------------------------
# Ops
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = _result(a.data @ b.data, "matmul", a, b)

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    _record(out, bwd)
    return out


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"affine: {x.shape} @ {w.shape}")
    if b.shape != (w.shape[1],):
        raise ShapeError(f"affine: bias {b.shape} vs {w.shape[1]} outputs")
    out = _result(x.data @ w.data + b.data, "affine", x, w, b)

    def bwd(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    _record(out, bwd)
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, "add", a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    _record(out, bwd)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(a.data * c, "scale", a)

    def bwd(g):
        _accum(a, g * c)

    _record(out, bwd)
    return out


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, "hadamard", a, b)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _record(out, bwd)
    return out


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need 2-D, got {a.shape}")
    out = _result(a.data.T.copy(), "transpose", a)

    def bwd(g):
        _accum(a, g.T)

    _record(out, bwd)
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = _result(a.data.reshape(shape).copy(), "reshape", a)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    _record(out, bwd)
    return out


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-row matrices [1, d] into a [len(rows), d] matrix."""
    if not rows:
        raise ShapeError("stack_rows: empty input")
    d = rows[0].shape
    if any(r.data.ndim != 2 or r.shape[0] != 1 or r.shape != d for r in rows):
        raise ShapeError("stack_rows: rows must all be [1, d]")
    out = _result(np.concatenate([r.data for r in rows], axis=0), "stack_rows", *rows)

    def bwd(g):
        for i, r in enumerate(rows):
            _accum(r, g[i : i + 1])

    _record(out, bwd)
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization followed by learned scale and shift."""
    if x.data.ndim != 2:
        raise ShapeError(f"layer_norm: need 2-D, got {x.shape}")
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm: gain/bias must be ({d},)")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = _result(xhat * gain.data + bias.data, "layer_norm", x, gain, bias)

    def bwd(g):
        _accum(gain, (g * xhat).sum(axis=0))
        _accum(bias, g.sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            m1 = gx.mean(axis=1, keepdims=True)
            m2 = (gx * xhat).mean(axis=1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    _record(out, bwd)
    return out


def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"softmax_rows: need 2-D, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    out = _result(p, "softmax_rows", x)

    def bwd(g):
        _accum(x, p * (g - (g * p).sum(axis=1, keepdims=True)))

    _record(out, bwd)
    return out


def gelu(x: Tensor) -> Tensor:
    """Exact x * Phi(x) with the erf-based normal CDF."""
    phi_cdf = 0.5 * (1.0 + erf(x.data * _SQRT1_2))
    out = _result(x.data * phi_cdf, "gelu", x)

    def bwd(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        _accum(x, g * (phi_cdf + x.data * pdf))

    _record(out, bwd)
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))
    out = _result(y, "sigmoid", x)

    def bwd(g):
        _accum(x, g * y * (1.0 - y))

    _record(out, bwd)
    return out


def mean_pool_rows(x: Tensor) -> Tensor:
    """Column means of an [n, d] matrix; returns a [d] vector."""
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise ShapeError(f"mean_pool_rows: need non-empty 2-D, got {x.shape}")
    n = x.shape[0]
    out = _result(x.data.mean(axis=0), "mean_pool_rows", x)

    def bwd(g):
        _accum(x, np.broadcast_to(g / n, x.shape).copy())

    _record(out, bwd)
    return out


def attention_core(q: Tensor, k: Tensor, v: Tensor, n_heads: int,
                   probs_out: list | None = None) -> Tensor:
    """Scaled dot-product attention over head-sliced projections.

    q, k, v are the full [n, d] projections; columns are split into n_heads
    contiguous slices, attended independently, and re-concatenated. When
    probs_out is given, the [heads, n, n] softmax matrix is appended to it.
    """
    if q.shape != k.shape or q.shape != v.shape or q.data.ndim != 2:
        raise ShapeError(f"attention_core: q/k/v shapes {q.shape}/{k.shape}/{v.shape}")
    n, d = q.shape
    if d % n_heads != 0:
        raise ShapeError(f"attention_core: d={d} not divisible by heads={n_heads}")
    dh = d // n_heads
    alpha = 1.0 / math.sqrt(dh)

    def heads(t):  # [n, d] -> [h, n, dh]
        return t.reshape(n, n_heads, dh).transpose(1, 0, 2)

    qh, kh, vh = heads(q.data), heads(k.data), heads(v.data)
    s = (qh @ kh.transpose(0, 2, 1)) * alpha
    s -= s.max(axis=2, keepdims=True)
    e = np.exp(s)
    p = e / e.sum(axis=2, keepdims=True)
    if probs_out is not None:
        probs_out.append(p.copy())
    a = p @ vh  # [h, n, dh]
    out = _result(a.transpose(1, 0, 2).reshape(n, d), "attention_core", q, k, v)

    def bwd(g):
        gh = g.reshape(n, n_heads, dh).transpose(1, 0, 2)
        _accum(v, (p.transpose(0, 2, 1) @ gh).transpose(1, 0, 2).reshape(n, d))
        dp = gh @ vh.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=2, keepdims=True))
        _accum(q, ((ds @ kh) * alpha).transpose(1, 0, 2).reshape(n, d))
        _accum(k, ((ds.transpose(0, 2, 1) @ qh) * alpha).transpose(1, 0, 2).reshape(n, d))

    _record(out, bwd)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ShapeError(f"dropout: rate {rate} outside [0, 1)")
    if rate == 0.0:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = _result(x.data * mask, "dropout", x)

    def bwd(g):
        _accum(x, g * mask)

    _record(out, bwd)
    return out


def cross_entropy(logits: Tensor, labels, class_weights=None) -> Tensor:
    """Weighted mean of -log softmax(logits)[label] over the batch."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.shape}")
    b, c = logits.shape
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (b,):
        raise ShapeError(f"cross_entropy: {b} logit rows vs labels shape {y.shape}")
    if y.min(initial=0) < 0 or y.max(initial=0) >= c:
        raise ValueError(f"cross_entropy: label outside [0, {c})")
    if class_weights is None:
        w = np.ones(c)
    else:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (c,):
            raise ShapeError(f"cross_entropy: class_weights must be ({c},)")
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    nll = lse[:, 0] - z[np.arange(b), y]
    wy = w[y]
    wsum = wy.sum()
    out = _result(np.asarray((wy * nll).sum() / wsum), "cross_entropy", logits)

    def bwd(g):
        p = np.exp(z - lse)
        p[np.arange(b), y] -= 1.0
        _accum(logits, (float(g) / wsum) * wy[:, None] * p)

    _record(out, bwd)
    return out
