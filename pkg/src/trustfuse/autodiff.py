"""Minimal reverse-mode differentiation engine on dense float64 arrays.

Tapes are built define-by-run: every operation returns a new Tensor that
remembers its parents and a closure propagating the output gradient back.
All data is float64; every primitive checks its output for NaN/Inf and
aborts instead of propagating silently (toggle with `finite_checks`).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    NumericError,
    UsageError,
)

_FINITE_CHECKS = True


@contextlib.contextmanager
def finite_checks(enabled: bool):
    """Temporarily enable/disable the per-primitive finiteness check."""
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _check_finite(data: np.ndarray, op: str) -> None:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by '{op}'")


class Tensor:
    """A float64 array plus its position on the differentiation tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple = (),
        _backward_fn: Callable | None = None,
        _op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        _check_finite(self.data, _op)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad: np.ndarray | None = None
        self._parents = _parents if self.requires_grad else ()
        self._backward_fn = _backward_fn if self.requires_grad else None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` over the axes numpy broadcast when producing it."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents, backward_fn, op: str) -> Tensor:
    return Tensor(data, _parents=parents, _backward_fn=backward_fn, _op=op)


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out_data, (a, b), bwd, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out_data, (a, b), bwd, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out_data, (a, b), bwd, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out_data, (a, b), bwd, "div")


def power(a, exponent: float) -> Tensor:
    """Raise to a constant real power."""
    a = as_tensor(a)
    out_data = a.data ** exponent

    def bwd(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(out_data, (a,), bwd, "power")


# ---------------------------------------------------------------------------
# linear algebra / shape

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(out_data, (a, b), bwd, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.shape),)

    return _make(out_data, (a,), bwd, "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out_data = np.swapaxes(a.data, ax1, ax2)

    def bwd(g):
        return (np.swapaxes(g, ax1, ax2),)

    return _make(out_data, (a,), bwd, "swapaxes")


def concat(parts: Sequence, axis: int) -> Tensor:
    """Join tensors along `axis`; all other extents must agree."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat of zero parts")
    ref = list(parts[0].shape)
    for p in parts[1:]:
        cand = list(p.shape)
        if len(cand) != len(ref) or any(
            c != r for i, (c, r) in enumerate(zip(cand, ref)) if i != axis % len(ref)
        ):
            raise DimensionError(
                f"concat: inconsistent extents {parts[0].shape} vs {p.shape} off axis {axis}"
            )
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        grads = []
        for i in range(len(parts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            grads.append(g[tuple(slicer)])
        return tuple(grads)

    return _make(out_data, tuple(parts), bwd, "concat")


def split(a, sizes: Sequence[int], axis: int) -> list[Tensor]:
    """Inverse of concat: cut `a` into chunks of the given extents."""
    a = as_tensor(a)
    if sum(sizes) != a.shape[axis]:
        raise DimensionError(
            f"split: sizes {list(sizes)} do not cover extent {a.shape[axis]}"
        )
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for i in range(len(sizes)):
        slicer = [slice(None)] * a.ndim
        slicer[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(slicer)

        def bwd(g, sl=sl):
            full = np.zeros_like(a.data)
            full[sl] = g
            return (full,)

        outs.append(_make(a.data[sl], (a,), bwd, "split"))
    return outs


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out_data, (a,), bwd, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


def max_(a, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum along an axis; ties share the gradient equally."""
    a = as_tensor(a)
    out_data = a.data.max(axis=axis, keepdims=True)
    mask = (a.data == out_data).astype(np.float64)
    mask /= mask.sum(axis=axis, keepdims=True)
    result = out_data if keepdims else np.squeeze(out_data, axis=axis)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * mask,)

    return _make(result, (a,), bwd, "max")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values into [lo, hi]; gradient flows only through the interior."""
    a = as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    inside = ((a.data > lo) & (a.data < hi)).astype(np.float64)

    def bwd(g):
        return (g * inside,)

    return _make(out_data, (a,), bwd, "clip")


def gather_rows(a, indices) -> Tensor:
    """Pick one entry per row of a 2-D tensor: out[i] = a[i, indices[i]]."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise DimensionError(f"gather_rows: got {a.shape} with indices {idx.shape}")
    if idx.min() < 0 or idx.max() >= a.shape[1]:
        raise DataError("gather_rows: index out of range")
    rows = np.arange(a.shape[0])
    out_data = a.data[rows, idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        return (full,)

    return _make(out_data, (a,), bwd, "gather_rows")


# ---------------------------------------------------------------------------
# nonlinearities

def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    a = as_tensor(a)
    slope = np.where(a.data > 0, 1.0, alpha)
    out_data = a.data * slope

    def bwd(g):
        return (g * slope,)

    return _make(out_data, (a,), bwd, "leaky_relu")


def elu(a) -> Tensor:
    a = as_tensor(a)
    neg = np.expm1(np.minimum(a.data, 0.0))
    out_data = np.where(a.data > 0, a.data, neg)

    def bwd(g):
        # elu' is 1 above zero and elu(x)+1 below; derive it from the
        # output so the closure retains no extra full-size buffer.
        return (g * np.where(out_data > 0, 1.0, out_data + 1.0),)

    return _make(out_data, (a,), bwd, "elu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def bwd(g):
        return (g * out_data * (1.0 - out_data),)

    return _make(out_data, (a,), bwd, "sigmoid")


_ACTIVATIONS = {
    "leaky-relu": lambda a: leaky_relu(a, 0.2),
    "elu": elu,
    "sigmoid": sigmoid,
}


def activation(a, kind: str) -> Tensor:
    """Elementwise nonlinearity selected by name."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown activation '{kind}'; expected one of {sorted(_ACTIVATIONS)}"
        ) from None
    return fn(a)


def softmax(a, axis: int = -1) -> Tensor:
    """Max-shifted softmax along `axis`; slices sum to 1."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), bwd, "softmax")


def masked_softmax(a, mask: np.ndarray, axis: int = -1) -> Tensor:
    """Softmax restricted to positions where `mask` is nonzero.

    Off-support entries are exactly 0 in the output and receive no
    gradient. Every slice must contain at least one supported position.
    """
    a = as_tensor(a)
    m = np.asarray(mask, dtype=np.float64)
    m = np.broadcast_to(m, a.shape)
    neg = np.where(m > 0, a.data, -np.inf)
    hi = neg.max(axis=axis, keepdims=True)
    if not np.all(np.isfinite(hi)):
        raise DataError("masked_softmax: a slice has empty support")
    e = np.where(m > 0, np.exp(a.data - hi), 0.0)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - dot),)

    return _make(out_data, (a,), bwd, "masked_softmax")


def pair_softmax(s, t, mask: np.ndarray, alpha: float = 0.2) -> Tensor:
    """Masked row-softmax of leaky-relu pair scores in one fused step.

    Equivalent to ``masked_softmax(leaky_relu(s + t^T, alpha), mask)`` for
    source scores s (..., d, 1) and target scores t (..., d, 1), but avoids
    materializing intermediate (..., d, d) tape nodes. When the scores are
    comfortably inside the exp range the numerators factorize:

        exp(leaky(s_u + t_v)) = exp(s_u) exp(t_v)            if s_u + t_v > 0
                              = exp(a s_u) exp(a t_v)        otherwise

    so only the (..., d, 1) score vectors go through exp; otherwise it
    falls back to the max-shifted dense form.
    """
    s, t = as_tensor(s), as_tensor(t)
    if s.shape[-1] != 1 or t.shape[-1] != 1:
        raise DimensionError(
            f"pair_softmax: scores must end in a singleton axis, "
            f"got {s.shape} and {t.shape}"
        )
    sd, td = s.data, t.data
    tt = np.swapaxes(td, -1, -2)
    m = np.asarray(mask, dtype=np.float64)
    pos = (sd + tt) > 0.0
    if max(np.abs(sd).max(initial=0.0), np.abs(td).max(initial=0.0)) < 300.0:
        num = np.where(pos,
                       np.exp(sd) * np.exp(tt),
                       np.exp(alpha * sd) * np.exp(alpha * tt))
        num = num * m
        den = num.sum(axis=-1, keepdims=True)
        if np.any(den <= 0.0):
            raise DataError("pair_softmax: a row has empty support")
        out_data = num / den
    else:
        z = sd + tt
        z = np.where(pos, z, alpha * z)
        neg = np.where(m > 0, z, -np.inf)
        hi = neg.max(axis=-1, keepdims=True)
        if not np.all(np.isfinite(hi)):
            raise DataError("pair_softmax: a row has empty support")
        e = np.where(m > 0, np.exp(z - hi), 0.0)
        out_data = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        dz = out_data * (g - dot)
        dz = np.where(pos, dz, alpha * dz)
        ds = _unbroadcast(dz.sum(axis=-1, keepdims=True), s.shape)
        dt = _unbroadcast(np.swapaxes(dz.sum(axis=-2, keepdims=True), -1, -2),
                          t.shape)
        return ds, dt

    return _make(out_data, (s, t), bwd, "pair_softmax")


def gat_attend(s, t, values, mask: np.ndarray, alpha: float = 0.2) -> Tensor:
    """Attention-weighted neighborhood sum in one fused step.

    Equivalent to ``matmul(pair_softmax(s, t, mask, alpha), values)`` but
    never puts the (..., d, d) attention matrix on the tape. Because the
    unnormalized weights factorize per edge sign,

        exp(leaky(s_u + t_v)) = exp(s_u) exp(t_v)        if s_u + t_v > 0
                              = exp(a s_u) exp(a t_v)    otherwise,

    both the aggregation and the softmax denominator collapse onto matmuls
    with the binary masks (edges split by sign), and the backward pass
    reuses those masks instead of re-touching d*d-sized temporaries. Falls
    back to the max-shifted dense form for out-of-range scores.
    """
    s, t, values = as_tensor(s), as_tensor(t), as_tensor(values)
    sd, td, vd = s.data, t.data, values.data
    if max(np.abs(sd).max(initial=0.0), np.abs(td).max(initial=0.0)) >= 300.0:
        return matmul(pair_softmax(s, t, mask, alpha), values)
    m = np.asarray(mask, dtype=np.float64)
    tt = np.swapaxes(td, -1, -2)
    big_p, small_p = np.exp(sd), np.exp(alpha * sd)  # (..., d, 1)
    big_q, small_q = np.exp(td), np.exp(alpha * td)  # (..., d, 1)
    pos = m * np.greater(sd, -tt)  # supported edges with positive pair score
    neg = m - pos
    agg_p, agg_n = pos @ (big_q * vd), neg @ (small_q * vd)  # (..., d, f)
    den_p, den_n = pos @ big_q, neg @ small_q  # (..., d, 1)
    den = big_p * den_p + small_p * den_n
    if np.any(den <= 0.0):
        raise DataError("gat_attend: a row has empty support")
    out_data = (big_p * agg_p + small_p * agg_n) / den

    def bwd(g):
        gnum = g / den
        gden = -(g * out_data).sum(axis=-1, keepdims=True) / den
        gbig_p = (gnum * agg_p).sum(-1, keepdims=True) + gden * den_p
        gsmall_p = (gnum * agg_n).sum(-1, keepdims=True) + gden * den_n
        pos_t, neg_t = np.swapaxes(pos, -1, -2), np.swapaxes(neg, -1, -2)
        g_qv = pos_t @ (big_p * gnum)
        g_qv_small = neg_t @ (small_p * gnum)
        gbig_q = (g_qv * vd).sum(-1, keepdims=True) + pos_t @ (big_p * gden)
        gsmall_q = (g_qv_small * vd).sum(-1, keepdims=True) + neg_t @ (small_p * gden)
        gv = big_q * g_qv + small_q * g_qv_small
        gs = big_p * gbig_p + alpha * small_p * gsmall_p
        gt = big_q * gbig_q + alpha * small_q * gsmall_q
        return (_unbroadcast(gs, s.shape), _unbroadcast(gt, t.shape),
                _unbroadcast(gv, values.shape))

    return _make(out_data, (s, t, values), bwd, "gat_attend")


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _make(out_data, (a,), bwd, "log")


def cross_entropy(logits, labels) -> Tensor:
    """Mean over rows of -log softmax(logits)[label]."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or y.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy: logits {logits.shape} vs labels {y.shape}"
        )
    n, c = logits.shape
    if y.min() < 0 or y.max() >= c:
        raise DataError(f"cross_entropy: label out of range [0, {c})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    out_data = -logp[np.arange(n), y].mean()
    probs = np.exp(logp)

    def bwd(g):
        grad = probs.copy()
        grad[np.arange(n), y] -= 1.0
        return (g * grad / n,)

    return _make(out_data, (logits,), bwd, "cross_entropy")


# ---------------------------------------------------------------------------
# reverse pass

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate `.grad` on every tensor reachable from `loss`.

    `loss` must be scalar. Gradients accumulate, so leaves used several
    times receive the sum of their contributions.
    """
    if loss.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        grads = node._backward_fn(node.grad)
        for parent, g in zip(node._parents, grads):
            if not parent.requires_grad or g is None:
                continue
            _check_finite(g, "backward")
            if parent.grad is None:
                parent.grad = np.array(g, dtype=np.float64, copy=True)
            else:
                parent.grad += g


def grad_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    point: dict[str, np.ndarray],
    eps: float = 1e-5,
) -> float:
    """Compare reverse-mode gradients of `f` against central differences.

    Returns max over all coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    leaves = {k: Tensor(v, requires_grad=True) for k, v in point.items()}
    loss = f(leaves)
    if loss.size != 1:
        raise UsageError("grad_check: f must return a scalar")
    backward(loss)
    analytic = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in leaves.items()
    }

    worst = 0.0
    for name, base in point.items():
        base = np.asarray(base, dtype=np.float64)
        flat = base.reshape(-1)
        for i in range(flat.size):
            plus = flat.copy()
            plus[i] += eps
            minus = flat.copy()
            minus[i] -= eps
            pt_hi = dict(point)
            pt_hi[name] = plus.reshape(base.shape)
            pt_lo = dict(point)
            pt_lo[name] = minus.reshape(base.shape)
            f_hi = f({k: Tensor(v) for k, v in pt_hi.items()}).item()
            f_lo = f({k: Tensor(v) for k, v in pt_lo.items()}).item()
            if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
                raise NumericError("grad_check: non-finite evaluation at perturbation")
            numeric = (f_hi - f_lo) / (2.0 * eps)
            a = analytic[name].reshape(-1)[i]
            err = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, err)
    return worst


def collect_gradients(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient map for a named parameter dict after `backward`."""
    out = {}
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if g.shape != t.data.shape:
            raise DimensionError(f"gradient shape mismatch for '{name}'")
        out[name] = g
    return out
