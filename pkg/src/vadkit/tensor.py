"""Dense-tensor math with reverse-mode gradient accumulation.

Design:

* A ``Tensor`` wraps a numpy array (float32 storage by default; float64
  throughout if constructed from float64, which the gradient checker
  uses).  Reductions (matmul, sums, softmax denominators, layer-norm
  statistics) always accumulate in float64 before casting back.
* Ops append an entry to the thread-local :class:`ComputationRecord`
  whenever any input has ``requires_grad`` and recording is on.  The
  record is a Wengert list: execution order is topological order, and
  :func:`backward` replays it once in reverse.
* Inference wraps itself in :func:`no_grad`, so streaming builds no
  record and allocates nothing per frame beyond carried state.
* Every op validates shapes explicitly (no silent broadcasting) and
  checks its output for NaN/Inf.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, NumericError, ShapeError

LAYER_NORM_EPS = 1e-5

_node_ids = itertools.count()
_tls = threading.local()


class ComputationRecord:
    """Ordered list of executed ops with what backward needs."""

    def __init__(self):
        # entries: (output tensor, input tensors, fn(out_grad) -> per-input grads)
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def clear(self) -> None:
        self.entries.clear()


def _state():
    if not hasattr(_tls, "record"):
        _tls.record = ComputationRecord()
        _tls.recording = True
    return _tls


def active_record() -> ComputationRecord:
    """The calling thread's computation record."""
    return _state().record


class no_grad:
    """Context manager: ops inside build no record."""

    def __enter__(self):
        state = _state()
        self._prev = state.recording
        state.recording = False
        return self

    def __exit__(self, *exc):
        _state().recording = self._prev
        return False


class Tensor:
    """n-dimensional array with optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_is_leaf")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            already_double = isinstance(data, np.ndarray) and data.dtype == np.float64
            dtype = np.float64 if already_double else np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self._is_leaf = True

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar over the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if arr.size and not np.isfinite(arr).all():
        raise NumericError(f"{op}: non-finite value in output")


def _result_dtype(*tensors: Tensor):
    if any(t.data.dtype == np.float64 for t in tensors):
        return np.float64
    return np.float32


def _make(op: str, data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.node_id = next(_node_ids)
    out._is_leaf = False
    state = _state()
    if out.requires_grad and state.recording:
        state.record.entries.append((out, inputs, backward_fn))
    return out


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(op, a.data.shape, b.data.shape)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _make("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("sub", a, b)
    return _make("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _make("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def div(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("div", a, b)
    ad, bd = a.data, b.data
    return _make("div", ad / bd, (a, b), lambda g: (g / bd, -g * ad / (bd * bd)))


def maximum(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("maximum", a, b)
    take_a = a.data >= b.data
    return _make(
        "maximum",
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (g * take_a, g * ~take_a),
    )


def scale(x: Tensor, alpha: float) -> Tensor:
    return _make("scale", x.data * x.data.dtype.type(alpha), (x,), lambda g: (g * alpha,))


def neg(x: Tensor) -> Tensor:
    return _make("neg", -x.data, (x,), lambda g: (-g,))


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(over="ignore"):
        s = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-xd)), np.exp(xd) / (1.0 + np.exp(xd)))
    s = s.astype(xd.dtype)
    return _make("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return _make("relu", np.where(positive, x.data, 0), (x,), lambda g: (g * positive,))


def squared_relu(x: Tensor) -> Tensor:
    r = np.maximum(x.data, 0)
    return _make("squared_relu", r * r, (x,), lambda g: (g * 2.0 * r,))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        e = np.exp(x.data)
    return _make("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _make("log", out, (x,), lambda g: (g / xd,))


# ---------------------------------------------------------------------------
# explicit broadcast ops (no op broadcasts silently)
# ---------------------------------------------------------------------------


def add_row(x: Tensor, v: Tensor) -> Tensor:
    """(T, d) + (d,) applied to every row."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise ShapeError("add_row", x.data.shape, v.data.shape)
    return _make("add_row", x.data + v.data, (x, v), lambda g: (g, g.sum(axis=0, dtype=np.float64).astype(v.data.dtype)))


def mul_row(x: Tensor, v: Tensor) -> Tensor:
    """(T, d) * (d,) applied to every row."""
    if x.data.ndim != 2 or v.data.ndim != 1 or x.data.shape[1] != v.data.shape[0]:
        raise ShapeError("mul_row", x.data.shape, v.data.shape)
    xd, vd = x.data, v.data
    return _make(
        "mul_row",
        xd * vd,
        (x, v),
        lambda g: (g * vd, (g * xd).sum(axis=0, dtype=np.float64).astype(vd.dtype)),
    )


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if bd.ndim != 2 or ad.ndim not in (1, 2) or ad.shape[-1] != bd.shape[0]:
        raise ShapeError("matmul", ad.shape, bd.shape)
    out_dtype = _result_dtype(a, b)
    out = np.matmul(ad.astype(np.float64), bd.astype(np.float64)).astype(out_dtype)

    def backward_fn(g):
        g64 = g.astype(np.float64)
        if ad.ndim == 1:
            ga = np.matmul(bd.astype(np.float64), g64)
            gb = np.outer(ad.astype(np.float64), g64)
        else:
            ga = np.matmul(g64, bd.astype(np.float64).T)
            gb = np.matmul(ad.astype(np.float64).T, g64)
        return ga.astype(ad.dtype), gb.astype(bd.dtype)

    return _make("matmul", out, (a, b), backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w with an optional per-row bias; the one sanctioned row broadcast."""
    xd, wd = x.data, w.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise ShapeError("linear", xd.shape, wd.shape)
    out_dtype = _result_dtype(x, w) if b is None else _result_dtype(x, w, b)
    out64 = np.matmul(xd.astype(np.float64), wd.astype(np.float64))
    if b is not None:
        if b.data.ndim != 1 or b.data.shape[0] != wd.shape[1]:
            raise ShapeError("linear(bias)", b.data.shape, (wd.shape[1],))
        out64 = out64 + b.data.astype(np.float64)
    out = out64.astype(out_dtype)

    def backward_fn(g):
        g64 = g.astype(np.float64)
        gx = np.matmul(g64, wd.astype(np.float64).T).astype(xd.dtype)
        gw = np.matmul(xd.astype(np.float64).T, g64).astype(wd.dtype)
        if b is None:
            return gx, gw
        gb = g64.sum(axis=0).astype(b.data.dtype)
        return gx, gw, gb

    inputs = (x, w) if b is None else (x, w, b)
    return _make("linear", out, inputs, backward_fn)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError("transpose", x.data.shape)
    return _make("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old_shape = x.data.shape
    if int(np.prod(shape)) != x.data.size:
        raise ShapeError("reshape", old_shape, tuple(shape))
    return _make("reshape", x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(old_shape),))


def slice_(x: Tensor, key) -> Tensor:
    sliced = x.data[key]
    shape = x.data.shape

    def backward_fn(g):
        buf = np.zeros(shape, dtype=g.dtype)
        buf[key] = g
        return (buf,)

    return _make("slice", np.array(sliced, copy=True), (x,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make("concat", out, tuple(tensors), backward_fn)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractError("stack of zero tensors")
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward_fn(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i] for i in range(len(tensors)))

    return _make("stack", out, tuple(tensors), backward_fn)


def take_flat(x: Tensor, flat_indices: np.ndarray, out_shape: Sequence[int]) -> Tensor:
    """Gather arbitrary elements by flat index into a new shape."""
    idx = np.asarray(flat_indices, dtype=np.int64)
    out = x.data.reshape(-1)[idx].reshape(out_shape).copy()
    in_shape = x.data.shape

    def backward_fn(g):
        buf = np.zeros(int(np.prod(in_shape)), dtype=g.dtype)
        np.add.at(buf, idx.reshape(-1), g.reshape(-1))
        return (buf.reshape(in_shape),)

    return _make("take_flat", out, (x,), backward_fn)


def pick(x: Tensor, indices: np.ndarray) -> Tensor:
    """out[t] = x[t, indices[t]] for a 2-D tensor."""
    if x.data.ndim != 2:
        raise ShapeError("pick", x.data.shape)
    idx = np.asarray(indices, dtype=np.int64)
    rows = np.arange(x.data.shape[0])
    shape = x.data.shape

    def backward_fn(g):
        buf = np.zeros(shape, dtype=g.dtype)
        np.add.at(buf, (rows, idx), g)
        return (buf,)

    return _make("pick", x.data[rows, idx].copy(), (x,), backward_fn)


# ---------------------------------------------------------------------------
# reductions (double-precision accumulation)
# ---------------------------------------------------------------------------


def sum_(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)
    shape = x.data.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).copy(),)

    return _make("sum", np.asarray(out), (x,), backward_fn)


def mean_(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else x.data.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(x.data.dtype)
    shape = x.data.shape

    def backward_fn(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape).astype(g.dtype).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / n, shape).astype(g.dtype).copy(),)

    return _make("mean", np.asarray(out), (x,), backward_fn)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data.astype(np.float64)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = (e / e.sum(axis=axis, keepdims=True)).astype(x.data.dtype)

    def backward_fn(g):
        inner = (g.astype(np.float64) * s).sum(axis=axis, keepdims=True)
        return ((s * (g - inner)).astype(g.dtype),)

    return _make("softmax", s, (x,), backward_fn)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data.astype(np.float64)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = (shifted - log_z).astype(x.data.dtype)
    probs = np.exp(shifted - log_z)

    def backward_fn(g):
        g_sum = g.astype(np.float64).sum(axis=axis, keepdims=True)
        return ((g - probs * g_sum).astype(g.dtype),)

    return _make("log_softmax", out, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Normalize over the last axis; eps guards zero variance."""
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm", x.data.shape, gain.data.shape, bias.data.shape)
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=-1, keepdims=True)
    var = ((xd - mu) ** 2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    x_hat = (xd - mu) * inv_std
    out = (x_hat * gain.data + bias.data).astype(x.data.dtype)

    def backward_fn(g):
        g64 = g.astype(np.float64)
        d_xhat = g64 * gain.data.astype(np.float64)
        g_gain = (g64 * x_hat).sum(axis=tuple(range(x_hat.ndim - 1))).astype(gain.data.dtype)
        g_bias = g64.sum(axis=tuple(range(x_hat.ndim - 1))).astype(bias.data.dtype)
        gx = inv_std * (
            d_xhat
            - d_xhat.mean(axis=-1, keepdims=True)
            - x_hat * (d_xhat * x_hat).mean(axis=-1, keepdims=True)
        )
        return gx.astype(x.data.dtype), g_gain, g_bias

    return _make("layer_norm", out, (x, gain, bias), backward_fn)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout: identity at inference, kept values scaled by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout requires a seed or Generator")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    mask = mask.astype(x.data.dtype)
    return _make("dropout", x.data * mask, (x,), lambda g: (g * mask,))


def custom_op(name: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Register an externally computed op on the record.

    For ops whose gradient is cheaper analytically than as a composition
    of primitives (the CTC lattice, say).  ``backward_fn(out_grad)`` must
    return one gradient array (or None) per input.
    """
    return _make(name, np.asarray(out_data), tuple(inputs), backward_fn)


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Replays the thread's computation record once in reverse and clears it.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    record = active_record()
    if not record.entries:
        raise ContractError("backward on an empty computation record")

    pending: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for out, inputs, backward_fn in reversed(record.entries):
        out_grad = pending.pop(out.node_id, None)
        if out_grad is None:
            continue
        for inp, grad_part in zip(inputs, backward_fn(out_grad)):
            if grad_part is None or not inp.requires_grad:
                continue
            if inp._is_leaf:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += grad_part.astype(inp.data.dtype)
            else:
                acc = pending.get(inp.node_id)
                pending[inp.node_id] = grad_part if acc is None else acc + grad_part
    record.clear()


def grad_norm(params: Sequence[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Scale all grads so their global norm is at most max_norm; returns it."""
    norm = grad_norm(params)
    if norm > max_norm and norm > 0:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= p.data.dtype.type(factor)
    return norm


# ---------------------------------------------------------------------------
# parameter init and verification
# ---------------------------------------------------------------------------


def uniform_param(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> Tensor:
    k = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-k, k, size=shape).astype(np.float32), requires_grad=True)


def const_param(shape: Sequence[int], value: float) -> Tensor:
    return Tensor(np.full(shape, value, dtype=np.float32), requires_grad=True)


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-4,
    max_coords_per_tensor: int = 24,
    seed: int = 0,
) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` must be a deterministic closure over ``params`` returning a
    scalar tensor.  Parameters are promoted to float64 for the duration
    of the check (both routes see the identical promoted function), then
    restored.  Per coordinate the error is
    ``|analytic - cd| / max(|analytic|, |cd|, 1e-8)``.
    """
    originals = [p.data for p in params]
    rng = np.random.default_rng(seed)
    try:
        for p in params:
            p.data = p.data.astype(np.float64)
            p.grad = None

        loss = f()
        backward(loss)
        analytic = [None if p.grad is None else p.grad.copy() for p in params]

        worst = 0.0
        with no_grad():
            for p, a in zip(params, analytic):
                if a is None:
                    continue
                n = p.data.size
                coords = (
                    np.arange(n)
                    if n <= max_coords_per_tensor
                    else rng.choice(n, size=max_coords_per_tensor, replace=False)
                )
                flat = p.data.reshape(-1)
                for idx in coords:
                    saved = flat[idx]
                    flat[idx] = saved + eps
                    f_plus = f().item()
                    flat[idx] = saved - eps
                    f_minus = f().item()
                    flat[idx] = saved
                    cd = (f_plus - f_minus) / (2.0 * eps)
                    ana = float(a.reshape(-1)[idx])
                    err = abs(ana - cd) / max(abs(ana), abs(cd), 1e-8)
                    worst = max(worst, err)
        return worst
    finally:
        for p, orig in zip(params, originals):
            p.data = orig
            p.grad = None
        active_record().clear()
