"""Recurrent encoder: stride-2 convolution front end plus mixing blocks.

Each block is two residual sub-blocks, time mixing then channel mixing,
each wrapped as x + Dropout(SubBlock(LayerNorm(x))).  Time mixing runs the
per-channel exponentially decayed key-value recurrence ("wkv") with a
running-max shift for stability, so inference carries O(1) state per
channel and streams with zero model lookahead.

The convolution consumes raw 80-dim frames and does its own factor-2 time
subsampling; this path must not also receive externally downsampled
features.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as tz
from ..config import EncoderConfig
from ..errors import ContractError, ShapeError
from ..tensor import Tensor
from .common import ParamSpec, shift_rows

RAW_DIM = 80
_KERNEL = 3
_STRIDE = 2
CONV_FREQ_OUT = (RAW_DIM - _KERNEL) // _STRIDE + 1  # 39


def param_specs(cfg: EncoderConfig) -> list[ParamSpec]:
    d, ch, hidden = cfg.width, cfg.conv_channels, cfg.hidden_dim
    specs = [
        ParamSpec("encoder.conv.w", (_KERNEL * _KERNEL, ch), "uniform", _KERNEL * _KERNEL),
        ParamSpec("encoder.conv.b", (ch,), "zeros"),
        ParamSpec("encoder.conv_proj.w", (CONV_FREQ_OUT * ch, d), "uniform", CONV_FREQ_OUT * ch),
        ParamSpec("encoder.conv_proj.b", (d,), "zeros"),
    ]
    for b in range(cfg.num_blocks):
        p = f"encoder.block{b}"
        specs += [
            ParamSpec(f"{p}.ln1.g", (d,), "ones"),
            ParamSpec(f"{p}.ln1.b", (d,), "zeros"),
            ParamSpec(f"{p}.tm.mu_r", (d,), "half"),
            ParamSpec(f"{p}.tm.mu_k", (d,), "half"),
            ParamSpec(f"{p}.tm.mu_v", (d,), "half"),
            ParamSpec(f"{p}.tm.decay", (d,), "zeros"),
            ParamSpec(f"{p}.tm.bonus", (d,), "zeros"),
            ParamSpec(f"{p}.tm.wr", (d, d), "uniform", d),
            ParamSpec(f"{p}.tm.wk", (d, d), "uniform", d),
            ParamSpec(f"{p}.tm.wv", (d, d), "uniform", d),
            ParamSpec(f"{p}.tm.wout", (d, d), "uniform", d),
            ParamSpec(f"{p}.ln2.g", (d,), "ones"),
            ParamSpec(f"{p}.ln2.b", (d,), "zeros"),
            ParamSpec(f"{p}.cm.mu_r", (d,), "half"),
            ParamSpec(f"{p}.cm.mu_k", (d,), "half"),
            ParamSpec(f"{p}.cm.wr", (d, d), "uniform", d),
            ParamSpec(f"{p}.cm.wk", (d, hidden), "uniform", d),
            ParamSpec(f"{p}.cm.wv", (hidden, d), "uniform", hidden),
        ]
    return specs


def _conv_patch_indices(n_time: int) -> np.ndarray:
    """Flat indices of every 3x3 stride-2 patch over a (n_time, 80) input."""
    t0 = np.arange((n_time - _KERNEL) // _STRIDE + 1) * _STRIDE
    f0 = np.arange(CONV_FREQ_OUT) * _STRIDE
    di, dj = np.meshgrid(np.arange(_KERNEL), np.arange(_KERNEL), indexing="ij")
    rows = t0[:, None, None, None] + di[None, None]
    cols = f0[None, :, None, None] + dj[None, None]
    return (rows * RAW_DIM + cols).reshape(-1, _KERNEL * _KERNEL)


def conv_subsample(params: dict[str, Tensor], feats: Tensor) -> Tensor:
    """(T, 80) raw frames -> (floor((T-3)/2)+1, width)."""
    n_time = feats.shape[0]
    if feats.shape[1] != RAW_DIM:
        raise ShapeError("conv_subsample", feats.shape, (n_time, RAW_DIM))
    if n_time < _KERNEL:
        raise ContractError(f"conv_subsample needs at least {_KERNEL} frames, got {n_time}")
    t_out = (n_time - _KERNEL) // _STRIDE + 1
    idx = _conv_patch_indices(n_time)
    patches = tz.take_flat(feats, idx, (t_out * CONV_FREQ_OUT, _KERNEL * _KERNEL))
    conv = tz.relu(tz.linear(patches, params["encoder.conv.w"], params["encoder.conv.b"]))
    stacked = tz.reshape(conv, (t_out, CONV_FREQ_OUT * conv.shape[1]))
    return tz.linear(stacked, params["encoder.conv_proj.w"], params["encoder.conv_proj.b"])


def wkv_sequence(k: Tensor, v: Tensor, decay: Tensor, bonus: Tensor) -> Tensor:
    """Per-channel weighted average over history.

    wkv_t = (sum_{i<t} e^{-(t-1-i) exp(decay) + k_i} v_i + e^{bonus + k_t} v_t)
            / (matching weight sum)

    computed by the running-max recurrence; the first step reduces to v_0
    because its only weight cancels in the ratio.
    """
    if k.shape != v.shape:
        raise ShapeError("wkv", k.shape, v.shape)
    n_frames = k.shape[0]
    ew = tz.exp(decay)
    k0, v0 = tz.slice_(k, 0), tz.slice_(v, 0)
    outs = [v0]
    num, den, peak = v0, Tensor(np.ones(k.shape[1], dtype=np.float32)), k0
    for t in range(1, n_frames):
        kt, vt = tz.slice_(k, t), tz.slice_(v, t)
        with_bonus = tz.add(bonus, kt)
        shift = tz.maximum(peak, with_bonus)
        w_old = tz.exp(tz.sub(peak, shift))
        w_new = tz.exp(tz.sub(with_bonus, shift))
        outs.append(
            tz.div(
                tz.add(tz.mul(w_old, num), tz.mul(w_new, vt)),
                tz.add(tz.mul(w_old, den), w_new),
            )
        )
        decayed = tz.sub(peak, ew)
        shift2 = tz.maximum(decayed, kt)
        w_old2 = tz.exp(tz.sub(decayed, shift2))
        w_new2 = tz.exp(tz.sub(kt, shift2))
        num = tz.add(tz.mul(w_old2, num), tz.mul(w_new2, vt))
        den = tz.add(tz.mul(w_old2, den), w_new2)
        peak = shift2
    return tz.stack(outs, axis=0)


def _lerp(current: Tensor, previous: Tensor, mu: Tensor) -> Tensor:
    ones = Tensor(np.ones(mu.shape[0], dtype=np.float32))
    return tz.add(tz.mul_row(current, mu), tz.mul_row(previous, tz.sub(ones, mu)))


def _time_mix(params: dict[str, Tensor], prefix: str, h: Tensor) -> Tensor:
    shifted = shift_rows(h, 1)
    r = tz.matmul(_lerp(h, shifted, params[f"{prefix}.mu_r"]), params[f"{prefix}.wr"])
    k = tz.matmul(_lerp(h, shifted, params[f"{prefix}.mu_k"]), params[f"{prefix}.wk"])
    v = tz.matmul(_lerp(h, shifted, params[f"{prefix}.mu_v"]), params[f"{prefix}.wv"])
    wkv = wkv_sequence(k, v, params[f"{prefix}.decay"], params[f"{prefix}.bonus"])
    return tz.matmul(tz.mul(tz.sigmoid(r), wkv), params[f"{prefix}.wout"])


def _channel_mix(params: dict[str, Tensor], prefix: str, h: Tensor) -> Tensor:
    shifted = shift_rows(h, 1)
    r = tz.matmul(_lerp(h, shifted, params[f"{prefix}.mu_r"]), params[f"{prefix}.wr"])
    k = tz.matmul(_lerp(h, shifted, params[f"{prefix}.mu_k"]), params[f"{prefix}.wk"])
    return tz.mul(tz.sigmoid(r), tz.matmul(tz.squared_relu(k), params[f"{prefix}.wv"]))


def block(
    params: dict[str, Tensor],
    index: int,
    x: Tensor,
    dropout_rate: float,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    p = f"encoder.block{index}"
    h = tz.layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    x = tz.add(x, tz.dropout(_time_mix(params, f"{p}.tm", h), dropout_rate, training, rng))
    h = tz.layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    return tz.add(x, tz.dropout(_channel_mix(params, f"{p}.cm", h), dropout_rate, training, rng))


def forward(
    params: dict[str, Tensor],
    feats: Tensor,
    cfg: EncoderConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """(T, 80) raw features -> (T', width) at a 20 ms frame shift."""
    x = conv_subsample(params, feats)
    for b in range(cfg.num_blocks):
        x = block(params, b, x, cfg.dropout, training, rng)
    return x


def latency_frames(cfg: EncoderConfig) -> int:
    """Strictly recurrent: no model lookahead."""
    return 0


# ---------------------------------------------------------------------------
# streaming
# ---------------------------------------------------------------------------


def _sigmoid32(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return np.where(x >= 0, 1.0 / (1.0 + np.exp(-x)), np.exp(x) / (1.0 + np.exp(x))).astype(x.dtype)


def _affine(row: np.ndarray, w: Tensor, b: Tensor | None = None) -> np.ndarray:
    acc = row.astype(np.float64) @ w.data.astype(np.float64)
    if b is not None:
        acc = acc + b.data.astype(np.float64)
    return acc.astype(np.float32)


def _ln_row(row: np.ndarray, gain: Tensor, bias: Tensor) -> np.ndarray:
    row64 = row.astype(np.float64)
    mu = row64.mean()
    var = ((row64 - mu) ** 2).mean()
    x_hat = (row64 - mu) / np.sqrt(var + tz.LAYER_NORM_EPS)
    return (x_hat * gain.data + bias.data).astype(np.float32)


class _BlockState:
    __slots__ = ("tm_prev", "cm_prev", "num", "den", "peak")

    def __init__(self, d: int):
        self.tm_prev = np.zeros(d, dtype=np.float32)
        self.cm_prev = np.zeros(d, dtype=np.float32)
        self.num = np.zeros(d, dtype=np.float32)
        self.den = np.zeros(d, dtype=np.float32)
        self.peak: np.ndarray | None = None  # None until the first frame


class RwkvStream:
    """Frame-at-a-time forward carrying per-block recurrent state.

    feed() accepts raw 80-dim frames and emits one hidden frame per
    completed stride-2 convolution window.
    """

    def __init__(self, params: dict[str, Tensor], cfg: EncoderConfig):
        self._params = params
        self._cfg = cfg
        self._patch_idx = _conv_patch_indices(_KERNEL)  # one 3-frame window
        self.reset()

    def reset(self) -> None:
        self._raw: list[np.ndarray] = []
        self._blocks = [_BlockState(self._cfg.width) for _ in range(self._cfg.num_blocks)]

    def feed(self, frame: np.ndarray) -> list[np.ndarray]:
        """Add one raw frame; return hidden frames that became complete."""
        self._raw.append(frame.astype(np.float32))
        out = []
        while len(self._raw) >= _KERNEL:
            window = np.stack(self._raw[:_KERNEL])
            del self._raw[:_STRIDE]
            out.append(self._step(window))
        return out

    def _step(self, window: np.ndarray) -> np.ndarray:
        params, cfg = self._params, self._cfg
        patches = window.reshape(-1)[self._patch_idx.reshape(-1)].reshape(CONV_FREQ_OUT, _KERNEL * _KERNEL)
        conv = np.maximum(_affine(patches, params["encoder.conv.w"], params["encoder.conv.b"]), 0)
        x = _affine(conv.reshape(-1), params["encoder.conv_proj.w"], params["encoder.conv_proj.b"])
        for b, state in enumerate(self._blocks):
            x = self._block_step(f"encoder.block{b}", x, state)
        return x

    def _block_step(self, p: str, x: np.ndarray, state: _BlockState) -> np.ndarray:
        params = self._params
        h = _ln_row(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        prev = state.tm_prev
        mu_r, mu_k, mu_v = (params[f"{p}.tm.{n}"].data for n in ("mu_r", "mu_k", "mu_v"))
        r = _affine(mu_r * h + (1 - mu_r) * prev, params[f"{p}.tm.wr"])
        k = _affine(mu_k * h + (1 - mu_k) * prev, params[f"{p}.tm.wk"])
        v = _affine(mu_v * h + (1 - mu_v) * prev, params[f"{p}.tm.wv"])
        state.tm_prev = h

        if state.peak is None:
            wkv = v.copy()
            state.num, state.den, state.peak = v.copy(), np.ones_like(v), k.copy()
        else:
            with_bonus = params[f"{p}.tm.bonus"].data + k
            shift = np.maximum(state.peak, with_bonus)
            w_old = np.exp(state.peak - shift)
            w_new = np.exp(with_bonus - shift)
            wkv = (w_old * state.num + w_new * v) / (w_old * state.den + w_new)
            decayed = state.peak - np.exp(params[f"{p}.tm.decay"].data)
            shift2 = np.maximum(decayed, k)
            w_old2 = np.exp(decayed - shift2)
            w_new2 = np.exp(k - shift2)
            state.num = w_old2 * state.num + w_new2 * v
            state.den = w_old2 * state.den + w_new2
            state.peak = shift2
        x = x + _affine(_sigmoid32(r) * wkv, params[f"{p}.tm.wout"])

        h = _ln_row(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        prev = state.cm_prev
        mu_r2, mu_k2 = params[f"{p}.cm.mu_r"].data, params[f"{p}.cm.mu_k"].data
        r = _affine(mu_r2 * h + (1 - mu_r2) * prev, params[f"{p}.cm.wr"])
        k = _affine(mu_k2 * h + (1 - mu_k2) * prev, params[f"{p}.cm.wk"])
        state.cm_prev = h
        kk = np.maximum(k, 0)
        return x + _sigmoid32(r) * _affine(kk * kk, params[f"{p}.cm.wv"])
