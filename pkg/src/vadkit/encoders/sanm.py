"""Offline encoder: multi-head attention with a memory filter on the values.

Alongside the usual attention context, each block runs a per-dimension FIR
filter over the projected values (past, current, and future taps) and adds
it after the attention output projection.  With all taps zero the block is
exactly vanilla multi-head attention.

Long inputs are split into fixed-length chunks processed independently;
nothing crosses a chunk boundary, which keeps memory flat for long files
at the cost of context at the seams.
"""

from __future__ import annotations

import numpy as np

from .. import tensor as tz
from ..config import EncoderConfig
from ..errors import ConfigError, ShapeError
from ..tensor import Tensor
from .common import ParamSpec, tap_filter

INPUT_DIM = 160  # stacked pairs of 80-dim frames


def param_specs(cfg: EncoderConfig) -> list[ParamSpec]:
    d, ffn = cfg.width, cfg.ffn_dim
    window = cfg.memory_left + 1 + cfg.memory_right
    specs = [
        ParamSpec("encoder.in.w", (INPUT_DIM, d), "uniform", INPUT_DIM),
        ParamSpec("encoder.in.b", (d,), "zeros"),
    ]
    for b in range(cfg.num_blocks):
        p = f"encoder.block{b}"
        specs += [
            ParamSpec(f"{p}.ln1.g", (d,), "ones"),
            ParamSpec(f"{p}.ln1.b", (d,), "zeros"),
            ParamSpec(f"{p}.attn.wq", (d, d), "uniform", d),
            ParamSpec(f"{p}.attn.bq", (d,), "zeros"),
            ParamSpec(f"{p}.attn.wk", (d, d), "uniform", d),
            ParamSpec(f"{p}.attn.bk", (d,), "zeros"),
            ParamSpec(f"{p}.attn.wv", (d, d), "uniform", d),
            ParamSpec(f"{p}.attn.bv", (d,), "zeros"),
            ParamSpec(f"{p}.attn.wo", (d, d), "uniform", d),
            ParamSpec(f"{p}.attn.bo", (d,), "zeros"),
            ParamSpec(f"{p}.attn.mem", (window, d), "uniform", window),
            ParamSpec(f"{p}.ln2.g", (d,), "ones"),
            ParamSpec(f"{p}.ln2.b", (d,), "zeros"),
            ParamSpec(f"{p}.ffn.w1", (d, ffn), "uniform", d),
            ParamSpec(f"{p}.ffn.b1", (ffn,), "zeros"),
            ParamSpec(f"{p}.ffn.w2", (ffn, d), "uniform", ffn),
            ParamSpec(f"{p}.ffn.b2", (d,), "zeros"),
        ]
    specs += [
        ParamSpec("encoder.out_ln.g", (d,), "ones"),
        ParamSpec("encoder.out_ln.b", (d,), "zeros"),
    ]
    return specs


def attention(params: dict[str, Tensor], prefix: str, h: Tensor, cfg: EncoderConfig) -> Tensor:
    """Memory-augmented multi-head attention over one chunk."""
    d = cfg.width
    if h.shape[1] != d:
        raise ShapeError("attention", h.shape, (h.shape[0], d))
    if d % cfg.heads != 0:
        raise ConfigError(f"width {d} not divisible by heads {cfg.heads}")
    d_head = d // cfg.heads
    q = tz.linear(h, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = tz.linear(h, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = tz.linear(h, params[f"{prefix}.wv"], params[f"{prefix}.bv"])
    contexts = []
    for i in range(cfg.heads):
        cols = (slice(None), slice(i * d_head, (i + 1) * d_head))
        scores = tz.scale(tz.matmul(tz.slice_(q, cols), tz.transpose(tz.slice_(k, cols))), 1.0 / np.sqrt(d_head))
        contexts.append(tz.matmul(tz.softmax(scores, axis=-1), tz.slice_(v, cols)))
    projected = tz.linear(tz.concat(contexts, axis=1), params[f"{prefix}.wo"], params[f"{prefix}.bo"])
    memory = tap_filter(v, params[f"{prefix}.mem"], cfg.memory_left, cfg.memory_right)
    return tz.add(projected, memory)


def block(params: dict[str, Tensor], index: int, x: Tensor, cfg: EncoderConfig) -> Tensor:
    p = f"encoder.block{index}"
    h = tz.layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
    x = tz.add(x, attention(params, f"{p}.attn", h, cfg))
    h = tz.layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
    inner = tz.relu(tz.linear(h, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"]))
    return tz.add(x, tz.linear(inner, params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"]))


def chunk_sequence(x: Tensor, chunk_frames: int) -> list[Tensor]:
    """Split (T, d) into consecutive spans of chunk_frames (last may be short)."""
    if chunk_frames < 1:
        raise ConfigError(f"chunk_frames must be >= 1, got {chunk_frames}")
    n = x.shape[0]
    if n <= chunk_frames:
        return [x]
    return [tz.slice_(x, slice(start, min(start + chunk_frames, n))) for start in range(0, n, chunk_frames)]


def forward(params: dict[str, Tensor], feats: Tensor, cfg: EncoderConfig) -> Tensor:
    """(T, 160) stacked features -> (T, width); blocks run per chunk."""
    if feats.shape[1] != INPUT_DIM:
        raise ShapeError("sanm_forward", feats.shape, (feats.shape[0], INPUT_DIM))
    x = tz.relu(tz.linear(feats, params["encoder.in.w"], params["encoder.in.b"]))
    outs = []
    for chunk in chunk_sequence(x, cfg.chunk_frames):
        for b in range(cfg.num_blocks):
            chunk = block(params, b, chunk, cfg)
        outs.append(chunk)
    merged = outs[0] if len(outs) == 1 else tz.concat(outs, axis=0)
    return tz.layer_norm(merged, params["encoder.out_ln.g"], params["encoder.out_ln.b"])


def latency_frames(cfg: EncoderConfig) -> int:
    """Offline: effectively the whole chunk."""
    return cfg.chunk_frames
