"""Feedforward encoder with learned memory blocks over past/future frames.

Block layout: up-projection with relu, a memory block over the projected
sequence, and a down-projection back to block width.  Memory-block outputs
carry a skip connection from the previous block's memory output (identity;
widths match).  Look-back order ``lorder`` controls past taps, lookahead
``rorder`` future taps; rorder = 0 gives a strictly causal encoder whose
streaming form emits every frame with zero model lookahead.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .. import tensor as tz
from ..config import EncoderConfig
from ..errors import ShapeError, StreamingUnsupportedError
from ..tensor import Tensor
from .common import ParamSpec, shift_rows

INPUT_DIM = 160  # stacked pairs of 80-dim frames


def param_specs(cfg: EncoderConfig) -> list[ParamSpec]:
    width, proj = cfg.width, cfg.proj_dim
    specs = [
        ParamSpec("encoder.in.w", (INPUT_DIM, width), "uniform", INPUT_DIM),
        ParamSpec("encoder.in.b", (width,), "zeros"),
    ]
    for b in range(cfg.num_blocks):
        p = f"encoder.block{b}"
        specs += [
            ParamSpec(f"{p}.up.w", (width, proj), "uniform", width),
            ParamSpec(f"{p}.up.b", (proj,), "zeros"),
            ParamSpec(f"{p}.mem.a", (cfg.lorder + 1, proj), "uniform", proj),
            ParamSpec(f"{p}.down.w", (proj, width), "uniform", proj),
            ParamSpec(f"{p}.down.b", (width,), "zeros"),
        ]
        if cfg.rorder > 0:
            specs.insert(-2, ParamSpec(f"{p}.mem.c", (cfg.rorder, proj), "uniform", proj))
    specs += [
        ParamSpec("encoder.out.w", (width, width), "uniform", width),
        ParamSpec("encoder.out.b", (width,), "zeros"),
    ]
    return specs


def memory_block(
    p_seq: Tensor,
    prev_block_out: Tensor | None,
    a: Tensor,
    c: Tensor | None,
    lstride: int = 1,
    rstride: int = 1,
) -> Tensor:
    """out_t = prev_t + p_t + sum_i a_i*p_{t-lstride*i} + sum_j c_j*p_{t+rstride*j}.

    Frames shifted past either edge contribute zero.  ``a`` has lorder+1
    rows (tap 0 multiplies the current frame), ``c`` has rorder rows.
    """
    if prev_block_out is not None and prev_block_out.shape != p_seq.shape:
        raise ShapeError("memory_block", p_seq.shape, prev_block_out.shape)
    if a.shape[1] != p_seq.shape[1]:
        raise ShapeError("memory_block", p_seq.shape, a.shape)
    acc = p_seq if prev_block_out is None else tz.add(prev_block_out, p_seq)
    for i in range(a.shape[0]):
        term = tz.mul_row(shift_rows(p_seq, lstride * i), tz.slice_(a, i))
        acc = tz.add(acc, term)
    if c is not None:
        for j in range(1, c.shape[0] + 1):
            term = tz.mul_row(shift_rows(p_seq, -rstride * j), tz.slice_(c, j - 1))
            acc = tz.add(acc, term)
    return acc


def forward(params: dict[str, Tensor], feats: Tensor, cfg: EncoderConfig) -> Tensor:
    """Whole-sequence forward: (T, 160) stacked features -> (T, width)."""
    if feats.shape[1] != INPUT_DIM:
        raise ShapeError("dfsmn_forward", feats.shape, (feats.shape[0], INPUT_DIM))
    x = tz.relu(tz.linear(feats, params["encoder.in.w"], params["encoder.in.b"]))
    prev_mem: Tensor | None = None
    for b in range(cfg.num_blocks):
        p = f"encoder.block{b}"
        proj = tz.relu(tz.linear(x, params[f"{p}.up.w"], params[f"{p}.up.b"]))
        mem = memory_block(
            proj,
            prev_mem,
            params[f"{p}.mem.a"],
            params.get(f"{p}.mem.c"),
            cfg.lstride,
            cfg.rstride,
        )
        x = tz.linear(mem, params[f"{p}.down.w"], params[f"{p}.down.b"])
        prev_mem = mem
    return tz.linear(x, params["encoder.out.w"], params["encoder.out.b"])


def latency_frames(cfg: EncoderConfig) -> int:
    """Model lookahead in output frames: each block adds rorder*rstride."""
    return cfg.num_blocks * cfg.rorder * cfg.rstride


def _affine(row: np.ndarray, w: Tensor, b: Tensor) -> np.ndarray:
    acc = row.astype(np.float64) @ w.data.astype(np.float64) + b.data.astype(np.float64)
    return acc.astype(np.float32)


class DfsmnStream:
    """Frame-at-a-time forward for rorder = 0 configs.

    Keeps one ring buffer of projected frames per block; elementwise
    arithmetic follows the batch op order so outputs agree with
    :func:`forward` to float32 rounding.
    """

    def __init__(self, params: dict[str, Tensor], cfg: EncoderConfig):
        if cfg.rorder != 0:
            raise StreamingUnsupportedError("streaming requires a causal config (rorder = 0)")
        self._params = params
        self._cfg = cfg
        self._buffers: list[deque] = [
            deque(maxlen=cfg.lorder * cfg.lstride + 1) for _ in range(cfg.num_blocks)
        ]

    def reset(self) -> None:
        for buf in self._buffers:
            buf.clear()

    def step(self, frame: np.ndarray) -> np.ndarray:
        """One 160-dim stacked frame in, one width-dim hidden frame out."""
        params, cfg = self._params, self._cfg
        x = np.maximum(_affine(frame, params["encoder.in.w"], params["encoder.in.b"]), 0)
        prev_mem: np.ndarray | None = None
        for b in range(cfg.num_blocks):
            p = f"encoder.block{b}"
            proj = np.maximum(_affine(x, params[f"{p}.up.w"], params[f"{p}.up.b"]), 0)
            buf = self._buffers[b]
            buf.append(proj)
            a = params[f"{p}.mem.a"].data
            acc = proj if prev_mem is None else prev_mem + proj
            for i in range(a.shape[0]):
                back = i * cfg.lstride
                if back < len(buf):
                    acc = acc + a[i] * buf[-1 - back]
            x = _affine(acc, params[f"{p}.down.w"], params[f"{p}.down.b"])
            prev_mem = acc
        return _affine(x, params["encoder.out.w"], params["encoder.out.b"])
