"""Shared encoder plumbing: parameter specs, seeded init, sequence shifts."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .. import tensor as tz
from ..errors import ContractError
from ..tensor import Tensor


@dataclass(frozen=True)
class ParamSpec:
    """Declares one named parameter: shape plus init recipe."""

    name: str
    shape: tuple[int, ...]
    init: str  # uniform | zeros | ones | half
    fan_in: int = 0
    trainable: bool = True


def materialize(specs: list[ParamSpec], seed: int) -> dict[str, Tensor]:
    """Create parameters from specs, each from its own name-derived stream.

    Seeding by crc32(name) xor the global seed makes init independent of
    declaration order and stable under architecture edits elsewhere.
    """
    params: dict[str, Tensor] = {}
    for spec in specs:
        if spec.name in params:
            raise ContractError(f"duplicate parameter name {spec.name!r}")
        if spec.init == "uniform":
            rng = np.random.default_rng((zlib.crc32(spec.name.encode("utf-8")) ^ seed) & 0xFFFFFFFF)
            tensor = tz.uniform_param(spec.shape, spec.fan_in, rng)
        elif spec.init == "zeros":
            tensor = tz.const_param(spec.shape, 0.0)
        elif spec.init == "ones":
            tensor = tz.const_param(spec.shape, 1.0)
        elif spec.init == "half":
            tensor = tz.const_param(spec.shape, 0.5)
        else:
            raise ContractError(f"unknown init kind {spec.init!r}")
        tensor.requires_grad = spec.trainable
        params[spec.name] = tensor
    return params


def shift_rows(x: Tensor, offset: int) -> Tensor:
    """Shift a (T, d) sequence in time with zero padding.

    offset > 0 delays (row t holds x[t - offset]); offset < 0 advances
    (row t holds x[t + offset magnitude]).  |offset| >= T yields all zeros.
    """
    n_rows, dim = x.shape
    if offset == 0:
        return x
    pad = Tensor(np.zeros((min(abs(offset), n_rows), dim), dtype=x.data.dtype))
    if abs(offset) >= n_rows:
        return pad
    if offset > 0:
        return tz.concat([pad, tz.slice_(x, slice(0, n_rows - offset))], axis=0)
    return tz.concat([tz.slice_(x, slice(-offset, n_rows)), pad], axis=0)


def tap_filter(x: Tensor, taps: Tensor, left: int, right: int) -> Tensor:
    """Per-dimension FIR over time: out_t = sum_j taps[j] * x[t + j - left].

    taps has left + 1 + right rows; frames outside [0, T) contribute zero.
    """
    if taps.shape != (left + 1 + right, x.shape[1]):
        raise ContractError(f"tap shape {taps.shape} does not match window ({left + 1 + right}, {x.shape[1]})")
    acc = None
    for row in range(left + 1 + right):
        offset = left - row  # row 0 is the oldest past tap
        term = tz.mul_row(shift_rows(x, offset), tz.slice_(taps, row))
        acc = term if acc is None else tz.add(acc, term)
    return acc
