"""Classification heads and losses on top of an encoder's hidden frames.

Three heads share the hidden sequence: a binary speech/non-speech
classifier, a CTC head over a small character vocabulary, and a
punctuation classifier.  Auxiliary heads exist only to shape the encoder
during training; at inference the VAD head is the product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .config import HeadConfig
from .encoders.common import ParamSpec
from .errors import ConfigError, ContractError, InfeasibleError, LabelError
from .tensor import Tensor

CTC_BLANK = 0

PUNCT_CLASSES = ("none", "comma", "period", "question", "pause")


@dataclass
class FramePosteriors:
    """Per-frame speech probability on the encoder's output grid."""

    probs: np.ndarray
    frame_shift_ms: int

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.size and (not np.isfinite(self.probs).all() or self.probs.min() < 0 or self.probs.max() > 1):
            raise ContractError("posteriors must be finite probabilities in [0, 1]")

    def __len__(self) -> int:
        return len(self.probs)


def param_specs(width: int, cfg: HeadConfig) -> list[ParamSpec]:
    return [
        ParamSpec("heads.vad.w", (width, 2), "uniform", width),
        ParamSpec("heads.vad.b", (2,), "zeros"),
        ParamSpec("heads.asr.w", (width, cfg.vocab_size + 1), "uniform", width),
        ParamSpec("heads.asr.b", (cfg.vocab_size + 1,), "zeros"),
        ParamSpec("heads.punct.w", (width, cfg.punct_classes), "uniform", width),
        ParamSpec("heads.punct.b", (cfg.punct_classes,), "zeros"),
    ]


def vad_logits(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    return tz.linear(hidden, params["heads.vad.w"], params["heads.vad.b"])


def vad_classify(params: dict[str, Tensor], hidden: Tensor, frame_shift_ms: int) -> FramePosteriors:
    """Speech probability per frame (column 1 of the binary softmax)."""
    if hidden.shape[0] == 0:
        return FramePosteriors(np.zeros(0), frame_shift_ms)
    probs = tz.softmax(vad_logits(params, hidden), axis=-1)
    return FramePosteriors(probs.data[:, 1].astype(np.float64), frame_shift_ms)


def asr_log_probs(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    return tz.log_softmax(tz.linear(hidden, params["heads.asr.w"], params["heads.asr.b"]), axis=-1)


def punct_logits(params: dict[str, Tensor], hidden: Tensor) -> Tensor:
    return tz.linear(hidden, params["heads.punct.w"], params["heads.punct.b"])


def ce_loss(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean framewise cross-entropy, labels as class indices."""
    labels = np.asarray(labels, dtype=np.int64)
    n_frames, n_classes = logits.shape
    if labels.shape != (n_frames,):
        raise ContractError(f"labels shape {labels.shape} does not match {n_frames} frames")
    if n_frames == 0:
        raise ContractError("ce_loss on an empty sequence")
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelError(f"label outside [0, {n_classes}): {labels.min()}..{labels.max()}")
    return tz.neg(tz.mean_(tz.pick(tz.log_softmax(logits, axis=-1), labels)))


# ---------------------------------------------------------------------------
# CTC
# ---------------------------------------------------------------------------


def _expand_labels(labels: np.ndarray) -> np.ndarray:
    """Blank-interleaved lattice symbols: b l1 b l2 b ... b lL b."""
    lattice = np.full(2 * len(labels) + 1, CTC_BLANK, dtype=np.int64)
    lattice[1::2] = labels
    return lattice


def ctc_min_frames(labels: np.ndarray) -> int:
    """Shortest T that admits any alignment: repeats force a blank between."""
    repeats = int(np.sum(labels[1:] == labels[:-1])) if len(labels) > 1 else 0
    return len(labels) + repeats


def ctc_loss(log_probs: Tensor, labels) -> Tensor:
    """Negative log probability of all alignments of ``labels``.

    ``log_probs`` rows must already be log-softmax normalized (checked);
    blank is class 0 and labels are 1-based classes.  The backward pass
    uses the standard two-pass lattice recursion rather than replaying
    elementwise ops.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_frames, n_classes = log_probs.shape
    if labels.ndim != 1:
        raise ContractError(f"labels must be a flat sequence, got shape {labels.shape}")
    if len(labels) and (labels.min() < 1 or labels.max() >= n_classes):
        raise LabelError(f"ctc labels must lie in [1, {n_classes}), got {labels.min()}..{labels.max()}")
    if n_frames < max(ctc_min_frames(labels), 1):
        raise InfeasibleError(
            f"{len(labels)} labels (min {ctc_min_frames(labels)} frames) cannot align to {n_frames} frames"
        )
    y = log_probs.data.astype(np.float64)
    row_sums = np.log(np.sum(np.exp(y - y.max(axis=1, keepdims=True)), axis=1)) + y.max(axis=1)
    if np.abs(row_sums).max() > 1e-3:
        raise ContractError(f"log_probs rows not normalized (worst logsumexp {row_sums[np.abs(row_sums).argmax()]:.3g})")

    lattice = _expand_labels(labels)
    n_states = len(lattice)
    neg_inf = -np.inf

    # alpha[t, s]: all prefixes ending in state s at t, emission at t included
    alpha = np.full((n_frames, n_states), neg_inf)
    alpha[0, 0] = y[0, lattice[0]]
    if n_states > 1:
        alpha[0, 1] = y[0, lattice[1]]
    skip_ok = np.zeros(n_states, dtype=bool)
    skip_ok[2:] = (lattice[2:] != CTC_BLANK) & (lattice[2:] != lattice[:-2])
    for t in range(1, n_frames):
        stay = alpha[t - 1]
        step = np.concatenate(([neg_inf], alpha[t - 1, :-1]))[:n_states]
        skip = np.concatenate(([neg_inf, neg_inf], alpha[t - 1, : max(n_states - 2, 0)]))[:n_states]
        skip = np.where(skip_ok, skip, neg_inf)
        alpha[t] = y[t, lattice] + np.logaddexp(np.logaddexp(stay, step), skip)

    tails = [alpha[-1, -1]] if n_states == 1 else [alpha[-1, -1], alpha[-1, -2]]
    log_z = np.logaddexp.reduce(tails)
    if not np.isfinite(log_z):
        raise InfeasibleError("no feasible alignment (zero total probability)")

    # beta[t, s]: all suffixes from state s at t, emission at t excluded
    beta = np.full((n_frames, n_states), neg_inf)
    beta[-1, -1] = 0.0
    if n_states > 1:
        beta[-1, -2] = 0.0
    for t in range(n_frames - 2, -1, -1):
        emitted = y[t + 1, lattice] + beta[t + 1]
        stay = emitted
        step = np.concatenate((emitted[1:], [neg_inf]))[:n_states]
        skip = np.concatenate((emitted[2:], [neg_inf, neg_inf]))[:n_states]
        skip_fwd = np.zeros(n_states, dtype=bool)
        if n_states > 2:
            skip_fwd[: n_states - 2] = skip_ok[2:]
        skip = np.where(skip_fwd, skip, neg_inf)
        beta[t] = np.logaddexp(np.logaddexp(stay, step), skip)

    def backward_fn(g):
        occupancy = alpha + beta  # log posterior mass through each (t, s)
        grad = np.zeros((n_frames, n_classes))
        with np.errstate(invalid="ignore"):
            for s in range(n_states):
                grad[:, lattice[s]] += np.exp(occupancy[:, s] - log_z)
        return ((-float(g) * grad).astype(log_probs.data.dtype),)

    return tz.custom_op("ctc", np.asarray(-log_z, dtype=log_probs.data.dtype), (log_probs,), backward_fn)


def ctc_greedy_decode(log_probs: np.ndarray) -> list[int]:
    """Best-per-frame path collapsed: merge repeats, drop blanks."""
    best = np.asarray(log_probs).argmax(axis=-1)
    out: list[int] = []
    previous = CTC_BLANK
    for symbol in best:
        if symbol != CTC_BLANK and symbol != previous:
            out.append(int(symbol))
        previous = symbol
    return out


def multitask_loss(
    vad_ce: Tensor,
    ctc: Tensor | None,
    punct_ce: Tensor | None,
    cfg: HeadConfig,
) -> Tensor:
    """Weighted sum of task losses; zero-weight components may be absent."""
    weights = (cfg.lambda_vad, cfg.lambda_asr, cfg.lambda_punct)
    if any(w < 0 for w in weights):
        raise ConfigError(f"loss weights must be non-negative, got {weights}")
    if not any(w > 0 for w in weights):
        raise ConfigError("at least one loss weight must be positive")
    total = None
    for weight, component in zip(weights, (vad_ce, ctc, punct_ce)):
        if weight == 0 or component is None:
            continue
        term = tz.scale(component, weight)
        total = term if total is None else tz.add(total, term)
    if total is None:
        raise ContractError("no loss component was supplied for a positive weight")
    return total
