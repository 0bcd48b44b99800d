"""Desk-scale training: plain SGD over a manifest of labeled clips.

One utterance per step, fixed learning rate, global-norm gradient
clipping.  Deterministic under a fixed seed: shuffling and dropout draw
from independent generators spawned from the same SeedSequence, so the
loss curve is reproducible bit for bit.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import heads as heads_mod
from . import tensor as tz
from .audio import Segment, read_segments, read_wav
from .config import PipelineConfig
from .errors import ConfigError, DuplicateError, LabelError, NumericError, ParseError
from .features import FeatureMatrix, extract_log_mel
from .model import VadModel

log = logging.getLogger("vadkit.train")

_PUNCT_PERIOD = heads_mod.PUNCT_CLASSES.index("period")
_PUNCT_PAUSE = heads_mod.PUNCT_CLASSES.index("pause")


@dataclass
class ManifestEntry:
    utt_id: str
    wav_path: str
    seg_path: str | None = None
    transcript: str | None = None


def read_manifest(path: str) -> list[ManifestEntry]:
    """Parse `utt<TAB>wav[<TAB>segments[<TAB>transcript]]` lines.

    The segments field is optional (noise-only sets have no reference
    speech).  Relative paths resolve against the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) not in (2, 3, 4):
                raise ParseError(
                    f"manifest expects 2 to 4 tab-separated fields, got {len(parts)}",
                    line=lineno,
                )
            utt = parts[0].strip()
            if not utt:
                raise ParseError("empty utterance id", line=lineno)
            if utt in seen:
                raise DuplicateError(f"duplicate utterance id {utt!r} in manifest {path}")
            seen.add(utt)
            seg = resolve(parts[2]) if len(parts) >= 3 and parts[2].strip() else None
            transcript = parts[3].strip() if len(parts) == 4 else None
            entries.append(ManifestEntry(utt, resolve(parts[1]), seg, transcript or None))
    if not entries:
        raise ParseError(f"manifest {path} contains no entries")
    return entries


def encode_transcript(text: str, vocab_size: int) -> np.ndarray:
    """Map lowercase letters to CTC label ids 1..vocab_size (0 is blank)."""
    ids = []
    for ch in text:
        if ch.isspace():
            continue
        idx = ord(ch) - ord("a") + 1
        if idx < 1 or idx > 26 or idx > vocab_size:
            raise LabelError(f"transcript symbol {ch!r} outside vocabulary of size {vocab_size}")
        ids.append(idx)
    return np.asarray(ids, dtype=np.int64)


def decode_labels(ids) -> str:
    return "".join(chr(ord("a") + int(i) - 1) for i in ids)


def _frame_centers(n_frames: int, shift_ms: int) -> np.ndarray:
    return np.arange(n_frames, dtype=np.float64) * shift_ms + shift_ms / 2.0


def frame_speech_labels(segments: list[Segment], n_frames: int, shift_ms: int) -> np.ndarray:
    """Frame is speech iff its center falls inside a reference segment."""
    labels = np.zeros(n_frames, dtype=np.int64)
    centers = _frame_centers(n_frames, shift_ms)
    for seg in segments:
        labels[(centers >= seg.start_ms) & (centers < seg.end_ms)] = 1
    return labels


def frame_punct_labels(segments: list[Segment], n_frames: int, shift_ms: int) -> np.ndarray:
    """Toy punctuation projection from segment layout.

    Frames inside speech (and leading silence) are `none`, inter-segment
    gaps are `pause`, everything after the final segment is `period`.
    """
    labels = np.zeros(n_frames, dtype=np.int64)
    if not segments:
        return labels
    ordered = sorted(segments, key=lambda s: s.start_ms)
    centers = _frame_centers(n_frames, shift_ms)
    labels[centers >= ordered[-1].end_ms] = _PUNCT_PERIOD
    for prev, nxt in zip(ordered, ordered[1:]):
        labels[(centers >= prev.end_ms) & (centers < nxt.start_ms)] = _PUNCT_PAUSE
    return labels


@dataclass
class TrainingExample:
    utt_id: str
    feats: FeatureMatrix
    segments: list[Segment]
    transcript: str | None
    vad_labels: np.ndarray | None = None
    punct_labels: np.ndarray | None = None


def _segments_for(entry: ManifestEntry) -> list[Segment]:
    if entry.seg_path is None:
        raise LabelError(f"utterance {entry.utt_id!r} has no segments file; training needs labels")
    sets = read_segments(entry.seg_path)
    for label_set in sets:
        if label_set.utterance_id == entry.utt_id:
            return label_set.segments
    if len(sets) == 1:
        return sets[0].segments
    raise LabelError(
        f"segment file {entry.seg_path} has no set for utterance {entry.utt_id!r}"
    )


def load_examples(entries: list[ManifestEntry]) -> list[TrainingExample]:
    """Read audio once and cache features for every epoch."""
    examples = []
    for entry in entries:
        audio = read_wav(entry.wav_path)
        feats = extract_log_mel(audio)
        examples.append(TrainingExample(entry.utt_id, feats, _segments_for(entry), entry.transcript))
    return examples


def corpus_feature_stats(examples: list[TrainingExample]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean/std over all frames, std floored away from zero."""
    stacked = np.concatenate([ex.feats.frames for ex in examples], axis=0).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-5)
    return mean.astype(np.float32), std.astype(np.float32)


@dataclass
class TrainResult:
    model: VadModel
    loss_curve: list[float] = field(default_factory=list)
    vad_ce_curve: list[float] = field(default_factory=list)
    initial_vad_ce: float = 0.0
    final_vad_ce: float = 0.0
    frame_accuracy: float = 0.0


def _labels_for(ex: TrainingExample, n_out: int, shift_ms: int) -> None:
    if ex.vad_labels is None or len(ex.vad_labels) != n_out:
        ex.vad_labels = frame_speech_labels(ex.segments, n_out, shift_ms)
        ex.punct_labels = frame_punct_labels(ex.segments, n_out, shift_ms)


def mean_vad_ce(model: VadModel, examples: list[TrainingExample]) -> float:
    """Evaluation-mode cross entropy, averaged over utterances."""
    total = 0.0
    counted = 0
    with tz.no_grad():
        for ex in examples:
            hidden, shift_ms = model.hidden(ex.feats)
            _labels_for(ex, hidden.data.shape[0], shift_ms)
            loss = heads_mod.ce_loss(heads_mod.vad_logits(model.params, hidden), ex.vad_labels)
            total += float(loss.data)
            counted += 1
    return total / counted


def frame_accuracy(model: VadModel, examples: list[TrainingExample]) -> float:
    correct = 0
    total = 0
    for ex in examples:
        post = model.posteriors(ex.feats)
        _labels_for(ex, len(post.probs), post.frame_shift_ms)
        pred = (post.probs >= 0.5).astype(np.int64)
        correct += int((pred == ex.vad_labels).sum())
        total += len(pred)
    if total == 0:
        return 0.0
    return correct / total


def train_toy(
    dataset: str | list[ManifestEntry] | list[TrainingExample],
    cfg: PipelineConfig,
    epochs: int | None = None,
    seed: int | None = None,
) -> TrainResult:
    """Train from scratch on a toy corpus; returns weights plus loss curve."""
    if isinstance(dataset, str):
        dataset = read_manifest(dataset)
    if dataset and isinstance(dataset[0], ManifestEntry):
        examples = load_examples(dataset)
    else:
        examples = list(dataset)
    if not examples:
        raise ConfigError("training set is empty")

    epochs = cfg.train.epochs if epochs is None else epochs
    seed = cfg.train.seed if seed is None else seed
    if epochs < 1:
        raise ConfigError(f"epochs must be positive, got {epochs}")

    model = VadModel.initialize(cfg, seed)
    if cfg.features.normalize:
        mean, std = corpus_feature_stats(examples)
        model.params["frontend.mean"].data[...] = mean
        model.params["frontend.std"].data[...] = std

    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)

    multitask = cfg.train.task == "multitask"
    use_asr = multitask and cfg.heads.lambda_asr > 0
    use_punct = multitask and cfg.heads.lambda_punct > 0
    trainable = model.trainable()
    lr = cfg.train.learning_rate

    result = TrainResult(model=model)
    result.initial_vad_ce = mean_vad_ce(model, examples)

    order = np.arange(len(examples))
    for epoch in range(epochs):
        shuffle_rng.shuffle(order)
        epoch_total = 0.0
        epoch_vad = 0.0
        for idx in order:
            ex = examples[idx]
            try:
                hidden, shift_ms = model.hidden(ex.feats, training=True, rng=dropout_rng)
                _labels_for(ex, hidden.data.shape[0], shift_ms)
                vad_ce = heads_mod.ce_loss(heads_mod.vad_logits(model.params, hidden), ex.vad_labels)
                ctc = None
                punct_ce = None
                if use_asr and ex.transcript:
                    labels = encode_transcript(ex.transcript, cfg.heads.vocab_size)
                    ctc = heads_mod.ctc_loss(heads_mod.asr_log_probs(model.params, hidden), labels)
                if use_punct:
                    punct_ce = heads_mod.ce_loss(
                        heads_mod.punct_logits(model.params, hidden), ex.punct_labels
                    )
                if multitask:
                    loss = heads_mod.multitask_loss(vad_ce, ctc, punct_ce, cfg.heads)
                else:
                    loss = vad_ce
                loss_value = float(loss.data)
                if not math.isfinite(loss_value):
                    raise NumericError(f"loss diverged (got {loss_value})")
                tz.backward(loss)
                tz.clip_gradients(trainable, cfg.train.clip_norm)
                for p in trainable:
                    if p.grad is not None:
                        p.data -= (lr * p.grad).astype(np.float32)
                        p.grad = None
            except NumericError as err:
                raise NumericError(f"epoch {epoch}, utterance {ex.utt_id}: {err}") from None
            epoch_total += loss_value
            epoch_vad += float(vad_ce.data)
        result.loss_curve.append(epoch_total / len(examples))
        result.vad_ce_curve.append(epoch_vad / len(examples))
        log.info("epoch %d: loss %.6f vad_ce %.6f", epoch, result.loss_curve[-1], result.vad_ce_curve[-1])

    result.final_vad_ce = mean_vad_ce(model, examples)
    result.frame_accuracy = frame_accuracy(model, examples)
    log.info(
        "training done: vad_ce %.6f -> %.6f, frame accuracy %.4f",
        result.initial_vad_ce,
        result.final_vad_ce,
        result.frame_accuracy,
    )
    return result
