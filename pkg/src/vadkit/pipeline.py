"""Batch orchestration shared by the command line and the service.

Everything here works on files and manifests: extract features, train,
segment (offline or via the streaming session), and score.  Outputs are
written atomically (temp file + rename) so a crashed run never leaves a
truncated artifact behind.
"""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import metrics as metrics_mod
from .audio import (
    AudioBuffer,
    Segment,
    SegmentLabelSet,
    read_segments,
    read_transcripts,
    read_wav,
    write_segments,
)
from .config import PipelineConfig, default_config, load_config, validate_config
from .errors import ConfigError, ParseError
from .features import FeatureMatrix, extract_log_mel
from .metrics import EvalReport, FrameAlignment, align_frames
from .model import VadModel
from .train import ManifestEntry, TrainResult, read_manifest, train_toy
from .vad import VadSession, extract_segments
from .weights import load_weights, save_weights


def load_pipeline_config(path: str | None, encoder_type: str | None = None) -> PipelineConfig:
    if path is None:
        cfg = default_config(encoder_type or "dfsmn")
    else:
        cfg = load_config(path)
    validate_config(cfg)
    return cfg


def load_model(weights_path: str, cfg: PipelineConfig) -> VadModel:
    return VadModel.from_arrays(cfg, load_weights(weights_path))


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_segments_atomic(sets: list[SegmentLabelSet], path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    os.close(fd)
    try:
        write_segments(sets, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _map_entries(entries, fn, jobs: int):
    """Apply fn over entries, optionally in a pool; order always preserved."""
    if jobs <= 1 or len(entries) <= 1:
        return [fn(e) for e in entries]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, entries))


def _is_manifest(path: str) -> bool:
    return not path.lower().endswith(".wav")


def _input_entries(input_path: str) -> list[ManifestEntry]:
    """A lone wav becomes a one-entry manifest keyed by its stem."""
    if _is_manifest(input_path):
        return read_manifest(input_path)
    stem = os.path.splitext(os.path.basename(input_path))[0]
    return [ManifestEntry(stem, input_path, seg_path=None)]


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def features_command(input_path: str, out_path: str, jobs: int = 1) -> int:
    """Extract log-mel features and store them as named tensors."""
    entries = _input_entries(input_path)

    def extract(entry: ManifestEntry) -> tuple[str, np.ndarray]:
        return entry.utt_id, extract_log_mel(read_wav(entry.wav_path)).frames

    pairs = _map_entries(entries, extract, jobs)
    save_weights(out_path, dict(pairs))
    return len(pairs)


def load_feature_file(path: str) -> dict[str, FeatureMatrix]:
    from .features import SHIFT_MS

    return {name: FeatureMatrix(arr, SHIFT_MS) for name, arr in load_weights(path).items()}


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_command(
    manifest_path: str,
    cfg: PipelineConfig,
    out_weights: str,
    epochs: int | None = None,
    seed: int | None = None,
) -> TrainResult:
    result = train_toy(manifest_path, cfg, epochs=epochs, seed=seed)
    save_weights(out_weights, result.model.named_arrays())
    return result


# ---------------------------------------------------------------------------
# segmentation
# ---------------------------------------------------------------------------


def segment_offline(model: VadModel, audio: AudioBuffer) -> list[Segment]:
    posteriors = model.posteriors(extract_log_mel(audio))
    return extract_segments(posteriors, model.cfg.vad, duration_ms=audio.duration_ms)


def segment_streaming(
    model: VadModel,
    audio: AudioBuffer,
    chunk_samples: int = 1600,
) -> list[Segment]:
    session = VadSession(model)
    out: list[Segment] = []
    for lo in range(0, len(audio.samples), chunk_samples):
        out += session.feed(audio.samples[lo : lo + chunk_samples])
    out += session.flush()
    return out


def segment_command(
    model: VadModel,
    input_path: str,
    out_path: str,
    streaming: bool = False,
    jobs: int = 1,
) -> list[SegmentLabelSet]:
    entries = _input_entries(input_path)

    def run(entry: ManifestEntry) -> SegmentLabelSet:
        audio = read_wav(entry.wav_path)
        segs = segment_streaming(model, audio) if streaming else segment_offline(model, audio)
        return SegmentLabelSet(entry.utt_id, segs)

    sets = _map_entries(entries, run, jobs)
    write_segments_atomic(sets, out_path)
    return sets


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def _hyp_map(hyp_path: str) -> dict[str, list[Segment]]:
    return {s.utterance_id: s.segments for s in read_segments(hyp_path)}


def _ref_segments(entry: ManifestEntry) -> list[Segment]:
    if entry.seg_path is None:
        raise ConfigError(f"manifest entry {entry.utt_id!r} has no segments file")
    sets = read_segments(entry.seg_path)
    for label_set in sets:
        if label_set.utterance_id == entry.utt_id:
            return label_set.segments
    if len(sets) == 1:
        return sets[0].segments
    raise ParseError(f"no segment set for utterance {entry.utt_id!r} in {entry.seg_path}")


@dataclass
class DcfResult:
    dcf: float
    p_miss: float
    p_fa: float


def eval_dcf(
    ref_manifest: str,
    hyp_path: str,
    grid_ms: int = 10,
    jobs: int = 1,
) -> DcfResult:
    """Pooled detection cost over every utterance in the manifest.

    Utterances missing from the hypothesis file count as all-silence
    output (pure misses), so an empty hypothesis is scored, not skipped.
    """
    entries = read_manifest(ref_manifest)
    hyp = _hyp_map(hyp_path)

    def align(entry: ManifestEntry) -> FrameAlignment:
        duration = read_wav(entry.wav_path).duration_ms
        return align_frames(_ref_segments(entry), hyp.get(entry.utt_id, []), duration, grid_ms)

    alignments = _map_entries(entries, align, jobs)
    value = metrics_mod.dcf(alignments)
    p_miss, p_fa = metrics_mod.miss_fa_rates(alignments)
    return DcfResult(value, p_miss, p_fa)


def eval_nrr(noise_manifest: str, hyp_path: str) -> float:
    """Noise rejection rate: share of noise-only files with zero output."""
    entries = read_manifest(noise_manifest)
    hyp = _hyp_map(hyp_path)
    return metrics_mod.nrr([hyp.get(e.utt_id, []) for e in entries])


def eval_cer(ref_transcript_path: str, hyp_transcript_path: str) -> float:
    """Corpus CER: pooled edit distance over pooled reference length.

    A reference utterance with no hypothesis counts as fully deleted.
    """
    refs = {t.utterance_id: t.text for t in read_transcripts(ref_transcript_path)}
    hyps = {t.utterance_id: t.text for t in read_transcripts(hyp_transcript_path)}
    pairs = [(text, hyps.get(utt, "")) for utt, text in refs.items()]
    return metrics_mod.corpus_cer(pairs)


@dataclass
class ReportSetSpec:
    """One test set in a report: which metrics to run and on what."""

    name: str
    ref_manifest: str | None = None
    hyp_segments: str | None = None
    noise_manifest: str | None = None
    ref_transcripts: str | None = None
    hyp_transcripts: str | None = None


def eval_report(
    specs: list[ReportSetSpec],
    baseline: EvalReport | None = None,
    grid_ms: int = 10,
    jobs: int = 1,
) -> EvalReport:
    rows: dict[str, dict[str, float]] = {}
    for spec in specs:
        row: dict[str, float] = {}
        if spec.ref_manifest and spec.hyp_segments:
            res = eval_dcf(spec.ref_manifest, spec.hyp_segments, grid_ms=grid_ms, jobs=jobs)
            row["dcf"] = res.dcf
            row["p_miss"] = res.p_miss
            row["p_fa"] = res.p_fa
        if spec.noise_manifest and spec.hyp_segments:
            row["nrr"] = eval_nrr(spec.noise_manifest, spec.hyp_segments)
        if spec.ref_transcripts and spec.hyp_transcripts:
            row["cer"] = eval_cer(spec.ref_transcripts, spec.hyp_transcripts)
        if not row:
            raise ConfigError(f"report set {spec.name!r} selects no metric")
        rows[spec.name] = row
    return metrics_mod.build_report(rows, baseline=baseline)
