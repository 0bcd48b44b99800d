"""Scoring: detection cost, noise rejection rate, character error rate.

Detection scoring happens on a fixed 10 ms grid regardless of model frame
shift: a grid frame counts as speech when its center lies inside a
segment.  DCF pools miss/false-alarm counts over the whole test set
before forming rates.  Report averages are plain unweighted means of the
per-set rows, and relative changes are rounded half-away-from-zero to one
decimal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .audio import Segment
from .errors import BoundsError, ParseError, UndefinedMetricError

DCF_MISS_WEIGHT = 0.75
DCF_FA_WEIGHT = 0.25

METRIC_KEYS = ("cer", "dcf", "p_miss", "p_fa", "nrr")


@dataclass
class FrameAlignment:
    """Boolean reference/hypothesis frames plus the counts DCF needs."""

    ref: np.ndarray
    hyp: np.ndarray

    @property
    def n_miss(self) -> int:
        return int(np.sum(self.ref & ~self.hyp))

    @property
    def n_fa(self) -> int:
        return int(np.sum(~self.ref & self.hyp))

    @property
    def n_speech_ref(self) -> int:
        return int(np.sum(self.ref))

    @property
    def n_nonspeech_ref(self) -> int:
        return int(np.sum(~self.ref))


def _segment_frames(segments: list[Segment], n_frames: int, grid_ms: int) -> np.ndarray:
    centers = np.arange(n_frames) * grid_ms + grid_ms / 2.0
    mask = np.zeros(n_frames, dtype=bool)
    for seg in segments:
        mask |= (centers >= seg.start_ms) & (centers < seg.end_ms)
    return mask


def align_frames(
    ref: list[Segment],
    hyp: list[Segment],
    duration_ms: int,
    grid_ms: int = 10,
) -> FrameAlignment:
    for name, segs in (("reference", ref), ("hypothesis", hyp)):
        for seg in segs:
            if seg.start_ms < 0 or seg.end_ms > duration_ms:
                raise BoundsError(f"{name} segment ({seg.start_ms}, {seg.end_ms}) outside [0, {duration_ms}]")
    n_frames = duration_ms // grid_ms
    return FrameAlignment(_segment_frames(ref, n_frames, grid_ms), _segment_frames(hyp, n_frames, grid_ms))


def dcf(alignments: list[FrameAlignment]) -> float:
    """100 * (0.75 * P_miss + 0.25 * P_fa), counts pooled over the set."""
    n_speech = sum(a.n_speech_ref for a in alignments)
    n_nonspeech = sum(a.n_nonspeech_ref for a in alignments)
    if n_speech == 0 or n_nonspeech == 0:
        raise UndefinedMetricError("DCF needs both speech and non-speech reference frames")
    p_miss = sum(a.n_miss for a in alignments) / n_speech
    p_fa = sum(a.n_fa for a in alignments) / n_nonspeech
    return 100.0 * (DCF_MISS_WEIGHT * p_miss + DCF_FA_WEIGHT * p_fa)


def miss_fa_rates(alignments: list[FrameAlignment]) -> tuple[float, float]:
    n_speech = sum(a.n_speech_ref for a in alignments)
    n_nonspeech = sum(a.n_nonspeech_ref for a in alignments)
    if n_speech == 0 or n_nonspeech == 0:
        raise UndefinedMetricError("rates need both speech and non-speech reference frames")
    return (
        100.0 * sum(a.n_miss for a in alignments) / n_speech,
        100.0 * sum(a.n_fa for a in alignments) / n_nonspeech,
    )


def nrr(per_file_segments: list[list[Segment]]) -> float:
    """Share of pure-noise files with no emitted speech at all."""
    if not per_file_segments:
        raise UndefinedMetricError("NRR over zero files")
    rejected = sum(1 for segs in per_file_segments if not segs)
    return 100.0 * rejected / len(per_file_segments)


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over Unicode scalars."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb)))
        previous = current
    return previous[-1]


def _strip_ws(text: str) -> str:
    return "".join(text.split())


def cer(ref_text: str, hyp_text: str) -> float:
    """100 * edit_distance / reference length, whitespace removed first."""
    ref = _strip_ws(ref_text)
    hyp = _strip_ws(hyp_text)
    if not ref:
        raise UndefinedMetricError("CER against an empty reference")
    return 100.0 * levenshtein(ref, hyp) / len(ref)


def corpus_cer(pairs: list[tuple[str, str]]) -> float:
    """Pooled CER: total edit distance over total reference length."""
    total_dist = 0
    total_len = 0
    for ref_text, hyp_text in pairs:
        ref = _strip_ws(ref_text)
        hyp = _strip_ws(hyp_text)
        total_dist += levenshtein(ref, hyp)
        total_len += len(ref)
    if total_len == 0:
        raise UndefinedMetricError("CER against an empty reference")
    return 100.0 * total_dist / total_len


def relative_change(baseline: float, system: float) -> float:
    """Signed percent change, half-away-from-zero to one decimal."""
    if baseline == 0:
        raise UndefinedMetricError("relative change against a zero baseline")
    raw = 100.0 * (system - baseline) / baseline
    return float(Decimal(repr(raw)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    """Per-test-set metric rows plus their unweighted averages."""

    rows: dict[str, dict[str, float]] = field(default_factory=dict)
    averages: dict[str, float] = field(default_factory=dict)
    relative: dict[str, float] = field(default_factory=dict)


def build_report(rows: dict[str, dict[str, float]], baseline: EvalReport | None = None) -> EvalReport:
    if not rows:
        raise UndefinedMetricError("report over zero test sets")
    report = EvalReport(rows={name: dict(vals) for name, vals in rows.items()})
    for key in METRIC_KEYS:
        values = [vals[key] for vals in rows.values() if key in vals]
        if values:
            report.averages[key] = sum(values) / len(values)
    if baseline is not None:
        for key, avg in report.averages.items():
            base = baseline.averages.get(key)
            if base:
                report.relative[key] = relative_change(base, avg)
    return report


def report_to_text(report: EvalReport) -> str:
    lines: list[str] = []
    for name, vals in report.rows.items():
        lines.append(f"[set:{name}]")
        lines += [f"{key} = {vals[key]:.2f}" for key in METRIC_KEYS if key in vals]
        lines.append("")
    lines.append("[avg]")
    lines += [f"{key} = {report.averages[key]:.2f}" for key in METRIC_KEYS if key in report.averages]
    if report.relative:
        lines.append("")
        lines.append("[relative]")
        lines += [f"{key} = {report.relative[key]:+.1f}" for key in METRIC_KEYS if key in report.relative]
    lines.append("")
    return "\n".join(lines)


def report_to_tsv(report: EvalReport) -> str:
    keys = [k for k in METRIC_KEYS if k in report.averages]
    lines = ["\t".join(["set"] + keys)]
    for name, vals in report.rows.items():
        lines.append("\t".join([name] + [f"{vals[key]:.2f}" if key in vals else "-" for key in keys]))
    lines.append("\t".join(["AVG"] + [f"{report.averages[key]:.2f}" for key in keys]))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    """Read back report_to_text output (for baseline comparisons)."""
    report = EvalReport()
    target: dict[str, float] | None = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[set:") and line.endswith("]"):
            name = line[5:-1]
            report.rows[name] = {}
            target = report.rows[name]
        elif line == "[avg]":
            target = report.averages
        elif line == "[relative]":
            target = report.relative
        elif "=" in line and target is not None:
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in METRIC_KEYS:
                raise ParseError(f"unknown metric {key!r}", line=line_no)
            try:
                target[key] = float(value.strip())
            except ValueError:
                raise ParseError(f"bad metric value {value.strip()!r}", line=line_no) from None
        else:
            raise ParseError(f"unparseable report line {raw!r}", line=line_no)
    if not report.rows and not report.averages:
        raise ParseError("report contains no sections")
    return report
