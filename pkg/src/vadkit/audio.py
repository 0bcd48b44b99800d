"""Audio and label file I/O.

WAV ingestion is deliberately narrow: little-endian RIFF, 16-bit PCM,
mono or stereo, 16 kHz only.  Anything else is rejected rather than
silently converted, because the whole pipeline sits on a fixed
16 kHz / 10 ms frame grid.

Segment and transcript files are UTF-8, TAB-separated, LF-terminated
text; timestamps are integer milliseconds so they land exactly on the
frame grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BoundsError,
    DuplicateError,
    FormatError,
    ParseError,
    SampleRateError,
    UnsupportedError,
)

PIPELINE_SAMPLE_RATE = 16_000
_INT16_SCALE = 32768.0


@dataclass
class AudioBuffer:
    """Mono audio in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration_ms(self) -> int:
        # floor, so offline and sample-counting streaming paths agree
        return len(self.samples) * 1000 // self.sample_rate

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class Segment:
    """Half-open speech interval [start_ms, end_ms) in milliseconds."""

    start_ms: int
    end_ms: int

    def __iter__(self):
        yield self.start_ms
        yield self.end_ms

    def duration_ms(self) -> int:
        return self.end_ms - self.start_ms


@dataclass
class SegmentLabelSet:
    """Sorted, non-overlapping speech segments for one utterance."""

    utterance_id: str
    segments: list[Segment] = field(default_factory=list)


@dataclass
class TranscriptSet:
    """Reference text for one utterance."""

    utterance_id: str
    text: str


def merge_segments(segments: list[Segment]) -> list[Segment]:
    """Canonicalize: sort by start and union overlapping or touching intervals."""
    if not segments:
        return []
    ordered = sorted(segments, key=lambda s: (s.start_ms, s.end_ms))
    merged = [Segment(ordered[0].start_ms, ordered[0].end_ms)]
    for seg in ordered[1:]:
        if seg.start_ms <= merged[-1].end_ms:
            merged[-1].end_ms = max(merged[-1].end_ms, seg.end_ms)
        else:
            merged.append(Segment(seg.start_ms, seg.end_ms))
    return merged


def read_wav(path: str) -> AudioBuffer:
    """Read a 16-bit PCM RIFF/WAVE file as mono float samples in [-1, 1].

    Stereo input is downmixed by per-sample mean.  Rejects compressed
    codecs, bit depths other than 16, and sample rates other than 16 kHz.
    """
    with open(path, "rb") as f:
        data = f.read()
    return decode_wav(data, path)


def decode_wav(data: bytes, path: str = "<bytes>") -> AudioBuffer:
    """read_wav on in-memory bytes; `path` only labels error messages."""
    if len(data) < 12 or data[0:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise FormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise FormatError(f"{path}: missing fmt or data chunk")

    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1:
        raise UnsupportedError(f"{path}: only PCM supported, got format tag {audio_format}")
    if bits != 16:
        raise UnsupportedError(f"{path}: only 16-bit samples supported, got {bits}")
    if channels not in (1, 2):
        raise UnsupportedError(f"{path}: only mono or stereo supported, got {channels} channels")
    if sample_rate != PIPELINE_SAMPLE_RATE:
        raise SampleRateError(
            f"{path}: sample rate {sample_rate} Hz, pipeline requires {PIPELINE_SAMPLE_RATE} Hz"
        )

    usable = len(payload) - (len(payload) % (2 * channels))
    raw = np.frombuffer(payload[:usable], dtype="<i2").astype(np.float64)
    if channels == 2:
        raw = raw.reshape(-1, 2).mean(axis=1)
    samples = (raw / _INT16_SCALE).astype(np.float32)
    return AudioBuffer(samples=samples, sample_rate=sample_rate)


def write_wav(path: str, audio: AudioBuffer) -> None:
    """Write mono 16-bit PCM; samples are clipped to [-1, 1] then quantized."""
    clipped = np.clip(audio.samples, -1.0, 1.0)
    pcm = np.round(clipped * _INT16_SCALE).clip(-32768, 32767).astype("<i2").tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, audio.sample_rate, audio.sample_rate * 2, 2, 16
    )
    header += b"data" + struct.pack("<I", len(pcm))
    with open(path, "wb") as f:
        f.write(header + pcm)


def read_segments(path: str) -> list[SegmentLabelSet]:
    """Parse `utt_id<TAB>start_ms<TAB>end_ms` lines into per-utterance sets.

    Segments are grouped by utterance in order of first appearance, then
    sorted and merged (union of overlapping or touching intervals).
    """
    by_utt: dict[str, list[Segment]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"expected 3 TAB-separated fields, got {len(parts)}", lineno)
            utt, start_s, end_s = parts
            try:
                start, end = int(start_s), int(end_s)
            except ValueError:
                raise ParseError(f"non-integer timestamp in {start_s!r}/{end_s!r}", lineno)
            if start < 0 or start >= end:
                raise ParseError(f"invalid interval [{start}, {end})", lineno)
            by_utt.setdefault(utt, []).append(Segment(start, end))
    return [SegmentLabelSet(utt, merge_segments(segs)) for utt, segs in by_utt.items()]


def write_segments(sets: list[SegmentLabelSet], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for label_set in sets:
            for seg in label_set.segments:
                f.write(f"{label_set.utterance_id}\t{seg.start_ms}\t{seg.end_ms}\n")


def read_transcripts(path: str) -> list[TranscriptSet]:
    """Parse `utt_id<TAB>text` lines; duplicate utterance ids are an error."""
    seen: dict[str, int] = {}
    out: list[TranscriptSet] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t", 1)
            if len(parts) != 2:
                raise ParseError("expected `utt_id<TAB>text`", lineno)
            utt, text = parts
            if utt in seen:
                raise DuplicateError(
                    f"line {lineno}: duplicate transcript for {utt!r} (first at line {seen[utt]})"
                )
            seen[utt] = lineno
            out.append(TranscriptSet(utt, text))
    return out


def write_transcripts(sets: list[TranscriptSet], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for t in sets:
            f.write(f"{t.utterance_id}\t{t.text}\n")


def check_segments_in_bounds(segments: list[Segment], duration_ms: int) -> None:
    for seg in segments:
        if seg.end_ms > duration_ms or seg.start_ms < 0:
            raise BoundsError(
                f"segment [{seg.start_ms}, {seg.end_ms}) outside audio of {duration_ms} ms"
            )
