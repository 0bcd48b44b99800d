"""Synthetic tones-vs-silence corpora for desk-scale training and tests.

Each clip alternates near-silent noise with pure tones.  Tone spans are
the speech reference; each tone's frequency bucket doubles as a toy
transcript character, giving the CTC head something real to learn.
"""

from __future__ import annotations

import os

import numpy as np

from .audio import AudioBuffer, PIPELINE_SAMPLE_RATE, Segment, SegmentLabelSet, write_segments, write_wav

TONE_BUCKETS = 8
_BUCKET_FREQS = np.linspace(300.0, 2400.0, TONE_BUCKETS)

NOISE_AMP = 0.004
TONE_AMP = 0.3


def label_to_char(label: int) -> str:
    return chr(ord("a") + label - 1)


def char_to_label(ch: str) -> int:
    label = ord(ch) - ord("a") + 1
    if not 1 <= label <= TONE_BUCKETS:
        raise ValueError(f"transcript character {ch!r} outside toy vocabulary")
    return label


def make_clip(rng: np.random.Generator, duration_s: float) -> tuple[np.ndarray, list[Segment], str]:
    """One clip: samples, reference speech segments, transcript."""
    n_samples = int(duration_s * PIPELINE_SAMPLE_RATE)
    samples = (rng.standard_normal(n_samples) * NOISE_AMP).astype(np.float64)
    segments: list[Segment] = []
    chars: list[str] = []
    cursor_ms = int(rng.integers(150, 450))
    duration_ms = int(duration_s * 1000)
    while cursor_ms + 500 < duration_ms:
        tone_ms = int(rng.integers(300, 800))
        end_ms = min(cursor_ms + tone_ms, duration_ms - 100)
        if end_ms - cursor_ms >= 200:
            bucket = int(rng.integers(0, TONE_BUCKETS))
            freq = _BUCKET_FREQS[bucket]
            lo = cursor_ms * PIPELINE_SAMPLE_RATE // 1000
            hi = end_ms * PIPELINE_SAMPLE_RATE // 1000
            t = np.arange(hi - lo) / PIPELINE_SAMPLE_RATE
            samples[lo:hi] += TONE_AMP * np.sin(2 * np.pi * freq * t)
            segments.append(Segment(cursor_ms, end_ms))
            chars.append(label_to_char(bucket + 1))
        cursor_ms = end_ms + int(rng.integers(250, 700))
    return samples.astype(np.float32), segments, "".join(chars)


def make_noise_clip(rng: np.random.Generator, duration_s: float, kind: str = "white") -> np.ndarray:
    """Pure non-speech: white noise or a repeating low hum ("bgm")."""
    n_samples = int(duration_s * PIPELINE_SAMPLE_RATE)
    noise = rng.standard_normal(n_samples) * NOISE_AMP
    if kind == "bgm":
        t = np.arange(n_samples) / PIPELINE_SAMPLE_RATE
        noise = noise + 0.01 * np.sin(2 * np.pi * 55.0 * t) * (1 + 0.3 * np.sin(2 * np.pi * 0.7 * t))
    return noise.astype(np.float32)


def generate_corpus(
    out_dir: str,
    n_clips: int = 200,
    seed: int = 0,
    min_duration_s: float = 2.0,
    max_duration_s: float = 4.0,
) -> str:
    """Write clips + labels + manifest under out_dir; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest_lines = []
    for i in range(n_clips):
        utt = f"utt{i:04d}"
        duration = float(rng.uniform(min_duration_s, max_duration_s))
        samples, segments, transcript = make_clip(rng, duration)
        wav_path = os.path.join(out_dir, f"{utt}.wav")
        seg_path = os.path.join(out_dir, f"{utt}.seg")
        write_wav(wav_path, AudioBuffer(samples, PIPELINE_SAMPLE_RATE))
        write_segments([SegmentLabelSet(utt, segments)], seg_path)
        # manifest paths are relative to the manifest's own directory
        fields = [utt, f"{utt}.wav", f"{utt}.seg"]
        if transcript:
            fields.append(transcript)
        manifest_lines.append("\t".join(fields))
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + "\n")
    return manifest_path


def generate_noise_set(out_dir: str, n_clips: int = 20, seed: int = 0, kind: str = "white") -> str:
    """Noise-only wavs plus a 2-field manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for i in range(n_clips):
        utt = f"noise{i:04d}"
        clip = make_noise_clip(rng, float(rng.uniform(2.0, 4.0)), kind)
        write_wav(os.path.join(out_dir, f"{utt}.wav"), AudioBuffer(clip, PIPELINE_SAMPLE_RATE))
        lines.append(f"{utt}\t{utt}.wav")
    manifest_path = os.path.join(out_dir, "manifest.tsv")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return manifest_path
