"""Posterior smoothing, hysteresis segmentation, and streaming sessions.

The segmenter consumes per-frame speech probabilities and produces
millisecond speech segments in five steps: median smoothing, a
hysteresis state machine (enter on on_threshold, leave only after
sub-off_threshold probability persists for max_silence_ms), a minimum
duration filter, symmetric padding, and a final merge of padded overlaps.

A VadSession runs the identical decision sequence incrementally.  The
causal smoother is a trailing median attributed to the window's center
frame, which is the same number the offline centered median produces, so
a session's emitted segments match the offline result exactly for
streaming-exact encoders; a segment is only released once enough audio
has passed that no later speech could merge into it.
"""

from __future__ import annotations

from statistics import median

import numpy as np

from . import features as feats_mod
from .audio import PIPELINE_SAMPLE_RATE, Segment, merge_segments
from .config import PipelineConfig, VadDecisionConfig
from .encoders import dfsmn as dfsmn_mod
from .encoders import rwkv as rwkv_mod
from .errors import ConfigError, LifecycleError, StreamingUnsupportedError
from .heads import FramePosteriors
from .model import VadModel


def smooth(posteriors: FramePosteriors, window: int, causal: bool = False) -> FramePosteriors:
    """Median-filter posteriors; window odd, edges use the available span.

    Offline the window is centered; the causal variant sees only frames
    up to t and attributes the trailing median to the window center,
    lagging (window-1)/2 frames behind the newest input.
    """
    if window < 1 or window % 2 == 0:
        raise ConfigError(f"smoothing window must be odd and >= 1, got {window}")
    probs = posteriors.probs
    half = window // 2
    out = np.empty_like(probs)
    for t in range(len(probs)):
        if causal:
            lo, hi = max(0, t - window + 1), t + 1
        else:
            lo, hi = max(0, t - half), min(len(probs), t + half + 1)
        out[t] = np.median(probs[lo:hi])
    return FramePosteriors(out, posteriors.frame_shift_ms)


class _Hysteresis:
    """Frame-by-frame segment decisions over smoothed probabilities."""

    def __init__(self, cfg: VadDecisionConfig, frame_shift_ms: int):
        self.cfg = cfg
        self.shift = frame_shift_ms
        self.in_speech = False
        self.start_ms = 0
        self.tentative_end_ms = 0
        self.silence_frames = 0
        self.closed: list[Segment] = []

    def step(self, frame_index: int, prob: float) -> None:
        t_ms = frame_index * self.shift
        if not self.in_speech:
            if prob >= self.cfg.on_threshold:
                self.in_speech = True
                self.start_ms = t_ms
                self.silence_frames = 0
            return
        if prob >= self.cfg.off_threshold:
            self.silence_frames = 0  # hangover silence absorbed
            return
        if self.silence_frames == 0:
            self.tentative_end_ms = t_ms
        self.silence_frames += 1
        if self.silence_frames * self.shift >= max(self.cfg.max_silence_ms, 1):
            self._close(self.tentative_end_ms)

    def _close(self, end_ms: int) -> None:
        if end_ms > self.start_ms:
            self.closed.append(Segment(self.start_ms, end_ms))
        self.in_speech = False
        self.silence_frames = 0

    def finish(self, cursor_ms: int) -> None:
        """End of input: close any open segment at the last speech frame."""
        if self.in_speech:
            self._close(self.tentative_end_ms if self.silence_frames else cursor_ms)


def _finalize(raw: list[Segment], cfg: VadDecisionConfig, duration_ms: int) -> list[Segment]:
    kept = [s for s in raw if s.end_ms - s.start_ms >= cfg.min_speech_ms]
    padded = [
        Segment(max(0, s.start_ms - cfg.pad_ms), min(duration_ms, s.end_ms + cfg.pad_ms))
        for s in kept
    ]
    return merge_segments([s for s in padded if s.end_ms > s.start_ms])


def extract_segments(
    posteriors: FramePosteriors,
    cfg: VadDecisionConfig,
    duration_ms: int | None = None,
) -> list[Segment]:
    """Whole-utterance segmentation; see the module docstring for stages."""
    if duration_ms is None:
        duration_ms = len(posteriors) * posteriors.frame_shift_ms
    if len(posteriors) == 0:
        return []
    smoothed = smooth(posteriors, cfg.smooth_window_frames)
    machine = _Hysteresis(cfg, posteriors.frame_shift_ms)
    for t, p in enumerate(smoothed.probs):
        machine.step(t, float(p))
    machine.finish(len(posteriors) * posteriors.frame_shift_ms)
    return _finalize(machine.closed, cfg, duration_ms)


def model_latency_report(cfg: PipelineConfig) -> dict:
    """Algorithmic lookahead of the encoder itself, in frames and ms."""
    enc = cfg.encoder
    shift_ms = 2 * feats_mod.SHIFT_MS
    if enc.type == "dfsmn":
        frames = dfsmn_mod.latency_frames(enc)
        mode = "streaming" if enc.rorder == 0 else "offline"
    elif enc.type == "rwkv":
        frames = rwkv_mod.latency_frames(enc)
        mode = "streaming"
    else:
        frames = enc.chunk_frames
        mode = "offline"
    return {
        "encoder": enc.type,
        "mode": mode,
        "lookahead_frames": frames,
        "lookahead_ms": frames * shift_ms,
        "frame_shift_ms": shift_ms,
    }


class VadSession:
    """Incremental audio-in, segments-out pipeline around one model.

    One session per audio stream; sessions share the model read-only.
    feed() returns segments that can no longer change; flush() returns
    the rest and retires the session.
    """

    def __init__(self, model: VadModel, vad_cfg: VadDecisionConfig | None = None):
        self.model = model
        self.cfg = vad_cfg if vad_cfg is not None else model.cfg.vad
        enc = model.cfg.encoder
        if enc.type == "sanm":
            raise StreamingUnsupportedError("this encoder runs offline only (chunked attention)")
        if enc.type == "dfsmn":
            self._encoder_stream = dfsmn_mod.DfsmnStream(model.params, enc)
        else:
            self._encoder_stream = rwkv_mod.RwkvStream(model.params, enc)
        self._features = feats_mod.FeatureStream()
        self._shift_ms = 2 * feats_mod.SHIFT_MS
        self._machine = _Hysteresis(self.cfg, self._shift_ms)
        self._half = self.cfg.smooth_window_frames // 2
        self._raw_probs: list[float] = []
        self._smoothed_upto = 0  # frames already run through the machine
        self._emitted_upto = 0  # closed segments already handed out
        self._pending_frame = None  # odd 10 ms frame awaiting its pair
        self._fed_samples = 0
        self._closed = False
        self._vad_w = model.params["heads.vad.w"].data
        self._vad_b = model.params["heads.vad.b"].data

    # -- plumbing ------------------------------------------------------

    def _posterior(self, hidden: np.ndarray) -> float:
        logits = (hidden.astype(np.float64) @ self._vad_w.astype(np.float64) + self._vad_b).astype(np.float32)
        shifted = logits.astype(np.float64) - logits.max()
        e = np.exp(shifted)
        # float32 round-trip mirrors the batch classifier's output dtype
        return float(np.float32(e[1] / e.sum()))

    def _normalize(self, frame: np.ndarray) -> np.ndarray:
        if not self.model.cfg.features.normalize:
            return frame
        mean = self.model.params["frontend.mean"].data
        std = self.model.params["frontend.std"].data
        return ((frame - mean) / std).astype(np.float32)

    def _hidden_frames(self, raw_frames: np.ndarray) -> list[np.ndarray]:
        out = []
        for frame in raw_frames:
            frame = self._normalize(frame)
            if self.model.cfg.encoder.type == "rwkv":
                out.extend(self._encoder_stream.feed(frame))
            else:
                if self._pending_frame is None:
                    self._pending_frame = frame
                else:
                    stacked = np.concatenate([self._pending_frame, frame])
                    self._pending_frame = None
                    out.append(self._encoder_stream.step(stacked))
        return out

    def _advance_machine(self, final: bool) -> None:
        n = len(self._raw_probs)
        while self._smoothed_upto < n:
            t = self._smoothed_upto
            hi = t + self._half + 1
            if hi > n and not final:
                break  # window not yet complete
            window = self._raw_probs[max(0, t - self._half) : min(hi, n)]
            self._machine.step(t, median(window))
            self._smoothed_upto += 1

    def _drain(self, final: bool) -> list[Segment]:
        duration_ms = (self._fed_samples * 1000) // PIPELINE_SAMPLE_RATE
        closed = self._machine.closed
        if final:
            batch = closed[self._emitted_upto :]
            self._emitted_upto = len(closed)
            return _finalize(batch, self.cfg, duration_ms)
        # Emit whole pad-merge groups: runs of closed segments chained by
        # gaps <= 2*pad.  A group is final once the cursor is strictly past
        # its last end + 2*pad and no open segment could still chain in.
        processed_ms = self._smoothed_upto * self._shift_ms
        gap = 2 * self.cfg.pad_ms
        out: list[Segment] = []
        while self._emitted_upto < len(closed):
            last = self._emitted_upto
            while last + 1 < len(closed) and closed[last + 1].start_ms <= closed[last].end_ms + gap:
                last += 1
            horizon = closed[last].end_ms + gap
            if processed_ms <= horizon:
                break
            if self._machine.in_speech and self._machine.start_ms <= horizon:
                break
            out.extend(closed[self._emitted_upto : last + 1])
            self._emitted_upto = last + 1
        return _finalize(out, self.cfg, duration_ms) if out else []

    # -- public API ----------------------------------------------------

    def feed(self, samples: np.ndarray) -> list[Segment]:
        """Push samples (float in [-1, 1]); returns newly final segments."""
        if self._closed:
            raise LifecycleError("feed after flush")
        self._fed_samples += len(samples)
        raw_frames = self._features.feed(samples)
        for hidden in self._hidden_frames(raw_frames):
            self._raw_probs.append(self._posterior(hidden))
        self._advance_machine(final=False)
        return self._drain(final=False)

    def flush(self) -> list[Segment]:
        """End of stream: run out the smoother and close any open segment."""
        if self._closed:
            raise LifecycleError("flush called twice")
        self._closed = True
        self._advance_machine(final=True)
        self._machine.finish(len(self._raw_probs) * self._shift_ms)
        return self._drain(final=True)
