"""Log-mel filterbank front end.

80-dimensional log-mel features over a 25 ms Hamming window with a
10 ms shift, optionally stacked in pairs to 160-dim / 20 ms frames.
Spectra are computed one frame at a time in float64 and stored as
float32, so the batch and incremental paths produce bit-identical
output for the same audio.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer
from .errors import ContractError

WINDOW_MS = 25
SHIFT_MS = 10
N_FFT = 512
N_MELS = 80
FMIN_HZ = 20.0
FMAX_HZ = 7600.0
LOG_FLOOR = 1e-10

_WINDOW_SAMPLES = 400  # 25 ms at 16 kHz
_SHIFT_SAMPLES = 160  # 10 ms at 16 kHz


@dataclass
class FeatureMatrix:
    """T x D feature frames on a fixed shift grid."""

    frames: np.ndarray
    frame_shift_ms: int

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = 16_000,
    fmin: float = FMIN_HZ,
    fmax: float = FMAX_HZ,
) -> np.ndarray:
    """Triangular mel filters evaluated at the FFT bin frequencies.

    Returns an (n_mels, n_fft//2 + 1) float64 weight matrix.  Triangles
    are evaluated continuously (no snapping of edges to bins), so every
    bin strictly inside (fmin, fmax) receives positive weight.
    """
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.arange(n_fft // 2 + 1, dtype=np.float64) * sample_rate / n_fft

    weights = np.zeros((n_mels, n_fft // 2 + 1), dtype=np.float64)
    for m in range(n_mels):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        rising = (bin_freqs - left) / (center - left)
        falling = (right - bin_freqs) / (right - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def mel_filter_centers(
    n_mels: int = N_MELS, fmin: float = FMIN_HZ, fmax: float = FMAX_HZ
) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter."""
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    return mel_to_hz(mel_points[1:-1])


def frame_count(n_samples: int) -> int:
    if n_samples < _WINDOW_SAMPLES:
        raise ContractError(
            f"audio of {n_samples} samples is shorter than one {_WINDOW_SAMPLES}-sample window"
        )
    return 1 + (n_samples - _WINDOW_SAMPLES) // _SHIFT_SAMPLES


def frame_signal(audio: AudioBuffer, window_ms: int = WINDOW_MS, shift_ms: int = SHIFT_MS) -> np.ndarray:
    """Slice audio into Hamming-windowed frames (T x 400 float64)."""
    if window_ms != WINDOW_MS or shift_ms != SHIFT_MS:
        raise ContractError("front end is fixed at a 25 ms window with a 10 ms shift")
    samples = np.asarray(audio.samples, dtype=np.float64)
    n_frames = frame_count(len(samples))
    window = np.hamming(_WINDOW_SAMPLES)
    frames = np.empty((n_frames, _WINDOW_SAMPLES), dtype=np.float64)
    for t in range(n_frames):
        start = t * _SHIFT_SAMPLES
        frames[t] = samples[start : start + _WINDOW_SAMPLES] * window
    return frames


_FILTERBANK = mel_filterbank()


def _log_mel_frame(windowed: np.ndarray) -> np.ndarray:
    """One windowed frame -> 80 log-mel energies (float64 in, float32 out)."""
    spectrum = np.fft.rfft(windowed, n=N_FFT)
    power = spectrum.real**2 + spectrum.imag**2
    energies = _FILTERBANK @ power
    return np.log(np.maximum(energies, LOG_FLOOR)).astype(np.float32)


def log_mel(frames: np.ndarray) -> FeatureMatrix:
    """Windowed frames -> T x 80 log-mel features on the 10 ms grid."""
    out = np.empty((frames.shape[0], N_MELS), dtype=np.float32)
    for t in range(frames.shape[0]):
        out[t] = _log_mel_frame(frames[t])
    return FeatureMatrix(frames=out, frame_shift_ms=SHIFT_MS)


def downsample2(feats: FeatureMatrix) -> FeatureMatrix:
    """Stack consecutive frame pairs: T x 80 at 10 ms -> floor(T/2) x 160 at 20 ms.

    A trailing odd frame is dropped.  Stacking (rather than skipping)
    keeps all spectral information while halving the frame rate.
    """
    if feats.frame_shift_ms != SHIFT_MS:
        raise ContractError(f"downsample2 expects {SHIFT_MS} ms frames, got {feats.frame_shift_ms} ms")
    t_out = feats.frames.shape[0] // 2
    stacked = feats.frames[: 2 * t_out].reshape(t_out, 2 * feats.frames.shape[1])
    return FeatureMatrix(frames=stacked.copy(), frame_shift_ms=2 * SHIFT_MS)


def extract_log_mel(audio: AudioBuffer) -> FeatureMatrix:
    """Audio -> T x 80 log-mel frames (10 ms grid)."""
    return log_mel(frame_signal(audio))


class FeatureStream:
    """Incremental 80-dim log-mel extraction over arbitrarily chunked audio.

    Frames are produced from absolute sample offsets of the growing
    buffer, so output is independent of chunking and bit-identical to
    :func:`extract_log_mel` on the concatenated audio.
    """

    def __init__(self):
        self._window = np.hamming(_WINDOW_SAMPLES)
        self._buffer = np.zeros(0, dtype=np.float32)
        self._next_frame = 0

    def feed(self, samples: np.ndarray) -> np.ndarray:
        """Append samples; return the newly completed frames (k x 80 float32)."""
        self._buffer = np.concatenate([self._buffer, np.asarray(samples, dtype=np.float32)])
        out = []
        while self._next_frame * _SHIFT_SAMPLES + _WINDOW_SAMPLES <= len(self._buffer):
            start = self._next_frame * _SHIFT_SAMPLES
            windowed = self._buffer[start : start + _WINDOW_SAMPLES].astype(np.float64) * self._window
            out.append(_log_mel_frame(windowed))
            self._next_frame += 1
        # Samples older than the next window can never be touched again.
        keep_from = self._next_frame * _SHIFT_SAMPLES
        if keep_from > 0:
            self._buffer = self._buffer[keep_from:]
            self._next_frame = 0
        if not out:
            return np.zeros((0, N_MELS), dtype=np.float32)
        return np.stack(out)

    @property
    def buffered_samples(self) -> int:
        return len(self._buffer)
