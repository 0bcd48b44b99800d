"""Model assembly: encoder plus heads plus front-end statistics.

A VadModel owns the full named-parameter dictionary.  Parameters live
under three prefixes: ``encoder.*`` (counted by the size report),
``heads.*``, and ``frontend.*`` (per-dimension feature mean/std, not
trainable).  Initialization derives one RNG stream per tensor from its
name, so two models built from the same seed agree tensor-by-tensor no
matter what order the architecture declares them in.
"""

from __future__ import annotations

import numpy as np

from . import features as feats_mod
from . import heads as heads_mod
from .config import PipelineConfig
from .encoders import common, dfsmn, rwkv, sanm
from .errors import ConfigError
from .features import FeatureMatrix
from .heads import FramePosteriors
from .tensor import Tensor, no_grad

_ENCODERS = {"dfsmn": dfsmn, "rwkv": rwkv, "sanm": sanm}


def encoder_module(encoder_type: str):
    try:
        return _ENCODERS[encoder_type]
    except KeyError:
        raise ConfigError(f"unknown encoder type {encoder_type!r}") from None


def param_specs(cfg: PipelineConfig) -> list[common.ParamSpec]:
    specs = list(encoder_module(cfg.encoder.type).param_specs(cfg.encoder))
    specs += heads_mod.param_specs(cfg.encoder.width, cfg.heads)
    specs += [
        common.ParamSpec("frontend.mean", (feats_mod.N_MELS,), "zeros", trainable=False),
        common.ParamSpec("frontend.std", (feats_mod.N_MELS,), "ones", trainable=False),
    ]
    return specs


class VadModel:
    def __init__(self, cfg: PipelineConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def initialize(cls, cfg: PipelineConfig, seed: int = 0) -> "VadModel":
        return cls(cfg, common.materialize(param_specs(cfg), seed))

    @classmethod
    def from_arrays(cls, cfg: PipelineConfig, arrays: dict[str, np.ndarray]) -> "VadModel":
        """Bind loaded arrays to the config's expected tensors.

        The expected set is exactly the config's specs; the first missing,
        extra, or mis-shaped tensor is reported by name.
        """
        specs = param_specs(cfg)
        params: dict[str, Tensor] = {}
        for spec in specs:
            if spec.name not in arrays:
                raise ConfigError(f"weights missing tensor {spec.name!r} expected by config")
            arr = arrays[spec.name]
            if tuple(arr.shape) != tuple(spec.shape):
                raise ConfigError(
                    f"tensor {spec.name!r} has shape {tuple(arr.shape)}, config expects {tuple(spec.shape)}"
                )
            params[spec.name] = Tensor(arr.astype(np.float32), requires_grad=spec.trainable)
        expected = {s.name for s in specs}
        for name in arrays:
            if name not in expected:
                raise ConfigError(f"weights contain unexpected tensor {name!r}")
        return cls(cfg, params)

    # ------------------------------------------------------------------
    # forward paths
    # ------------------------------------------------------------------

    def normalize(self, feats: FeatureMatrix) -> np.ndarray:
        if not self.cfg.features.normalize:
            return feats.frames
        mean = self.params["frontend.mean"].data
        std = self.params["frontend.std"].data
        return ((feats.frames - mean) / std).astype(np.float32)

    def encoder_input(self, feats: FeatureMatrix) -> tuple[np.ndarray, int]:
        """Per-encoder input view: (array, output frame shift ms)."""
        frames = self.normalize(feats)
        if self.cfg.encoder.type == "rwkv":
            return frames, 2 * feats.frame_shift_ms
        stacked = feats_mod.downsample2(FeatureMatrix(frames, feats.frame_shift_ms))
        return stacked.frames, stacked.frame_shift_ms

    def hidden(self, feats: FeatureMatrix, training: bool = False, rng: np.random.Generator | None = None) -> tuple[Tensor, int]:
        """Encode a 10 ms-grid feature matrix to (T', width) hidden frames."""
        array, shift_ms = self.encoder_input(feats)
        enc_cfg = self.cfg.encoder
        x = Tensor(array)
        if enc_cfg.type == "rwkv":
            out = rwkv.forward(self.params, x, enc_cfg, training, rng)
        elif enc_cfg.type == "dfsmn":
            out = dfsmn.forward(self.params, x, enc_cfg)
        else:
            out = sanm.forward(self.params, x, enc_cfg)
        return out, shift_ms

    def _too_short(self, feats: FeatureMatrix) -> bool:
        if self.cfg.encoder.type == "rwkv":
            return len(feats) < 3
        return len(feats) < 2

    def posteriors(self, feats: FeatureMatrix) -> FramePosteriors:
        if self._too_short(feats):
            return FramePosteriors(np.zeros(0), 2 * feats.frame_shift_ms)
        with no_grad():
            hidden, shift_ms = self.hidden(feats)
            return heads_mod.vad_classify(self.params, hidden, shift_ms)

    # ------------------------------------------------------------------
    # bookkeeping
    # ------------------------------------------------------------------

    def trainable(self) -> list[Tensor]:
        return [t for t in self.params.values() if t.requires_grad]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.params.items()}

    def encoder_param_count(self) -> int:
        return sum(t.data.size for name, t in self.params.items() if name.startswith("encoder."))

    def encoder_param_bytes(self) -> int:
        return 4 * self.encoder_param_count()


def size_report(model: VadModel) -> dict[str, float]:
    """Encoder-only footprint; the size everyone quotes for these models."""
    n_bytes = model.encoder_param_bytes()
    return {
        "encoder_params": model.encoder_param_count(),
        "encoder_bytes": n_bytes,
        "encoder_mb": n_bytes / (1024.0 * 1024.0),
    }
