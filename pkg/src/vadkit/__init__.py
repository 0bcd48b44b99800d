"""Frame-level voice activity detection with streaming segmentation.

Three interchangeable encoders (memory-block feedforward, decay-gated
recurrence, chunked self-attention with an FIR memory branch) feed a
stack of frame heads: speech/non-speech, CTC characters, punctuation.
Everything runs on a small tape-based autodiff core over numpy.
"""

from .audio import AudioBuffer, Segment, SegmentLabelSet, read_wav, write_wav
from .config import PipelineConfig, default_config, load_config, parse_config
from .errors import VadkitError
from .features import FeatureMatrix, extract_log_mel
from .model import VadModel, size_report
from .vad import VadSession, extract_segments, model_latency_report
from .weights import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "FeatureMatrix",
    "PipelineConfig",
    "Segment",
    "SegmentLabelSet",
    "VadModel",
    "VadSession",
    "VadkitError",
    "default_config",
    "extract_log_mel",
    "extract_segments",
    "load_config",
    "load_weights",
    "model_latency_report",
    "parse_config",
    "read_wav",
    "save_weights",
    "size_report",
    "write_wav",
    "__version__",
]
