"""Exception taxonomy shared across the package.

Every error raised by vadkit derives from :class:`VadkitError` so callers
(CLI, service) can translate failures uniformly.
"""


class VadkitError(Exception):
    """Base class for all vadkit errors."""


class FormatError(VadkitError):
    """Malformed container or header (WAV, weight file, report)."""


class UnsupportedError(VadkitError):
    """Well-formed input using a feature outside scope (codec, bit depth)."""


class SampleRateError(VadkitError):
    """Audio sample rate differs from the fixed 16 kHz pipeline rate."""


class ParseError(VadkitError):
    """Text input (segment/transcript/manifest/config file) failed to parse.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateError(VadkitError):
    """Duplicate key where uniqueness is required (utterance ids, tensor names)."""


class ShapeError(VadkitError):
    """Tensor operands have incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")


class NumericError(VadkitError):
    """An operation produced a non-finite value (NaN or Inf)."""


class ContractError(VadkitError):
    """A caller violated an operation's documented precondition."""


class ConfigError(VadkitError):
    """Invalid or inconsistent configuration."""


class LabelError(VadkitError):
    """A training label lies outside the valid class range."""


class InfeasibleError(VadkitError):
    """A label sequence admits no valid alignment for the given length."""


class UndefinedMetricError(VadkitError):
    """A metric is undefined for the given inputs (empty class, zero baseline)."""


class BoundsError(VadkitError):
    """A segment lies outside the audio it annotates."""


class LifecycleError(VadkitError):
    """A session method was called in the wrong lifecycle state."""


class StreamingUnsupportedError(VadkitError):
    """The configured encoder cannot run in streaming mode."""
