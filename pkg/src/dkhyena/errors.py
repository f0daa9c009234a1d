"""Exception types for contract violations across the package."""


class DkhError(Exception):
    """Base class for all package-specific errors."""


class ShapeMismatchError(DkhError):
    """Operand shapes are incompatible for the requested operation."""


class BadKernelSizeError(DkhError):
    """Convolution window must be odd and >= 1, with matching padding."""


class FilterTooLongError(DkhError):
    """FFT convolution filter is longer than the signal."""


class NotScalarError(DkhError):
    """backward() requires a scalar loss tensor."""


class GraphError(DkhError):
    """Backward pass requested without a recorded graph."""


class NonFiniteError(DkhError):
    """A validation pass found NaN or Inf values."""


class NumericsError(DkhError):
    """An internal numeric consistency check failed (e.g. FFT imaginary residue)."""


class EmptySourceError(DkhError):
    """Alignment source has no valid frames."""


class AllKeysMaskedError(DkhError):
    """Attention query has no unmasked key position."""


class TokenOutOfRangeError(DkhError):
    """Token id is outside the embedding table."""


class SequenceTooLongError(DkhError):
    """Sequence (plus CLS) exceeds the positional table."""


class LabelOutOfRangeError(DkhError):
    """Class label is outside [0, n_classes)."""


class BadSpecError(DkhError):
    """Synthetic data spec fails validation."""


class EmptyDatasetError(DkhError):
    """Operation requires a non-empty dataset."""


class ConfigError(DkhError):
    """Config file missing, unreadable, or failing validation."""


class CheckpointFormatError(DkhError):
    """Checkpoint bytes do not parse under the DKHY layout."""


class CheckpointVersionError(DkhError):
    """Checkpoint version is not supported by this build."""


class DatasetParseError(DkhError):
    """A JSON Lines record failed to parse or validate; carries the line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ParseError(DatasetParseError):
    """Record is not valid JSON or lacks required keys."""


class ShapeError(DatasetParseError):
    """Record's feature matrix has inconsistent row widths."""


class LabelError(DatasetParseError):
    """Record's label is outside the declared class range."""
