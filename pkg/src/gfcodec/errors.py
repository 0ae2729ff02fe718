"""Exception hierarchy shared across the codec."""


class GfcError(Exception):
    """Base class for all codec errors."""


class DataError(GfcError):
    """Bad input data: malformed files, invalid frames, mismatched shapes."""


class FormatError(DataError):
    """A container (frame, weights, bitstream) failed structural parsing."""


class DigestMismatchError(DataError):
    """Encoder and decoder configurations disagree."""

    def __init__(self, expected: str, actual: str):
        super().__init__(
            f"config digest mismatch: bitstream carries {expected}, "
            f"decoder configured with {actual}"
        )
        self.expected = expected
        self.actual = actual


class TrainingDivergedError(GfcError):
    """Loss or gradients became non-finite during optimization."""
