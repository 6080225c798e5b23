"""Exception hierarchy shared by all stages."""


class SpectralRangesError(Exception):
    """Base class for every error raised by this package."""


class IngestionError(SpectralRangesError, ValueError):
    """Malformed input file (bad row length, unparsable or non-finite cell)."""


class ParseError(IngestionError):
    """Downloaded dataset does not have the expected layout."""


class NetworkError(SpectralRangesError, OSError):
    """Remote dataset unreachable and no cached copy available."""


class DegenerateSpectrumError(SpectralRangesError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class DegenerateSlopeError(DegenerateSpectrumError):
    pass


class DegenerateVariableError(SpectralRangesError, ValueError):
    def __init__(self, message, index=None, wavelength=None):
        super().__init__(message)
        self.index = index
        self.wavelength = wavelength


class InvalidSplitError(SpectralRangesError, ValueError):
    pass


class RankError(SpectralRangesError, ValueError):
    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


class NumericalError(SpectralRangesError, ArithmeticError):
    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UndefinedMetricError(SpectralRangesError, ValueError):
    pass


class ArtifactNotAvailable(SpectralRangesError, LookupError):
    pass


class ConfigError(SpectralRangesError, ValueError):
    pass


class SelectionError(SpectralRangesError, RuntimeError):
    pass


class PipelineError(SpectralRangesError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
