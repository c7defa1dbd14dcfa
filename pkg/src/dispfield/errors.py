"""Exception types raised across the pipeline."""


class DispFieldError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(DispFieldError, ValueError):
    pass


class InvalidHomographyError(DispFieldError, ValueError):
    pass


class DegenerateConfigurationError(DispFieldError, ValueError):
    """Point configuration does not determine a unique homography."""


class NoConsensusError(DispFieldError):
    """RANSAC found no model supported by at least four inliers."""


class RegistrationError(DispFieldError):
    """Registration of an adjacent view pair failed.

    ``pair_index`` is the index of the left view of the failing pair.
    """

    def __init__(self, pair_index, cause):
        super().__init__(f"registration of views {pair_index} and {pair_index + 1} failed: {cause}")
        self.pair_index = pair_index
        self.cause = cause


class ImageTooSmallError(DispFieldError, ValueError):
    pass


class EmptyForegroundError(DispFieldError):
    pass


class UndefinedCorrelationError(DispFieldError):
    """ZNCC is undefined because one operand has zero variance."""


class UndefinedMetricError(DispFieldError):
    pass


class OutsideElementError(DispFieldError, ValueError):
    pass


class DegenerateElementError(DispFieldError, ValueError):
    pass


class SelfIntersectionError(DispFieldError, ValueError):
    pass


class ConfigError(DispFieldError, ValueError):
    pass


class StageError(DispFieldError):
    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
