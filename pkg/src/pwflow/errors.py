"""Exception types shared across the package."""


class PwflowError(Exception):
    """Base class for all package-specific errors."""


class GridShapeError(PwflowError, ValueError):
    """Operands do not share grid dimensions."""


class ConfigError(PwflowError, ValueError):
    """Invalid solver or tracker configuration."""


class InputFormatError(PwflowError, ValueError):
    """Malformed raster, grid, or manifest file."""


class NumericalError(PwflowError, RuntimeError):
    """Non-finite values encountered during a numerical solve."""


class RegionVanishedError(PwflowError, RuntimeError):
    """A tracked structure lost all of its pixels."""

    def __init__(self, label: int, iteration: int):
        super().__init__(f"structure {label} vanished at inner iteration {iteration}")
        self.label = label
        self.iteration = iteration


class TrackAborted(PwflowError, RuntimeError):
    """A sequence transition failed; carries the completed per-frame results."""

    def __init__(self, transition_index: int, cause: Exception, partial_results: list):
        super().__init__(
            f"tracking aborted at transition {transition_index}: {cause}"
        )
        self.transition_index = transition_index
        self.cause = cause
        self.partial_results = partial_results
