"""Exception types shared across the package."""


class BracketLabError(Exception):
    """Base class for all package errors."""


class ConfigError(BracketLabError):
    """Invalid or inconsistent run configuration."""


class InvalidSpecError(BracketLabError):
    """Scene spec fields out of their allowed ranges."""


class EvOutOfRangeError(BracketLabError):
    """Requested EV is outside the achievable grid span.

    Carries the nearest achievable EV so callers can clamp.
    """

    def __init__(self, target_ev: float, nearest_ev: float):
        self.target_ev = target_ev
        self.nearest_ev = nearest_ev
        super().__init__(
            f"target EV {target_ev:.4f} outside achievable span; "
            f"nearest achievable is {nearest_ev:.4f}"
        )


class DegenerateSceneError(BracketLabError):
    """Scene too dark or bright for any grid setting to expose."""


class OverBudgetError(BracketLabError):
    """Total shutter time of a bracket exceeds the frame interval."""


class GridTooLargeError(BracketLabError):
    """Exhaustive search would exceed the combinatorial guard."""


class TrainingDivergenceError(BracketLabError):
    """Non-finite loss or gradients during training."""

    def __init__(self, message: str, episode: int | None = None, epoch: int | None = None):
        self.episode = episode
        self.epoch = epoch
        super().__init__(message)
