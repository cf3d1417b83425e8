"""Exception hierarchy shared across the package."""


class DualPlanError(Exception):
    """Base class for every error raised by dualplan."""


class ConfigError(DualPlanError):
    """Invalid or incomplete configuration (CLI exit code 1)."""


class UnrecognizedVerdict(DualPlanError):
    """A critic verdict matched zero or several reward-map entries."""


class DimensionMismatch(DualPlanError, ValueError):
    pass


class TooFewActions(DualPlanError, ValueError):
    pass


class EmptySamples(DualPlanError, ValueError):
    pass


class CheckpointError(DualPlanError):
    """Checkpoint file could not be parsed."""


class VersionMismatch(CheckpointError):
    pass


class EncoderMismatch(CheckpointError):
    pass


class TerminalStateError(DualPlanError):
    """A step was requested on a dialogue that has already ended."""


class StepFailed(DualPlanError):
    """A backend call kept failing after all retries."""


class SimulationAborted(DualPlanError):
    pass


class ParseFailure(DualPlanError, ValueError):
    pass


class InvalidPrices(DualPlanError, ValueError):
    pass


class TrainingDiverged(DualPlanError):
    """Raised when a loss or gradient turns non-finite."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []
