"""Exception types shared across the package."""


class ContractViolationError(ValueError):
    """An operation was called with arguments that break its stated contract."""


class EpisodeExhaustedError(RuntimeError):
    """env_step was called on an episode that already ran its full length."""


class TrainingDivergenceError(RuntimeError):
    """A training loss became non-finite; the orchestrator should halt the stage."""

    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class InsufficientDataError(RuntimeError):
    """A buffer was asked for more distinct items than it holds."""


class ConfigError(ValueError):
    """A config file is missing, unreadable, or holds an invalid value."""


class CheckpointError(RuntimeError):
    """Base class for checkpoint container problems."""


class CorruptCheckpointError(CheckpointError):
    """Checksum mismatch, truncation, or a malformed section layout."""


class CheckpointVersionError(CheckpointError):
    """The container declares a format version this code does not understand."""


class MetricsError(ValueError):
    """A metrics file is empty or has a row that does not parse."""
