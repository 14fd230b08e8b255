class DifficultyError(Exception):
    """Base class for every error raised by the difficulty modules."""


class ValidationError(DifficultyError, ValueError):
    """Input violates a documented precondition."""


class DimensionError(ValidationError):
    """Feature vector length does not match the fitted model."""


class ParseError(ValidationError):
    """Malformed reach-log row."""

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class ConfigError(DifficultyError, ValueError):
    """Bad or missing configuration value."""


class FitError(DifficultyError, RuntimeError):
    """A model could not be fitted on the data it was given."""


class UndefinedGroundTruthError(DifficultyError):
    """Ball around a test point holds no participant or no control reaches."""


class UndefinedMetricError(DifficultyError):
    """Metric is undefined for the given values (e.g. constant truths for r²)."""


class ExperimentError(DifficultyError):
    """Failure inside one (model, participant, seed) cell of an experiment."""

    def __init__(self, model, participant, seed, cause):
        self.model = model
        self.participant = participant
        self.seed = seed
        super().__init__(f"model={model} participant={participant} seed={seed}: {cause}")
