"""Exception types raised across the pipeline."""


class ConfigError(ValueError):
    """Invalid parameters, malformed tables or unresolvable scenario settings."""


class ShapeError(ValueError):
    pass


class SimulationDiverged(RuntimeError):
    def __init__(self, step: int, msg: str = "non-finite state"):
        super().__init__(f"simulation diverged at step {step}: {msg}")
        self.step = step


class DegenerateDataError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class FitError(RuntimeError):
    """Koopman fit failure inside a sliding-window cycle."""

    def __init__(self, cycle: int, cause: Exception):
        super().__init__(f"fit failed in cycle {cycle}: {cause}")
        self.cycle = cycle
        self.cause = cause


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


class ModelLoadError(IOError):
    pass


class ModelVersionError(ModelLoadError):
    pass


class ModelMissingError(FileNotFoundError):
    pass


class CalibrationError(ValueError):
    pass


class ComparisonError(ValueError):
    pass
