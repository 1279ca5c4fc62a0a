"""
Error Types
Exception hierarchy shared by every TimeCal module and the CLI exit-code contract
"""

from typing import Optional


class CalibrationError(Exception):
    """Base class for all TimeCal errors"""

    exit_code = 1


class ConfigurationError(CalibrationError):
    """Unknown model names, invalid settings, malformed file headers"""

    exit_code = 2


class DataError(CalibrationError):
    """Inputs that are structurally fine but unusable (empty, unequal lengths, not positive definite)"""

    exit_code = 2


class DomainError(CalibrationError):
    """A mathematical operation was applied outside its domain"""

    exit_code = 4

    def __init__(self, message: str, value: Optional[float] = None):
        super().__init__(message)
        self.value = value


class SingularDiffusionError(DomainError):
    """b·bᵀ vanished (or stopped being positive definite) at transition k"""

    def __init__(self, index: int, value: Optional[float] = None):
        super().__init__(f"singular diffusion at transition k={index} (b*b^T={value!r})", value)
        self.index = index


class SimulationError(CalibrationError):
    """A simulated state became non-finite or exceeded the overflow limit"""

    exit_code = 3

    def __init__(self, message: str, step: int, trajectory: Optional[int] = None):
        where = f"step k={step}" if trajectory is None else f"trajectory {trajectory}, step k={step}"
        super().__init__(f"{message} ({where})")
        self.step = step
        self.trajectory = trajectory


class TrainingError(CalibrationError):
    """Training aborted; carries where it happened"""

    exit_code = 4

    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"training aborted at epoch {epoch}, batch {batch}: {message}")
        self.epoch = epoch
        self.batch = batch


def exit_code_for(error: BaseException) -> int:
    """Map an exception onto the CLI exit-code contract (0 is reserved for success)"""
    if isinstance(error, CalibrationError):
        return error.exit_code
    return 1
