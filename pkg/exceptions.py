"""
Error types shared by the simulation, analysis and command-line layers.
"""

from typing import Optional


class IPCLabError(Exception):
    """Base class for every error raised by the toolkit"""

    exit_code = 3


class ConfigError(IPCLabError, ValueError):
    """Invalid experiment configuration or settings"""

    exit_code = 2


class DimensionError(IPCLabError, ValueError):
    """Operand shapes do not agree"""

    exit_code = 2


class BasisError(IPCLabError, ValueError):
    """Invalid basis cutoffs, index or history"""

    exit_code = 2


class DegenerateTargetError(IPCLabError, ValueError):
    """Target series with zero mean power"""

    exit_code = 3


class LinalgError(IPCLabError, ArithmeticError):
    """Eigen/pseudo-inverse kernel failure"""

    exit_code = 3


class VerificationError(IPCLabError):
    """A verification or self-test check failed"""

    exit_code = 1


class NumericalError(IPCLabError, ArithmeticError):
    """Reservoir state diverged or became non-finite"""

    exit_code = 3

    def __init__(self, message: str, step: Optional[int] = None, realization: Optional[int] = None):
        self.step = step
        self.realization = realization
        details = []
        if step is not None:
            details.append(f"step {step}")
        if realization is not None:
            details.append(f"realization {realization}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
