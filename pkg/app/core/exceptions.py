# app/core/exceptions.py

"""
Domain exceptions.

Input problems subclass ValueError, numerical failures subclass ArithmeticError,
so callers that only know the builtin hierarchy still catch them. The CLI maps
ConfigError/ValidationError to exit code 2 and NumericalFailure to exit code 3.
"""

from typing import Optional


class BilinearError(Exception):
    pass


# --- Input and precondition errors ---

class InvalidDimension(BilinearError, ValueError):
    pass


class DimensionError(BilinearError, ValueError):
    pass


class PreconditionError(BilinearError, ValueError):
    pass


class DepthError(PreconditionError):
    pass


class ConfigError(BilinearError, ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class AxisIndexError(BilinearError, IndexError):
    pass


# --- Numerical failures ---

class NumericalFailure(BilinearError, ArithmeticError):
    pass


class SpectralFailure(NumericalFailure):
    def __init__(self, message: str, matrix_hash: Optional[str] = None):
        self.matrix_hash = matrix_hash
        suffix = f" (matrix sha256 {matrix_hash[:16]})" if matrix_hash else ""
        super().__init__(message + suffix)


class BlowupDetected(NumericalFailure):
    def __init__(self, step: int, message: str = "non-finite state"):
        self.step = step
        super().__init__(f"{message} at step {step}")


class NotHyperbolic(NumericalFailure):
    pass


class SamplingError(NumericalFailure):
    pass
