from typing import Optional, Sequence

from app.core.exceptions import ConfigError


def require_open_interval(field: str, value: float, lo: float, hi: float) -> None:
    if not (lo < value < hi):
        raise ConfigError(field, f"must lie in ({lo}, {hi}), got {value}")


def require_positive(field: str, value: Optional[float]) -> None:
    if value is not None and not value > 0:
        raise ConfigError(field, f"must be > 0, got {value}")


def require_at_least(field: str, value: int, minimum: int, reason: str = "") -> None:
    if value < minimum:
        suffix = f" ({reason})" if reason else ""
        raise ConfigError(field, f"must be >= {minimum}{suffix}, got {value}")


def require_length(field: str, values: Optional[Sequence[float]], d: int) -> None:
    if values is not None and len(values) != d:
        raise ConfigError(field, f"must have length d={d}, got {len(values)}")


def require_kernel(field: str, J: Optional[int], d: int, minimum: int = 0) -> None:
    if J is None:
        raise ConfigError(field, "is required for this kind")
    if not (minimum <= J < d):
        raise ConfigError(field, f"must satisfy {minimum} <= J < d={d}, got {J}")


def require_forced_modes(field: str, sigma: Optional[Sequence[float]], minimum: int = 2) -> None:
    """sigma=None means the default forcing on the first two modes."""
    if sigma is None:
        return
    forced = sum(1 for s in sigma if s != 0.0)
    if forced < minimum:
        raise ConfigError(field, f"needs at least {minimum} nonzero entries, got {forced}")
