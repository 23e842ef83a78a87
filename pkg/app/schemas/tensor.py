from typing import List, Tuple

from pydantic import BaseModel, Field, field_validator


# --- Serialized tensor (free coordinates only) ---
class TensorDocument(BaseModel):
    d: int = Field(..., ge=3)
    # [i, j, k, value] with 1-based indices; (i, j, k) names either b^i_{jk} or b^j_{ik}
    # of a triple i < j < k, dependent slots are rebuilt on load
    entries: List[Tuple[int, int, int, float]] = Field(default_factory=list)

    @field_validator("entries")
    @classmethod
    def indices_distinct(cls, entries):
        for i, j, k, _ in entries:
            if len({i, j, k}) != 3:
                raise ValueError(f"entry ({i},{j},{k}) must use three distinct indices")
        return entries


# --- Membership check ---
class MembershipReport(BaseModel):
    d: int
    tol: float
    scale: float = Field(..., description="max |b| used to make the tolerance relative")
    symmetry_residual: float
    zero_pattern_residual: float
    jacobi_residual: float
    passes: bool

    @property
    def max_residual(self) -> float:
        return max(self.symmetry_residual, self.zero_pattern_residual, self.jacobi_residual)
