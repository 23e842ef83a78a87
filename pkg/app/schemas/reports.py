from typing import Dict, List, Optional

from pydantic import BaseModel, Field


# --- Spectral ---
class AxisSpectrum(BaseModel):
    axis: int  # 0-based
    eigen_re: List[float]
    eigen_im: List[float]
    classes: List[str]  # "stable" | "unstable" | "center", aligned with eigenvalues
    n_stable: int
    n_unstable: int
    n_center: int
    margin: float = Field(..., description="min |Re lambda| over the non-structural eigenvalues")
    min_unstable: float = 0.0
    max_unstable: float = 0.0
    tol_center: float

    @property
    def passes(self) -> bool:
        return self.n_center == 1 and self.n_unstable >= 1


class HyperbolicityReport(BaseModel):
    alpha: float
    axes: List[AxisSpectrum]

    @property
    def verdict(self) -> bool:
        return all(a.passes for a in self.axes)

    @property
    def min_margin(self) -> float:
        return min(a.margin for a in self.axes) if self.axes else 0.0


# --- Hypoellipticity ---
class PairCertificateRow(BaseModel):
    i: int
    j: int
    G: float
    G_normalized: float
    G_bracket: float
    passes: bool


class HypoellipticityReport(BaseModel):
    tol: float
    pairs: List[PairCertificateRow]
    min_margin: float
    passes: bool

    def pair(self, i: int, j: int) -> PairCertificateRow:
        for row in self.pairs:
            if row.i == i and row.j == j:
                return row
        raise KeyError((i, j))


# --- Monte Carlo ---
class EnsembleSummary(BaseModel):
    mean: float
    var: float
    se: float
    n: int
    censored_n: int = 0


class EnergyBalanceReport(BaseModel):
    residual: float
    se: float
    n_paths: int
    T: float
    dt: float
    scheme: str
    mean_final_energy: float
    mean_dissipation: float
    injected: float


class FluxReport(BaseModel):
    bracket_average: float
    bracket_se: float
    kernel_flux: float = Field(..., description="energy flux out of the kernel, minus the bracket average")
    expected_flux: float = Field(..., description="half the noise power on kernel modes")
    ito_drift: float
    ito_martingale: float
    ito_quadratic: float = Field(..., description="realized quadratic variation per unit time")
    ito_correction: float = Field(..., description="noise power on kernel modes")
    bookkeeping_residual: float = Field(..., description="mean Itô identity residual per unit time")
    bookkeeping_se: float
    n_paths: int
    T: float
    burn_in: float
    dt: float


class ExitTimeRow(BaseModel):
    epsilon: float
    mean_tau: float
    se: float
    n: int
    censored_n: int
    horizon: float
    censored_fraction: float = Field(0.0, description="paths that never reached the target, counted at the horizon in mean_tau")
    fraction_within: Optional[float] = None


class ExitTimeScalingReport(BaseModel):
    delta: float
    dt: float
    rows: List[ExitTimeRow]
    slope: float
    intercept: float
    r_squared: float
    C: float
    c: float
    max_censored_fraction: float = 0.0


class CoercivityReport(BaseModel):
    epsilon: float
    C0: float
    horizon: float
    mean: float
    se: float
    n_paths: int
    dt: float


class DriftReport(BaseModel):
    x0_norm: float
    one_step: float
    one_step_se: float
    two_step: float
    two_step_se: float
    normalized: float = Field(..., description="two-step drift times log|x0| / |x0|")
    one_step_bound: float
    n_paths: int
    dt: float


class MomentRow(BaseModel):
    p: float
    mean: float
    se: float
    n: int


class CertificateMargins(BaseModel):
    hyperbolicity_margin: float
    hyperbolicity_margin_rel: float
    min_G_normalized: float
    passthrough_J_delta: Optional[int] = None
    passthrough_c_delta: float = 0.0
    passthrough_c_delta_rel: float = 0.0
    extra: Dict[str, float] = Field(default_factory=dict)

    @property
    def smallest(self) -> float:
        return min(self.hyperbolicity_margin_rel, self.min_G_normalized, self.passthrough_c_delta_rel)
