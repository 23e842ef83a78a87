# app/services/equilibrium_spectral.py

"""
Linearization of B at the axis equilibria alpha*e_i, spectra, hyperbolicity
verdicts and the real stable/unstable/center split.
"""

import hashlib
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg

from app.core.config import get_settings
from app.core.exceptions import AxisIndexError, NotHyperbolic, PreconditionError, SpectralFailure
from app.core.logging_config import error_logger, spectral_logger
from app.schemas.reports import AxisSpectrum, HyperbolicityReport
from app.services.bilinear_core import CoefficientTensor


@dataclass(frozen=True)
class SpectralSplit:
    axis: int
    alpha: float
    eigenvalues: np.ndarray
    basis_s: np.ndarray
    basis_u: np.ndarray
    basis_c: np.ndarray
    proj_s: np.ndarray
    proj_u: np.ndarray
    proj_c: np.ndarray
    margin: float
    L: np.ndarray

    @property
    def dims(self) -> Tuple[int, int, int]:
        return self.basis_s.shape[1], self.basis_u.shape[1], self.basis_c.shape[1]


def _matrix_hash(M: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(M, dtype=float).tobytes()).hexdigest()


def _check_axis(b: CoefficientTensor, i: int) -> None:
    if not (0 <= i < b.d):
        raise AxisIndexError(f"axis {i} out of range for d={b.d}")


def linearization(b: CoefficientTensor, i: int, alpha: float = 1.0) -> np.ndarray:
    """L_{k,j} = 2 alpha b^k_{ij}, the Jacobian of B(x,x) at alpha*e_i."""
    _check_axis(b, i)
    if not alpha > 0:
        raise PreconditionError(f"alpha must be > 0, got {alpha}")
    return 2.0 * alpha * np.array(b.coeffs[:, i, :])


def spectrum(M: np.ndarray) -> np.ndarray:
    """Eigenvalues with multiplicity sorted by (Re, Im). LAPACK Hessenberg/QR."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise PreconditionError(f"matrix must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise SpectralFailure("matrix has non-finite entries", _matrix_hash(np.nan_to_num(M)))
    try:
        eig = scipy.linalg.eigvals(M, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        error_logger.error(f"[SPECTRUM] eigensolver failed for {M.shape} matrix: {exc}", exc_info=True)
        raise SpectralFailure(f"eigensolver did not converge: {exc}", _matrix_hash(M)) from exc
    order = np.lexsort((eig.imag, eig.real))
    return eig[order]


def center_tolerance(L: np.ndarray) -> float:
    """Default center band: relative to ||L||_2 with an absolute floor."""
    settings = get_settings()
    return max(settings.CENTER_TOL_REL * float(np.linalg.norm(L, 2)), settings.CENTER_TOL_ABS)


def _classify(eig: np.ndarray, tol_center: float) -> np.ndarray:
    classes = np.full(eig.shape, "center", dtype=object)
    classes[eig.real < -tol_center] = "stable"
    classes[eig.real > tol_center] = "unstable"
    # the structural zero L e_i = 0 is always center, whatever the tolerance
    classes[int(np.argmin(np.abs(eig)))] = "center"
    return classes


def axis_spectrum(b: CoefficientTensor, i: int, alpha: float = 1.0, tol_center: Optional[float] = None) -> AxisSpectrum:
    L = linearization(b, i, alpha)
    eig = spectrum(L)
    tol = tol_center if tol_center is not None else center_tolerance(L)
    if tol < 0:
        raise PreconditionError(f"tol_center must be >= 0, got {tol}")
    classes = _classify(eig, tol)
    structural = int(np.argmin(np.abs(eig)))
    others = np.delete(eig, structural)
    margin = float(np.min(np.abs(others.real))) if others.size else 0.0
    unstable = eig.real[classes == "unstable"]
    return AxisSpectrum(
        axis=i,
        eigen_re=[float(v) for v in eig.real],
        eigen_im=[float(v) for v in eig.imag],
        classes=[str(c) for c in classes],
        n_stable=int(np.sum(classes == "stable")),
        n_unstable=int(np.sum(classes == "unstable")),
        n_center=int(np.sum(classes == "center")),
        margin=margin,
        min_unstable=float(unstable.min()) if unstable.size else 0.0,
        max_unstable=float(unstable.max()) if unstable.size else 0.0,
        tol_center=tol,
    )


def hyperbolicity_report(b: CoefficientTensor, alpha: float = 1.0, tol_center: Optional[float] = None) -> HyperbolicityReport:
    if tol_center is not None and not tol_center > 0:
        raise PreconditionError(f"tol_center must be > 0, got {tol_center}")
    axes = [axis_spectrum(b, i, alpha, tol_center) for i in range(b.d)]
    report = HyperbolicityReport(alpha=alpha, axes=axes)
    spectral_logger.debug(
        f"[HYPERBOLICITY] d={b.d} alpha={alpha} verdict={report.verdict} min_margin={report.min_margin:.3e}"
    )
    return report


def _invariant_basis(L: np.ndarray, select) -> Tuple[np.ndarray, int]:
    def _sort(re, im=None):
        return bool(select(np.real(re)))

    _, Z, sdim = scipy.linalg.schur(L, output="real", sort=_sort)
    return Z[:, :sdim], sdim


def spectral_split(b: CoefficientTensor, i: int, alpha: float = 1.0, tol_center: Optional[float] = None) -> SpectralSplit:
    """
    Real invariant subspaces from ordered real Schur forms (complex pairs stay in
    2x2 blocks). E_c is span(e_i); projectors come from the inverse of [E_u E_s E_c].
    """
    axis = axis_spectrum(b, i, alpha, tol_center)
    if not axis.passes:
        raise NotHyperbolic(
            f"axis {i}: n_center={axis.n_center} n_unstable={axis.n_unstable} margin={axis.margin:.3e}"
        )
    L = linearization(b, i, alpha)
    tol = axis.tol_center
    basis_u, n_u = _invariant_basis(L, lambda re: re > tol)
    basis_s, n_s = _invariant_basis(L, lambda re: re < -tol)
    if n_u != axis.n_unstable or n_s != axis.n_stable:
        raise SpectralFailure(
            f"Schur reordering disagrees with eigenvalue count on axis {i}: "
            f"({n_s},{n_u}) vs ({axis.n_stable},{axis.n_unstable})",
            _matrix_hash(L),
        )
    basis_c = np.zeros((b.d, 1))
    basis_c[i, 0] = 1.0
    V = np.hstack([basis_u, basis_s, basis_c])
    try:
        V_inv = np.linalg.inv(V)
    except np.linalg.LinAlgError as exc:
        raise SpectralFailure(f"invariant subspaces are not complementary on axis {i}", _matrix_hash(L)) from exc

    proj_u = V[:, :n_u] @ V_inv[:n_u, :]
    proj_s = V[:, n_u:n_u + n_s] @ V_inv[n_u:n_u + n_s, :]
    proj_c = V[:, n_u + n_s:] @ V_inv[n_u + n_s:, :]
    eig = np.array(axis.eigen_re) + 1j * np.array(axis.eigen_im)
    spectral_logger.debug(f"[SPLIT] axis={i} dims(s,u,c)=({n_s},{n_u},1) cond={np.linalg.cond(V):.3e}")
    return SpectralSplit(
        axis=i,
        alpha=alpha,
        eigenvalues=eig,
        basis_s=basis_s,
        basis_u=basis_u,
        basis_c=basis_c,
        proj_s=proj_s,
        proj_u=proj_u,
        proj_c=proj_c,
        margin=axis.margin,
        L=L,
    )


def unstable_rate(split: SpectralSplit) -> Tuple[float, float]:
    """(smallest, largest) real part among the unstable eigenvalues."""
    tol = center_tolerance(split.L)
    re = split.eigenvalues.real[split.eigenvalues.real > tol]
    if re.size == 0:
        return 0.0, 0.0
    return float(re.min()), float(re.max())
