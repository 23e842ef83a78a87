# app/services/hormander_ladder.py

"""
Bracket ladder certificates for the parabolic Hörmander condition.

The ladder for a forcing pair (i, j) starts from v1 = e_i, v2 = e_j and sets
    v_{m+2} = B(v_m, v_{m+1}) - (orthogonal projection onto span(v_1..v_{m+1})).
The exact double bracket of constant fields with the drift is
[v, [w, B + eps*M x]] = 2 B(v, w); the ladder keeps the half bracket so that the
witness tensor gives v_m = e_m, and G_bracket carries the factors of 2.
"""

from dataclasses import dataclass
from itertools import permutations
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import sympy as sp

from app.core.exceptions import AxisIndexError, DepthError, DimensionError, InvalidDimension, PreconditionError
from app.core.logging_config import certificate_logger
from app.schemas.reports import HypoellipticityReport, PairCertificateRow
from app.services.bilinear_core import CoefficientTensor, evaluate, from_free_coordinates, n_free, _triples

MAX_BRACKET_DEPTH = 4
CORRECTIONS = ("orthogonal", "triangular")


@dataclass(frozen=True)
class LadderCertificate:
    pair: Tuple[int, int]
    vectors: np.ndarray  # columns v_1..v_d
    G: float
    G_normalized: float
    G_bracket: float
    bracket_norms: np.ndarray  # norms of the raw brackets for v_3..v_d

    def vector(self, m: int) -> np.ndarray:
        """v_m with the 1-based ladder numbering."""
        return self.vectors[:, m - 1]


# --- Symbolic vector fields ---

def _symbols(d: int) -> List[sp.Symbol]:
    return list(sp.symbols(f"x1:{d + 1}", real=True))


def lie_bracket(f: sp.Matrix, g: sp.Matrix, xs: Sequence[sp.Symbol]) -> sp.Matrix:
    """[f, g] = Dg f - Df g."""
    return (g.jacobian(xs) * f - f.jacobian(xs) * g).applyfunc(sp.expand)


def drift_field(b: CoefficientTensor, xs: Sequence[sp.Symbol], linear: Optional[np.ndarray] = None, eps: float = 0.0) -> sp.Matrix:
    """X0 = B(x, x) - eps * linear @ x as a sympy column."""
    d = b.d
    x = sp.Matrix(xs)
    comps = []
    for i in range(d):
        expr = sp.Integer(0)
        for j in range(d):
            for k in range(d):
                c = b.coeffs[i, j, k]
                if c != 0.0:
                    expr += sp.Float(c) * xs[j] * xs[k]
        if linear is not None and eps != 0.0:
            expr -= sp.Float(eps) * sum((sp.Float(linear[i, j]) * x[j] for j in range(d) if linear[i, j] != 0.0), sp.Integer(0))
        comps.append(sp.expand(expr))
    return sp.Matrix(comps)


def _constant_field(v: np.ndarray) -> sp.Matrix:
    return sp.Matrix([sp.Float(float(c)) if c != 0.0 else sp.Integer(0) for c in v])


def double_bracket(
    b: CoefficientTensor,
    v: np.ndarray,
    w: np.ndarray,
    linear: Optional[np.ndarray] = None,
    eps: float = 0.0,
) -> np.ndarray:
    """[v, [w, B - eps*M x]] for constant fields v, w, evaluated symbolically (constant in x)."""
    xs = _symbols(b.d)
    X0 = drift_field(b, xs, linear, eps)
    inner = lie_bracket(_constant_field(np.asarray(w, dtype=float)), X0, xs)
    outer = lie_bracket(_constant_field(np.asarray(v, dtype=float)), inner, xs)
    at_zero = {s: 0 for s in xs}
    return np.array([float(c.subs(at_zero)) for c in outer], dtype=float)


def bracket_oracle(b: CoefficientTensor, v: np.ndarray, w: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Mixed second difference of F(x) = B(x,x) along (v, w): exact for quadratics up to rounding, equals 2 B(v, w)."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)

    def F(x):
        return evaluate(b, x, x)

    return (F(h * v + h * w) - F(h * v - h * w) - F(-h * v + h * w) + F(-h * v - h * w)) / (4.0 * h * h)


# --- Ladder ---

def _remove_span(raw: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Subtract the orthogonal projection onto the columns of Q (orthonormal), twice for stability."""
    v = raw - Q @ (Q.T @ raw)
    return v - Q @ (Q.T @ v)


def _remove_leading(raw: np.ndarray, V: np.ndarray, rows: Sequence[int]) -> np.ndarray:
    """
    Subtract the combination of the columns of V that zeros raw on rows. The
    block V[rows] is lower triangular for ladder vectors built this way.
    """
    T = V[rows, :]
    diag = np.abs(np.diag(T))
    if np.all(diag > 0.0):
        kappa = scipy.linalg.solve_triangular(T, raw[rows], lower=True)
    else:
        kappa = np.linalg.lstsq(T, raw[rows], rcond=None)[0]
    return raw - V @ kappa


def ladder(
    b: CoefficientTensor,
    i: int,
    j: int,
    perturbation: Optional[Tuple[float, np.ndarray]] = None,
    correction: str = "orthogonal",
) -> LadderCertificate:
    """
    Ladder for the pair (i, j), 0-based. With perturbation=(eps, M) the brackets
    are taken symbolically against B - eps*M x and halved; otherwise B is
    contracted directly.

    correction="orthogonal" removes the projection onto span(v_1..v_{m+1});
    correction="triangular" subtracts the combination of v_1..v_{m+1} that zeros
    the first m+1 coordinates in the order (i, j, remaining ascending), so G is
    the product of the leading entries up to the sign of that permutation. Both
    give the same span(v_1..v_4) and agree on the witness.
    """
    if correction not in CORRECTIONS:
        raise PreconditionError(f"unknown correction {correction!r}; expected one of {CORRECTIONS}")
    d = b.d
    if i == j:
        raise PreconditionError(f"forcing pair must be distinct, got ({i}, {j})")
    for idx in (i, j):
        if not (0 <= idx < d):
            raise AxisIndexError(f"index {idx} out of range for d={d}")
    if perturbation is not None:
        eps, M = perturbation
        M = np.asarray(M, dtype=float)
        if M.shape != (d, d):
            raise DimensionError(f"perturbation matrix must be {d}x{d}, got {M.shape}")

    order = [i, j] + [k for k in range(d) if k not in (i, j)]
    V = np.zeros((d, d))
    V[i, 0] = 1.0
    V[j, 1] = 1.0
    Q = V[:, :2].copy()
    norms = np.zeros(max(d - 2, 0))
    for m in range(d - 2):
        if perturbation is None:
            raw = evaluate(b, V[:, m], V[:, m + 1])
        else:
            raw = 0.5 * double_bracket(b, V[:, m], V[:, m + 1], M, eps)
        norms[m] = np.linalg.norm(raw)
        if correction == "triangular":
            V[:, m + 2] = _remove_leading(raw, V[:, : m + 2], order[: m + 2])
            continue
        v = _remove_span(raw, Q)
        V[:, m + 2] = v
        v_norm = np.linalg.norm(v)
        if v_norm > 1e-14 * max(norms[m], 1e-300):
            Q = np.hstack([Q, (v / v_norm)[:, None]])

    G = float(np.linalg.det(V))
    denom = float(np.prod(norms)) if norms.size else 1.0
    G_normalized = G / denom if denom > 0.0 else 0.0
    G_bracket = G * bracket_scale(d)
    certificate_logger.debug(f"[LADDER] d={d} pair=({i},{j}) G={G:.6e} G_norm={G_normalized:.6e}")
    return LadderCertificate(
        pair=(i, j),
        vectors=V,
        G=G,
        G_normalized=G_normalized,
        G_bracket=G_bracket,
        bracket_norms=norms,
    )


def bracket_scale(d: int) -> float:
    """prod of s_m with s_1 = s_2 = 1, s_{m+2} = 2 s_m s_{m+1}: det ratio between exact and half brackets."""
    s = [1.0, 1.0]
    while len(s) < d:
        s.append(2.0 * s[-2] * s[-1])
    return float(np.prod(s[:d]))


def ladder_degree(d: int) -> int:
    """Homogeneity degree of G in b: deg v_{m+2} = deg v_m + deg v_{m+1} + 1, deg v_1 = deg v_2 = 0."""
    deg = [0, 0]
    while len(deg) < d:
        deg.append(deg[-2] + deg[-1] + 1)
    return int(sum(deg[:d]))


def witness_tensor(d: int) -> CoefficientTensor:
    """b^{m+2}_{m,m+1} = 1, b^{m+1}_{m,m+2} = -1, b^m_{m+1,m+2} = 0 on consecutive triples; zero elsewhere."""
    if int(d) != d or d < 3:
        raise InvalidDimension(f"dimension must be an integer >= 3, got {d}")
    I, J, K = _triples(d)
    m = len(I)
    c = np.zeros(n_free(d))
    consecutive = (J == I + 1) & (K == I + 2)
    # slot 1 is b^j_{ik} = b^{m+1}_{m,m+2}; the dependent slot b^k_{ij} becomes +1
    c[m:][consecutive] = -1.0
    return from_free_coordinates(d, c)


def generic_hypoellipticity(b: CoefficientTensor, tol: float = 1e-10) -> HypoellipticityReport:
    """Per ordered pair certificate; passes iff min |G_normalized| > tol."""
    if tol < 0:
        raise PreconditionError(f"tol must be >= 0, got {tol}")
    rows = []
    for i, j in permutations(range(b.d), 2):
        cert = ladder(b, i, j)
        rows.append(
            PairCertificateRow(
                i=i,
                j=j,
                G=cert.G,
                G_normalized=cert.G_normalized,
                G_bracket=cert.G_bracket,
                passes=abs(cert.G_normalized) > tol,
            )
        )
    min_margin = min(abs(r.G_normalized) for r in rows)
    report = HypoellipticityReport(tol=tol, pairs=rows, min_margin=min_margin, passes=min_margin > tol)
    certificate_logger.info(f"[HYPOELLIPTIC] d={b.d} pairs={len(rows)} min_margin={min_margin:.3e} pass={report.passes}")
    return report


# --- Numerical bracket span ---

def _is_null(field: sp.Matrix, xs: Sequence[sp.Symbol], tol: float) -> bool:
    for comp in field:
        if comp == 0:
            continue
        poly = sp.Poly(comp, *xs)
        if any(abs(float(c)) > tol for c in poly.coeffs()):
            return False
    return True


def numeric_bracket_span(
    b: CoefficientTensor,
    dampA: np.ndarray,
    eps: float,
    x: np.ndarray,
    depth: int,
    sigma: Optional[np.ndarray] = None,
) -> int:
    """
    Rank at x of the fields collected by the parabolic Hörmander iteration
        V_0 = {sigma_m e_m}, V_{n+1} = V_n + {[U, X0], [U, sigma_k e_k] : U in V_n}
    with X0 = B(x, x) - eps*A x. sigma defaults to forcing on e_1, e_2.
    """
    d = b.d
    if int(depth) != depth or depth < 0:
        raise PreconditionError(f"depth must be a non-negative integer, got {depth}")
    if depth > MAX_BRACKET_DEPTH:
        raise DepthError(f"depth {depth} exceeds the supported maximum {MAX_BRACKET_DEPTH}")
    A = np.asarray(dampA, dtype=float)
    x = np.asarray(x, dtype=float)
    if A.shape != (d, d) or x.shape != (d,):
        raise DimensionError(f"expected A {d}x{d} and x ({d},), got {A.shape} and {x.shape}")
    if sigma is None:
        sigma = np.zeros(d)
        sigma[:2] = 1.0
    sigma = np.asarray(sigma, dtype=float)

    xs = _symbols(d)
    X0 = drift_field(b, xs, A, eps)
    scale = max(1.0, b.max_abs, float(np.max(np.abs(A))) if A.size else 0.0)
    null_tol = 1e-12 * scale ** (depth + 1)

    noise = []
    for m in range(d):
        if sigma[m] != 0.0:
            e = np.zeros(d)
            e[m] = sigma[m]
            noise.append(_constant_field(e))

    collected = list(noise)
    frontier = list(noise)
    for level in range(depth):
        new = []
        for U in frontier:
            for V in [X0] + noise:
                W = lie_bracket(U, V, xs)
                if not _is_null(W, xs, null_tol):
                    new.append(W)
        certificate_logger.debug(f"[BRACKET_SPAN] level={level + 1} new_fields={len(new)}")
        collected.extend(new)
        frontier = new
        if not frontier:
            break

    if not collected:
        return 0
    point = dict(zip(xs, (float(v) for v in x)))
    values = np.array([[float(c.subs(point)) for c in F] for F in collected], dtype=float)
    rank = int(np.linalg.matrix_rank(values))
    certificate_logger.info(f"[BRACKET_SPAN] d={d} depth={depth} fields={len(collected)} rank={rank}")
    return rank
