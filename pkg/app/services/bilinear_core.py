# app/services/bilinear_core.py

"""
Coefficient tensors of the constraint class: symmetric bilinear maps B with
b^i_{jk} = b^i_{kj}, b^i_{ii} = b^i_{ij} = b^i_{jj} = 0 and
b^i_{jk} + b^j_{ik} + b^k_{ij} = 0.

Indices are 0-based in Python. coeffs[i, j, k] holds b^i_{jk} densely; the class
is parametrized by two free slots per triple i < j < k:
    slot 0 -> b^i_{jk}, slot 1 -> b^j_{ik}, dependent b^k_{ij} = -(slot 0 + slot 1).
"""

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np
import orjson

from app.core.config import get_settings
from app.core.exceptions import DimensionError, InvalidDimension, PreconditionError
from app.core.logging_config import tensor_logger
from app.schemas.tensor import MembershipReport, TensorDocument


class CoefficientTensor:
    """Immutable point of the constraint class. Safe to share between threads."""

    __slots__ = ("_coeffs",)

    def __init__(self, coeffs: np.ndarray):
        arr = np.array(coeffs, dtype=float, copy=True)
        if arr.ndim != 3 or not (arr.shape[0] == arr.shape[1] == arr.shape[2]):
            raise DimensionError(f"coefficient array must be d x d x d, got shape {arr.shape}")
        arr.flags.writeable = False
        self._coeffs = arr

    @property
    def coeffs(self) -> np.ndarray:
        return self._coeffs

    @property
    def d(self) -> int:
        return self._coeffs.shape[0]

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self._coeffs))) if self._coeffs.size else 0.0

    def scaled(self, factor: float) -> "CoefficientTensor":
        return CoefficientTensor(factor * self._coeffs)

    def permuted(self, perm) -> "CoefficientTensor":
        """Relabel coordinates: new index perm[a] carries old index a."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return CoefficientTensor(self._coeffs[np.ix_(inv, inv, inv)])

    def __eq__(self, other) -> bool:
        return isinstance(other, CoefficientTensor) and np.array_equal(self._coeffs, other._coeffs)

    def __hash__(self) -> int:
        return hash(self._coeffs.tobytes())

    def __repr__(self) -> str:
        return f"CoefficientTensor(d={self.d}, max_abs={self.max_abs:.3g})"


@dataclass(frozen=True)
class ClassBasis:
    d: int
    elements: List[CoefficientTensor] = field(repr=False)
    # ((i, j, k), slot) per element
    free_index_map: List[Tuple[Tuple[int, int, int], int]]

    def __len__(self) -> int:
        return len(self.elements)

    def flattened(self) -> np.ndarray:
        return np.stack([e.coeffs.ravel() for e in self.elements])


# --- Free coordinates ---

def n_free(d: int) -> int:
    return 2 * comb(d, 3)


@lru_cache(maxsize=32)
def _triples(d: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = np.array([(i, j, k) for i in range(d) for j in range(i + 1, d) for k in range(j + 1, d)], dtype=int)
    t = t.reshape(-1, 3)
    return t[:, 0], t[:, 1], t[:, 2]


def _check_dim(d: int, minimum: int = 3) -> None:
    if int(d) != d or d < minimum:
        raise InvalidDimension(f"dimension must be an integer >= {minimum}, got {d}")


def from_free_coordinates(d: int, c: np.ndarray) -> CoefficientTensor:
    """Build the tensor whose free slots are c = [slot0 of each triple..., slot1 of each triple...]."""
    _check_dim(d)
    c = np.asarray(c, dtype=float)
    m = comb(d, 3)
    if c.shape != (2 * m,):
        raise DimensionError(f"expected {2 * m} free coordinates for d={d}, got shape {c.shape}")
    I, J, K = _triples(d)
    c0, c1 = c[:m], c[m:]
    dep = -(c0 + c1)
    coeffs = np.zeros((d, d, d))
    coeffs[I, J, K] = c0
    coeffs[I, K, J] = c0
    coeffs[J, I, K] = c1
    coeffs[J, K, I] = c1
    coeffs[K, I, J] = dep
    coeffs[K, J, I] = dep
    return CoefficientTensor(coeffs)


def free_coordinates(b: CoefficientTensor) -> np.ndarray:
    I, J, K = _triples(b.d)
    return np.concatenate([b.coeffs[I, J, K], b.coeffs[J, I, K]])


def free_index_map(d: int) -> List[Tuple[Tuple[int, int, int], int]]:
    I, J, K = _triples(d)
    triples = [(int(i), int(j), int(k)) for i, j, k in zip(I, J, K)]
    return [(t, 0) for t in triples] + [(t, 1) for t in triples]


def class_basis(d: int) -> ClassBasis:
    _check_dim(d)
    size = n_free(d)
    eye = np.eye(size)
    elements = [from_free_coordinates(d, eye[m]) for m in range(size)]
    tensor_logger.debug(f"[BASIS] d={d} size={size}")
    return ClassBasis(d=d, elements=elements, free_index_map=free_index_map(d))


def zero_tensor(d: int) -> CoefficientTensor:
    _check_dim(d)
    return CoefficientTensor(np.zeros((d, d, d)))


def sample(d: int, scale: float, rng: np.random.Generator) -> CoefficientTensor:
    """Uniform on [-scale, scale] in every free coordinate."""
    _check_dim(d)
    if scale < 0 or not np.isfinite(scale):
        raise PreconditionError(f"scale must be finite and >= 0, got {scale}")
    c = rng.uniform(-scale, scale, size=n_free(d))
    return from_free_coordinates(d, c)


# --- Evaluation ---

def _contract(coeffs: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.einsum("ijk,j,k->i", coeffs, x, y)


def evaluate(b: CoefficientTensor, x, y) -> np.ndarray:
    """B(x, y)^i = sum_{j,k} b^i_{jk} x^j y^k, exactly symmetric in (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (b.d,) or y.shape != (b.d,):
        raise DimensionError(f"vectors must have shape ({b.d},), got {x.shape} and {y.shape}")
    return 0.5 * (_contract(b.coeffs, x, y) + _contract(b.coeffs, y, x))


def evaluate_batch(coeffs: Union[CoefficientTensor, np.ndarray], X: np.ndarray, Y: np.ndarray = None) -> np.ndarray:
    """
    Row-wise B(X[n], Y[n]). coeffs is one tensor (d,d,d) or a per-row stack (n,d,d,d).
    With Y omitted this is the quadratic field B(x, x).
    """
    C = coeffs.coeffs if isinstance(coeffs, CoefficientTensor) else np.asarray(coeffs)
    spec = "ijk,nj,nk->ni" if C.ndim == 3 else "nijk,nj,nk->ni"
    if Y is None:
        return np.einsum(spec, C, X, X)
    return 0.5 * (np.einsum(spec, C, X, Y) + np.einsum(spec, C, Y, X))


def quadratic_field(b: CoefficientTensor, x) -> np.ndarray:
    return evaluate(b, x, x)


def energy_residual(b: CoefficientTensor, x) -> float:
    """x . B(x, x); zero for members of the class."""
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, evaluate(b, x, x)))


def divergence(b: CoefficientTensor, x) -> float:
    """sum_i d/dx^i B(x,x)^i = 2 sum_{i,k} b^i_{ik} x^k."""
    x = np.asarray(x, dtype=float)
    if x.shape != (b.d,):
        raise DimensionError(f"vector must have shape ({b.d},), got {x.shape}")
    return float(2.0 * np.einsum("iik,k->", b.coeffs, x))


# --- Projection and membership ---

def project(raw: np.ndarray) -> CoefficientTensor:
    """
    Euclidean-orthogonal projection of a raw d x d x d array onto the class.
    The basis is block diagonal per triple with Gram [[4, 2], [2, 4]].
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 3 or not (raw.shape[0] == raw.shape[1] == raw.shape[2]):
        raise DimensionError(f"raw array must be d x d x d, got shape {raw.shape}")
    d = raw.shape[0]
    _check_dim(d)
    I, J, K = _triples(d)
    shared = raw[K, I, J] + raw[K, J, I]
    r0 = raw[I, J, K] + raw[I, K, J] - shared
    r1 = raw[J, I, K] + raw[J, K, I] - shared
    gram = np.array([[4.0, 2.0], [2.0, 4.0]])
    rhs = np.stack([r0, r1], axis=1)
    c = np.linalg.solve(gram, rhs.T).T
    return from_free_coordinates(d, np.concatenate([c[:, 0], c[:, 1]]))


def verify_membership(raw, tol: float = None) -> MembershipReport:
    """Residuals of the three identity families; tolerance is relative to max |b| (tol=0 means exact)."""
    arr = raw.coeffs if isinstance(raw, CoefficientTensor) else np.asarray(raw, dtype=float)
    if arr.ndim != 3 or not (arr.shape[0] == arr.shape[1] == arr.shape[2]):
        raise DimensionError(f"raw array must be d x d x d, got shape {arr.shape}")
    tol = get_settings().TOL_ALG if tol is None else tol
    d = arr.shape[0]
    scale = float(np.max(np.abs(arr))) if arr.size else 0.0

    symmetry = float(np.max(np.abs(arr - arr.transpose(0, 2, 1)), initial=0.0))
    idx = np.arange(d)
    i_, j_, k_ = np.meshgrid(idx, idx, idx, indexing="ij")
    zero_mask = (i_ == j_) | (i_ == k_) | (j_ == k_)
    zero_pattern = float(np.max(np.abs(arr[zero_mask]), initial=0.0))
    jacobi = float(np.max(np.abs(arr + arr.transpose(1, 0, 2) + arr.transpose(1, 2, 0)), initial=0.0))

    threshold = tol * scale
    passes = max(symmetry, zero_pattern, jacobi) <= threshold
    report = MembershipReport(
        d=d,
        tol=tol,
        scale=scale,
        symmetry_residual=symmetry,
        zero_pattern_residual=zero_pattern,
        jacobi_residual=jacobi,
        passes=passes,
    )
    if not passes:
        tensor_logger.info(
            f"[MEMBERSHIP] d={d} fail sym={symmetry:.3e} zero={zero_pattern:.3e} jacobi={jacobi:.3e} threshold={threshold:.3e}"
        )
    return report


# --- Known models ---

def lorenz96(d: int) -> CoefficientTensor:
    """(B(x,x))_k = (x_{k+1} - x_{k-2}) x_{k-1}, cyclic, no forcing or damping."""
    _check_dim(d, minimum=4)
    coeffs = np.zeros((d, d, d))
    for k in range(d):
        km2, km1, kp1 = (k - 2) % d, (k - 1) % d, (k + 1) % d
        coeffs[k, km1, kp1] = coeffs[k, kp1, km1] = 0.5
        coeffs[k, km2, km1] = coeffs[k, km1, km2] = -0.5
    return CoefficientTensor(coeffs)


def lorenz96_field(x) -> np.ndarray:
    """Direct cyclic evaluation of the Lorenz 96 advection term."""
    x = np.asarray(x, dtype=float)
    return (np.roll(x, -1) - np.roll(x, 2)) * np.roll(x, 1)


# --- Serialization ---

def to_document(b: CoefficientTensor) -> TensorDocument:
    entries = []
    for ((i, j, k), slot), value in zip(free_index_map(b.d), free_coordinates(b)):
        if value == 0.0:
            continue
        lead = (i, j, k) if slot == 0 else (j, i, k)
        entries.append((lead[0] + 1, lead[1] + 1, lead[2] + 1, float(value)))
    return TensorDocument(d=b.d, entries=entries)


def from_document(doc: TensorDocument) -> CoefficientTensor:
    d = doc.d
    m = comb(d, 3)
    position = {t: n for n, (t, _slot) in enumerate(free_index_map(d)[:m])}
    c = np.zeros(2 * m)
    for i, j, k, value in doc.entries:
        a, p, q = i - 1, j - 1, k - 1
        if not all(0 <= v < d for v in (a, p, q)):
            raise PreconditionError(f"entry ({i},{j},{k}) out of range for d={d}")
        triple = tuple(sorted((a, p, q)))
        if a == triple[0]:
            slot = 0
        elif a == triple[1]:
            slot = 1
        else:
            raise PreconditionError(
                f"entry ({i},{j},{k}) names the dependent slot of triple {tuple(t + 1 for t in triple)}"
            )
        c[position[triple] + slot * m] = value
    return from_free_coordinates(d, c)


def save_tensor(path: Union[str, Path], b: CoefficientTensor) -> Path:
    path = Path(path)
    path.write_bytes(orjson.dumps(to_document(b).model_dump(), option=orjson.OPT_INDENT_2))
    tensor_logger.info(f"[TENSOR_IO] saved d={b.d} to {path}")
    return path


def load_tensor(path: Union[str, Path]) -> CoefficientTensor:
    doc = TensorDocument.model_validate(orjson.loads(Path(path).read_bytes()))
    tensor_logger.info(f"[TENSOR_IO] loaded d={doc.d} entries={len(doc.entries)} from {path}")
    return from_document(doc)
