"""
Shared fixtures. Logs go to a throwaway directory so test runs never touch ./logs.
"""

import os
import tempfile

os.environ.setdefault("BILINEAR_LOG_DIR", tempfile.mkdtemp(prefix="bilinear-logs-"))
os.environ.setdefault("BILINEAR_THREADS", "2")

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from app.core.exceptions import NumericalFailure  # noqa: E402
from app.services.bilinear_core import sample  # noqa: E402
from app.services.deterministic_flow import KernelSpec  # noqa: E402
from app.services.sde_engine import DampingSpec  # noqa: E402
from app.services.switching_chain import certify_center  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def generic_tensor():
    """Factory for a uniform class sample at a fixed seed."""
    def make(d: int, seed: int = 7, scale: float = 1.0):
        return sample(d, scale, np.random.default_rng(seed))
    return make


@pytest.fixture
def kernel_damping():
    def make(d: int, J: int, forced=(0, 1), gamma: float = 1.0, level: float = 1.0):
        sigma = np.zeros(d)
        sigma[list(forced)] = level
        return DampingSpec.kernel_damping(d, J, sigma, gamma)
    return make


@pytest.fixture
def certified_ball():
    """First sampled center (by seed) that passes all three certificates."""
    def make(d: int, J: int, radius=None, n_scan: int = 100):
        last = None
        for seed in range(50):
            b = sample(d, 1.0, np.random.default_rng(1000 + seed))
            try:
                return certify_center(b, KernelSpec(d, J), n_scan=n_scan, seed=seed, radius=radius)
            except NumericalFailure as exc:
                last = exc
        raise AssertionError(f"no certified center found: {last}")
    return make
