from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.core.config import get_settings
from app.core.exceptions import ConfigError
from app.utils.validation import (
    require_at_least,
    require_kernel,
    require_length,
    require_open_interval,
    require_forced_modes,
    require_positive,
)

ExperimentKind = Literal[
    "verify-class",
    "spectral-report",
    "hormander",
    "passthrough",
    "detd",
    "simulate",
    "exit-times",
    "coercivity",
    "flux",
    "switch-chain",
    "energy-balance",
]

TensorSource = Literal["sample", "file", "lorenz96", "witness"]

KERNEL_KINDS = {"passthrough", "flux", "switch-chain"}
DAMPED_KINDS = {"simulate", "exit-times", "coercivity", "energy-balance"} | KERNEL_KINDS
# kinds whose operations assume at least two forced modes
FORCED_KINDS = {"exit-times", "flux", "switch-chain"}


class ExperimentConfig(BaseModel):
    """
    Flat experiment description. Every field is checked against the target
    operation before anything runs.
    """
    model_config = ConfigDict(extra="forbid")

    kind: ExperimentKind
    d: int

    # --- tensor source ---
    tensor: TensorSource = "sample"
    tensor_file: Optional[str] = None
    sample_scale: float = 1.0
    sample_seed: Optional[int] = None

    # --- damping / forcing ---
    J: Optional[int] = None
    sigma: Optional[List[float]] = None  # default: 1.0 on the first two modes
    gamma: float = 1.0

    # --- numerics ---
    alpha: float = 1.0
    tol: float = 1e-10
    membership_tol: float = 1e-12
    dt: Optional[float] = None
    T: float = 1.0
    eps: Optional[float] = None  # simulate: run the rescaled dynamics when set
    eps_grid: List[float] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4, 1e-5])
    delta: float = 0.2
    n_paths: int = 500
    n_samples: int = 1000
    j_max: int = 8
    burn_in: float = 0.0
    chain_burn_in: int = 20
    n_steps: int = 200
    x0: Optional[List[float]] = None  # default e_1
    x0_norms: List[float] = Field(default_factory=list)
    radius: Optional[float] = None
    horizon_factor: float = 20.0
    C0: float = 3.0
    p_list: List[float] = Field(default_factory=lambda: [0.0, 1.0, 2.0, 4.0])
    scheme: Literal["tamed-em", "split-rk4"] = "tamed-em"
    detd_points: int = 100

    # --- run ---
    master_seed: int = Field(default_factory=lambda: get_settings().DEFAULT_MASTER_SEED)
    threads: Optional[int] = None
    out_dir: Optional[str] = None

    @model_validator(mode="after")
    def check_preconditions(self):
        d = self.d
        require_at_least("d", d, 4 if self.tensor == "lorenz96" else 3)
        if self.tensor == "file" and not self.tensor_file:
            raise ConfigError("tensor_file", "is required when tensor = 'file'")
        if self.sample_scale < 0:
            raise ConfigError("sample_scale", f"must be >= 0, got {self.sample_scale}")
        require_positive("alpha", self.alpha)
        require_positive("dt", self.dt)
        require_positive("T", self.T)
        require_positive("C0", self.C0)
        require_positive("horizon_factor", self.horizon_factor)
        require_length("sigma", self.sigma, d)
        require_length("x0", self.x0, d)
        if self.tol < 0:
            raise ConfigError("tol", f"must be >= 0, got {self.tol}")
        if self.gamma < 0:
            raise ConfigError("gamma", f"must be >= 0, got {self.gamma}")
        if self.threads is not None:
            require_at_least("threads", self.threads, 1)
        require_at_least("j_max", self.j_max, 1)

        kind = self.kind
        if kind in KERNEL_KINDS:
            require_kernel("J", self.J, d, minimum=1)
        elif kind in DAMPED_KINDS and self.J is not None:
            require_kernel("J", self.J, d)
        if kind in FORCED_KINDS:
            require_forced_modes("sigma", self.sigma)
        if kind == "passthrough":
            require_open_interval("delta", self.delta, 0.0, 0.5)
            require_at_least("n_samples", self.n_samples, 1)
        if kind == "exit-times":
            require_open_interval("delta", self.delta, 0.0, 0.5)
            require_at_least("eps_grid", len(self.eps_grid), 2, "length")
            for eps in self.eps_grid:
                require_open_interval("eps_grid", eps, 0.0, 1.0)
        if kind == "coercivity":
            require_at_least("eps_grid", len(self.eps_grid), 1, "length")
            for eps in self.eps_grid:
                require_open_interval("eps_grid", eps, 0.0, 1.0)
        if kind == "simulate" and self.eps is not None and not (0.0 <= self.eps < 1.0):
            raise ConfigError("eps", f"must lie in [0, 1), got {self.eps}")
        if kind == "detd":
            require_at_least("detd_points", self.detd_points, 1)
        if kind == "energy-balance":
            require_at_least("n_paths", self.n_paths, 100)
        if kind == "flux" and not (0.0 <= self.burn_in < self.T):
            raise ConfigError("burn_in", f"must lie in [0, T={self.T}), got {self.burn_in}")
        if kind == "switch-chain":
            require_at_least("n_steps", self.n_steps, 1)
            if not (0 <= self.chain_burn_in < self.n_steps):
                raise ConfigError("chain_burn_in", f"must lie in [0, n_steps={self.n_steps}), got {self.chain_burn_in}")
            if self.x0_norms:
                require_at_least("n_paths", self.n_paths, 1000, "Lyapunov drift")
                for r in self.x0_norms:
                    if r < 2.718281828459045:
                        raise ConfigError("x0_norms", f"every shell must have |x0| >= e, got {r}")
            if self.radius is not None and self.radius < 0:
                raise ConfigError("radius", f"must be >= 0, got {self.radius}")
        if kind in {"simulate", "exit-times", "coercivity", "flux", "energy-balance", "switch-chain"}:
            require_at_least("n_paths", self.n_paths, 1)
        return self
