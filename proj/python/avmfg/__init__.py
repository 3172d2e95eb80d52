"""Mean field game velocity control for autonomous vehicles on a ring road."""

from ._avmfg import (
    ConfigError,
    ConstraintError,
    CostModel,
    DimensionError,
    DomainError,
    Error,
    LinearSolverError,
    NonConvergenceError,
    __version__,
    default_config,
    dg_validate,
    fundamental_diagram,
    lf_step,
    solve,
    theorem1_residual,
)

__all__ = [
    "ConfigError",
    "ConstraintError",
    "CostModel",
    "DimensionError",
    "DomainError",
    "Error",
    "LinearSolverError",
    "NonConvergenceError",
    "__version__",
    "default_config",
    "dg_validate",
    "fundamental_diagram",
    "lf_step",
    "solve",
    "theorem1_residual",
]
