"""Sparse Lagrangian duality for l0-constrained, l2-regularized ERM."""
from .losses import LossModel, make_loss
from .objective import ProblemInstance
from .solvers import (
    SolverConfig,
    brute_force_oracle,
    diht,
    htp_baseline,
    iht_baseline,
    sdiht,
)

__version__ = "0.1.0"

__all__ = [
    "LossModel", "make_loss", "ProblemInstance", "SolverConfig",
    "diht", "sdiht", "iht_baseline", "htp_baseline", "brute_force_oracle",
]
