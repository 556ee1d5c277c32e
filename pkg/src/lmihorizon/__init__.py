"""Robust time-varying state-feedback synthesis via LMI relaxations.

Subpackages: problem data (model), inequality assembly (lmi), the interior
point solver (conic), synthesis and certificate checking (synthesis),
closed-loop simulation (simulate), the receding-horizon controller (mpc),
exact feasibility oracles (oracle) and the command line front end (cli).
"""

from . import conic, lmi, model, oracle, simulate, synthesis

__all__ = ["conic", "lmi", "model", "oracle", "simulate", "synthesis", "mpc", "cli"]

__version__ = "0.1.0"
