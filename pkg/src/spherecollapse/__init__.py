"""Contracting-sphere blow-up for the 3d cubic focusing NLS.

Builds the approximate solution psi^(N) by a stage-wise profile expansion,
evolves the exact radial equation from psi^(N)(eps), and measures the
remainder h = psi - psi^(N) in time-scaled norms.
"""

__version__ = "0.1.0"

from .construction import ApproxSolution, Cutoff, ExpansionResult, construct, tune_q2  # noqa: E402
from .evolver import RadialGrid, WaveState, evolve, make_radial_grid  # noqa: E402
from .profiles import RhoGrid, make_rho_grid  # noqa: E402

__all__ = [
    "ApproxSolution",
    "Cutoff",
    "ExpansionResult",
    "RadialGrid",
    "RhoGrid",
    "WaveState",
    "construct",
    "evolve",
    "make_radial_grid",
    "make_rho_grid",
    "tune_q2",
]
