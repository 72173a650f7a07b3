"""Functionals and comparison norms on radial fields.

Fields live on a RadialGrid (nodes r_i = i dr, zero beyond both ends).  All
integrals are 3D radial quadratures 4 pi sum(... r^2) dr.  The functionals
W, E and P_q are evaluated in the reduced variable w = r psi with the same
difference operators used by the evolver, and their gradients are the exact
gradients of these discrete functionals, so G(h) is quadratic in h to
round-off.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .construction import Cutoff, ParameterFunctions
from .errors import GridMismatch
from .evolver import RadialGrid
from .profiles import RhoGrid, ground_state, ground_state_drho


def _check(psi: np.ndarray, grid: RadialGrid) -> np.ndarray:
    psi = np.asarray(psi)
    if psi.shape != (grid.m,):
        raise GridMismatch(f"field of shape {psi.shape} on a radial grid of {grid.m} nodes")
    return psi


def _vol(f2: np.ndarray, grid: RadialGrid) -> float:
    return float(4.0 * math.pi * grid.dr * np.sum(f2 * grid.r**2))


# ---------------------------------------------------------------------------
# radial derivatives (through w = r psi)


def d_dr(psi: np.ndarray, grid: RadialGrid) -> np.ndarray:
    r = grid.r
    return (grid.d_dr_w(r * psi) - psi) / r


def d2_dr2(psi: np.ndarray, grid: RadialGrid) -> np.ndarray:
    r = grid.r
    return (grid.laplacian_w(r * psi) - 2.0 * d_dr(psi, grid)) / r


# ---------------------------------------------------------------------------
# conserved and localized functionals


def mass(psi: np.ndarray, grid: RadialGrid) -> float:
    psi = _check(psi, grid)
    return _vol(np.abs(psi) ** 2, grid)


def energy(psi: np.ndarray, grid: RadialGrid) -> float:
    psi = _check(psi, grid)
    w = grid.r * psi
    kin = np.real(np.vdot(w, -grid.laplacian_w(w)))
    pot = np.sum(np.abs(w) ** 4 / grid.r**2)
    return float(4.0 * math.pi * grid.dr * (kin - pot))


def l4_norm4(psi: np.ndarray, grid: RadialGrid) -> float:
    return _vol(np.abs(_check(psi, grid)) ** 4, grid)


def _theta1_sq(grid: RadialGrid, q: float, cutoff1: Cutoff) -> np.ndarray:
    if not q > 0:
        raise ValueError(f"localized momentum needs q > 0, got {q}")
    return cutoff1((grid.r - q) / q) ** 2


def momentum_localized(psi: np.ndarray, grid: RadialGrid, q: float, cutoff1: Cutoff) -> float:
    """Im int theta1((r-q)/q)^2 conj(psi) psi_r dx, in the reduced variable."""
    psi = _check(psi, grid)
    th = _theta1_sq(grid, q, cutoff1)
    w = grid.r * psi
    return float(4.0 * math.pi * grid.dr * np.imag(np.sum(th * np.conj(w) * grid.d_dr_w(w))))


def gradient_norm(psi: np.ndarray, grid: RadialGrid) -> float:
    return math.sqrt(_vol(np.abs(d_dr(_check(psi, grid), grid)) ** 2, grid))


def variance(psi: np.ndarray, grid: RadialGrid) -> float:
    """||x psi||_{L2(R^3)}."""
    return math.sqrt(_vol(np.abs(_check(psi, grid)) ** 2 * grid.r**2, grid))


def l2_norm(psi: np.ndarray, grid: RadialGrid) -> float:
    return math.sqrt(mass(psi, grid))


def hessian_norm(psi: np.ndarray, grid: RadialGrid) -> float:
    """sqrt(||psi_rr||^2 + 2 ||psi_r / r||^2): the Hessian norm of a radial field."""
    pr = d_dr(psi, grid)
    prr = d2_dr2(psi, grid)
    return math.sqrt(_vol(np.abs(prr) ** 2 + 2.0 * np.abs(pr / grid.r) ** 2, grid))


def x_norm(h: np.ndarray, k: int, t: float, grid: RadialGrid) -> float:
    """sum_{j<=k} t^{2j/3} ||nabla^j h||."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    h = _check(h, grid)
    total = l2_norm(h, grid)
    if k >= 1:
        total += t ** (2.0 / 3.0) * gradient_norm(h, grid)
    if k >= 2:
        total += t ** (4.0 / 3.0) * hessian_norm(h, grid)
    return total


# ---------------------------------------------------------------------------
# W, its gradient and G


@dataclass(frozen=True)
class FrameParams:
    """Modulation parameters at one time."""

    t: float
    lam: float
    q: float
    v: float
    theta: float

    @classmethod
    def from_functions(cls, p: ParameterFunctions, t: float) -> "FrameParams":
        return cls(t=t, lam=p.lam(t), q=p.q(t), v=p.v(t), theta=p.theta(t))


def W_functional(psi: np.ndarray, grid: RadialGrid, fp: FrameParams, cutoff1: Cutoff) -> float:
    lam2 = fp.lam**2
    return (
        (1.0 + fp.v**2 / (4.0 * lam2)) * mass(psi, grid)
        - fp.v / lam2 * momentum_localized(psi, grid, fp.q, cutoff1)
        + energy(psi, grid) / lam2
    )


def W_gradient(psi: np.ndarray, grid: RadialGrid, fp: FrameParams, cutoff1: Cutoff) -> np.ndarray:
    """W'(psi) for the real pairing <a, b> = Re int a conj(b) dx.

    Exact gradient of the discrete W; its continuum limit is
    2(1 + v^2/4lam^2) psi - i v/lam^2 (2 theta1^2 psi_r + alpha psi)
    + lam^-2 (-2 Laplacian psi - 4 |psi|^2 psi)."""
    psi = _check(psi, grid)
    r = grid.r
    w = r * psi
    th = _theta1_sq(grid, fp.q, cutoff1)
    gM = 2.0 * w
    gE = 2.0 * (-grid.laplacian_w(w)) - 4.0 * np.abs(w) ** 2 * w / r**2
    # the odd reflection at r = 0 makes D1 not exactly antisymmetric, so use D1^T
    gP = -1j * (th * grid.d_dr_w(w) - grid.d1.T @ (th * w))
    lam2 = fp.lam**2
    gw = (1.0 + fp.v**2 / (4.0 * lam2)) * gM - fp.v / lam2 * gP + gE / lam2
    return gw / r


def pairing(a: np.ndarray, b: np.ndarray, grid: RadialGrid) -> float:
    """Re int a conj(b) dx."""
    return float(4.0 * math.pi * grid.dr * np.real(np.sum(a * np.conj(b) * grid.r**2)))


def G_lyapunov(psi: np.ndarray, psi_n: np.ndarray, grid: RadialGrid, fp: FrameParams, cutoff1: Cutoff) -> float:
    h = _check(psi, grid) - _check(psi_n, grid)
    return (
        W_functional(psi, grid, fp, cutoff1)
        - W_functional(psi_n, grid, fp, cutoff1)
        - pairing(W_gradient(psi_n, grid, fp, cutoff1), h, grid)
    )


# ---------------------------------------------------------------------------
# pull-back to the profile frame and modulation projections


def pull_back(h: np.ndarray, grid: RadialGrid, fp: FrameParams, rho: np.ndarray, active=None) -> np.ndarray:
    """f(rho) = lam^-1 e^{-i theta - i v r/2} h(r), r = q + rho/lam, by cubic
    interpolation.  ``active`` marks nodes that must lie inside the grid."""
    h = _check(h, grid)
    r = fp.q + rho / fp.lam
    r_nodes = grid.r
    lo, hi = r_nodes[0], r_nodes[-1]
    need = np.ones_like(rho, dtype=bool) if active is None else active
    if np.any(need & ((r < lo) | (r > hi))):
        raise ValueError("pull-back leaves the radial grid; enlarge R or refine near the origin")
    spl = CubicSpline(r_nodes, h)
    inside = (r >= lo) & (r <= hi)
    vals = np.where(inside, spl(np.clip(r, lo, hi)), 0.0)
    return np.exp(-1j * (fp.theta + fp.v * r / 2.0)) * vals / fp.lam


@dataclass
class ModulationReport:
    t: float
    kappa: tuple[float, float, float, float]
    f1_norm: float


def xi_fields(rho_grid: RhoGrid) -> list[np.ndarray]:
    phi, dphi = ground_state(rho_grid), ground_state_drho(rho_grid)
    rho = rho_grid.nodes
    return [1j * phi, -dphi + 0j, phi + rho * dphi + 0j, 1j * rho * phi]


def kappa_from_f1(f1: np.ndarray, rho_grid: RhoGrid) -> tuple[float, ...]:
    """kappa_j = <f1, i xi_j> under Re int a conj(b) drho."""
    w = rho_grid.weights
    return tuple(float(np.real(np.sum(w * f1 * np.conj(1j * xi)))) for xi in xi_fields(rho_grid))


def kappa_projections(
    h: np.ndarray, grid: RadialGrid, fp: FrameParams, rho_grid: RhoGrid, cutoff1: Cutoff
) -> ModulationReport:
    rho = rho_grid.nodes
    zeta = rho / (fp.lam * fp.q)
    th1 = cutoff1(zeta)
    f = pull_back(h, grid, fp, rho, active=th1 > 0)
    f1 = th1 * math.sqrt(fp.lam) * (rho / fp.lam + fp.q) * f
    kap = kappa_from_f1(f1, rho_grid)
    return ModulationReport(t=fp.t, kappa=kap, f1_norm=float(np.sqrt(np.sum(rho_grid.weights * np.abs(f1) ** 2))))


def mass_pullback(psi: np.ndarray, grid: RadialGrid, fp: FrameParams, rho_grid: RhoGrid) -> float:
    """Mass through the profile frame: 4 pi int lam^2 |f|^2 r^2 drho / lam."""
    rho = rho_grid.nodes
    r = fp.q + rho / fp.lam
    f = pull_back(psi, grid, fp, rho, active=np.zeros_like(rho, dtype=bool))
    return float(4.0 * math.pi * fp.lam * np.sum(rho_grid.weights * np.abs(f) ** 2 * r**2 * (r > 0)))


# ---------------------------------------------------------------------------
# rate fits


@dataclass
class RateFit:
    exponent: float
    amplitude: float
    residual: float
    n: int


def fit_power_law(times: Sequence[float], values: Sequence[float], min_samples: int = 8) -> RateFit:
    """Least squares log(value) = log(amplitude) + exponent log(t)."""
    t = np.asarray(times, float)
    y = np.asarray(values, float)
    if t.shape != y.shape:
        raise ValueError("times and values differ in length")
    if np.any(y <= 0) or np.any(t <= 0):
        raise ValueError("power-law fit needs positive times and values")
    if t.size < min_samples:
        raise ValueError(f"need at least {min_samples} samples, got {t.size}")
    if t.max() / t.min() < 10.0 * (1 - 1e-12):
        raise ValueError("samples must span at least one decade")
    lt, ly = np.log(t), np.log(y)
    A = np.vstack([lt, np.ones_like(lt)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    res = ly - A @ coef
    return RateFit(float(coef[0]), float(math.exp(coef[1])), float(np.sqrt(np.mean(res**2))), int(t.size))


# ---------------------------------------------------------------------------
# pseudoconformal functional


def pseudoconformal(psi: np.ndarray, grid: RadialGrid, t: float) -> tuple[float, float]:
    """(1/2 ||(x + 2 i t nabla) psi||^2 - 2 t^2 ||psi||_4^4,  ||psi||_4^4)."""
    psi = _check(psi, grid)
    a = grid.r * psi + 2j * t * d_dr(psi, grid)
    p4 = l4_norm4(psi, grid)
    return 0.5 * _vol(np.abs(a) ** 2, grid) - 2.0 * t**2 * p4, p4


def pseudoconformal_defect(times: Sequence[float], states: Sequence[np.ndarray], grid: RadialGrid) -> np.ndarray:
    """Relative mismatch of d/dt Sigma and 2 t ||psi||_4^4 at interior samples
    (centred differences in t)."""
    t = np.asarray(times, float)
    vals = [pseudoconformal(p, grid, ti) for p, ti in zip(states, t)]
    sig = np.array([v[0] for v in vals])
    p4 = np.array([v[1] for v in vals])
    d = np.gradient(sig, t, edge_order=2)
    rhs = 2.0 * t * p4
    return np.abs(d[1:-1] - rhs[1:-1]) / np.abs(rhs[1:-1])


# ---------------------------------------------------------------------------
# comparison


@dataclass
class NormReport:
    t: float
    mass: float
    energy: float
    momentum: float
    grad_norm: float
    x_norm: float
    X1_h: float
    X2_h: float
    h_L2: float
    h_H1: float
    xh_L2: float

    def as_dict(self) -> dict:
        return asdict(self)


def compare(psi: np.ndarray, psi_n: np.ndarray, t: float, grid: RadialGrid, q: float, cutoff1: Cutoff) -> NormReport:
    psi = _check(psi, grid)
    h = psi - _check(psi_n, grid)
    hl2 = l2_norm(h, grid)
    hg = gradient_norm(h, grid)
    return NormReport(
        t=float(t),
        mass=mass(psi, grid),
        energy=energy(psi, grid),
        momentum=momentum_localized(psi, grid, q, cutoff1),
        grad_norm=gradient_norm(psi, grid),
        x_norm=variance(psi, grid),
        X1_h=x_norm(h, 1, t, grid),
        X2_h=x_norm(h, 2, t, grid),
        h_L2=hl2,
        h_H1=math.sqrt(hl2**2 + hg**2),
        xh_L2=variance(h, grid),
    )
