"""Radial cubic focusing NLS  i psi_t + Laplacian psi + 2|psi|^2 psi = 0  in R^3.

With w = r psi the equation becomes the half-line problem
i w_t + w_rr + 2 |w/r|^2 w = 0, w(0) = 0.  We integrate it by Strang
splitting: the nonlinear flow is an exact pointwise phase rotation and the
linear flow is advanced by Crank-Nicolson with the 3-point Laplacian and
Dirichlet ends.  Both pieces are unitary, so the discrete mass
4 pi dr sum |w|^2 is conserved to round-off.  Negative time steps run the
same scheme backwards.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import lapack

from .errors import BoundaryViolation, GridMismatch, NumericalFailure, UnderResolved
from .profiles import _D1_WEIGHTS, _D2_WEIGHTS


@dataclass(frozen=True)
class RadialGrid:
    """Nodes r_i = i dr, i = 1..m, R = (m+1) dr.

    w = r psi is odd in r, so ghost values left of r = 0 are reflected with a
    sign change; beyond R they are zero.  ``order`` selects the central
    stencil (2 gives the classic 3-point Laplacian)."""

    R: float
    m: int
    order: int = 2

    def __post_init__(self):
        if not self.R > 0 or self.m < 3:
            raise ValueError(f"need R > 0 and m >= 3, got R={self.R}, m={self.m}")
        if self.order not in (2, 4, 6):
            raise ValueError(f"radial stencil order must be 2, 4 or 6, got {self.order}")

    @property
    def dr(self) -> float:
        return self.R / (self.m + 1)

    @cached_property
    def r(self) -> np.ndarray:
        return self.dr * np.arange(1, self.m + 1)

    def _stencil(self, weights: list[float], odd_offsets: bool) -> sp.csr_matrix:
        m = self.m
        p = len(weights) - 1
        diags = {0: weights[0]}
        for k in range(1, p + 1):
            diags[k] = weights[k]
            diags[-k] = -weights[k] if odd_offsets else weights[k]
        mat = sp.diags([np.full(m - abs(k), diags[k]) for k in sorted(diags)], sorted(diags), format="lil")
        # node i (0-based) sits at r = (i+1) dr; ghost at r = -(j+1) dr mirrors node j with a sign flip
        for i in range(min(p, m)):
            for k in range(i + 2, p + 1):
                j = k - i - 2
                if j < m:
                    mat[i, j] -= diags[-k]
        return mat.tocsr()

    @cached_property
    def d2(self) -> sp.csr_matrix:
        return self._stencil([c / self.dr**2 for c in _D2_WEIGHTS[self.order]], False)

    @cached_property
    def d1(self) -> sp.csr_matrix:
        return self._stencil([c / self.dr for c in _D1_WEIGHTS[self.order]], True)

    def laplacian_w(self, w: np.ndarray) -> np.ndarray:
        return self.d2 @ w

    def d_dr_w(self, w: np.ndarray) -> np.ndarray:
        return self.d1 @ w


def make_radial_grid(R: float, m: int, order: int = 2) -> RadialGrid:
    return RadialGrid(float(R), int(m), int(order))


def grid_for_width(R: float, width: float, points: int = 32, order: int = 2) -> RadialGrid:
    """Grid with at least ``points`` cells across ``width`` and outer radius >= R."""
    dr = width / points
    m = int(math.ceil(R / dr)) - 1
    return RadialGrid(dr * (m + 1), m, order)


@dataclass(frozen=True)
class WaveState:
    t: float
    w: np.ndarray
    grid: RadialGrid = field(repr=False)

    def __post_init__(self):
        if self.w.shape != (self.grid.m,):
            raise GridMismatch(f"field of shape {self.w.shape} on a grid of {self.grid.m} nodes")

    @property
    def psi(self) -> np.ndarray:
        return self.w / self.grid.r


def reduce(psi: np.ndarray, grid: RadialGrid, t: float = 0.0) -> WaveState:
    psi = np.asarray(psi, dtype=complex)
    return WaveState(float(t), grid.r * psi, grid)


def unreduce(state: WaveState) -> np.ndarray:
    return state.w / state.grid.r


def unreduce_field(w: np.ndarray, r: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """psi = w / r on nodes that may include r = 0, where the limit is taken
    by quadratic extrapolation of w / r from the next three nodes."""
    w = np.asarray(w, dtype=complex)
    r = np.asarray(r, dtype=float)
    out = np.empty_like(w)
    pos = r > 0
    out[pos] = w[pos] / r[pos]
    if not np.all(pos):
        if np.any(np.abs(w[~pos]) > tol * max(1.0, np.max(np.abs(w)))):
            raise BoundaryViolation("reduced field must vanish at r = 0")
        i = np.flatnonzero(pos)[:3]
        if i.size < 3:
            raise ValueError("need three positive radii to extrapolate to r = 0")
        out[~pos] = 3.0 * out[i[0]] - 3.0 * out[i[1]] + out[i[2]]
    return out


# ---------------------------------------------------------------------------
# conserved quantities of the discrete system


def discrete_mass(state: WaveState) -> float:
    return float(4.0 * math.pi * state.grid.dr * np.sum(np.abs(state.w) ** 2))


def discrete_energy(state: WaveState) -> float:
    g = state.grid
    w = state.w
    kin = np.real(np.vdot(w, -g.laplacian_w(w)))
    pot = np.sum(np.abs(w) ** 4 / g.r**2)
    return float(4.0 * math.pi * g.dr * (kin - pot))


# ---------------------------------------------------------------------------
# time stepping


class _CrankNicolson:
    """w -> (I - i dt/2 D2)^-1 (I + i dt/2 D2) w with a cached banded LU."""

    def __init__(self, grid: RadialGrid, dt: float):
        m = grid.m
        a = 0.5j * dt
        self.banded = grid.order != 2
        if not self.banded:
            c = a / grid.dr**2
            d = np.full(m, 1.0 + 2.0 * c, dtype=complex)
            off = np.full(m - 1, -c, dtype=complex)
            self.lu = lapack.zgttrf(off.copy(), d, off.copy())
            info = self.lu[-1]
        else:
            p = grid.order // 2
            A = (sp.identity(m, format="csr") - a * grid.d2).todia()
            ab = np.zeros((3 * p + 1, m), dtype=complex)
            for off, row in zip(A.offsets, A.data):
                # dia storage keeps data[k, j] = A[j - off, j]; LAPACK wants ab[2p + i - j, j]
                ab[2 * p - off, :] += row
            self.p = p
            self.lu = lapack.zgbtrf(ab, p, p)
            info = self.lu[-1]
        if info != 0:
            raise NumericalFailure("Crank-Nicolson factorisation failed")

    def __call__(self, w: np.ndarray) -> np.ndarray:
        # (I - A)^-1 (I + A) = 2 (I - A)^-1 - I
        if self.banded:
            lub, piv, _ = self.lu
            x, _ = lapack.zgbtrs(lub, self.p, self.p, w, piv)
        else:
            dl, d, du, du2, ipiv, _ = self.lu
            x, _ = lapack.zgttrs(dl, d, du, du2, ipiv, w)
        x *= 2.0
        x -= w
        return x


def _phase(w: np.ndarray, inv_r2: np.ndarray, tau: float) -> np.ndarray:
    ang = (w.real**2 + w.imag**2) * inv_r2
    ang *= 2.0 * tau
    return w * np.exp(1j * ang)


def step(state: WaveState, dt: float, nonlinear: bool = True) -> WaveState:
    """One Strang step N(dt/2) L(dt) N(dt/2)."""
    g = state.grid
    r2 = 1.0 / g.r**2
    w = state.w
    if nonlinear:
        w = _phase(w, r2, 0.5 * dt)
    w = _CrankNicolson(g, dt)(w)
    if nonlinear:
        w = _phase(w, r2, 0.5 * dt)
    if not np.all(np.isfinite(w)):
        raise NumericalFailure(f"non-finite field after step at t={state.t + dt:.6e}")
    return WaveState(state.t + dt, w, g)


@dataclass
class EvolveControls:
    c: float = 0.1  # dt <= c * min(dr^2, 1/||psi||_inf^2)
    nonlinear: bool = True
    min_points: int = 16
    check_width: bool = True
    checkpoint: Callable[[WaveState], None] | None = None


def width_estimate(state: WaveState) -> float:
    """Layer width from mass / peak density (2/lambda for a sech^2 layer, halved)."""
    a2 = np.abs(state.psi) ** 2
    peak = np.max(a2)
    if peak == 0.0:
        return math.inf
    r = state.grid.r
    # 1D layer mass across the sphere, normalised by the peak density
    i = int(np.argmax(a2))
    return float(np.sum(a2 * (r / r[i]) ** 2) * state.grid.dr / peak / 2.0)


def _segment(state: WaveState, t_next: float, ctl: EvolveControls) -> WaveState:
    g = state.grid
    span = t_next - state.t
    if span == 0.0:
        return state
    pmax = float(np.max(np.abs(state.psi)) ** 2) if ctl.nonlinear else 0.0
    cap = ctl.c * min(g.dr**2, 1.0 / pmax if pmax > 0 else math.inf)
    n = max(1, int(math.ceil(abs(span) / cap)))
    dt = span / n
    cn = _CrankNicolson(g, dt)
    r2 = 1.0 / g.r**2
    w = state.w
    if ctl.nonlinear:
        w = _phase(w, r2, 0.5 * dt)
        for _ in range(n - 1):
            w = _phase(cn(w), r2, dt)
        w = _phase(cn(w), r2, 0.5 * dt)
    else:
        for _ in range(n):
            w = cn(w)
    if not np.all(np.isfinite(w)):
        raise NumericalFailure(f"non-finite field between t={state.t:.6e} and t={t_next:.6e}")
    return WaveState(float(t_next), w, g)


def evolve(
    state: WaveState,
    sample_times: Sequence[float],
    controls: EvolveControls | None = None,
    max_segment: float | None = None,
) -> list[WaveState]:
    """Advance through the (monotone) sample times and return the states there.

    The step is re-capped on sub-segments of length ``max_segment`` (default:
    a tenth of the sample spacing) so the amplitude bound stays current."""
    ctl = controls or EvolveControls()
    times = [float(x) for x in sample_times]
    if not times:
        return []
    direction = np.sign(times[-1] - state.t)
    if any(np.sign(b - a) not in (0, direction) for a, b in zip([state.t] + times[:-1], times)):
        raise ValueError("sample times must be monotone in the direction of evolution")
    out = []
    cur = state
    for tn in times:
        span = tn - cur.t
        if max_segment is None:
            nsub = 10 if span != 0 else 1
        else:
            nsub = max(1, int(math.ceil(abs(span) / max_segment)))
        for j in range(1, nsub + 1):
            cur = _segment(cur, cur.t + (tn - cur.t) / (nsub - j + 1), ctl)
            if ctl.check_width and ctl.nonlinear and width_estimate(cur) < ctl.min_points * cur.grid.dr:
                raise UnderResolved(
                    f"layer width fell below {ctl.min_points} cells at t={cur.t:.6e}", reached_time=cur.t
                )
        cur = WaveState(tn, cur.w, cur.grid)
        out.append(cur)
        if ctl.checkpoint is not None:
            ctl.checkpoint(cur)
    return out


# ---------------------------------------------------------------------------
# closed-form oracle and checkpoints


def free_gaussian(r: np.ndarray, t: float) -> np.ndarray:
    """Free Schroedinger evolution in R^3 of exp(-r^2)."""
    z = 1.0 + 4.0j * t
    return z ** (-1.5) * np.exp(-np.asarray(r) ** 2 / z)


def write_checkpoint(state: WaveState, path) -> None:
    """CSV dump: header comment with t, R, m, order; columns t, r, psi, w = r psi.

    The w columns make the reload bit-exact; psi is there for readers."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# t={float(state.t):.17g} R={float(state.grid.R):.17g} m={state.grid.m} order={state.grid.order}\n")
        wr = csv.writer(fh)
        wr.writerow(["t", "r", "re_psi", "im_psi", "re_w", "im_w"])
        psi = state.psi
        ts = f"{state.t:.17g}"
        for ri, p, w in zip(state.grid.r, psi, state.w):
            wr.writerow([ts, f"{ri:.17g}", f"{p.real:.17g}", f"{p.imag:.17g}", f"{w.real:.17g}", f"{w.imag:.17g}"])


def read_checkpoint(path) -> WaveState:
    with open(path) as fh:
        head = fh.readline().lstrip("# ").split()
        meta = dict(kv.split("=") for kv in head)
        cols = next(csv.reader(fh))
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    grid = RadialGrid(float(meta["R"]), int(meta["m"]), int(meta.get("order", 2)))
    if data.shape[0] != grid.m:
        raise GridMismatch(f"checkpoint holds {data.shape[0]} rows for a grid of {grid.m} nodes")
    if "re_w" in cols:
        w = data[:, cols.index("re_w")] + 1j * data[:, cols.index("im_w")]
        return WaveState(float(meta["t"]), w, grid)
    psi = data[:, 2] + 1j * data[:, 3]
    return reduce(psi, grid, float(meta["t"]))
