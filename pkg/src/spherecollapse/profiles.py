"""Profile-variable machinery: the symmetric rho grid, the sech ground state,
the linearized operators L+ / L- and constrained (bordered) solves.

Fields on the rho grid are plain complex numpy arrays; the grid object is
carried separately.  All operators are banded finite-difference matrices of
even order, so they map even fields to even fields and odd to odd exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import GridMismatch, SingularSystem, SolvabilityViolation

# central-difference weights, offsets 0..p (symmetric / antisymmetric)
_D2_WEIGHTS = {
    2: [-2.0, 1.0],
    4: [-5.0 / 2, 4.0 / 3, -1.0 / 12],
    6: [-49.0 / 18, 3.0 / 2, -3.0 / 20, 1.0 / 90],
    8: [-205.0 / 72, 8.0 / 5, -1.0 / 5, 8.0 / 315, -1.0 / 560],
}
_D1_WEIGHTS = {
    2: [0.0, 1.0 / 2],
    4: [0.0, 2.0 / 3, -1.0 / 12],
    6: [0.0, 3.0 / 4, -3.0 / 20, 1.0 / 60],
    8: [0.0, 4.0 / 5, -1.0 / 5, 4.0 / 105, -1.0 / 280],
}


def fd_weights(offsets, deriv: int) -> np.ndarray:
    """Finite-difference weights (unit spacing) for the given node offsets."""
    x = np.asarray(offsets, dtype=float)
    m = x.size
    V = np.vander(x, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[deriv] = math.factorial(deriv)
    return np.linalg.solve(V, rhs)


def diff_matrix(
    n: int, h: float, deriv: int, order: int = 4, decay: float | None = 1.0, one_sided: bool = False
) -> sp.csr_matrix:
    """Banded central-difference matrix on n equispaced nodes.

    Ghost values beyond the ends are closed with exponential decay,
    u_{n-1+m} = exp(-decay*m*h) u_{n-1} (mirrored on the left), which is what
    fields in the e^{-|rho|} class do.  ``decay=None`` gives zero ghosts;
    ``one_sided=True`` replaces the edge rows by one-sided stencils that use
    no ghosts at all (for fields with no known behaviour past the ends).
    """
    if one_sided:
        mat = diff_matrix(n, h, deriv, order, decay=None).tolil()
        p = order // 2
        width = order + deriv  # nodes needed for the same formal order
        for i in range(p):
            offs = np.arange(width) - i
            wts = fd_weights(offs, deriv) / h**deriv
            mat[i, :] = 0.0
            mat[n - 1 - i, :] = 0.0
            for o, wt in zip(offs, wts):
                mat[i, i + o] = wt
                mat[n - 1 - i, n - 1 - i - o] = wt * (-1) ** deriv
        return mat.tocsr()
    if order not in _D2_WEIGHTS:
        raise ValueError(f"unsupported stencil order {order}")
    if deriv == 1:
        w = _D1_WEIGHTS[order]
        diags = {0: 0.0}
        for k in range(1, len(w)):
            diags[k] = w[k] / h
            diags[-k] = -w[k] / h
    elif deriv == 2:
        w = _D2_WEIGHTS[order]
        diags = {0: w[0] / h**2}
        for k in range(1, len(w)):
            diags[k] = diags[-k] = w[k] / h**2
    else:
        raise ValueError("deriv must be 1 or 2")
    offsets = sorted(diags)
    mat = sp.diags([np.full(n - abs(k), diags[k]) for k in offsets], offsets, format="lil")
    if decay is not None:
        p = len(w) - 1
        alpha = np.exp(-decay * h)
        for i in range(n - p, n):
            for k in range(1, p + 1):
                m = i + k - (n - 1)
                if m >= 1:
                    mat[i, n - 1] += diags[k] * alpha**m
                    # mirror row on the left edge
                    mat[n - 1 - i, 0] += diags[-k] * alpha**m
    return mat.tocsr()


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite Simpson weights for an odd number of equispaced nodes."""
    if n < 3 or n % 2 == 0:
        raise ValueError("Simpson's rule needs an odd node count >= 3")
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / 3.0)


@dataclass(frozen=True)
class RhoGrid:
    half_width: float
    n: int
    order: int = 6

    def __post_init__(self):
        if not self.half_width > 0:
            raise ValueError(f"half width must be positive, got {self.half_width}")
        if self.n < 3 or self.n % 2 == 0:
            raise ValueError(f"point count must be odd and >= 3, got {self.n}")
        if self.order not in _D2_WEIGHTS:
            raise ValueError(f"unsupported stencil order {self.order}")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        rho = np.linspace(-self.half_width, self.half_width, self.n)
        rho[self.n // 2] = 0.0
        # exact mirror symmetry keeps parity checks at round-off level
        rho[: self.n // 2] = -rho[self.n // 2 + 1 :][::-1]
        return rho

    @cached_property
    def weights(self) -> np.ndarray:
        return simpson_weights(self.n, self.h)

    @cached_property
    def d1(self) -> sp.csr_matrix:
        return diff_matrix(self.n, self.h, 1, self.order)

    @cached_property
    def d2(self) -> sp.csr_matrix:
        return diff_matrix(self.n, self.h, 2, self.order)

    def ddrho(self, u: np.ndarray) -> np.ndarray:
        return self.d1 @ u

    def d2drho2(self, u: np.ndarray) -> np.ndarray:
        return self.d2 @ u

    def ddrho_complex(self, u):
        """d/drho that passes scalars (rho-constant coefficients) through as 0."""
        if not isinstance(u, np.ndarray):
            return 0.0
        if np.iscomplexobj(u):
            return self.d1 @ u.real + 1j * (self.d1 @ u.imag)
        return self.d1 @ u

    def reflect(self, u: np.ndarray) -> np.ndarray:
        """u(-rho) on the same nodes."""
        return u[::-1]


def make_rho_grid(L: float = 20.0, n: int = 4097, order: int = 6) -> RhoGrid:
    return RhoGrid(float(L), int(n), int(order))


def ground_state(grid: RhoGrid) -> np.ndarray:
    return 1.0 / np.cosh(grid.nodes)


def ground_state_drho(grid: RhoGrid) -> np.ndarray:
    rho = grid.nodes
    return -np.tanh(rho) / np.cosh(rho)


def inner(a: np.ndarray, b: np.ndarray, grid: RhoGrid) -> float:
    """Real pairing Re ∫ a conj(b) drho by composite Simpson."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != (grid.n,) or b.shape != (grid.n,):
        raise GridMismatch(f"fields of shape {a.shape}, {b.shape} on a grid of {grid.n} nodes")
    return float(np.real(np.sum(grid.weights * a * np.conj(b))))


def norm(a: np.ndarray, grid: RhoGrid) -> float:
    return float(np.sqrt(max(inner(a, a, grid), 0.0)))


def parity_defect(u: np.ndarray, parity: int, grid: RhoGrid) -> float:
    """Relative size of the part of u with the wrong parity (+1 even, -1 odd)."""
    scale = np.max(np.abs(u))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(u - parity * grid.reflect(u))) / (2.0 * scale))


@dataclass(frozen=True)
class LinOp:
    """L+ = -d^2 + 1 - 6 phi^2 or L- = -d^2 + 1 - 2 phi^2 on a RhoGrid."""

    kind: str
    grid: RhoGrid
    solvability_tol: float = 1e-6
    residual_tol: float = 1e-8
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("Lplus", "Lminus"):
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @cached_property
    def potential(self) -> np.ndarray:
        phi = ground_state(self.grid)
        c = 6.0 if self.kind == "Lplus" else 2.0
        return 1.0 - c * phi**2

    @cached_property
    def matrix(self) -> sp.csr_matrix:
        return (-self.grid.d2 + sp.diags(self.potential)).tocsr()

    @cached_property
    def kernel(self) -> np.ndarray:
        """Analytic kernel element: phi_rho for L+, phi for L-."""
        if self.kind == "Lplus":
            return ground_state_drho(self.grid)
        return ground_state(self.grid)

    @property
    def kernel_parity(self) -> int:
        return -1 if self.kind == "Lplus" else 1

    def _bordered_lu(self):
        if "lu" not in self._cache:
            n = self.grid.n
            k = self.kernel
            kw = self.grid.weights * k
            A = sp.bmat(
                [[self.matrix, sp.csr_matrix(k.reshape(n, 1))], [sp.csr_matrix(kw.reshape(1, n)), None]],
                format="csc",
            )
            try:
                self._cache["lu"] = spla.splu(A)
            except RuntimeError as exc:  # pragma: no cover - factorization failure
                raise SingularSystem(str(exc)) from exc
        return self._cache["lu"]

    def kernel_pairing(self, g: np.ndarray) -> float:
        """|(g, k)| / ||k||, compared against solvability_tol * ||g||."""
        k = self.kernel
        return abs(inner(g, k, self.grid)) / norm(k, self.grid)


def make_op(kind: str, grid: RhoGrid, **tols) -> LinOp:
    return LinOp(kind, grid, **tols)


def apply(op: LinOp, u: np.ndarray) -> np.ndarray:
    u = np.asarray(u)
    if u.shape != (op.grid.n,):
        raise GridMismatch(f"field of shape {u.shape} on a grid of {op.grid.n} nodes")
    if np.iscomplexobj(u):
        return op.matrix @ u.real + 1j * (op.matrix @ u.imag)
    return op.matrix @ u


def solve_constrained(op: LinOp, g: np.ndarray, *, check: bool = True) -> np.ndarray:
    """Solve op u = g with (u, kernel) = 0 through the bordered system

        [op  k] [u ]   [g]
        [k^T 0] [mu] = [0]

    The multiplier mu soaks up the discretization-level solvability error.
    Raises SolvabilityViolation if g is visibly not orthogonal to the kernel.
    """
    g = np.asarray(g)
    grid = op.grid
    if g.shape != (grid.n,):
        raise GridMismatch(f"field of shape {g.shape} on a grid of {grid.n} nodes")
    if np.iscomplexobj(g):
        return solve_constrained(op, g.real, check=check) + 1j * solve_constrained(op, g.imag, check=check)
    gnorm = norm(g, grid)
    if gnorm == 0.0:
        return np.zeros_like(g)
    pairing = op.kernel_pairing(g)
    if check and pairing > op.solvability_tol * gnorm:
        raise SolvabilityViolation(
            f"{op.kind}: kernel pairing {pairing:.3e} exceeds {op.solvability_tol:.1e} * ||g|| = "
            f"{op.solvability_tol * gnorm:.3e}"
        )
    lu = op._bordered_lu()
    sol = lu.solve(np.concatenate([g, [0.0]]))
    u = sol[:-1]
    if not np.all(np.isfinite(u)):
        raise SingularSystem(f"{op.kind}: bordered solve produced non-finite values")
    res = norm(op.matrix @ u + sol[-1] * op.kernel - g, grid)
    if check and res > op.residual_tol * gnorm:
        raise SingularSystem(f"{op.kind}: bordered residual {res:.3e} above tolerance")
    return u


def multiplier(op: LinOp, g: np.ndarray) -> float:
    """Bordered-system multiplier mu for a real right-hand side (diagnostic)."""
    lu = op._bordered_lu()
    return float(lu.solve(np.concatenate([np.asarray(g, float), [0.0]]))[-1])
