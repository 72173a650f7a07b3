"""Graded Laurent series in s = t^(1/3).

A Series maps integer s-degrees to coefficients that are either scalars or
fields (numpy arrays on a shared rho grid).  Each series carries a precision
``prec``: coefficients at degrees <= prec are exact, everything above is
unknown and never stored.  Exact polynomials (the truncated ansatz q, omega,
chi) have ``prec = inf``.  Products propagate precision the way formal power
series do, so negative-degree factors such as q'' (degree -5) never silently
consume accuracy.
"""
from __future__ import annotations

import csv
import math
from typing import Callable, Mapping

import numpy as np

from .errors import GridMismatch, MissingData
from .profiles import RhoGrid, ground_state, ground_state_drho

INF = math.inf


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return not np.any(c)
    return c == 0


class Series:
    __slots__ = ("coeffs", "prec")

    def __init__(self, coeffs: Mapping[int, object] | None = None, prec: float = INF):
        self.prec = prec
        self.coeffs: dict[int, object] = {}
        for d, c in (coeffs or {}).items():
            if d <= prec and not _is_zero(c):
                self.coeffs[int(d)] = c

    # -- construction helpers -------------------------------------------
    @classmethod
    def monomial(cls, degree: int, coeff=1.0, prec: float = INF) -> "Series":
        return cls({degree: coeff}, prec)

    @classmethod
    def zero(cls, prec: float = INF) -> "Series":
        return cls({}, prec)

    # -- queries --------------------------------------------------------
    def __getitem__(self, d: int):
        if d > self.prec:
            raise MissingData(f"degree {d} is beyond the series precision {self.prec}")
        return self.coeffs.get(d, 0.0)

    @property
    def valuation(self) -> float:
        return min(self.coeffs) if self.coeffs else INF

    @property
    def degrees(self) -> list[int]:
        return sorted(self.coeffs)

    @property
    def is_field(self) -> bool:
        return any(isinstance(c, np.ndarray) for c in self.coeffs.values())

    def __repr__(self) -> str:
        terms = []
        for d in self.degrees:
            c = self.coeffs[d]
            if isinstance(c, np.ndarray):
                terms.append(f"<field|{np.max(np.abs(c)):.3g}|> s^{d}")
            else:
                terms.append(f"{c:.6g} s^{d}")
        tail = "" if self.prec == INF else f" + O(s^{self.prec + 1})"
        return "Series(" + (" + ".join(terms) or "0") + tail + ")"

    # -- arithmetic -----------------------------------------------------
    def _coerce(self, other) -> "Series":
        if isinstance(other, Series):
            return other
        return Series({0: other})

    def __add__(self, other) -> "Series":
        other = self._coerce(other)
        prec = min(self.prec, other.prec)
        out = {}
        for d in set(self.coeffs) | set(other.coeffs):
            if d <= prec:
                a = self.coeffs.get(d, 0.0)
                b = other.coeffs.get(d, 0.0)
                _check_shapes(a, b)
                out[d] = a + b
        return Series(out, prec)

    __radd__ = __add__

    def __neg__(self) -> "Series":
        return Series({d: -c for d, c in self.coeffs.items()}, self.prec)

    def __sub__(self, other) -> "Series":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Series":
        return self._coerce(other) - self

    def __mul__(self, other) -> "Series":
        if not isinstance(other, Series):
            # scalar or field constant (exact)
            return Series({d: c * other for d, c in self.coeffs.items()}, self.prec)
        va, vb = self.valuation, other.valuation
        prec = min(_shift_prec(self.prec, vb), _shift_prec(other.prec, va))
        out: dict[int, object] = {}
        for da, ca in self.coeffs.items():
            for db, cb in other.coeffs.items():
                d = da + db
                if d > prec:
                    continue
                _check_shapes(ca, cb)
                out[d] = out[d] + ca * cb if d in out else ca * cb
        return Series(out, prec)

    def __rmul__(self, other) -> "Series":
        return self.__mul__(other)

    def scale(self, c) -> "Series":
        return self * c

    def __pow__(self, n: int) -> "Series":
        if n < 0:
            raise ValueError("use invert_unit for inverses")
        out = Series({0: 1.0})
        for _ in range(n):
            out = out * self
        return out

    def truncate(self, dmax: float) -> "Series":
        return Series(self.coeffs, min(self.prec, dmax))

    def conj(self) -> "Series":
        return Series({d: np.conj(c) for d, c in self.coeffs.items()}, self.prec)

    def map(self, fn: Callable) -> "Series":
        """Apply a linear map coefficient-wise (e.g. d/drho on fields)."""
        return Series({d: fn(c) for d, c in self.coeffs.items()}, self.prec)

    def shift(self, k: int) -> "Series":
        """Multiply by s^k."""
        return Series({d + k: c for d, c in self.coeffs.items()}, self.prec + k)

    # -- evaluation -----------------------------------------------------
    def __call__(self, t: float, dmax: float | None = None):
        """Sum of c_d t^(d/3) over stored degrees (optionally capped)."""
        s = t ** (1.0 / 3.0)
        total = 0.0
        for d in self.degrees:
            if dmax is not None and d > dmax:
                break
            total = total + self.coeffs[d] * s**d
        return total

    def real(self) -> "Series":
        return self.map(np.real)

    def imag(self) -> "Series":
        return self.map(np.imag)


def _shift_prec(p: float, v: float) -> float:
    # known-through degree of (series known through p) * (series of valuation v)
    return INF if v == INF else p + v


def _check_shapes(a, b) -> None:
    if isinstance(a, np.ndarray) and isinstance(b, np.ndarray) and a.shape != b.shape:
        raise GridMismatch(f"coefficient fields of shapes {a.shape} and {b.shape}")


def add(a: Series, b: Series) -> Series:
    return a + b


def scale(a: Series, c) -> Series:
    return a * c


def multiply(a: Series, b: Series) -> Series:
    return a * b


def differentiate_time(a: Series) -> Series:
    """d/dt with t = s^3: c s^d -> (d/3) c s^(d-3)."""
    return Series({d - 3: (d / 3.0) * c for d, c in a.coeffs.items() if d != 0}, a.prec - 3)


def integrate_time(a: Series) -> Series:
    """Term-wise antiderivative in t; constant of integration 0.

    Requires no s^-3 term (which would integrate to a logarithm)."""
    if not _is_zero(a.coeffs.get(-3, 0.0)):
        raise ValueError("s^-3 term integrates to log t")
    return Series({d + 3: (3.0 / (d + 3)) * c for d, c in a.coeffs.items()}, a.prec + 3)


def invert_unit(a: Series, dmax: int) -> Series:
    """Inverse of 1 + (positive-valuation tail), truncated at degree dmax."""
    c0 = a.coeffs.get(0, 0.0)
    if isinstance(c0, np.ndarray) or not np.isclose(c0, 1.0, rtol=0, atol=1e-14):
        raise ValueError("invert_unit needs constant term exactly 1")
    if any(d < 0 for d in a.coeffs):
        raise ValueError("invert_unit needs a tail of positive valuation")
    dmax = int(min(dmax, a.prec))
    inv: dict[int, object] = {0: 1.0}
    for d in range(1, dmax + 1):
        acc = 0.0
        for j in range(1, d + 1):
            aj = a.coeffs.get(j)
            bj = inv.get(d - j)
            if aj is None or bj is None:
                continue
            acc = acc - aj * bj
        if not _is_zero(acc):
            inv[d] = acc
    return Series(inv, dmax)


def invert(a: Series, dmax: int) -> Series:
    """Inverse of a scalar series with nonzero leading coefficient."""
    v = a.valuation
    if v == INF:
        raise ZeroDivisionError("inverse of the zero series")
    lead = a.coeffs[v]
    if isinstance(lead, np.ndarray):
        raise ValueError("leading coefficient must be scalar")
    unit = Series({d - v: c / lead for d, c in a.coeffs.items()}, a.prec - v)
    return invert_unit(unit, dmax + v).shift(-v) * (1.0 / lead)


# ---------------------------------------------------------------------------
# parameters q(t), omega(t) and what follows from them


def q_series(q_coeffs) -> Series:
    return Series({2 * k + 1: float(c) for k, c in enumerate(q_coeffs)})


def omega_series(omega_coeffs) -> Series:
    return Series({2 * k: float(c) for k, c in enumerate(omega_coeffs)})


def parameter_series(q_coeffs, omega_coeffs, dmax: int) -> dict[str, Series]:
    """q, q', q'', omega, omega', lambda, v and theta' as formal series.

    lambda = 1 / (omega q^2) and theta' = lambda^2 - v^2/4 - v' q / 2 are
    accurate to degree ``dmax``; the rest are exact polynomials.
    """
    if not omega_coeffs or not np.isclose(omega_coeffs[0], 1.0):
        raise ValueError("omega_0 must be 1")
    if not q_coeffs or q_coeffs[0] == 0:
        raise ValueError("q_0 must be nonzero")
    q = q_series(q_coeffs)
    om = omega_series(omega_coeffs)
    dq = differentiate_time(q)
    ddq = differentiate_time(dq)
    dom = differentiate_time(om)
    lam = invert(om * q * q, dmax)
    v = dq
    dv = ddq
    dtheta = (lam * lam - v * v * 0.25 - dv * q * 0.5).truncate(dmax)
    return {"q": q, "dq": dq, "ddq": ddq, "omega": om, "domega": dom, "lam": lam, "v": v, "dtheta": dtheta}


# ---------------------------------------------------------------------------
# the profile equation, expanded


class ProfileExpansion:
    """Mechanical expansion of  l(q,w)(phi+chi) + F^{>=2}(chi)  as a series.

    Only the first component of the vector equation is carried; the second
    is its conjugate.  Stage k of the recursion needs D_k = -[...]_k.
    """

    def __init__(self, grid: RhoGrid):
        self.grid = grid
        self.rho = grid.nodes
        self.phi = ground_state(grid)
        self.dphi = ground_state_drho(grid)

    def drho(self, u: Series) -> Series:
        return u.map(self.grid.ddrho_complex)

    def coefficient_series(self, q_coeffs, omega_coeffs, dmax: int) -> dict[str, Series]:
        p = parameter_series(q_coeffs, omega_coeffs, dmax + 6)
        q, om, dq, ddq, dom = p["q"], p["omega"], p["dq"], p["ddq"], p["domega"]
        qw = q * om
        q3 = q * q * q
        a = q3 * q * om * om  # q^4 w^2
        c = dq * q3 * om * om * 2.0 + dom * om * q3 * q
        e = dq * q3 * om * om
        f = ddq * q3 * q3 * om * om * om * 0.5
        # 1/(1 + rho w q) with rho-polynomial coefficients
        inv = invert_unit(Series({0: 1.0}) + qw * self.rho, dmax + 1)
        return {"a": a, "B": (qw * 2.0) * inv, "c": c, "E": e * inv, "f": f, "params": p}

    def apply_l(self, u: Series, coef: dict[str, Series], dmax: int) -> Series:
        """First component of l(q, w) u for a field series u (time-dependent)."""
        rho = self.rho
        du = u.map(self.grid.ddrho_complex)
        ut = differentiate_time(u)
        out = coef["a"] * ut * (-1j)
        out = out - coef["B"] * du
        out = out + coef["c"] * (u + du * rho) * 1j
        out = out - coef["E"] * u * 1j
        out = out + coef["f"] * u * rho
        return out.truncate(dmax)

    def forcing(self, coef: dict[str, Series], dmax: int) -> Series:
        """F(q, w) = l(q, w) phi  (phi is time independent)."""
        rho, phi, dphi = self.rho, self.phi, self.dphi
        out = -coef["B"] * dphi
        out = out + coef["c"] * (phi + rho * dphi) * 1j
        out = out - coef["E"] * phi * 1j
        out = out + coef["f"] * (rho * phi)
        return out.truncate(dmax)

    def nonlinear(self, chi: Series, dmax: int) -> Series:
        phi = self.phi
        chib = chi.conj()
        mod2 = chi * chib
        out = mod2 * phi * (-4.0) - chi * chi * phi * 2.0 - mod2 * chi * 2.0
        return out.truncate(dmax)

    def residual(self, q_coeffs, omega_coeffs, chis: Mapping[int, np.ndarray], dmax: int) -> Series:
        """l(q,w)(phi+chi) + F^{>=2}(chi) up to degree dmax (H chi excluded)."""
        coef = self.coefficient_series(q_coeffs, omega_coeffs, dmax)
        chi = Series({k: np.asarray(v, complex) for k, v in chis.items()})
        total = self.forcing(coef, dmax) + self.apply_l(chi, coef, dmax) + self.nonlinear(chi, dmax)
        return total


def assemble_rhs(
    k: int,
    q_coeffs,
    omega_coeffs,
    chis: Mapping[int, np.ndarray],
    grid: RhoGrid,
    expansion: ProfileExpansion | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Return (G_k^+, G_k^-) = (Re D_k, Im D_k) from the lower-stage data.

    ``q_coeffs`` must hold q_j for 2j + 1 <= k and ``omega_coeffs`` omega_j
    for 2j <= k - 1 (trailing unknowns may be passed as zero).  ``chis``
    must hold chi_p for every p < k.
    """
    if k < 1:
        raise ValueError("stage index starts at 1")
    need_q = (k - 1) // 2 + 1
    if len(q_coeffs) < need_q or len(omega_coeffs) < need_q:
        raise MissingData(f"stage {k} needs q_j, omega_j for j <= {(k - 1) // 2}")
    missing = [p for p in range(1, k) if p not in chis]
    if missing:
        raise MissingData(f"stage {k} needs chi_{missing[0]}")
    exp = expansion or ProfileExpansion(grid)
    lower = {p: chis[p] for p in range(1, k)}
    res = exp.residual(q_coeffs, omega_coeffs, lower, k)
    dk = -np.asarray(res[k], dtype=complex) * np.ones(grid.n)
    return dk.real.copy(), dk.imag.copy()


def dump_csv(series: Series, path, grid: RhoGrid | None = None) -> None:
    """Debug dump: degree, ||coefficient||_2 and parity defect of each term."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["degree", "norm_l2", "parity_defect_re", "parity_defect_im"])
        for d in series.degrees:
            c = series.coeffs[d]
            if isinstance(c, np.ndarray) and grid is not None:
                from .profiles import norm, parity_defect

                par = 1 if d % 2 == 0 else -1
                w.writerow([d, f"{norm(c, grid):.12e}", f"{parity_defect(np.real(c), par, grid):.3e}",
                            f"{parity_defect(np.imag(c), -par, grid):.3e}"])
            else:
                w.writerow([d, f"{abs(c):.12e}", "", ""])
