import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from spherecollapse.errors import GridMismatch, SolvabilityViolation
from spherecollapse.profiles import (
    apply,
    diff_matrix,
    ground_state,
    ground_state_drho,
    inner,
    make_op,
    make_rho_grid,
    norm,
    parity_defect,
    solve_constrained,
)

Q0 = 12.0 ** (1.0 / 6.0)


def sech(x):
    return 2.0 * np.exp(-abs(x)) / (1.0 + np.exp(-2.0 * abs(x)))


def test_grid_spacing_and_midpoint():
    g = make_rho_grid(20, 4097)
    assert g.h == pytest.approx(40.0 / 4096, rel=1e-15)
    assert g.nodes[2048] == 0.0
    assert make_rho_grid(10, 4097).nodes.max() == 10.0


def test_degenerate_grid_rejected():
    with pytest.raises(ValueError):
        make_rho_grid(20, 2)


def test_ground_state_values(grid):
    phi = ground_state(grid)
    assert phi[grid.n // 2] == 1.0
    oracle_phi2 = quad(lambda x: sech(x) ** 2, -np.inf, np.inf)[0]
    oracle_rhophi2 = quad(lambda x: (x * sech(x)) ** 2, -np.inf, np.inf)[0]
    oracle_dphi2 = quad(lambda x: (np.tanh(x) * sech(x)) ** 2, -np.inf, np.inf)[0]
    assert inner(phi, phi, grid) == pytest.approx(oracle_phi2, rel=1e-10)
    assert oracle_phi2 == pytest.approx(2.0, rel=1e-12)
    rho = grid.nodes
    assert inner(rho * phi, rho * phi, grid) == pytest.approx(oracle_rhophi2, rel=1e-10)
    assert oracle_rhophi2 == pytest.approx(math.pi**2 / 6, rel=1e-10)
    dphi = ground_state_drho(grid)
    assert inner(dphi, dphi, grid) == pytest.approx(oracle_dphi2, rel=1e-10)
    assert oracle_dphi2 == pytest.approx(2.0 / 3.0, rel=1e-10)


def test_inner_trivial_zeros(grid):
    phi, dphi = ground_state(grid), ground_state_drho(grid)
    assert abs(inner(phi, dphi, grid)) < 1e-15
    assert inner(1j * phi, phi, grid) == 0.0


def test_inner_shape_mismatch(grid):
    with pytest.raises(GridMismatch):
        inner(np.ones(5), np.ones(5), grid)


def test_kernels(grid):
    phi, dphi = ground_state(grid), ground_state_drho(grid)
    Lp, Lm = make_op("Lplus", grid), make_op("Lminus", grid)
    assert np.max(np.abs(apply(Lm, phi))) < 1e-9
    assert np.max(np.abs(apply(Lp, dphi))) < 1e-9
    # direct evaluation -phi''' + phi' - 2 phi^2 phi'
    rho = grid.nodes
    dddphi = -np.tanh(rho) * sech(rho) * (1 - 6 * sech(rho) ** 2)
    direct = -dddphi + dphi - 2 * phi**2 * dphi
    out = apply(Lm, dphi)
    assert norm(out, grid) > 0.1
    assert norm(out - direct, grid) / norm(direct, grid) < 1e-8


def test_u1_closed_form(grid):
    rho = grid.nodes
    phi, dphi = ground_state(grid), ground_state_drho(grid)
    c0 = -quad(lambda x: (x * sech(x)) ** 2, -np.inf, np.inf)[0] / quad(lambda x: sech(x) ** 2, -np.inf, np.inf)[0]
    assert c0 == pytest.approx(-math.pi**2 / 12, rel=1e-10)
    g = -(1.0 / 3.0) * Q0**4 * (phi + 2 * rho * dphi)
    u = solve_constrained(make_op("Lminus", grid), g)
    expect = (1.0 / 6.0) * Q0**4 * (rho**2 * phi + c0 * phi)
    assert norm(u - expect, grid) / norm(expect, grid) < 1e-6


def test_solve_zero(grid):
    u = solve_constrained(make_op("Lminus", grid), np.zeros(grid.n))
    assert not np.any(u)


def test_solve_lplus_phi(grid):
    phi = ground_state(grid)
    Lp = make_op("Lplus", grid)
    u = solve_constrained(Lp, phi)
    assert norm(apply(Lp, u) - phi, grid) <= 1e-8 * norm(phi, grid)
    # the closed form: L+ (-(phi + rho phi_rho)/2) = phi
    expect = -0.5 * (phi + grid.nodes * ground_state_drho(grid))
    assert norm(u - expect, grid) / norm(expect, grid) < 1e-8


def test_solvability_violation(grid):
    with pytest.raises(SolvabilityViolation):
        solve_constrained(make_op("Lminus", grid), ground_state(grid))


def test_unknown_operator(grid):
    with pytest.raises(ValueError):
        make_op("Lzero", grid)


small = make_rho_grid(10, 257)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.lists(st.floats(-1, 1), min_size=4, max_size=4),
       st.sampled_from(["Lplus", "Lminus"]))
def test_self_adjoint(ca, cb, kind):
    rho = small.nodes
    env = np.exp(-(rho**2) / 4)
    a = env * np.polynomial.polynomial.polyval(rho, ca)
    b = env * np.polynomial.polynomial.polyval(rho, cb)
    op = make_op(kind, small)
    lhs = inner(apply(op, a), b, small)
    rhs = inner(a, apply(op, b), small)
    scale = norm(apply(op, a), small) * norm(b, small) + norm(a, small) * norm(apply(op, b), small) + 1e-300
    assert abs(lhs - rhs) <= 1e-9 * scale


@pytest.mark.parametrize("kind", ["Lplus", "Lminus"])
def test_operator_preserves_parity(grid, kind):
    rho = grid.nodes
    even = np.exp(-(rho**2)) * (1 + rho**2)
    odd = rho * np.exp(-(rho**2))
    op = make_op(kind, grid)
    assert parity_defect(apply(op, even), 1, grid) < 1e-11
    assert parity_defect(apply(op, odd), -1, grid) < 1e-11


def test_solve_apply_roundtrip(grid):
    rho = grid.nodes
    phi = ground_state(grid)
    for kind, g in (("Lplus", rho**2 * phi), ("Lminus", rho * phi)):
        op = make_op(kind, grid)
        u = solve_constrained(op, g)
        assert abs(inner(u, op.kernel, grid)) < 1e-10 * norm(u, grid)
        assert norm(apply(op, u) - g, grid) < 1e-8 * norm(g, grid)


@pytest.mark.parametrize("deriv", [1, 2])
def test_one_sided_stencils(deriv):
    n, L = 401, 2.0
    x = np.linspace(-L, L, n)
    h = x[1] - x[0]
    f = np.sin(3 * x)
    exact = 3 * np.cos(3 * x) if deriv == 1 else -9 * np.sin(3 * x)
    D = diff_matrix(n, h, deriv, order=6, one_sided=True)
    assert np.max(np.abs(D @ f - exact)) < 1e-8
