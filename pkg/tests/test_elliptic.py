"""Tests for the finite-difference diffusion, Schrödinger and shifted solves."""

import numpy as np
import pytest

from qpat_py.elliptic import (
    assemble_diffusion,
    factor_matrix,
    solve_diffusion,
    solve_schrodinger,
    solve_shifted,
)
from qpat_py.errors import DimensionError, DomainError, EigenvalueCollisionError
from qpat_py.grid import DomainMask, GridSpec, ScalarField
from qpat_py.models import LinearSolveConfig


def _exp_solution_error(n: int, method: str = "direct") -> float:
    # -Δu + u = 0 with u = e^x
    mask = DomainMask.rectangle(GridSpec.unit_square(n))
    D = ScalarField.constant(mask.grid, 1.0)
    sigma = ScalarField.constant(mask.grid, 1.0)
    g = mask.boundary_values(lambda x, y: np.exp(x))
    u = solve_diffusion(D, sigma, g, mask, LinearSolveConfig(method=method))
    X, _ = mask.grid.coords()
    return float(np.abs(u.values - np.exp(X)).max())


def test_diffusion_second_order():
    """Test that the diffusion solve converges at second order."""
    coarse = _exp_solution_error(17)
    fine = _exp_solution_error(33)
    assert fine < 1e-4
    assert coarse / fine > 3.0


def test_krylov_matches_direct():
    """Test that the BiCGSTAB path agrees with sparse LU."""
    assert _exp_solution_error(17, "krylov") == pytest.approx(_exp_solution_error(17), abs=1e-6)


def test_diffusion_operator_is_symmetric(unit_grid, rect_mask):
    """Test that the flux-form operator with variable D is symmetric."""
    D = ScalarField.from_function(unit_grid, lambda x, y: 1 + 0.5 * x * y)
    sigma = ScalarField.constant(unit_grid, 0.3)
    A = assemble_diffusion(D, sigma, rect_mask).matrix
    assert abs(A - A.T).max() < 1e-9


def test_diffusion_rejects_non_positive(unit_grid, rect_mask):
    """Test positivity checks on D and σ_a."""
    D = ScalarField.constant(unit_grid, 1.0)
    bad = ScalarField.constant(unit_grid, -1.0)
    g = np.ones(len(rect_mask.boundary_nodes))
    with pytest.raises(DomainError, match="diffusion coefficient"):
        solve_diffusion(bad, D, g, rect_mask)
    with pytest.raises(DomainError, match="absorption"):
        solve_diffusion(D, bad, g, rect_mask)


def test_boundary_length_checked(unit_grid, rect_mask):
    """Test that boundary data must match the boundary nodes."""
    q = ScalarField.constant(unit_grid, 0.0)
    with pytest.raises(DimensionError, match="boundary data"):
        solve_schrodinger(q, np.ones(7), rect_mask)


def test_schrodinger_exact_for_harmonic_quadratic(unit_grid, disk_mask):
    """Test that Δu = 0 with u = x² - y² data is solved exactly on a disk."""
    q = ScalarField.constant(unit_grid, 0.0)
    g = disk_mask.boundary_values(lambda x, y: (x**2 - y**2) * (1 + 1j))
    u = solve_schrodinger(q, g, disk_mask)
    X, Y = unit_grid.coords()
    exact = (X**2 - Y**2) * (1 + 1j)
    np.testing.assert_allclose(u.values[disk_mask.inside], exact[disk_mask.inside], atol=1e-9)


def test_shifted_solve_manufactured(unit_grid, rect_mask):
    """Test that -Δw - qw = rhs reproduces w when rhs is its discrete image."""
    X, Y = unit_grid.coords()
    w = 1 + 0.2 * X * Y + np.sin(X)
    q = ScalarField.from_function(unit_grid, lambda x, y: -1.0 - x)
    lap = np.zeros_like(w)
    h = unit_grid.dx
    lap[1:-1, 1:-1] = (
        w[2:, 1:-1] + w[:-2, 1:-1] + w[1:-1, 2:] + w[1:-1, :-2] - 4 * w[1:-1, 1:-1]
    ) / h**2
    rhs = ScalarField(grid=unit_grid, values=-lap - q.values * w)
    bc = w[rect_mask.boundary_nodes[:, 0], rect_mask.boundary_nodes[:, 1]]
    got = solve_shifted(q, rhs, bc, rect_mask)
    np.testing.assert_allclose(got.values, w, atol=1e-9)


def test_eigenvalue_collision_detected():
    """Test that q at the first discrete Dirichlet eigenvalue is reported as singular."""
    n = 9
    grid = GridSpec.unit_square(n)
    mask = DomainMask.rectangle(grid)
    h = grid.dx
    lam = 2 * (4 / h**2) * np.sin(np.pi * h / 2) ** 2
    q = ScalarField.constant(grid, lam)
    g = np.ones(len(mask.boundary_nodes))
    with pytest.raises(EigenvalueCollisionError, match="eigenvalue"):
        solve_schrodinger(q, g, mask)


def test_factor_matrix_reuses_factor():
    """Test that one factor solves several complex right-hand sides and flags singularity."""
    import scipy.sparse as sp

    A = sp.diags([[-1.0] * 4, [4.0] * 5, [-1.0] * 4], [-1, 0, 1])
    solve = factor_matrix(A, label="test")
    for b in (np.arange(5.0), np.ones(5) + 2j):
        np.testing.assert_allclose(A @ solve(b), b, atol=1e-12)
    with pytest.raises(EigenvalueCollisionError, match="test"):
        factor_matrix(sp.diags([1.0, 0.0, 1.0]), label="test")


def test_solver_config_validation():
    """Test the tolerance bounds and the auto method switch."""
    with pytest.raises(ValueError, match="rel_tol"):
        LinearSolveConfig(rel_tol=0.5)
    cfg = LinearSolveConfig(direct_max_unknowns=100)
    assert cfg.resolve(50) == "direct"
    assert cfg.resolve(500) == "krylov"
