"""Tests for CGO frequencies, potential extension, ψ solves and illumination perturbation."""

import numpy as np
import pytest

from qpat_py.cgo import (
    CGOParams,
    assemble_cgo,
    born_series_psi,
    boundary_c1_norm,
    build_cgo,
    cgo_inverse,
    envelope,
    extend_for_config,
    extend_potential,
    multi_rho_set,
    perturb_illumination,
    solve_psi,
)
from qpat_py.errors import DivergenceError, GeometryError, OverflowRescalingError
from qpat_py.grid import DomainMask, GridSpec, ScalarField, gradient_values, laplacian_values
from qpat_py.models import CGOConfig


def _bump(grid, amplitude=1.0, width=0.1):
    return ScalarField.from_function(
        grid,
        lambda x, y: amplitude * np.exp(-((x - 0.5) ** 2 + (y - 0.45) ** 2) / (2 * width**2)),
    )


class TestCGOParams:
    """Tests for the complex frequency ρ."""

    def test_null_condition(self):
        """Test that ρ·ρ = 0 for the angle constructor."""
        p = CGOParams.from_angle(3.0, angle=0.7)
        assert np.sum(p.rho**2) == pytest.approx(0.0, abs=1e-12)
        assert p.magnitude == pytest.approx(3.0)

    def test_rejects_non_null(self):
        """Test that |κ| ≠ |κ⊥| is refused."""
        with pytest.raises(ValueError, match="ρ·ρ = 0"):
            CGOParams(kappa=(1.0, 0.0), kperp=(0.0, 2.0))

    def test_domain_scaling(self, disk_mask):
        """Test that the physical |κ| is kmag over the domain half width."""
        p = CGOParams.for_mask(8.0, disk_mask)
        assert p.magnitude == pytest.approx(20.0)

    def test_conjugate_and_negate(self):
        """Test the conjugate and negated frequencies."""
        p = CGOParams.from_angle(2.0)
        np.testing.assert_allclose(p.conjugate().rho, np.conj(p.rho))
        np.testing.assert_allclose(p.negate().rho, -p.rho)


def test_multi_rho_set():
    """Test the ρ_1 = -ρ_2 pairing and its χ exponents."""
    rs = multi_rho_set(3.0)
    p1, p2 = rs.params
    np.testing.assert_allclose(p1.rho, -p2.rho)
    np.testing.assert_allclose(p2.kappa, (3.0, 0.0))
    np.testing.assert_allclose(p2.kperp, (0.0, 3.0))
    assert rs.chi_exponents == [(0.0, 0.0), (6.0, 0.0)]
    with pytest.raises(ValueError, match="positive"):
        multi_rho_set(0.0)


def test_envelope_centred(unit_grid):
    """Test that the envelope is 1 at the centre and overflow is reported."""
    p = CGOParams.from_angle(5.0)
    e = envelope(unit_grid, p, (0.5, 0.5))
    assert e[16, 16] == pytest.approx(1.0)
    with pytest.raises(OverflowRescalingError, match="recentre"):
        envelope(unit_grid, p, (0.5, 0.5), limit=1.0)


class TestExtension:
    """Tests for the compactly supported potential extension."""

    def test_keeps_q_inside_and_vanishes_at_rim(self, unit_grid, disk_mask):
        """Test that q̃ equals q on X and is zero on the padded rim."""
        q = ScalarField.constant(unit_grid, 2.0)
        qp = extend_potential(q, disk_mask, pad_cells=12, taper_width=0.2)
        inner = qp.restrict(qp.q.values)
        np.testing.assert_allclose(inner[disk_mask.inside], 2.0)
        assert np.all(qp.q.values[0, :] == 0) and np.all(qp.q.values[:, -1] == 0)

    def test_pad_too_small(self, unit_grid, rect_mask):
        """Test that a collar wider than the padding is refused."""
        q = ScalarField.constant(unit_grid, 1.0)
        with pytest.raises(GeometryError, match="pad_cells"):
            extend_potential(q, rect_mask, pad_cells=3, taper_width=0.5)


def test_zero_potential_gives_plane_wave(unit_grid, rect_mask):
    """Test that q ≡ 0 gives ψ ≡ 0 and u equal to the envelope."""
    q = ScalarField.constant(unit_grid, 0.0)
    p = CGOParams.for_mask(4.0, rect_mask)
    sol = build_cgo(q, rect_mask, p)
    assert np.abs(sol.psi.values).max() == 0.0
    np.testing.assert_allclose(sol.u.values, envelope(unit_grid, p, (0.5, 0.5)))
    assert sol.residual_norm == pytest.approx(0.0, abs=1e-14)
    assert len(sol.trace) == len(rect_mask.boundary_nodes)


def test_direct_solution_residual(unit_grid, disk_mask):
    """Test that the assembled u solves Δu + qu = 0 to solver accuracy."""
    q = _bump(unit_grid)
    sol = build_cgo(q, disk_mask, CGOParams.for_mask(4.0, disk_mask))
    assert sol.residual_norm <= 1e-6
    assert sol.psi_on_grid().shape == unit_grid.shape


def test_born_series_matches_direct(unit_grid, rect_mask):
    """Test that the Born sum agrees with the direct ψ solve for a weak potential."""
    cfg = CGOConfig()
    qp = extend_for_config(_bump(unit_grid, 0.5), rect_mask, cfg)
    p = CGOParams.for_mask(8.0, rect_mask)
    direct = solve_psi(qp, p, cfg.solver)
    born = born_series_psi(qp, p, jmax=60, tol=1e-12)
    assert born.terms >= 2
    assert born.contraction_ratio < 1.0
    np.testing.assert_allclose(born.psi.values, direct.values, atol=1e-8)
    sol = assemble_cgo(qp, p, born.psi)
    assert sol.residual_norm <= 1e-6


def test_psi_decreases_with_frequency(unit_grid, rect_mask):
    """Test that ‖ψ‖∞ roughly halves when |κ| doubles."""
    cfg = CGOConfig()
    qp = extend_for_config(_bump(unit_grid, width=0.2), rect_mask, cfg)
    sup = []
    for kmag in (4.0, 8.0):
        psi = solve_psi(qp, CGOParams.for_mask(kmag, rect_mask), cfg.solver)
        sup.append(np.abs(qp.restrict(psi.values)).max())
    assert 0 < sup[1] < 0.75 * sup[0]


class TestCGOInverse:
    """Tests for the decaying inverse of Δ + 2ρ·∇."""

    @pytest.mark.parametrize(
        "params",
        [
            CGOParams(kappa=(8.0, 0.0), kperp=(0.0, 8.0)),
            CGOParams(kappa=(8.0, 0.0), kperp=(0.0, -8.0)),
            CGOParams(kappa=(-8.0, 0.0), kperp=(0.0, -8.0)),
            CGOParams(kappa=(0.0, 8.0), kperp=(-8.0, 0.0)),
            CGOParams(kappa=(0.0, -8.0), kperp=(8.0, 0.0)),
        ],
    )
    def test_solves_stencil(self, unit_grid, rect_mask, params):
        """Test that the inverse satisfies the centred stencil at every interior node."""
        qp = extend_for_config(_bump(unit_grid), rect_mask, CGOConfig())
        g = qp.grid
        f = qp.q.values.astype(complex)
        psi = cgo_inverse(g, params)(f)
        gx, gy = gradient_values(psi, g.dx, g.dy)
        rx, ry = params.rho
        lhs = laplacian_values(psi, g.dx, g.dy) + 2 * (rx * gx + ry * gy)
        inner = (slice(1, -1), slice(1, -1))
        assert np.abs(lhs[inner] - f[inner]).max() <= 1e-9 * np.abs(f).max()

    def test_conjugate_symmetry(self, unit_grid, rect_mask):
        """Test that ψ for ρ̄ is the conjugate of ψ for ρ when q is real."""
        cfg = CGOConfig()
        qp = extend_for_config(_bump(unit_grid), rect_mask, cfg)
        p = CGOParams.for_mask(4.0, rect_mask)
        psi = solve_psi(qp, p, cfg.solver).values
        psi_bar = solve_psi(qp, p.conjugate(), cfg.solver).values
        np.testing.assert_allclose(psi_bar, np.conj(psi), atol=1e-9 * np.abs(psi).max())

    def test_oblique_kappa_refused(self, unit_grid):
        """Test that κ off the grid axes is refused."""
        with pytest.raises(GeometryError, match="grid axis"):
            cgo_inverse(unit_grid, CGOParams.from_angle(4.0, angle=0.3))

    def test_unresolved_frequency_refused(self, unit_grid):
        """Test that |κ|·h >= 1 is refused."""
        with pytest.raises(GeometryError, match="refine the grid"):
            cgo_inverse(unit_grid, CGOParams.from_angle(40.0))


def test_born_series_diverges_for_strong_potential(unit_grid, rect_mask):
    """Test that a strong potential at low frequency stops the Born sum."""
    qp = extend_for_config(_bump(unit_grid, 5000.0), rect_mask, CGOConfig())
    with pytest.raises(DivergenceError, match="stopped contracting"):
        born_series_psi(qp, CGOParams.for_mask(1.0, rect_mask), jmax=20)


@pytest.mark.slow
class TestFineGridCGO:
    """CGO solves at 129x129 for the sweep frequencies."""

    @pytest.fixture(scope="class")
    def solutions(self):
        grid = GridSpec.unit_square(129)
        mask = DomainMask.rectangle(grid)
        q = _bump(grid)
        return {k: build_cgo(q, mask, CGOParams.for_mask(k, mask)) for k in (8.0, 16.0, 32.0)}

    @pytest.mark.parametrize("kmag", [8.0, 16.0, 32.0])
    def test_residual(self, solutions, kmag):
        """Test that the assembled u solves Δu + qu = 0 at each frequency."""
        assert solutions[kmag].residual_norm <= 1e-6

    def test_decay(self, solutions):
        """Test that ‖ψ‖∞ on the grid falls as |κ| doubles."""
        sup = {k: np.abs(s.psi_on_grid()).max() for k, s in solutions.items()}
        assert 0.3 <= sup[16.0] / sup[8.0] <= 0.8
        assert sup[32.0] < sup[16.0]


class TestPerturbIllumination:
    """Tests for smooth boundary perturbations."""

    def test_zero_eps_is_identity(self, disk_mask):
        """Test that ε = 0 returns an equal copy."""
        trace = np.ones(len(disk_mask.boundary_nodes), dtype=complex)
        out = perturb_illumination(trace, 0.0, disk_mask)
        np.testing.assert_array_equal(out, trace)
        assert out is not trace

    def test_norm_and_seed(self, disk_mask):
        """Test that the perturbation has C1 norm ε and is seeded."""
        trace = np.ones(len(disk_mask.boundary_nodes), dtype=complex)
        a = perturb_illumination(trace, 1e-2, disk_mask, seed=3)
        b = perturb_illumination(trace, 1e-2, disk_mask, seed=3)
        c = perturb_illumination(trace, 1e-2, disk_mask, seed=4)
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)
        assert boundary_c1_norm(a - trace, disk_mask) == pytest.approx(1e-2, rel=1e-9)
