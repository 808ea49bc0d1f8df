"""Tests for the transport coefficients β, γ and the gradient coefficient Γ."""

import numpy as np
import pytest

from qpat_py.cgo import CGOParams, envelope, multi_rho_set
from qpat_py.errors import ConfigurationError, DegeneracyError
from qpat_py.grid import ComplexField, DomainMask, GridSpec, ScalarField, boundary_trace
from qpat_py.internal_data import InternalData, synthesize
from qpat_py.recon_fields import (
    assemble_gamma,
    beta_gamma_multi,
    beta_gamma_two,
    flatness_gap,
    flatness_remainder,
    transport_residual,
)


def _mu(grid, amplitude=0.2):
    return ScalarField.from_function(
        grid, lambda x, y: np.exp(amplitude * np.sin(np.pi * x) * np.cos(np.pi * y))
    )


def _two_data(mask, mu, kmag=2.0):
    """Data μ·e^{ρ·(x - x_c)}, i.e. q ≡ 0."""
    grid = mask.grid
    p = CGOParams.for_mask(kmag, mask)
    center = mask.center_point
    u = ComplexField(grid=grid, values=envelope(grid, p, center))
    return synthesize(mu, u, boundary_trace(u, mask), [p], center)


def _multi_data(mask, mu, kmag=4.0):
    grid = mask.grid
    center = mask.center_point
    items = []
    for p in multi_rho_set(kmag).params:
        u = ComplexField(grid=grid, values=envelope(grid, p, center))
        items.append(synthesize(mu, u, boundary_trace(u, mask), [p], center))
    return InternalData.concat(items)


class TestBetaGammaTwo:
    """Tests for the conjugate-pair coefficients."""

    def test_flat_field_for_constant_mu(self, rect_mask):
        """Test that μ ≡ 1, q ≡ 0 gives β ≈ -κ̂⊥ and γ = 0."""
        data = _two_data(rect_mask, ScalarField.constant(rect_mask.grid, 1.0))
        coeffs = beta_gamma_two(data, rect_mask)
        v = coeffs.valid
        e = -data.params[0].kperp_hat
        np.testing.assert_allclose(coeffs.beta.x[v], e[0], atol=1e-2)
        np.testing.assert_allclose(coeffs.beta.y[v], e[1], atol=1e-2)
        np.testing.assert_allclose(coeffs.gamma.values[v], 0.0, atol=1e-9)
        assert coeffs.flatness_gap < 1e-9
        assert coeffs.beta.x[0, 0] == 0.0

    def test_homogeneous_in_data(self, rect_mask):
        """Test that scaling d by c scales β and γ by c²."""
        mu = _mu(rect_mask.grid)
        data = _two_data(rect_mask, mu)
        tripled = data.data[0].with_values(3 * data.data[0].values)
        scaled = data.model_copy(update={"data": [tripled]})
        a = beta_gamma_two(data, rect_mask)
        b = beta_gamma_two(scaled, rect_mask)
        np.testing.assert_allclose(b.beta.x, 9 * a.beta.x, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(b.gamma.values, 9 * a.gamma.values, rtol=1e-12, atol=1e-12)

    def test_transport_residual_converges(self):
        """Test that β·∇μ + γμ vanishes at second order under refinement."""
        res = []
        for n in (33, 65):
            mask = DomainMask.rectangle(GridSpec.unit_square(n))
            mu = _mu(mask.grid)
            coeffs = beta_gamma_two(_two_data(mask, mu), mask)
            res.append(transport_residual(coeffs, mu))
        assert res[1] < res[0] / 2.5

    def test_needs_frequency(self, unit_grid, rect_mask):
        """Test that data without a frequency are refused."""
        d = ComplexField.constant(unit_grid, 1.0)
        data = InternalData(data=[d], illuminations=[np.ones(len(rect_mask.boundary_nodes))])
        with pytest.raises(ConfigurationError, match="frequency"):
            beta_gamma_two(data, rect_mask)

    def test_centre_mismatch(self, rect_mask):
        """Test that data centred elsewhere are refused."""
        data = _two_data(rect_mask, ScalarField.constant(rect_mask.grid, 1.0))
        moved = data.model_copy(update={"center": (0.3, 0.5)})
        with pytest.raises(ConfigurationError, match="centre"):
            beta_gamma_two(moved, rect_mask)

    def test_scaled_coefficients(self, rect_mask):
        """Test that scaled() multiplies both coefficients."""
        coeffs = beta_gamma_two(_two_data(rect_mask, _mu(rect_mask.grid)), rect_mask)
        s = coeffs.scaled(-2.0)
        np.testing.assert_allclose(s.beta.y, -2.0 * coeffs.beta.y)
        np.testing.assert_allclose(s.gamma.values, -2.0 * coeffs.gamma.values)


class TestGradientRoute:
    """Tests for β_j, γ_j and the pointwise Γ solve."""

    def test_constant_mu_aligned_fields(self, rect_mask):
        """Test that μ ≡ 1 gives β_1 ≈ -κ̂_1, β_2 ≈ -κ̂_2 and Γ = 0."""
        data = _multi_data(rect_mask, ScalarField.constant(rect_mask.grid, 1.0))
        c1, c2 = beta_gamma_multi(data, rect_mask)
        v = c1.valid
        np.testing.assert_allclose(c1.beta.x[v], -1.0, atol=1e-2)
        np.testing.assert_allclose(c1.beta.y[v], 0.0, atol=1e-9)
        np.testing.assert_allclose(c2.beta.y[v], -1.0, atol=1e-2)
        gamma = assemble_gamma([c1, c2])
        assert gamma.condition_max == pytest.approx(1.0, abs=0.1)
        np.testing.assert_allclose(gamma.gamma.x[v], 0.0, atol=1e-9)
        assert gamma.curl_residual < 1e-9

    def test_gamma_is_log_gradient(self):
        """Test that Γ approximates -∇log μ for q ≡ 0 data."""
        mask = DomainMask.rectangle(GridSpec.unit_square(65))
        mu = _mu(mask.grid)
        gamma = assemble_gamma(beta_gamma_multi(_multi_data(mask, mu), mask))
        X, Y = mask.grid.coords()
        a = 0.2
        gx = -a * np.pi * np.cos(np.pi * X) * np.cos(np.pi * Y)
        gy = a * np.pi * np.sin(np.pi * X) * np.sin(np.pi * Y)
        v = gamma.valid
        assert np.abs(gamma.gamma.x - gx)[v].max() < 1e-2
        assert np.abs(gamma.gamma.y - gy)[v].max() < 1e-2

    def test_wrong_count(self, rect_mask):
        """Test that the gradient route needs two data."""
        data = _two_data(rect_mask, ScalarField.constant(rect_mask.grid, 1.0))
        with pytest.raises(ConfigurationError, match="exactly two data"):
            beta_gamma_multi(data, rect_mask)

    def test_unpaired_frequencies(self, rect_mask):
        """Test that ρ_1 ≠ -ρ_2 is refused."""
        a = _two_data(rect_mask, ScalarField.constant(rect_mask.grid, 1.0), 2.0)
        b = _two_data(rect_mask, ScalarField.constant(rect_mask.grid, 1.0), 3.0)
        with pytest.raises(ConfigurationError, match="ρ_1 = -ρ_2"):
            beta_gamma_multi(InternalData.concat([a, b]), rect_mask)

    def test_degenerate_basis(self, rect_mask):
        """Test that parallel β_1, β_2 raise a degeneracy error."""
        coeffs = beta_gamma_two(_two_data(rect_mask, _mu(rect_mask.grid)), rect_mask)
        with pytest.raises(DegeneracyError, match="basis"):
            assemble_gamma([coeffs, coeffs])


def test_flatness_gap_against_reference(rect_mask):
    """Test the gap to a reference field and the transverse gap."""
    coeffs = beta_gamma_two(_two_data(rect_mask, _mu(rect_mask.grid)), rect_mask)
    assert flatness_gap(coeffs, reference=coeffs.beta) == 0.0
    assert flatness_gap(coeffs) == pytest.approx(coeffs.flatness_gap)


def test_flatness_remainder_vanishes_without_psi(unit_grid):
    """Test that ψ ≡ 0 gives a zero remainder."""
    zero = ComplexField.constant(unit_grid, 0.0)
    h = flatness_remainder(zero, zero, CGOParams.from_angle(5.0))
    assert np.abs(h.magnitude).max() == 0.0
