"""Tests for the reconstruction chain and both routes."""

import numpy as np
import pytest

from qpat_py.elliptic import solve_schrodinger
from qpat_py.errors import (
    ConfigurationError,
    DomainError,
    ModelViolationError,
    StageError,
    VanishingSolutionError,
)
from qpat_py.experiments import (
    manufactured_gamma,
    reconstruct,
    reconstruction_errors,
    synthesize_case,
)
from qpat_py.grid import (
    ComplexField,
    DomainMask,
    GridSpec,
    ScalarField,
    boundary_trace,
    laplacian_values,
    relative_sup_error,
)
from qpat_py.pipeline import (
    anchor_node,
    liouville_forward,
    mu_from_gamma_path,
    mu_from_gamma_poisson,
    recover_q,
    recover_sigma,
    recover_sqrtD,
    recover_u,
    run_two_data,
    stage,
)


def _with_resolution(cfg, n):
    return cfg.model_copy(
        update={"phantom": cfg.phantom.model_copy(update={"resolution": n})}
    )


def test_liouville_forward_constants(unit_grid):
    """Test q = -σ_a/D and μ = σ_a/√D for constant coefficients."""
    D = ScalarField.constant(unit_grid, 1.0)
    sigma = ScalarField.constant(unit_grid, 0.5)
    out = liouville_forward(D, sigma)
    np.testing.assert_allclose(out.q.values, -0.5, atol=1e-12)
    np.testing.assert_allclose(out.mu.values, 0.5)
    np.testing.assert_allclose(out.sqrtD.values, 1.0)


def test_recover_u_divides(unit_grid):
    """Test u = d/μ and the positivity check on μ."""
    from qpat_py.internal_data import InternalData

    d = ComplexField.constant(unit_grid, 2.0 + 2.0j)
    data = InternalData(data=[d], illuminations=[np.ones(4)])
    u = recover_u(data, ScalarField.constant(unit_grid, 2.0))
    np.testing.assert_allclose(u[0].values, 1.0 + 1.0j)
    with pytest.raises(DomainError, match="μ must be positive"):
        recover_u(data, ScalarField.constant(unit_grid, 0.0))


class TestRecoverQ:
    """Tests for q from Δu + qu = 0."""

    @pytest.fixture
    def schrodinger_case(self, unit_grid, rect_mask):
        q = ScalarField.from_function(
            unit_grid, lambda x, y: -1.0 - 0.5 * np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.02)
        )
        g = rect_mask.boundary_values(lambda x, y: (1 + 0.5 * x + 0.25 * y) + 0j)
        return q, solve_schrodinger(q, g, rect_mask)

    @pytest.mark.parametrize("mode", ["least-squares", "real-part"])
    def test_exact_on_discrete_solution(self, schrodinger_case, rect_mask, mode):
        """Test that the discrete solution returns its own potential on the interior."""
        q, u = schrodinger_case
        got = recover_q(u, rect_mask, mode=mode)
        where = rect_mask.interior
        np.testing.assert_allclose(got.values[where], q.values[where], atol=1e-6)

    def test_vanishing_solution(self, unit_grid, rect_mask):
        """Test that a zero of u inside X is reported."""
        u = ComplexField.from_function(unit_grid, lambda x, y: (x - 0.5) + 0j)
        with pytest.raises(VanishingSolutionError, match="vanishes"):
            recover_q(u, rect_mask)


class TestRecoverSqrtD:
    """Tests for the shifted solve -Δ√D - q√D = μ."""

    def test_manufactured(self, unit_grid, rect_mask):
        """Test that μ built from a discrete √D returns that √D."""
        X, Y = unit_grid.coords()
        s = 1 + 0.2 * X * Y + 0.1 * np.sin(np.pi * X)
        q = ScalarField.from_function(unit_grid, lambda x, y: -0.5 - 0.2 * y)
        lap = laplacian_values(s, unit_grid.dx, unit_grid.dy)
        mu = ScalarField(grid=unit_grid, values=-lap - q.values * s)
        bc = rect_mask.boundary_values(lambda x, y: 1 + 0.2 * x * y + 0.1 * np.sin(np.pi * x))
        got = recover_sqrtD(q, mu, bc, rect_mask)
        np.testing.assert_allclose(got.values, s, atol=1e-9)

    def test_non_positive_solution(self, unit_grid, rect_mask):
        """Test that a negative √D is reported as a model violation."""
        q = ScalarField.constant(unit_grid, 0.0)
        mu = ScalarField.constant(unit_grid, -1000.0)
        bc = np.ones(len(rect_mask.boundary_nodes))
        with pytest.raises(ModelViolationError, match="not positive"):
            recover_sqrtD(q, mu, bc, rect_mask)

    def test_non_positive_boundary(self, unit_grid, rect_mask):
        """Test that boundary values of √D must be positive."""
        q = ScalarField.constant(unit_grid, 0.0)
        bc = np.zeros(len(rect_mask.boundary_nodes))
        with pytest.raises(DomainError, match="√D"):
            recover_sqrtD(q, q, bc, rect_mask)


def test_recover_sigma(unit_grid):
    """Test σ_a = μ√D."""
    mu = ScalarField.constant(unit_grid, 0.5)
    s = ScalarField.constant(unit_grid, 2.0)
    np.testing.assert_allclose(recover_sigma(mu, s).values, 1.0)
    with pytest.raises(DomainError, match="positive"):
        recover_sigma(mu, s.with_values(np.zeros(unit_grid.shape)))


class TestStage:
    """Tests for stage tagging."""

    def test_wraps_library_errors(self):
        """Test that a library error becomes a StageError naming the stage."""
        with pytest.raises(StageError, match=r"\[q\]") as info:
            with stage("q"):
                raise DomainError("bad")
        assert info.value.stage == "q"
        assert isinstance(info.value.cause, DomainError)
        assert not info.value.is_configuration

    def test_configuration_cause(self):
        """Test that configuration causes are flagged."""
        with pytest.raises(StageError) as info:
            with stage("fields"):
                raise ConfigurationError("no frequency")
        assert info.value.is_configuration

    def test_other_errors_pass_through(self):
        """Test that non-library errors are not wrapped."""
        with pytest.raises(KeyError):
            with stage("q"):
                raise KeyError("x")


class TestMuFromGamma:
    """Tests for μ from ∇μ + Γμ = 0."""

    def test_anchor_is_bottom_centre(self):
        """Test that the anchor is the bottom boundary node nearest the centre line."""
        mask = DomainMask.rectangle(GridSpec.unit_square(9))
        k = anchor_node(mask)
        assert tuple(mask.boundary_nodes[k]) == (4, 0)

    def test_poisson_mode(self, rect_mask):
        """Test the log-Poisson solve on a manufactured Γ."""
        gamma, mu_star = manufactured_gamma(rect_mask)
        mu0 = boundary_trace(mu_star, rect_mask)
        mu = mu_from_gamma_poisson(gamma, mu0, rect_mask)
        assert relative_sup_error(mu.values, mu_star.values, rect_mask.inside) < 2e-3

    def test_path_mode(self, rect_mask):
        """Test path integration on a manufactured Γ."""
        gamma, mu_star = manufactured_gamma(rect_mask)
        mu0 = boundary_trace(mu_star, rect_mask)
        mu = mu_from_gamma_path(gamma, mu0, rect_mask)
        assert relative_sup_error(mu.values, mu_star.values, rect_mask.inside) < 5e-3

    def test_poisson_converges(self):
        """Test second-order convergence of the log-Poisson solve."""
        errs = []
        for n in (33, 65):
            mask = DomainMask.rectangle(GridSpec.unit_square(n))
            gamma, mu_star = manufactured_gamma(mask)
            mu = mu_from_gamma_poisson(gamma, boundary_trace(mu_star, mask), mask)
            errs.append(relative_sup_error(mu.values, mu_star.values, mask.inside))
        assert errs[0] / errs[1] > 3.0

    def test_rejects_non_positive_boundary(self, rect_mask):
        """Test that μ₀ must be positive."""
        gamma, _ = manufactured_gamma(rect_mask)
        mu0 = np.zeros(len(rect_mask.boundary_nodes))
        with pytest.raises(DomainError, match="positive"):
            mu_from_gamma_poisson(gamma, mu0, rect_mask)
        with pytest.raises(DomainError, match="positive"):
            mu_from_gamma_path(gamma, mu0, rect_mask)


class TestRoutes:
    """End-to-end runs on synthetic diffusion data."""

    def test_two_data_round_trip(self, small_config):
        """Test the two-data route on the benchmark phantom at 65x65."""
        cfg = _with_resolution(small_config, 65)
        case = synthesize_case(cfg, "two-data", kmag=4.0)
        result = reconstruct(case, cfg)
        assert result.route == "two-data"
        assert result.diagnostics.paths == int(case.mask.interior.sum())
        np.testing.assert_allclose(result.D.values, result.sqrtD.values**2)
        np.testing.assert_allclose(result.sigma_a.values, result.mu.values * result.sqrtD.values)
        errs = reconstruction_errors(result, case)
        assert errs["mu"][0] < 0.05
        assert errs["D"][0] < 0.1

    def test_multi_data_round_trip(self, small_config):
        """Test the gradient route on the benchmark phantom at 65x65."""
        cfg = _with_resolution(small_config, 65)
        case = synthesize_case(cfg, "multi-data", kmag=4.0)
        result = reconstruct(case, cfg, route="multi-data")
        assert result.route == "multi-data"
        assert result.diagnostics.condition_max is not None
        errs = reconstruction_errors(result, case)
        assert errs["mu"][0] < 0.05

    def test_stage_error_on_bad_centre(self, small_config):
        """Test that a configuration problem surfaces as a tagged StageError."""
        case = synthesize_case(small_config, "two-data")
        moved = case.data.model_copy(update={"center": (0.3, 0.5)})
        sqrtD_b = boundary_trace(case.truth.sqrtD, case.mask)
        with pytest.raises(StageError) as info:
            run_two_data(moved, sqrtD_b, case.mask)
        assert info.value.stage == "fields"
        assert info.value.is_configuration

    def test_diagnostics_table(self, small_config):
        """Test that recorded diagnostics flatten to a key/value table."""
        cfg = _with_resolution(small_config, 65)
        case = synthesize_case(cfg, "two-data", kmag=4.0)
        result = reconstruct(case, cfg)
        df = result.diagnostics.to_dataframe()
        assert list(df.columns) == ["key", "value"]
        assert {"flatness_gap", "h_ode", "paths", "runtime_s"} <= set(df["key"])
        assert set(result.fields()) == {"mu", "q", "sqrtD", "D", "sigma_a"}

    @pytest.mark.slow
    def test_two_data_fine_grid(self, small_config):
        """Test the two-data μ and D errors at 129x129."""
        cfg = _with_resolution(small_config, 129)
        case = synthesize_case(cfg, "two-data", kmag=4.0)
        errs = reconstruction_errors(reconstruct(case, cfg), case)
        assert errs["mu"][0] < 0.02
        assert errs["D"][0] < 0.03
