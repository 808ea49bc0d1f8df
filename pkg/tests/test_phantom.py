"""Tests for phantom construction."""

import numpy as np
import pytest

from qpat_py.errors import PhantomSpecError
from qpat_py.grid import GridSpec
from qpat_py.models import GaussianBump, MaskConfig, PhantomSpec, PotentialSpec
from qpat_py.phantom import build_mask, class_norms, make_phantom, make_potential, soft_clip


def test_benchmark_ranges():
    """Test that the benchmark phantom spans D in [1, 1.5] and σ_a in [0.5, 1]."""
    ph = make_phantom(PhantomSpec.benchmark(resolution=65))
    assert 1.45 < ph.D.values.max() <= 1.5
    assert ph.D.values.min() >= 1.0
    assert 0.95 < ph.sigma_a.values.max() <= 1.0
    assert ph.sigma_a.values.min() >= 0.5
    assert ph.mask.shape == "rectangle"
    assert ph.D.grid.nx == 65


class TestSoftClip:
    """Tests for the C¹ clip."""

    def test_identity_inside(self):
        """Test that values away from the bounds are unchanged."""
        v = np.linspace(0.2, 0.8, 7)
        np.testing.assert_array_equal(soft_clip(v, 0.0, 1.0, 0.1), v)

    def test_bounded_and_continuous(self):
        """Test that the result stays inside the bounds and has no jump at the knee."""
        v = np.linspace(-5.0, 5.0, 2001)
        out = soft_clip(v, 0.0, 1.0, 0.1)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.abs(np.diff(out)).max() <= np.abs(np.diff(v)).max() + 1e-12
        assert np.all(np.diff(out) >= 0)

    def test_zero_margin_is_hard_clip(self):
        """Test that a zero margin clips to the bounds."""
        out = soft_clip(np.array([-1.0, 0.5, 2.0]), 0.0, 1.0, 0.0)
        np.testing.assert_array_equal(out, [0.0, 0.5, 1.0])


class TestPhantomErrors:
    """Tests for invalid phantom specifications."""

    def test_overshoot(self):
        """Test that bumps far beyond the bounds are refused."""
        spec = PhantomSpec(
            resolution=33,
            d_bumps=[GaussianBump(center=(0.5, 0.5), width=0.1, amplitude=5.0)],
        )
        with pytest.raises(PhantomSpecError, match="beyond the bounds"):
            make_phantom(spec)

    def test_background_outside_bounds(self):
        """Test that the background must lie within its bounds."""
        with pytest.raises(PhantomSpecError, match="D background"):
            make_phantom(PhantomSpec(resolution=33, d_bg=3.0))
        with pytest.raises(PhantomSpecError, match="σ_a background"):
            make_phantom(PhantomSpec(resolution=33, sigma_bg=0.05))

    def test_small_overshoot_is_clipped(self):
        """Test that an overshoot within the margin is absorbed by the soft clip."""
        spec = PhantomSpec(
            resolution=33,
            d_bumps=[GaussianBump(center=(0.5, 0.5), width=0.1, amplitude=1.05)],
        )
        ph = make_phantom(spec)
        assert ph.D.values.max() < spec.d_max


class TestBuildMask:
    """Tests for mask selection."""

    def test_default_disk(self):
        """Test the centred disk of radius 0.45 of the extent."""
        mask = build_mask(MaskConfig(shape="disk"), GridSpec.unit_square(33))
        assert mask.radius == pytest.approx(0.45)
        assert mask.center == pytest.approx((0.5, 0.5))

    def test_explicit_disk(self):
        """Test a disk with explicit centre and radius."""
        cfg = MaskConfig(shape="disk", radius=0.3, center=(0.45, 0.5))
        mask = build_mask(cfg, GridSpec.unit_square(33))
        assert mask.radius == pytest.approx(0.3)
        assert mask.satisfies_r0

    def test_rectangle(self, unit_grid):
        """Test the full-rectangle mask."""
        mask = build_mask(MaskConfig(), unit_grid)
        assert mask.inside.all()
        assert not mask.satisfies_r0


def test_make_potential():
    """Test the potential phantom used for the ψ decay runs."""
    q, mask = make_potential(PotentialSpec(resolution=33))
    assert q.values.max() == pytest.approx(1.0)
    assert q.values.min() > 0.0
    assert mask.grid == q.grid


def test_class_norms():
    """Test the sup, gradient and Laplacian norms of √D and σ_a."""
    norms = class_norms(make_phantom(PhantomSpec.benchmark(resolution=33)))
    assert set(norms) == {
        f"{name}_{kind}" for name in ("sqrtD", "sigma_a") for kind in ("sup", "grad_sup", "lap_sup")
    }
    assert norms["sqrtD_sup"] == pytest.approx(np.sqrt(1.5), rel=1e-2)
    assert all(v >= 0 for v in norms.values())
