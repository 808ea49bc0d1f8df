"""Tests for Pydantic models."""

import pytest

from qpat_py.models import (
    ExperimentReport,
    GaussianBump,
    MaskConfig,
    PhantomSpec,
    RunConfig,
    SweepConfig,
    TransportConfig,
)


def test_mask_config_parse():
    """Test the CLI mask forms."""
    assert MaskConfig.parse("rect").shape == "rectangle"
    assert MaskConfig.parse(" Rectangle ").shape == "rectangle"

    disk = MaskConfig.parse("disk:0.4")
    assert disk.shape == "disk"
    assert disk.radius == pytest.approx(0.4)
    assert disk.label == "disk:0.4"

    with pytest.raises(ValueError, match="mask must be"):
        MaskConfig.parse("blob")


def test_phantom_bumps_from_string():
    """Test that bumps given as 'cx cy width amplitude' strings are parsed."""
    spec = PhantomSpec(d_bumps="0.5 0.5 0.1 0.3; 0.2, 0.7, 0.05, -0.1")
    assert len(spec.d_bumps) == 2
    assert spec.d_bumps[0] == GaussianBump(center=(0.5, 0.5), width=0.1, amplitude=0.3)
    assert spec.d_bumps[1].amplitude == pytest.approx(-0.1)

    # Wrong number of numbers
    with pytest.raises(ValueError, match="bump needs"):
        PhantomSpec(sigma_bumps="0.5 0.5 0.1")


def test_phantom_bounds_validation():
    """Test that upper bounds must exceed lower bounds."""
    with pytest.raises(ValueError, match="d_max must exceed d_min"):
        PhantomSpec(d_min=1.0, d_max=1.0)
    with pytest.raises(ValueError, match="s_max must exceed s_min"):
        PhantomSpec(s_min=0.5, s_max=0.2)


def test_benchmark_phantom():
    """Test the benchmark phantom parameters."""
    spec = PhantomSpec.benchmark(resolution=65, mask=MaskConfig(shape="disk"))
    assert spec.resolution == 65
    assert spec.mask.shape == "disk"
    assert len(spec.d_bumps) == 1 and len(spec.sigma_bumps) == 1


def test_empty_strings_mean_unset():
    """Test that empty config values become None or empty lists."""
    cfg = TransportConfig(h_ode="", t_max="")
    assert cfg.h_ode is None and cfg.t_max is None
    assert MaskConfig(radius="", center="").center is None
    assert SweepConfig(kmags="").kmags == []


def test_sweep_lists_from_strings():
    """Test comma-separated sweep lists."""
    sweep = SweepConfig(resolutions="33, 65", levels="1e-4, 3e-4")
    assert sweep.resolutions == [33, 65]
    assert sweep.levels == [1e-4, 3e-4]


def test_run_config_from_groups_dict():
    """Test building a run configuration from parsed sections."""
    groups = {
        "run": {"route": "multi-data", "seed": "3"},
        "phantom": {"resolution": "65", "d_bumps": "0.5 0.5 0.1 0.3"},
        "mask": {"shape": "disk", "radius": "0.4"},
        "cgo": {"kmag": "4"},
        "transport": {"step_factor": "0.25"},
        "sweep": {"resolutions": "33, 65"},
    }
    cfg = RunConfig.from_groups_dict(groups)
    assert cfg.route == "multi-data"
    assert cfg.seed == 3
    assert cfg.phantom.resolution == 65
    assert cfg.phantom.mask.radius == pytest.approx(0.4)
    assert cfg.cgo.kmag == 4.0
    assert cfg.recon.transport.step_factor == 0.25
    assert cfg.sweep.resolutions == [33, 65]


def test_run_config_unknown_section():
    """Test that unknown sections are refused."""
    with pytest.raises(ValueError, match=r"Unknown config section \[output\]"):
        RunConfig.from_groups_dict({"output": {"dir": "x"}})


def test_run_config_groups_round_trip():
    """Test that to_groups_dict and from_groups_dict are inverse."""
    original = RunConfig.from_groups_dict(
        {
            "run": {"seed": "7"},
            "mask": {"shape": "disk", "radius": "0.42", "center": "0.5, 0.5"},
            "noise": {"level": "1e-3"},
        }
    )
    groups = original.to_groups_dict()

    # Flat values only
    assert all(not isinstance(v, dict) for items in groups.values() for v in items.values())
    assert groups["mask"]["center"] == "0.5, 0.5"

    restored = RunConfig.from_groups_dict(groups)
    assert restored == original
    assert restored.config_hash() == original.config_hash()


def test_config_hash():
    """Test that the hash is stable and sensitive to changes."""
    a = RunConfig()
    assert a.config_hash() == RunConfig().config_hash()
    assert len(a.config_hash()) == 12
    assert a.config_hash() != RunConfig(seed=1).config_hash()


def test_experiment_report_rows():
    """Test that rows carry the report name, hash and seed."""
    report = ExperimentReport(name="roundtrip", config_hash="abc", seed=4)
    report.add("mu", 0.01, norm="sup", resolution=65, kmag=8.0)
    report.add("mu", 0.02, norm="c1", resolution=65, kmag=8.0, seed=9)

    df = report.to_dataframe()
    assert len(df) == 2
    assert set(df["experiment"]) == {"roundtrip"}
    assert list(df["seed"]) == [4, 9]
    assert report.passed

    report.acceptance["mu_ok"] = False
    assert not report.passed


def test_experiment_report_dataframe_round_trip():
    """Test rebuilding a report from its error and summary tables."""
    report = ExperimentReport(name="psi_decay", config_hash="abc", r0=True, platform="test")
    report.add("psi", 0.5, kmag=8.0, label="direct")
    report.fits["slope_psi"] = -1.0
    report.acceptance["residual_k8"] = True
    report.runtime_s = 1.5

    restored = ExperimentReport.from_dataframe(
        report.to_dataframe(), report.summary_dataframe()
    )
    assert restored.name == "psi_decay"
    assert restored.rows == report.rows
    assert restored.fits == {"slope_psi": -1.0}
    assert restored.acceptance == {"residual_k8": True}
    assert restored.r0 is True
    assert restored.runtime_s == 1.5
    assert restored.platform == "test"


def test_experiment_report_from_empty_dataframe():
    """Test that an empty table gives an empty report."""
    empty = ExperimentReport(name="x", config_hash="").to_dataframe()
    restored = ExperimentReport.from_dataframe(empty)
    assert restored.name == "unknown"
    assert restored.rows == []
