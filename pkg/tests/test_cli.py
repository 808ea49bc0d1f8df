"""Tests for the command-line interface."""

import pandas as pd
import pytest

typer = pytest.importorskip("typer")
from typer.testing import CliRunner  # noqa: E402

from qpat_py import __version__  # noqa: E402
from qpat_py.cli import EXIT_ACCEPTANCE, EXIT_CONFIG, apply_overrides, app  # noqa: E402
from qpat_py.errors import ConfigurationError  # noqa: E402
from qpat_py.models import ExperimentReport, RunConfig  # noqa: E402
from qpat_py.parser import read_field, read_internal_data, read_manifest  # noqa: E402
from qpat_py.writer import write_report  # noqa: E402

runner = CliRunner()


def _report(tmp_path, name, ok):
    rep = ExperimentReport(name=name, config_hash="h")
    rep.add("mu", 0.01, resolution=65)
    rep.acceptance["mu_ok"] = ok
    return write_report(rep, tmp_path / name)


def test_version():
    """Test that --version prints the package version."""
    result = runner.invoke(app, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.stdout


def test_apply_overrides():
    """Test that command-line flags override the configuration."""
    cfg = apply_overrides(RunConfig(), seed=3, resolution=33, kmag=4.0, mask="disk:0.4")
    assert cfg.seed == 3
    assert cfg.phantom.resolution == 33 and cfg.potential.resolution == 33
    assert cfg.cgo.kmag == 4.0
    assert cfg.phantom.mask.radius == pytest.approx(0.4)

    with pytest.raises(ConfigurationError, match="mask must be"):
        apply_overrides(RunConfig(), mask="blob")


def test_phantom_command(tmp_path):
    """Test that the phantom command writes the fields and a manifest."""
    out = tmp_path / "ph"
    result = runner.invoke(app, ["-o", str(out), "-n", "17", "phantom"])
    assert result.exit_code == 0, result.stdout
    for name in ("D", "sigma_a", "q", "mu"):
        assert read_field(out / f"{name}.pfg").grid.nx == 17
    manifest = read_manifest(out / "manifest.txt")
    assert manifest["mask"] == "rect"
    assert "sqrtD_sup" in manifest
    assert (out / "config.txt").exists()


def test_bad_mask_exits_with_config_code(tmp_path):
    """Test that an invalid mask is a configuration error."""
    result = runner.invoke(app, ["-o", str(tmp_path), "--mask", "blob", "phantom"])
    assert result.exit_code == EXIT_CONFIG


def test_config_file(tmp_path):
    """Test that a configuration file is read and echoed to the output."""
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text("[phantom]\nresolution = 17\n[mask]\nshape = disk\n")
    out = tmp_path / "ph"
    result = runner.invoke(app, ["-c", str(cfg_path), "-o", str(out), "phantom"])
    assert result.exit_code == 0, result.stdout
    assert read_manifest(out / "manifest.txt")["r0"] == "True"


def test_synthesize_command(tmp_path):
    """Test that synthesized data land in a readable data directory."""
    out = tmp_path / "syn"
    result = runner.invoke(app, ["-o", str(out), "-n", "17", "-k", "4", "synthesize"])
    assert result.exit_code == 0, result.stdout
    data = read_internal_data(out / "data")
    assert len(data) == 1
    assert data.provenance == "clean"
    assert data.grid.nx == 17


class TestReportCommand:
    """Tests for report summaries and exit codes."""

    def test_no_reports(self, tmp_path):
        """Test that a call without reports is a usage error."""
        result = runner.invoke(app, ["-o", str(tmp_path), "report"])
        assert result.exit_code == EXIT_CONFIG

    def test_passing_report(self, tmp_path):
        """Test exit code 0 when every acceptance flag holds."""
        d = _report(tmp_path, "good", True)
        result = runner.invoke(app, ["-o", str(tmp_path), "report", str(d)])
        assert result.exit_code == 0
        assert "pass" in result.stdout

    def test_failing_report(self, tmp_path):
        """Test exit code 4 when an acceptance flag fails."""
        good = _report(tmp_path, "good", True)
        bad = _report(tmp_path, "bad", False)
        result = runner.invoke(app, ["-o", str(tmp_path), "report", str(good), str(bad)])
        assert result.exit_code == EXIT_ACCEPTANCE
        assert "bad" in result.stdout

    def test_unknown_experiment(self, tmp_path):
        """Test that an unknown experiment name is a configuration error."""
        result = runner.invoke(app, ["-o", str(tmp_path), "report", "--run", "nope"])
        assert result.exit_code == EXIT_CONFIG


@pytest.mark.slow
def test_recon_two_command(tmp_path):
    """Test the two-data reconstruction command end to end."""
    out = tmp_path / "rec"
    result = runner.invoke(app, ["-o", str(out), "-n", "65", "-k", "4", "recon-two"])
    assert result.exit_code == 0, result.stdout
    manifest = read_manifest(out / "recon" / "manifest.txt")
    assert manifest["route"] == "two-data"
    assert float(manifest["mu_sup_error"]) < 0.05


def test_recon_two_dumps_paths(tmp_path):
    """Test that --dump-paths writes the traced characteristics next to the result."""
    out = tmp_path / "rec"
    result = runner.invoke(
        app, ["-o", str(out), "-n", "33", "-k", "4", "recon-two", "--dump-paths"]
    )
    assert result.exit_code == 0, result.stdout
    paths = pd.read_csv(out / "recon" / "paths.csv")
    assert list(paths.columns) == ["node_i", "node_j", "t", "x", "y", "gamma_sample"]
    assert paths.groupby(["node_i", "node_j"]).ngroups == 31 * 31
    assert (paths["t"] >= 0).all()
