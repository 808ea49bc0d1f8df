"""Read run configurations, PFG fields, pfgb boundary files, manifests and reports."""

import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from qpat_py.cgo import CGOParams
from qpat_py.errors import ConfigurationError, DimensionError
from qpat_py.grid import ComplexField, GridSpec, ScalarField
from qpat_py.internal_data import InternalData
from qpat_py.models import ExperimentReport, RunConfig

logger = logging.getLogger(__name__)

PFG_MAGIC = "pfg"
PFGB_MAGIC = "pfgb"
FORMAT_VERSION = "1"
MANIFEST = "manifest.txt"
DEFAULT_SECTION = "run"


def _require_file(path: Union[str, Path]) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"File not found: {p}")
    return p


# ============================================================================
# Configuration
# ============================================================================


def parse_groups(text: str) -> Dict[str, Dict[str, str]]:
    """Split ``[section]`` / ``key = value`` text into ``{section: {key: value}}``.

    Keys before the first header belong to ``[run]``. ``#`` starts a comment line.

    Raises:
        ConfigurationError: On a line that is neither a header nor ``key = value``
    """
    groups: Dict[str, Dict[str, str]] = {}
    section = DEFAULT_SECTION
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            groups.setdefault(section, {})
            continue
        if "=" not in line:
            logger.error(f"Malformed config line {lineno}: {raw!r}")
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        groups.setdefault(section, {})[key.strip()] = value.strip()
    return groups


def parse_config(source: Union[str, Path]) -> RunConfig:
    """
    Parse a run configuration file into a :class:`RunConfig`.

    Args:
        source: Path to the ``[section]``/``key = value`` file

    Returns:
        Validated RunConfig instance

    Raises:
        FileNotFoundError: If the file doesn't exist
        ConfigurationError: If a line is malformed or a value fails validation
    """
    path = _require_file(source)
    logger.info(f"Parsing run configuration: {path}")
    groups = parse_groups(path.read_text(encoding="utf-8"))
    try:
        config = RunConfig.from_groups_dict(groups)
    except ValueError as e:
        logger.error(f"Invalid configuration in '{path}': {e}")
        raise ConfigurationError(f"{path}: {e}") from e
    logger.info(f"Parsed {len(groups)} sections (config hash {config.config_hash()})")
    return config


def read_manifest(path: Union[str, Path]) -> Dict[str, str]:
    """``key = value`` lines into a dict; ``#`` lines ignored."""
    p = _require_file(path)
    out: Dict[str, str] = {}
    for raw in p.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# ============================================================================
# Fields
# ============================================================================


def read_field(path: Union[str, Path]) -> Union[ScalarField, ComplexField]:
    """
    Read a PFG v1 field.

    The header is ``pfg 1 <r|c> <nx> <ny> <x0> <y0> <dx> <dy>``; values follow in
    row-major order of the ``(nx, ny)`` array, complex values as ``re im`` pairs.

    Raises:
        FileNotFoundError: If the file doesn't exist
        DimensionError: If the header is malformed or the value count is wrong
    """
    p = _require_file(path)
    tokens = p.read_text(encoding="ascii").split()
    if len(tokens) < 9 or tokens[0] != PFG_MAGIC or tokens[1] != FORMAT_VERSION:
        raise DimensionError(f"{p}: not a PFG v1 file")
    kind = tokens[2]
    if kind not in {"r", "c"}:
        raise DimensionError(f"{p}: unknown value kind {kind!r}")
    nx, ny = int(tokens[3]), int(tokens[4])
    x0, y0, dx, dy = (float(t) for t in tokens[5:9])
    grid = GridSpec(nx=nx, ny=ny, x0=x0, y0=y0, dx=dx, dy=dy)
    values = np.array(tokens[9:], dtype=float)
    per_node = 2 if kind == "c" else 1
    if values.size != nx * ny * per_node:
        logger.error(f"{p}: expected {nx * ny * per_node} values, found {values.size}")
        raise DimensionError(f"{p}: expected {nx * ny * per_node} values, found {values.size}")
    if kind == "c":
        pairs = values.reshape(nx * ny, 2)
        return ComplexField(grid=grid, values=(pairs[:, 0] + 1j * pairs[:, 1]).reshape(nx, ny))
    return ScalarField(grid=grid, values=values.reshape(nx, ny))


def read_boundary(path: Union[str, Path]) -> Tuple[np.ndarray, np.ndarray]:
    """Read a pfgb v1 file into ``(s, values)`` with complex values."""
    p = _require_file(path)
    lines = [ln for ln in p.read_text(encoding="ascii").splitlines() if ln.strip()]
    header = lines[0].split() if lines else []
    if len(header) != 3 or header[0] != PFGB_MAGIC or header[1] != FORMAT_VERSION:
        raise DimensionError(f"{p}: not a pfgb v1 file")
    count = int(header[2])
    rows = np.array([ln.split() for ln in lines[1:]], dtype=float).reshape(-1, 3)
    if len(rows) != count:
        raise DimensionError(f"{p}: header announces {count} nodes, found {len(rows)}")
    return rows[:, 0], rows[:, 1] + 1j * rows[:, 2]


def _pair(text: Optional[str]) -> Optional[Tuple[float, float]]:
    if not text:
        return None
    a, b = (float(s) for s in text.split(","))
    return (a, b)


def read_internal_data(directory: Union[str, Path]) -> InternalData:
    """Read ``d_<k>.pfg``, ``g_<k>.pfgb`` and the manifest written by ``write_internal_data``."""
    d = Path(directory)
    manifest = read_manifest(d / MANIFEST)
    count = int(manifest.get("count", "1"))
    data, traces, params = [], [], []
    for k in range(count):
        field = read_field(d / f"d_{k}.pfg")
        if isinstance(field, ScalarField):
            field = ComplexField(grid=field.grid, values=field.values)
        data.append(field)
        traces.append(read_boundary(d / f"g_{k}.pfgb")[1])
        kappa, kperp = _pair(manifest.get(f"kappa_{k}")), _pair(manifest.get(f"kperp_{k}"))
        params.append(CGOParams(kappa=kappa, kperp=kperp) if kappa and kperp else None)
    seed = manifest.get("seed", "")
    logger.info(f"Read {count} internal data from {d}")
    return InternalData(
        data=data,
        illuminations=traces,
        params=params,
        center=_pair(manifest.get("center")),
        provenance=manifest.get("provenance", "clean"),
        noise_level=float(manifest.get("level", "0") or 0),
        seed=int(seed) if seed else None,
    )


# ============================================================================
# Reports
# ============================================================================


def read_report(directory: Union[str, Path]) -> ExperimentReport:
    """Rebuild an experiment report from ``errors.csv`` and ``summary.csv``."""
    d = Path(directory)
    errors = pd.read_csv(_require_file(d / "errors.csv"), keep_default_na=False)
    summary_path = d / "summary.csv"
    summary: Any = None
    if summary_path.exists():
        summary = pd.read_csv(summary_path, keep_default_na=False)
    report = ExperimentReport.from_dataframe(errors, summary)
    logger.info(f"Read report '{report.name}' with {len(report.rows)} rows from {d}")
    return report
