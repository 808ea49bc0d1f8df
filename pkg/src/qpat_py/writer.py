"""Write PFG fields, pfgb boundary files, manifests, CSV tables and result directories."""

import logging
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import pandas as pd

from qpat_py.grid import ComplexField, DomainMask, ScalarField
from qpat_py.internal_data import InternalData
from qpat_py.models import ExperimentReport, RunConfig
from qpat_py.parser import FORMAT_VERSION, MANIFEST, PFG_MAGIC, PFGB_MAGIC
from qpat_py.pipeline import ReconResult
from qpat_py.transport import CharacteristicSweep

logger = logging.getLogger(__name__)

NUMBER_FORMAT = "%.17g"


def _g(x: float) -> str:
    return NUMBER_FORMAT % x


def _prepare(path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def write_field(field: Union[ScalarField, ComplexField], path: Union[str, Path]) -> Path:
    """Write a PFG v1 file; one row of the ``(nx, ny)`` array per line."""
    p = _prepare(path)
    g = field.grid
    is_complex = isinstance(field, ComplexField)
    header = " ".join(
        [PFG_MAGIC, FORMAT_VERSION, "c" if is_complex else "r", str(g.nx), str(g.ny)]
        + [_g(v) for v in (g.x0, g.y0, g.dx, g.dy)]
    )
    with p.open("w", encoding="ascii") as fh:
        fh.write(header + "\n")
        for row in field.values:
            if is_complex:
                flat = np.column_stack([row.real, row.imag]).ravel()
            else:
                flat = row
            fh.write(" ".join(_g(v) for v in flat) + "\n")
    logger.debug(f"Wrote {g.nx}x{g.ny} field to {p}")
    return p


def write_boundary(values: np.ndarray, s: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a pfgb v1 file: ``s value_re value_im`` per boundary node."""
    p = _prepare(path)
    v = np.asarray(values, dtype=complex)
    lines = [f"{PFGB_MAGIC} {FORMAT_VERSION} {len(v)}"]
    lines += [f"{_g(si)} {_g(vi.real)} {_g(vi.imag)}" for si, vi in zip(s, v)]
    p.write_text("\n".join(lines) + "\n", encoding="ascii")
    return p


def write_manifest(
    items: Mapping[str, Any], path: Union[str, Path], comment: Optional[str] = None
) -> Path:
    """Write ``key = value`` lines, with an optional leading ``#`` comment."""
    p = _prepare(path)
    lines = [f"# {comment}"] if comment else []
    for key, value in items.items():
        if isinstance(value, float):
            value = _g(value)
        elif isinstance(value, (tuple, list)):
            value = ", ".join(_g(v) if isinstance(v, float) else str(v) for v in value)
        elif value is None:
            value = ""
        lines.append(f"{key} = {value}")
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return p


def write_csv(df: pd.DataFrame, path: Union[str, Path]) -> Path:
    p = _prepare(path)
    df.to_csv(p, index=False, float_format=NUMBER_FORMAT)
    return p


def write_config(config: RunConfig, path: Union[str, Path]) -> Path:
    """Write a run configuration as ``[section]`` blocks readable by ``parse_config``."""
    p = _prepare(path)
    lines = [f"# config hash {config.config_hash()}"]
    for section, items in config.to_groups_dict().items():
        if not items:
            continue
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in items.items()]
        lines.append("")
    p.write_text("\n".join(lines), encoding="utf-8")
    return p


# ============================================================================
# Directories
# ============================================================================


def write_internal_data(data: InternalData, mask: DomainMask, directory: Union[str, Path]) -> Path:
    """Write ``d_<k>.pfg``, ``g_<k>.pfgb`` per datum and a manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    s = mask.arclength()
    manifest: Dict[str, Any] = {
        "count": len(data),
        "center": data.center,
        "provenance": data.provenance,
        "seed": data.seed,
        "level": data.noise_level,
    }
    for k, (field, g) in enumerate(zip(data.data, data.illuminations)):
        write_field(field, d / f"d_{k}.pfg")
        write_boundary(g, s, d / f"g_{k}.pfgb")
        p = data.params[k] if data.params else None
        if p is not None:
            manifest[f"kappa_{k}"] = p.kappa
            manifest[f"kperp_{k}"] = p.kperp
    write_manifest(manifest, d / MANIFEST, comment="internal data")
    logger.info(f"Wrote {len(data)} internal data to {d}")
    return d


def write_recon_result(
    result: ReconResult, directory: Union[str, Path], extra: Optional[Mapping[str, Any]] = None
) -> Path:
    """Write one PFG per quantity, ``manifest.txt`` and ``diagnostics.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, field in result.fields().items():
        write_field(field, d / f"{name}.pfg")
    manifest: Dict[str, Any] = {"route": result.route, "warnings": len(result.warnings)}
    manifest.update(extra or {})
    write_manifest(manifest, d / MANIFEST, comment="reconstruction")
    write_csv(result.diagnostics.to_dataframe(), d / "diagnostics.csv")
    if result.warnings:
        (d / "warnings.txt").write_text("\n".join(result.warnings) + "\n", encoding="utf-8")
    logger.info(f"Wrote reconstruction to {d}")
    return d


def write_report(report: ExperimentReport, directory: Union[str, Path]) -> Path:
    """Write ``errors.csv`` and ``summary.csv`` (plus ``notes.txt`` when present)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_csv(report.to_dataframe(), d / "errors.csv")
    write_csv(report.summary_dataframe(), d / "summary.csv")
    if report.notes:
        (d / "notes.txt").write_text("\n".join(report.notes) + "\n", encoding="utf-8")
    logger.info(f"Wrote report '{report.name}' ({len(report.rows)} rows) to {d}")
    return d


def write_path_dump(sweep: CharacteristicSweep, path: Union[str, Path]) -> Path:
    """Write the recorded characteristic history (``node_i, node_j, t, x, y, gamma_sample``).

    Raises:
        ValueError: If the sweep was traced without recording
    """
    if sweep.history is None:
        raise ValueError("sweep has no recorded history; trace with record=True")
    return write_csv(sweep.history, path)
