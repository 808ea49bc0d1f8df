"""Pydantic models for run configuration and experiment reports."""

from __future__ import annotations

import hashlib
import json
from typing import TYPE_CHECKING, Annotated, Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator

if TYPE_CHECKING:
    import pandas as pd


# ============================================================================
# Reusable Validators
# ============================================================================


def _split_items(v: Any, sep: str = ",") -> List[str]:
    return [s.strip() for s in str(v).split(sep) if s.strip()]


def _coerce_float_list(v: Any) -> List[float]:
    """Accept ``"1e-4, 3e-4"`` strings as well as sequences."""
    if v is None or v == "":
        return []
    if isinstance(v, str):
        return [float(s) for s in _split_items(v)]
    return [float(x) for x in v]


def _coerce_int_list(v: Any) -> List[int]:
    if v is None or v == "":
        return []
    if isinstance(v, str):
        return [int(s) for s in _split_items(v)]
    return [int(x) for x in v]


def _coerce_bumps(v: Any) -> Any:
    """Parse ``"cx cy width amp; ..."`` into bump dictionaries."""
    if v is None or v == "":
        return []
    if isinstance(v, str):
        bumps = []
        for item in _split_items(v, ";"):
            parts = [float(p) for p in item.replace(",", " ").split()]
            if len(parts) != 4:
                raise ValueError(f"bump needs 'cx cy width amplitude', got {item!r}")
            bumps.append(
                {"center": (parts[0], parts[1]), "width": parts[2], "amplitude": parts[3]}
            )
        return bumps
    return v


def _coerce_float_tuple(v: Any) -> Any:
    """Accept ``"0, 1, 0, 1"`` strings for coordinate tuples; empty means unset."""
    if v is None or v == "":
        return None
    if isinstance(v, str):
        return tuple(float(s) for s in _split_items(v))
    return v


def _empty_to_none(v: Any) -> Any:
    return None if v == "" else v


def _coerce_bool(v: Any) -> Any:
    if isinstance(v, str):
        return v.strip().lower() in {"1", "true", "yes", "on"}
    return v


# ============================================================================
# Annotated Types for Common Patterns
# ============================================================================

FloatList = Annotated[List[float], BeforeValidator(_coerce_float_list)]
IntList = Annotated[List[int], BeforeValidator(_coerce_int_list)]
FloatTuple = BeforeValidator(_coerce_float_tuple)
OptionalNumber = BeforeValidator(_empty_to_none)


# ============================================================================
# Solver and stage configuration
# ============================================================================


class LinearSolveConfig(BaseModel):
    """Sparse linear solve settings."""

    method: Literal["auto", "direct", "krylov"] = Field(
        "auto",
        description="direct = sparse LU, krylov = Jacobi-preconditioned BiCGSTAB, "
        "auto = direct up to direct_max_unknowns",
    )
    rel_tol: float = Field(1e-10, description="Relative residual tolerance")
    max_iter: int = Field(20000, ge=1, description="Krylov iteration cap")
    direct_max_unknowns: int = Field(257 * 257, ge=1, description="Threshold for auto mode")

    model_config = ConfigDict(json_schema_extra={"example": {"method": "direct", "rel_tol": 1e-10}})

    @field_validator("rel_tol")
    @classmethod
    def _check_tol(cls, v: float) -> float:
        if not (0.0 < v <= 1e-4):
            raise ValueError(f"rel_tol must lie in (0, 1e-4], got {v}")
        return v

    def resolve(self, unknowns: int) -> Literal["direct", "krylov"]:
        """Concrete method for a system of the given size."""
        if self.method == "auto":
            return "direct" if unknowns <= self.direct_max_unknowns else "krylov"
        return self.method


class CGOConfig(BaseModel):
    """Complex geometrical optics construction."""

    kmag: float = Field(
        8.0, gt=0, description="|κ| in domain-scaled units: κ·(x - x_c) spans ±kmag across X"
    )
    pad_fraction: float = Field(0.5, gt=0, description="Padding per side, fraction of domain width")
    taper_fraction: float = Field(
        0.4, gt=0, lt=1, description="Cutoff collar width as a fraction of the padding"
    )
    born_jmax: int = Field(60, ge=1, description="Maximum number of Born terms")
    born_tol: float = Field(1e-10, gt=0, description="Born series stopping tolerance")
    overflow_limit: float = Field(
        300.0, gt=0, description="Largest admissible exponent of the centred envelope"
    )
    solver: LinearSolveConfig = Field(default_factory=lambda: LinearSolveConfig(method="direct"))


class TransportConfig(BaseModel):
    """Characteristic integration."""

    h_ode: Annotated[Optional[float], OptionalNumber] = Field(
        None, gt=0, description="RK4 step; default 0.5·h/max|β|"
    )
    t_max: Annotated[Optional[float], OptionalNumber] = Field(
        None, gt=0, description="Time cap; default 10·diam/median|β|"
    )
    step_factor: float = Field(0.5, gt=0, description="h_ode = step_factor·h/max|β|")
    time_factor: float = Field(10.0, gt=0, description="t_max = time_factor·diam/median|β|")
    beta_min_rel: float = Field(
        1e-6, gt=0, description="Stall threshold relative to the median |β|"
    )


class NoiseConfig(BaseModel):
    """Smooth additive noise on internal data."""

    level: float = Field(0.0, ge=0, description="Discrete C1 norm of the perturbation")
    corr_width_cells: float = Field(4.0, gt=0, description="Gaussian kernel width in cells")
    weighting: Literal["absolute", "envelope"] = Field(
        "envelope",
        description="envelope scales the perturbation by |e^{ρ·(x - x_c)}| and measures the "
        "norm in the centred frame",
    )


class ReconConfig(BaseModel):
    """Reconstruction chain settings."""

    solver: LinearSolveConfig = Field(default_factory=LinearSolveConfig)
    transport: TransportConfig = Field(default_factory=TransportConfig)
    u_min_rel: float = Field(1e-12, gt=0, description="Vanishing threshold relative to max|u|")
    q_mode: Literal["least-squares", "real-part"] = "least-squares"
    mu_mode: Literal["poisson", "path"] = Field("poisson", description="Multi-route μ solve")
    cond_max: float = Field(1e6, gt=1, description="Largest admissible pointwise condition number")
    curl_tol_rel: float = Field(
        0.1, gt=0, description="Curl residual warning threshold relative to max|Γ|"
    )
    g_min_rel: float = Field(1e-10, gt=0, description="Illumination floor relative to max|g|")


# ============================================================================
# Phantoms
# ============================================================================


class GaussianBump(BaseModel):
    """Additive Gaussian ``amplitude·exp(-|x - center|²/(2·width²))``."""

    center: Tuple[float, float] = Field(..., description="Bump centre")
    width: float = Field(..., gt=0, description="Standard deviation")
    amplitude: float = Field(..., description="Value added at the centre")


class MaskConfig(BaseModel):
    """Reconstruction domain selection."""

    shape: Literal["rectangle", "disk"] = "rectangle"
    radius: Annotated[Optional[float], OptionalNumber] = Field(
        None, gt=0, description="Disk radius"
    )
    center: Annotated[Optional[Tuple[float, float]], FloatTuple] = Field(
        None, description="Disk centre (default: grid centre)"
    )

    @classmethod
    def parse(cls, text: str) -> MaskConfig:
        """Parse the CLI form ``rect`` or ``disk:<radius>``."""
        t = text.strip().lower()
        if t in {"rect", "rectangle", "square"}:
            return cls(shape="rectangle")
        if t.startswith("disk:"):
            return cls(shape="disk", radius=float(t.split(":", 1)[1]))
        raise ValueError(f"mask must be 'rect' or 'disk:<radius>', got {text!r}")

    @property
    def label(self) -> str:
        if self.shape == "rectangle":
            return "rect"
        return f"disk:{self.radius:g}" if self.radius else "disk"


class PhantomSpec(BaseModel):
    """Ground-truth (D, σ_a) built from Gaussian bumps over constant backgrounds."""

    resolution: int = Field(129, ge=5, description="Nodes per side")
    extent: Annotated[Tuple[float, float, float, float], FloatTuple] = Field(
        (0.0, 1.0, 0.0, 1.0), description="xmin, xmax, ymin, ymax"
    )
    mask: MaskConfig = Field(default_factory=MaskConfig)
    d_bg: float = Field(1.0, gt=0, description="Background diffusion coefficient")
    sigma_bg: float = Field(0.5, gt=0, description="Background absorption")
    d_bumps: Annotated[List[GaussianBump], BeforeValidator(_coerce_bumps)] = Field(
        default_factory=list
    )
    sigma_bumps: Annotated[List[GaussianBump], BeforeValidator(_coerce_bumps)] = Field(
        default_factory=list
    )
    d_min: float = Field(0.5, gt=0)
    d_max: float = Field(2.0, gt=0)
    s_min: float = Field(0.1, gt=0)
    s_max: float = Field(2.0, gt=0)
    clip_margin: float = Field(
        0.05, ge=0, description="Overshoot (fraction of the bound range) absorbed by soft clipping"
    )

    model_config = ConfigDict(
        json_schema_extra={
            "example": {
                "resolution": 129,
                "d_bg": 1.0,
                "sigma_bg": 0.5,
                "d_bumps": "0.45 0.55 0.15 0.5",
                "sigma_bumps": "0.6 0.4 0.12 0.5",
            }
        }
    )

    @field_validator("d_max")
    @classmethod
    def _check_d_bounds(cls, v: float, info: Any) -> float:
        if v <= info.data.get("d_min", 0.0):
            raise ValueError("d_max must exceed d_min")
        return v

    @field_validator("s_max")
    @classmethod
    def _check_s_bounds(cls, v: float, info: Any) -> float:
        if v <= info.data.get("s_min", 0.0):
            raise ValueError("s_max must exceed s_min")
        return v

    @classmethod
    def benchmark(cls, resolution: int = 129, mask: Optional[MaskConfig] = None) -> PhantomSpec:
        """Bump phantom with D in [1, 1.5] and σ_a in [0.5, 1]."""
        return cls(
            resolution=resolution,
            mask=mask or MaskConfig(),
            d_bg=1.0,
            sigma_bg=0.5,
            d_bumps=[GaussianBump(center=(0.45, 0.55), width=0.15, amplitude=0.5)],
            sigma_bumps=[GaussianBump(center=(0.6, 0.4), width=0.12, amplitude=0.5)],
        )


class PotentialSpec(BaseModel):
    """A potential q given directly (used by the ψ decay experiment)."""

    resolution: int = Field(129, ge=5)
    extent: Annotated[Tuple[float, float, float, float], FloatTuple] = (0.0, 1.0, 0.0, 1.0)
    mask: MaskConfig = Field(default_factory=MaskConfig)
    background: float = 0.0
    bumps: Annotated[List[GaussianBump], BeforeValidator(_coerce_bumps)] = Field(
        default_factory=lambda: [GaussianBump(center=(0.5, 0.5), width=0.15, amplitude=1.0)]
    )


# ============================================================================
# Run configuration
# ============================================================================

# Section name -> nested attribute path
CONFIG_SECTIONS: Dict[str, Tuple[str, ...]] = {
    "run": (),
    "phantom": ("phantom",),
    "mask": ("phantom", "mask"),
    "potential": ("potential",),
    "cgo": ("cgo",),
    "cgo.solver": ("cgo", "solver"),
    "recon": ("recon",),
    "solver": ("recon", "solver"),
    "transport": ("recon", "transport"),
    "noise": ("noise",),
    "sweep": ("sweep",),
}


class SweepConfig(BaseModel):
    """Parameter lists for the experiment harness."""

    resolutions: IntList = Field(default_factory=lambda: [65, 129, 257])
    kmags: FloatList = Field(default_factory=lambda: [8.0, 16.0, 32.0])
    levels: FloatList = Field(default_factory=lambda: [1e-4, 3e-4, 1e-3, 3e-3, 1e-2])
    seeds: int = Field(5, ge=1, description="Number of seeds per noise level")
    eps: FloatList = Field(default_factory=lambda: [0.0, 1e-3, 1e-2, 1e-1, 1.0])


class RunConfig(BaseModel):
    """Everything a CLI run needs, read from a ``[section] key = value`` file."""

    route: Literal["two-data", "multi-data"] = "two-data"
    seed: int = Field(0, ge=0)
    forward_model: Literal["diffusion", "schrodinger"] = "diffusion"
    phantom: PhantomSpec = Field(default_factory=PhantomSpec.benchmark)
    potential: PotentialSpec = Field(default_factory=PotentialSpec)
    cgo: CGOConfig = Field(default_factory=CGOConfig)
    recon: ReconConfig = Field(default_factory=ReconConfig)
    noise: NoiseConfig = Field(default_factory=NoiseConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    @classmethod
    def from_groups_dict(cls, groups: Dict[str, Dict[str, Any]]) -> RunConfig:
        """Build from ``{section: {key: value}}`` as produced by the config parser."""
        sections = CONFIG_SECTIONS
        data: Dict[str, Any] = {}
        for section, items in groups.items():
            name = section.strip().lower()
            if name not in sections:
                raise ValueError(f"Unknown config section [{section}]")
            target = data
            for part in sections[name]:
                target = target.setdefault(part, {})
            for key, value in items.items():
                target[key.strip()] = value
        return cls.model_validate(data)

    def to_groups_dict(self) -> Dict[str, Dict[str, Any]]:
        """Flatten into sections of scalar values (inverse of :meth:`from_groups_dict`)."""
        sections = CONFIG_SECTIONS
        dumped = self.model_dump(mode="json")
        groups: Dict[str, Dict[str, Any]] = {}
        for name, path in sections.items():
            node: Any = dumped
            for part in path:
                node = node[part]
            groups[name] = {
                k: _format_value(k, v) for k, v in node.items() if not isinstance(v, dict)
            }
        return groups

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical JSON dump."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _format_value(key: str, v: Any) -> Any:
    if v is None:
        return ""
    if key.endswith("bumps"):
        return "; ".join(
            f"{b['center'][0]:g} {b['center'][1]:g} {b['width']:g} {b['amplitude']:g}" for b in v
        )
    if isinstance(v, (list, tuple)):
        return ", ".join(f"{x:g}" if isinstance(x, float) else str(x) for x in v)
    return v


# ============================================================================
# Experiment reports
# ============================================================================


class ErrorRow(BaseModel):
    """One measured quantity of one experiment cell."""

    experiment: str = Field(..., description="Experiment name")
    config_hash: str = Field(..., description="Hash of the run configuration")
    seed: int = Field(0, description="Noise seed (0 for clean cells)")
    resolution: int = Field(0, description="Nodes per side")
    kmag: float = Field(0.0, description="Domain-scaled |κ|")
    level: float = Field(0.0, description="Noise level or illumination ε")
    quantity: str = Field(..., description="mu, q, D, sigma_a, psi, flatness, ...")
    norm: Literal["sup", "c1", "value"] = Field("sup", description="Norm of the entry")
    value: float = Field(..., description="Measured value")
    label: str = Field("", description="Free-form cell label (route, mask, mode)")


class ExperimentReport(BaseModel):
    """Error table, fitted slopes and acceptance flags of one experiment."""

    name: str
    config_hash: str
    seed: int = 0
    r0: bool = Field(False, description="Whether the mask satisfies uniform strict convexity")
    rows: List[ErrorRow] = Field(default_factory=list)
    fits: Dict[str, float] = Field(default_factory=dict)
    acceptance: Dict[str, bool] = Field(default_factory=dict)
    runtime_s: float = 0.0
    platform: str = ""
    notes: List[str] = Field(default_factory=list)

    def add(self, quantity: str, value: float, **kwargs: Any) -> None:
        """Append a row tagged with this report's name and config hash."""
        kwargs.setdefault("seed", self.seed)
        self.rows.append(
            ErrorRow(
                experiment=self.name,
                config_hash=self.config_hash,
                quantity=quantity,
                value=float(value),
                **kwargs,
            )
        )

    @property
    def passed(self) -> bool:
        return all(self.acceptance.values())

    def to_dataframe(self) -> pd.DataFrame:
        """Error table as a DataFrame (one row per :class:`ErrorRow`)."""
        import pandas as pd

        columns = list(ErrorRow.model_fields)
        return pd.DataFrame([r.model_dump() for r in self.rows], columns=columns)

    def summary_dataframe(self) -> pd.DataFrame:
        """Fits and acceptance flags as a two-section key/value table."""
        import pandas as pd

        records = [{"kind": "fit", "key": k, "value": v} for k, v in self.fits.items()]
        records += [
            {"kind": "acceptance", "key": k, "value": v} for k, v in self.acceptance.items()
        ]
        records += [
            {"kind": "meta", "key": "r0", "value": self.r0},
            {"kind": "meta", "key": "runtime_s", "value": self.runtime_s},
            {"kind": "meta", "key": "platform", "value": self.platform},
        ]
        return pd.DataFrame(records, columns=["kind", "key", "value"])

    @classmethod
    def from_dataframe(
        cls, df: pd.DataFrame, summary: Optional[pd.DataFrame] = None
    ) -> ExperimentReport:
        """Rebuild a report from :meth:`to_dataframe` (and optionally the summary table)."""
        rows = [ErrorRow.model_validate(rec) for rec in df.to_dict(orient="records")]
        name = rows[0].experiment if rows else "unknown"
        config_hash = rows[0].config_hash if rows else ""
        report = cls(name=name, config_hash=config_hash, rows=rows)
        if summary is not None:
            for rec in summary.to_dict(orient="records"):
                if rec["kind"] == "fit":
                    report.fits[str(rec["key"])] = float(rec["value"])
                elif rec["kind"] == "acceptance":
                    report.acceptance[str(rec["key"])] = _coerce_bool(str(rec["value"]))
                elif rec["key"] == "r0":
                    report.r0 = _coerce_bool(str(rec["value"]))
                elif rec["key"] == "runtime_s":
                    report.runtime_s = float(rec["value"])
                elif rec["key"] == "platform":
                    report.platform = str(rec["value"])
        return report
