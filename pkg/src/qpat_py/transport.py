"""Method of characteristics for ``β·∇μ + γμ = 0`` with μ known on the boundary.

Every interior node is followed along ``φ' = β(φ)`` until the path leaves X at
``x₊`` after time ``t₊``. Along the flow ``d/dt μ(φ) = -γμ``, so
``μ(x) = μ₀(x₊)·exp(+∫₀^{t₊} γ(φ(s)) ds)``. All paths are
advanced together with classical RK4 steps on bilinearly sampled β; the γ integral
is carried as an extra RK4 component.
"""

from __future__ import annotations

import logging
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

from qpat_py.errors import DimensionError, DomainError, ReconstructionDomainError
from qpat_py.grid import (
    DomainMask,
    GridSpec,
    ScalarField,
    VectorField,
    bilinear_values,
    extrapolate_nearest,
)
from qpat_py.models import TransportConfig
from qpat_py.recon_fields import TransportCoefficients

logger = logging.getLogger(__name__)

PathStatus = Literal["exited", "max-time-exceeded", "stalled"]
STATUS_CODES: tuple[PathStatus, ...] = ("exited", "max-time-exceeded", "stalled")
EXITED, MAX_TIME, STALLED = 0, 1, 2

BISECTION_STEPS = 60


class CharPath(BaseModel):
    """A single characteristic from ``start`` to its exit (or failure)."""

    start: tuple[float, float]
    points: np.ndarray = Field(..., description="Accepted RK4 positions, start first")
    exit_point: Optional[tuple[float, float]] = None
    exit_time: float
    gamma_integral: float
    status: PathStatus

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class CharacteristicSweep(BaseModel):
    """Characteristics from every interior node of a mask."""

    nodes: np.ndarray = Field(..., description="(n, 2) start node indices")
    exit_points: np.ndarray
    exit_times: np.ndarray
    integrals: np.ndarray
    status: np.ndarray = Field(..., description="Index into STATUS_CODES")
    h_ode: float
    t_max: float
    history: Optional[pd.DataFrame] = Field(None, description="Sampled path points")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def exited(self) -> np.ndarray:
        return self.status == EXITED

    def failed_nodes(self) -> list[tuple[int, int]]:
        return [tuple(int(v) for v in n) for n in self.nodes[~self.exited]]

    def counts(self) -> dict[str, int]:
        return {s: int((self.status == k).sum()) for k, s in enumerate(STATUS_CODES)}


class _Sampler:
    """Bilinear β, γ on the full grid, extrapolated from the valid nodes."""

    def __init__(self, beta: VectorField, gamma: ScalarField, valid: np.ndarray) -> None:
        self.grid: GridSpec = beta.grid
        self.bx = extrapolate_nearest(beta.x, valid)
        self.by = extrapolate_nearest(beta.y, valid)
        self.gm = extrapolate_nearest(gamma.values, valid)

    def beta(self, p: np.ndarray) -> np.ndarray:
        return np.stack(
            [bilinear_values(self.bx, self.grid, p), bilinear_values(self.by, self.grid, p)],
            axis=-1,
        )

    def gamma(self, p: np.ndarray) -> np.ndarray:
        return bilinear_values(self.gm, self.grid, p)

    def rk4(self, p: np.ndarray, h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One step of size ``h`` (per path) for the position and the γ integral."""
        hh = np.asarray(h)[..., None]
        k1 = self.beta(p)
        g1 = self.gamma(p)
        p2 = p + 0.5 * hh * k1
        k2, g2 = self.beta(p2), self.gamma(p2)
        p3 = p + 0.5 * hh * k2
        k3, g3 = self.beta(p3), self.gamma(p3)
        p4 = p + hh * k3
        k4, g4 = self.beta(p4), self.gamma(p4)
        dp = hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        di = np.asarray(h) / 6 * (g1 + 2 * g2 + 2 * g3 + g4)
        return p + dp, di


def _valid_or_all(coeffs_valid: Optional[np.ndarray], shape: tuple[int, int]) -> np.ndarray:
    return np.ones(shape, dtype=bool) if coeffs_valid is None else coeffs_valid


def default_steps(
    beta: VectorField, valid: np.ndarray, mask: DomainMask, cfg: Optional[TransportConfig] = None
) -> tuple[float, float, float]:
    """``(h_ode, t_max, β_min)`` from the configuration or the β statistics."""
    cfg = cfg or TransportConfig()
    mag = beta.magnitude[valid]
    bmax = float(mag.max())
    bmed = float(np.median(mag))
    if bmax <= 0:
        raise ReconstructionDomainError("β vanishes on every valid node")
    g = beta.grid
    h_ode = cfg.h_ode or cfg.step_factor * min(g.dx, g.dy) / bmax
    t_max = cfg.t_max or cfg.time_factor * mask.diameter / max(bmed, 1e-300)
    return h_ode, t_max, cfg.beta_min_rel * bmed


def _integrate(
    sampler: _Sampler,
    mask: DomainMask,
    starts: np.ndarray,
    h_ode: float,
    t_max: float,
    beta_min: float,
    record: bool = False,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, list[pd.DataFrame]]:
    n = len(starts)
    p = np.array(starts, dtype=float)
    t = np.zeros(n)
    integ = np.zeros(n)
    status = np.full(n, -1)
    exit_pts = np.full((n, 2), np.nan)
    frames: list[pd.DataFrame] = []

    # starts already on or beyond the boundary polygon exit immediately
    outside = mask.level(p) >= 0
    status[outside] = EXITED
    exit_pts[outside] = p[outside]
    active = np.flatnonzero(status < 0)

    def snapshot(idx: np.ndarray) -> None:
        if record and len(idx):
            frames.append(
                pd.DataFrame(
                    {
                        "path": idx,
                        "t": t[idx],
                        "x": p[idx, 0],
                        "y": p[idx, 1],
                        "gamma_sample": sampler.gamma(p[idx]),
                    }
                )
            )

    snapshot(active)
    max_steps = int(np.ceil(t_max / h_ode)) + 1
    for _ in range(max_steps):
        if not len(active):
            break
        pa = p[active]
        speed = np.linalg.norm(sampler.beta(pa), axis=-1)
        stalled = speed < beta_min
        if stalled.any():
            status[active[stalled]] = STALLED
            active = active[~stalled]
            pa = pa[~stalled]
        if not len(active):
            break
        h = np.full(len(active), h_ode)
        p_new, di = sampler.rk4(pa, h)
        crossed = mask.level(p_new) > 0
        if crossed.any():
            # bisect the step fraction so the crossing lies on the boundary
            idx = np.flatnonzero(crossed)
            lo = np.zeros(len(idx))
            hi = np.ones(len(idx))
            base = pa[idx]
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                trial, _ = sampler.rk4(base, mid * h_ode)
                beyond = mask.level(trial) > 0
                hi = np.where(beyond, mid, hi)
                lo = np.where(beyond, lo, mid)
            frac = 0.5 * (lo + hi)
            x_exit, di_exit = sampler.rk4(base, frac * h_ode)
            done = active[idx]
            exit_pts[done] = x_exit
            t[done] += frac * h_ode
            integ[done] += di_exit
            p[done] = x_exit
            status[done] = EXITED
            snapshot(done)
        keep = ~crossed
        moving = active[keep]
        p[moving] = p_new[keep]
        t[moving] += h_ode
        integ[moving] += di[keep]
        snapshot(moving)
        late = t[moving] >= t_max
        status[moving[late]] = MAX_TIME
        active = moving[~late]
    status[status < 0] = MAX_TIME
    return exit_pts, t, integ, status, frames


def sweep_characteristics(
    coeffs: TransportCoefficients,
    mask: DomainMask,
    cfg: Optional[TransportConfig] = None,
    record: bool = False,
) -> CharacteristicSweep:
    """Trace the characteristic of every interior node of ``mask``."""
    if coeffs.grid != mask.grid:
        raise DimensionError("coefficients and mask live on different grids")
    valid = _valid_or_all(coeffs.valid, mask.grid.shape) & mask.inside
    h_ode, t_max, beta_min = default_steps(coeffs.beta, valid, mask, cfg)
    sampler = _Sampler(coeffs.beta, coeffs.gamma, valid)
    nodes = np.argwhere(mask.interior)
    X, Y = mask.grid.coords()
    starts = np.stack([X[nodes[:, 0], nodes[:, 1]], Y[nodes[:, 0], nodes[:, 1]]], axis=1)
    logger.debug(f"Tracing {len(nodes)} characteristics: h_ode={h_ode:.3e}, t_max={t_max:.3e}")
    exit_pts, t, integ, status, frames = _integrate(
        sampler, mask, starts, h_ode, t_max, beta_min, record
    )
    history = None
    if record and frames:
        history = pd.concat(frames, ignore_index=True)
        history.insert(0, "node_j", nodes[history["path"].to_numpy(), 1])
        history.insert(0, "node_i", nodes[history["path"].to_numpy(), 0])
        history = history.drop(columns="path").sort_values(["node_i", "node_j", "t"])
        history = history.reset_index(drop=True)
    sweep = CharacteristicSweep(
        nodes=nodes,
        exit_points=exit_pts,
        exit_times=t,
        integrals=integ,
        status=status,
        h_ode=h_ode,
        t_max=t_max,
        history=history,
    )
    logger.debug(f"Characteristic status counts: {sweep.counts()}")
    return sweep


def mu_from_sweep(sweep: CharacteristicSweep, mu0: np.ndarray, mask: DomainMask) -> ScalarField:
    """``μ(x) = μ₀(x₊)e^{+∫γ}`` at interior nodes, μ₀ on the boundary, nearest value outside.

    Raises:
        DomainError: If μ₀ is not positive
        ReconstructionDomainError: If any characteristic failed to exit
    """
    mu0 = np.asarray(mu0, dtype=float)
    if mu0.shape != (len(mask.boundary_nodes),):
        raise DomainError(f"μ₀ needs {len(mask.boundary_nodes)} boundary values")
    if np.any(mu0 <= 0):
        raise DomainError("boundary values of μ must be positive")
    if not sweep.exited.all():
        bad = sweep.failed_nodes()
        counts = sweep.counts()
        logger.error(f"{len(bad)} characteristics did not exit: {counts}")
        raise ReconstructionDomainError(
            f"{len(bad)} characteristics did not reach the boundary "
            f"({counts['stalled']} stalled, {counts['max-time-exceeded']} over time), "
            f"first nodes {bad[:5]}",
            nodes=bad,
        )
    out = np.zeros(mask.grid.shape)
    nodes = sweep.nodes
    exit_mu0 = mask.interpolate_boundary(mu0, sweep.exit_points)
    out[nodes[:, 0], nodes[:, 1]] = exit_mu0 * np.exp(sweep.integrals)
    bn = mask.boundary_nodes
    out[bn[:, 0], bn[:, 1]] = mu0
    out = extrapolate_nearest(out, mask.inside)
    return ScalarField(grid=mask.grid, values=out)


def solve_transport(
    coeffs: TransportCoefficients,
    mu0: np.ndarray,
    mask: DomainMask,
    cfg: Optional[TransportConfig] = None,
) -> ScalarField:
    """Solve ``β·∇μ + γμ = 0`` in X with ``μ = μ₀`` on the boundary nodes."""
    return mu_from_sweep(sweep_characteristics(coeffs, mask, cfg), mu0, mask)


def trace_characteristic(
    beta: VectorField,
    gamma: ScalarField,
    x: tuple[float, float],
    mask: DomainMask,
    h_ode: float,
    t_max: float,
    beta_min: Optional[float] = None,
    valid: Optional[np.ndarray] = None,
) -> CharPath:
    """Follow one characteristic from ``x`` until it leaves X.

    ``beta_min`` defaults to the stall threshold of :func:`default_steps`, as in a sweep.

    Raises:
        ValueError: If ``h_ode`` is not positive
    """
    if h_ode <= 0:
        raise ValueError("h_ode must be positive")
    if beta_min is None:
        inside = _valid_or_all(valid, beta.grid.shape) & mask.inside
        beta_min = default_steps(beta, inside, mask)[2]
    sampler = _Sampler(beta, gamma, _valid_or_all(valid, beta.grid.shape))
    exit_pts, t, integ, status, frames = _integrate(
        sampler, mask, np.asarray([x], dtype=float), h_ode, t_max, beta_min, record=True
    )
    points = (
        pd.concat(frames)[["x", "y"]].to_numpy() if frames else np.asarray([x], dtype=float)
    )
    code = int(status[0])
    return CharPath(
        start=(float(x[0]), float(x[1])),
        points=points,
        exit_point=tuple(float(v) for v in exit_pts[0]) if code == EXITED else None,
        exit_time=float(t[0]),
        gamma_integral=float(integ[0]),
        status=STATUS_CODES[code],
    )


class ExitDiagnostic(BaseModel):
    """Rank correlation of exit time against the normal component of β at the exit."""

    spearman: float
    pvalue: float
    paths: int
    alignment_min: Optional[float] = Field(
        None, description="min over valid nodes of β·(-κ̂⊥)/|β|"
    )


def exit_tangency_diagnostic(
    sweep: CharacteristicSweep, coeffs: TransportCoefficients, mask: DomainMask
) -> ExitDiagnostic:
    """Spearman rank of ``(n(x₊)·β(x₊), t₊)`` over exited paths."""
    ok = sweep.exited & (sweep.exit_times > 0)
    valid = _valid_or_all(coeffs.valid, mask.grid.shape) & mask.inside
    sampler = _Sampler(coeffs.beta, coeffs.gamma, valid)
    xp = sweep.exit_points[ok]
    normal_beta = (mask.normal_at(xp) * sampler.beta(xp)).sum(axis=-1)
    if ok.sum() > 2:
        rho, pval = stats.spearmanr(normal_beta, sweep.exit_times[ok])
        rho, pval = float(rho), float(pval)
    else:
        rho, pval = float("nan"), float("nan")
    align = None
    if coeffs.params is not None:
        e = -coeffs.params.kperp_hat
        b = coeffs.beta
        mag = np.maximum(b.magnitude, 1e-300)
        align = float(((b.x * e[0] + b.y * e[1]) / mag)[valid].min())
    return ExitDiagnostic(spearman=rho, pvalue=pval, paths=int(ok.sum()), alignment_min=align)
