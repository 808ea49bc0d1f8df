"""Reconstruction chain μ → u → q → √D → σ_a for the two-data and gradient routes."""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator, Sequence
from contextlib import contextmanager
from typing import Any, Literal, Optional, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from qpat_py.cgo import RhoSet
from qpat_py.elliptic import solve_shifted
from qpat_py.errors import (
    DimensionError,
    DomainError,
    ModelViolationError,
    QpatError,
    StageError,
    VanishingSolutionError,
)
from qpat_py.grid import (
    ComplexField,
    DomainMask,
    ScalarField,
    VectorField,
    divergence,
    extrapolate_linear,
    extrapolate_nearest,
    laplacian_values,
)
from qpat_py.internal_data import InternalData, boundary_mu, mu_from_phantom
from qpat_py.models import ReconConfig
from qpat_py.recon_fields import (
    GradientCoefficient,
    assemble_gamma,
    beta_gamma_multi,
    beta_gamma_two,
    transport_residual,
)
from qpat_py.transport import CharacteristicSweep, mu_from_sweep, sweep_characteristics

logger = logging.getLogger(__name__)


# ============================================================================
# Results
# ============================================================================


class ReconDiagnostics(BaseModel):
    """Numbers recorded along a reconstruction run."""

    u_min_rel: Optional[float] = Field(None, description="min|u| / max|u| over valid nodes")
    mu0_imag_rel: Optional[float] = None
    flatness_gap: Optional[float] = None
    h_ode: Optional[float] = None
    t_max: Optional[float] = None
    paths: Optional[int] = None
    transport_residual: Optional[float] = Field(
        None, description="max|β·∇μ + γμ| / max|γμ| for the recovered μ"
    )
    condition_max: Optional[float] = None
    curl_residual: Optional[float] = None
    mu_mode: Optional[str] = None
    runtime_s: float = 0.0

    def to_dataframe(self) -> pd.DataFrame:
        """Two-column ``key, value`` table of the recorded values."""
        items = [(k, v) for k, v in self.model_dump().items() if v is not None]
        return pd.DataFrame(items, columns=["key", "value"])


class ReconResult(BaseModel):
    """Reconstructed coefficients with ``D = √D²`` and ``σ_a = μ√D`` nodewise."""

    mu: ScalarField
    q: ScalarField
    sqrtD: ScalarField
    D: ScalarField
    sigma_a: ScalarField
    route: Literal["two-data", "multi-data"]
    diagnostics: ReconDiagnostics = Field(default_factory=ReconDiagnostics)
    warnings: list[str] = Field(default_factory=list)
    sweep: Optional[CharacteristicSweep] = Field(
        None, description="Characteristic sweep of the two-data route when paths are recorded"
    )

    model_config = ConfigDict(arbitrary_types_allowed=True)

    def fields(self) -> dict[str, ScalarField]:
        return {
            "mu": self.mu,
            "q": self.q,
            "sqrtD": self.sqrtD,
            "D": self.D,
            "sigma_a": self.sigma_a,
        }


class LiouvilleResult(BaseModel):
    """``q``, ``μ`` and ``√D`` of a phantom."""

    q: ScalarField
    mu: ScalarField
    sqrtD: ScalarField

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def residual(self, u: ScalarField, where: np.ndarray) -> float:
        """``max|Δ(√D u) + q√D u|`` over ``where`` for a diffusion solution ``u``."""
        g = u.grid
        v = self.sqrtD.values * u.values
        r = laplacian_values(v, g.dx, g.dy) + self.q.values * v
        return float(np.abs(r[where]).max())


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Tag any library error raised inside with the stage name."""
    try:
        yield
    except StageError:
        raise
    except QpatError as e:
        logger.error(f"Stage '{name}' failed: {e}")
        raise StageError(name, e) from e


# ============================================================================
# Chain steps
# ============================================================================


def _grid_interior(shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape, dtype=bool)
    out[1:-1, 1:-1] = True
    return out


def liouville_forward(D: ScalarField, sigma_a: ScalarField) -> LiouvilleResult:
    """``q = -Δ√D/√D - σ_a/D`` and ``μ = σ_a/√D`` of a phantom.

    The Laplacian is taken on the grid interior; rim values of q are copied from the
    nearest interior node.

    Raises:
        DomainError: If D is not positive
    """
    mu = mu_from_phantom(D, sigma_a)
    g = D.grid
    s = np.sqrt(D.values)
    q = -laplacian_values(s, g.dx, g.dy) / s - sigma_a.values / D.values
    q = extrapolate_nearest(q, _grid_interior(g.shape))
    return LiouvilleResult(
        q=ScalarField(grid=g, values=q), mu=mu, sqrtD=ScalarField(grid=g, values=s)
    )


def recover_u(data: InternalData, mu: ScalarField) -> list[ComplexField]:
    """``u_k = d_k/μ`` for every datum.

    Raises:
        DomainError: If μ is not positive
    """
    if np.any(mu.values <= 0):
        raise DomainError("μ must be positive to recover u")
    if data.grid != mu.grid:
        raise DimensionError("data and μ live on different grids")
    return [d.with_values(d.values / mu.values) for d in data.data]


def recover_q(
    u: Union[ComplexField, Sequence[ComplexField]],
    mask: DomainMask,
    u_min_rel: float = 1e-12,
    mode: Literal["least-squares", "real-part"] = "least-squares",
) -> ScalarField:
    """q from ``Δu + qu = 0``.

    ``least-squares`` uses ``q = -Σ Re(ū_kΔu_k)/Σ|u_k|²``; ``real-part`` uses ``v = Re u_0``
    and ``q = -Δv/v`` where ``|v|`` is above the floor. Values off the valid nodes are
    copied from the nearest valid node.

    Raises:
        VanishingSolutionError: If the solutions (nearly) vanish at a valid node
    """
    us = [u] if isinstance(u, ComplexField) else list(u)
    g = mask.grid
    valid = mask.interior
    if mode == "real-part":
        v = us[0].values.real
        floor = u_min_rel * np.abs(v[valid]).max()
        ok = valid & (np.abs(v) >= floor) & (np.abs(v) > 0)
        if not ok.any():
            raise VanishingSolutionError("Re u vanishes on every valid node")
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(ok, -laplacian_values(v, g.dx, g.dy) / v, 0.0)
        return ScalarField(grid=g, values=extrapolate_nearest(q, ok))

    num = np.zeros(g.shape)
    den = np.zeros(g.shape)
    for uk in us:
        a = uk.values
        num += np.real(np.conj(a) * laplacian_values(a, g.dx, g.dy))
        den += np.abs(a) ** 2
    mag = np.sqrt(den)
    floor = u_min_rel * mag[valid].max()
    low = valid & (mag < floor)
    if low.any() or mag[valid].max() == 0:
        node = tuple(int(i) for i in np.argwhere(low)[0]) if low.any() else None
        logger.error(f"|u| below {floor:.3e} at node {node}")
        raise VanishingSolutionError(
            f"u vanishes (|u| < {floor:.3e}) at node {node}; the illumination does not "
            "keep u away from zero"
        )
    q = np.zeros(g.shape)
    q[valid] = -num[valid] / den[valid]
    return ScalarField(grid=g, values=extrapolate_nearest(q, valid))


def recover_sqrtD(
    q: ScalarField,
    mu: ScalarField,
    sqrtD_boundary: np.ndarray,
    mask: DomainMask,
    cfg: Optional[ReconConfig] = None,
) -> ScalarField:
    """Solve ``-Δ√D - q√D = μ`` with known boundary values.

    Raises:
        DomainError: If the boundary values are not positive
        ModelViolationError: If the solution is not positive inside X
    """
    cfg = cfg or ReconConfig()
    bc = np.asarray(sqrtD_boundary, dtype=float)
    if np.any(bc <= 0):
        raise DomainError("boundary values of √D must be positive")
    s = solve_shifted(q, mu, bc, mask, cfg.solver)
    inside = mask.inside
    if np.any(s.values[inside] <= 0):
        node = tuple(int(i) for i in np.argwhere(inside & (s.values <= 0))[0])
        logger.error(f"Recovered √D is non-positive at node {node}")
        raise ModelViolationError(f"recovered √D is not positive (first at node {node})")
    return s.with_values(extrapolate_nearest(s.values, inside))


def recover_sigma(mu: ScalarField, sqrtD: ScalarField) -> ScalarField:
    """``σ_a = μ√D``.

    Raises:
        DomainError: If either input is not positive
    """
    if np.any(mu.values <= 0) or np.any(sqrtD.values <= 0):
        raise DomainError("μ and √D must be positive")
    return mu.with_values(mu.values * sqrtD.values)


# ============================================================================
# μ from Γ
# ============================================================================


def _extended_gamma(gamma: GradientCoefficient) -> VectorField:
    g = gamma.gamma
    return VectorField(
        grid=g.grid,
        x=extrapolate_linear(g.x, gamma.valid),
        y=extrapolate_linear(g.y, gamma.valid),
    )


def mu_from_gamma_poisson(
    gamma: GradientCoefficient,
    mu0: np.ndarray,
    mask: DomainMask,
    cfg: Optional[ReconConfig] = None,
) -> ScalarField:
    """Solve ``-Δw = ∇·Γ`` with ``w = log μ₀`` on the boundary; ``μ = e^w``."""
    cfg = cfg or ReconConfig()
    mu0 = np.asarray(mu0, dtype=float)
    if np.any(mu0 <= 0):
        raise DomainError("boundary values of μ must be positive")
    rhs = divergence(_extended_gamma(gamma))
    zero = rhs.with_values(np.zeros(mask.grid.shape))
    w = solve_shifted(zero, rhs, np.log(mu0), mask, cfg.solver)
    mu = np.exp(extrapolate_nearest(w.values, mask.inside))
    return ScalarField(grid=mask.grid, values=mu)


def anchor_node(mask: DomainMask) -> int:
    """Index (into ``mask.boundary_nodes``) of the bottom boundary node nearest the centre line."""
    nodes = mask.boundary_nodes
    pts = mask.boundary_points
    xc = mask.center_point[0]
    order = np.lexsort((np.abs(pts[:, 0] - xc), nodes[:, 1]))
    return int(order[0])


def mu_from_gamma_path(
    gamma: GradientCoefficient, mu0: np.ndarray, mask: DomainMask
) -> ScalarField:
    """Integrate ``∇log μ = -Γ`` from the anchor along grid paths.

    From the anchor, ``log μ`` is carried up the anchor column and then out along each
    row by the trapezoid rule. Rows must be connected through the anchor column.
    """
    mu0 = np.asarray(mu0, dtype=float)
    if np.any(mu0 <= 0):
        raise DomainError("boundary values of μ must be positive")
    G = _extended_gamma(gamma)
    g = mask.grid
    inside = mask.inside
    k = anchor_node(mask)
    i0, j0 = (int(v) for v in mask.boundary_nodes[k])
    w = np.full(g.shape, np.nan)
    w[i0, j0] = np.log(mu0[k])

    j = j0
    while j + 1 < g.ny and inside[i0, j + 1]:
        w[i0, j + 1] = w[i0, j] - 0.5 * (G.y[i0, j] + G.y[i0, j + 1]) * g.dy
        j += 1
    for jj in np.flatnonzero(~np.isnan(w[i0, :])):
        i = i0
        while i + 1 < g.nx and inside[i + 1, jj]:
            w[i + 1, jj] = w[i, jj] - 0.5 * (G.x[i, jj] + G.x[i + 1, jj]) * g.dx
            i += 1
        i = i0
        while i - 1 >= 0 and inside[i - 1, jj]:
            w[i - 1, jj] = w[i, jj] + 0.5 * (G.x[i, jj] + G.x[i - 1, jj]) * g.dx
            i -= 1
    reached = ~np.isnan(w)
    missed = int((inside & ~reached).sum())
    if missed:
        logger.warning(f"Path integration did not reach {missed} inside nodes")
    mu = np.exp(extrapolate_nearest(np.nan_to_num(w), reached))
    return ScalarField(grid=g, values=mu)


# ============================================================================
# Routes
# ============================================================================


def _relative_transport_residual(coeffs: Any, mu: ScalarField) -> float:
    scale = np.abs(coeffs.gamma.values * mu.values)[coeffs.valid].max()
    res = transport_residual(coeffs, mu)
    return float(res / scale) if scale > 0 else res


def _finish(
    data: InternalData,
    mu: ScalarField,
    sqrtD_boundary: np.ndarray,
    mask: DomainMask,
    cfg: ReconConfig,
    diag: ReconDiagnostics,
    step: int,
    total: int,
) -> tuple[ScalarField, ScalarField, ScalarField]:
    logger.info(f"[{step}/{total}] Recovering u and q")
    with stage("q"):
        us = recover_u(data, mu)
        mag = np.sqrt(sum(np.abs(u.values) ** 2 for u in us))[mask.interior]
        diag.u_min_rel = float(mag.min() / mag.max())
        q = recover_q(us, mask, cfg.u_min_rel, cfg.q_mode)
    logger.info(f"[{step + 1}/{total}] Solving for √D")
    with stage("sqrtD"):
        sqrtD = recover_sqrtD(q, mu, sqrtD_boundary, mask, cfg)
    logger.info(f"[{step + 2}/{total}] Forming σ_a")
    with stage("sigma"):
        sigma = recover_sigma(mu, sqrtD)
    return q, sqrtD, sigma


def run_two_data(
    data: InternalData,
    sqrtD_boundary: np.ndarray,
    mask: DomainMask,
    cfg: Optional[ReconConfig] = None,
    record_paths: bool = False,
) -> ReconResult:
    """Reconstruct from one complex datum ``d`` (the conjugate pair ``d, d̄``).

    With ``record_paths`` the result keeps the sweep with its sampled path history.

    Raises:
        StageError: Wrapping the failure of any stage
    """
    cfg = cfg or ReconConfig()
    t0 = time.perf_counter()
    diag = ReconDiagnostics()
    warnings: list[str] = []
    logger.info("=" * 80)
    logger.info(f"Two-data reconstruction on a {mask.grid.nx}x{mask.grid.ny} {mask.shape} mask")
    logger.info("=" * 80)

    logger.info("[1/6] Assembling β, γ")
    with stage("fields"):
        coeffs = beta_gamma_two(data, mask)
        diag.flatness_gap = coeffs.flatness_gap
    logger.info("[2/6] Boundary values of μ")
    with stage("boundary"):
        mu0 = boundary_mu(data, mask, cfg.g_min_rel)
        diag.mu0_imag_rel = mu0.imag_rel
        if mu0.imag_rel > 1e-6:
            warnings.append(f"boundary μ has relative imaginary part {mu0.imag_rel:.2e}")
    logger.info("[3/6] Transport solve for μ")
    with stage("transport"):
        sweep = sweep_characteristics(coeffs, mask, cfg.transport, record=record_paths)
        mu = mu_from_sweep(sweep, mu0.values, mask)
        diag.h_ode, diag.t_max, diag.paths = sweep.h_ode, sweep.t_max, len(sweep.nodes)
        diag.transport_residual = _relative_transport_residual(coeffs, mu)

    q, sqrtD, sigma = _finish(data, mu, sqrtD_boundary, mask, cfg, diag, 4, 6)
    diag.runtime_s = time.perf_counter() - t0
    logger.info(f"Two-data reconstruction finished in {diag.runtime_s:.2f}s")
    return ReconResult(
        mu=mu,
        q=q,
        sqrtD=sqrtD,
        D=sqrtD.with_values(sqrtD.values**2),
        sigma_a=sigma,
        route="two-data",
        diagnostics=diag,
        warnings=warnings,
        sweep=sweep if record_paths else None,
    )


def run_multi_data(
    data: InternalData,
    sqrtD_boundary: np.ndarray,
    mask: DomainMask,
    cfg: Optional[ReconConfig] = None,
    rho_set: Optional[RhoSet] = None,
) -> ReconResult:
    """Reconstruct from the two data of ``ρ_1 = -ρ_2`` via ``∇μ + Γμ = 0``.

    Raises:
        StageError: Wrapping the failure of any stage
    """
    cfg = cfg or ReconConfig()
    t0 = time.perf_counter()
    diag = ReconDiagnostics(mu_mode=cfg.mu_mode)
    warnings: list[str] = []
    logger.info("=" * 80)
    logger.info(
        f"Gradient-route reconstruction on a {mask.grid.nx}x{mask.grid.ny} {mask.shape} mask "
        f"({cfg.mu_mode} mode)"
    )
    logger.info("=" * 80)

    logger.info("[1/6] Assembling β_j, γ_j and Γ")
    with stage("fields"):
        coeffs = beta_gamma_multi(data, mask, rho_set)
        gamma = assemble_gamma(coeffs, cfg.cond_max)
        diag.condition_max = gamma.condition_max
        diag.curl_residual = gamma.curl_residual
        scale = float(gamma.gamma.magnitude[gamma.valid].max())
        if scale > 0 and gamma.curl_residual > cfg.curl_tol_rel * scale / mask.grid.h:
            msg = (
                f"curl of Γ is {gamma.curl_residual:.3e}; the data may be inconsistent "
                "with a single μ"
            )
            logger.warning(msg)
            warnings.append(msg)
    logger.info("[2/6] Boundary values of μ")
    with stage("boundary"):
        mu0 = boundary_mu(data, mask, cfg.g_min_rel)
        diag.mu0_imag_rel = mu0.imag_rel
    logger.info(f"[3/6] Solving for μ ({cfg.mu_mode})")
    with stage("mu"):
        if cfg.mu_mode == "poisson":
            mu = mu_from_gamma_poisson(gamma, mu0.values, mask, cfg)
        else:
            mu = mu_from_gamma_path(gamma, mu0.values, mask)

    q, sqrtD, sigma = _finish(data, mu, sqrtD_boundary, mask, cfg, diag, 4, 6)
    diag.runtime_s = time.perf_counter() - t0
    logger.info(f"Gradient-route reconstruction finished in {diag.runtime_s:.2f}s")
    return ReconResult(
        mu=mu,
        q=q,
        sqrtD=sqrtD,
        D=sqrtD.with_values(sqrtD.values**2),
        sigma_a=sigma,
        route="multi-data",
        diagnostics=diag,
        warnings=warnings,
    )
