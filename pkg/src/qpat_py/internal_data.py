"""Internal data ``d = μu``: synthesis, smooth noise, and boundary values of μ."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import ndimage

from qpat_py.cgo import CGOParams, envelope
from qpat_py.elliptic import solve_diffusion, solve_schrodinger
from qpat_py.errors import DimensionError, DivisionHazardError, DomainError
from qpat_py.grid import (
    ComplexField,
    DomainMask,
    GridSpec,
    ScalarField,
    boundary_trace,
    discrete_c1_norm,
)
from qpat_py.models import LinearSolveConfig

logger = logging.getLogger(__name__)


class InternalData(BaseModel):
    """One or more internal data ``d_k`` with the illuminations that produced them.

    ``illuminations[k]`` is the Schrödinger-frame boundary trace ``g_k`` (the CGO
    trace, centred like the data), so ``μ = d_k / g_k`` on the boundary.
    """

    data: list[ComplexField] = Field(..., min_length=1)
    illuminations: list[np.ndarray] = Field(..., min_length=1)
    params: list[Optional[CGOParams]] = Field(default_factory=list)
    center: Optional[tuple[float, float]] = Field(None, description="Envelope centre x_c")
    provenance: Literal["clean", "noisy"] = "clean"
    noise_level: float = Field(0.0, ge=0)
    seed: Optional[int] = None

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @field_validator("illuminations", mode="before")
    @classmethod
    def _coerce_traces(cls, v: Sequence) -> list[np.ndarray]:
        out = [np.asarray(g, dtype=complex) for g in v]
        for g in out:
            if g.ndim != 1 or not np.all(np.isfinite(g)):
                raise ValueError("illuminations must be finite 1-D boundary arrays")
        return out

    @model_validator(mode="after")
    def _check_lengths(self) -> InternalData:
        if len(self.data) != len(self.illuminations):
            raise ValueError("one illumination per datum is required")
        if self.params and len(self.params) != len(self.data):
            raise ValueError("frequency metadata must match the number of data")
        grid = self.data[0].grid
        if any(d.grid != grid for d in self.data):
            raise ValueError("all data must share one grid")
        return self

    def __len__(self) -> int:
        return len(self.data)

    @property
    def grid(self) -> GridSpec:
        return self.data[0].grid

    @property
    def g_floor(self) -> float:
        """Smallest |g| over all boundary nodes and data."""
        return float(min(np.abs(g).min() for g in self.illuminations))

    @classmethod
    def concat(cls, items: Sequence[InternalData]) -> InternalData:
        """Stack several single-datum records (e.g. the two frequencies of the gradient route)."""
        first = items[0]
        return cls(
            data=[d for it in items for d in it.data],
            illuminations=[g for it in items for g in it.illuminations],
            params=[p for it in items for p in (it.params or [None] * len(it))],
            center=first.center,
            provenance="noisy" if any(it.provenance == "noisy" for it in items) else "clean",
            noise_level=max(it.noise_level for it in items),
            seed=first.seed,
        )


# ============================================================================
# Synthesis
# ============================================================================


def mu_from_phantom(D: ScalarField, sigma_a: ScalarField) -> ScalarField:
    """``μ = σ_a/√D`` nodewise.

    Raises:
        DomainError: If D is not positive
    """
    if D.grid != sigma_a.grid:
        raise DimensionError("D and σ_a live on different grids")
    if np.any(D.values <= 0):
        raise DomainError("diffusion coefficient must be positive")
    return ScalarField(grid=D.grid, values=sigma_a.values / np.sqrt(D.values))


def synthesize(
    mu: ScalarField,
    u: Union[ComplexField, Sequence[ComplexField]],
    g: Union[np.ndarray, Sequence[np.ndarray]],
    params: Optional[Sequence[Optional[CGOParams]]] = None,
    center: Optional[tuple[float, float]] = None,
) -> InternalData:
    """Form ``d = μ·u`` for one or several solutions ``u``.

    Raises:
        DomainError: If μ is not positive
    """
    us = [u] if isinstance(u, ComplexField) else list(u)
    gs = [g] if isinstance(g, np.ndarray) and np.ndim(g) == 1 else list(g)
    if np.any(mu.values <= 0):
        raise DomainError("μ must be positive to synthesize data")
    for ui in us:
        if ui.grid != mu.grid:
            raise DimensionError("μ and u live on different grids")
    data = [ComplexField(grid=mu.grid, values=mu.values * ui.values) for ui in us]
    return InternalData(
        data=data,
        illuminations=gs,
        params=list(params) if params else [],
        center=center,
    )


def combine_real_measurements(d_re: ScalarField, d_im: ScalarField) -> ComplexField:
    """Complex datum from the measurements of the real and imaginary illuminations."""
    if d_re.grid != d_im.grid:
        raise DimensionError("measurements live on different grids")
    return ComplexField(grid=d_re.grid, values=d_re.values + 1j * d_im.values)


def forward_measurements(
    D: ScalarField,
    sigma_a: ScalarField,
    g: np.ndarray,
    mask: DomainMask,
    cfg: Optional[LinearSolveConfig] = None,
    params: Optional[CGOParams] = None,
) -> InternalData:
    """Internal data of the diffusion model for a Schrödinger-frame illumination ``g``.

    The physical illuminations are the real and imaginary parts of ``g/√D`` on the
    boundary; each is solved separately and the data combined by linearity.
    """
    g = np.asarray(g, dtype=complex)
    sqrt_b = np.sqrt(boundary_trace(D, mask))
    g_u = g / sqrt_b
    u_re = solve_diffusion(D, sigma_a, g_u.real, mask, cfg)
    u_im = solve_diffusion(D, sigma_a, g_u.imag, mask, cfg)
    d = combine_real_measurements(
        ScalarField(grid=D.grid, values=sigma_a.values * u_re.values),
        ScalarField(grid=D.grid, values=sigma_a.values * u_im.values),
    )
    return InternalData(
        data=[d],
        illuminations=[g],
        params=[params],
        center=mask.center_point,
    )


def forward_measurements_schrodinger(
    q: ScalarField,
    mu: ScalarField,
    g: np.ndarray,
    mask: DomainMask,
    cfg: Optional[LinearSolveConfig] = None,
    params: Optional[CGOParams] = None,
) -> InternalData:
    """Internal data ``d = μv`` with ``v`` solving ``Δv + qv = 0``, ``v = g`` on the boundary."""
    v = solve_schrodinger(q, g, mask, cfg)
    return synthesize(mu, v, np.asarray(g, dtype=complex), [params], mask.center_point)


# ============================================================================
# Noise
# ============================================================================


def _envelope_modulus(data: InternalData, k: int) -> np.ndarray:
    p = data.params[k] if data.params else None
    if p is None or data.center is None:
        raise DimensionError("envelope weighting needs frequency metadata and a centre")
    return np.abs(envelope(data.grid, p, data.center, limit=np.inf))


def add_noise(
    data: InternalData,
    level: float,
    corr_width: float,
    seed: int = 0,
    where: Optional[np.ndarray] = None,
    weighting: Literal["absolute", "envelope"] = "absolute",
) -> InternalData:
    """Add a smooth complex Gaussian random field of discrete C¹ norm ``level`` to each datum.

    Args:
        data: Clean (or already noisy) internal data
        level: Discrete C¹ norm of each perturbation, measured over ``where``
        corr_width: Standard deviation of the smoothing kernel in length units
        seed: Seed of the random generator; equal seeds give equal perturbations
        where: Nodes over which the norm is measured (default all nodes)
        weighting: ``envelope`` multiplies the perturbation by |e^{κ·(x - x_c)}|, so
            ``level`` is measured in the centred frame of each datum

    Raises:
        ValueError: If ``level`` is negative
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return data
    grid = data.grid
    sigma = (corr_width / grid.dx, corr_width / grid.dy)
    rng = np.random.default_rng(seed)
    noisy = []
    for k, d in enumerate(data.data):
        re = ndimage.gaussian_filter(rng.standard_normal(grid.shape), sigma, mode="reflect")
        im = ndimage.gaussian_filter(rng.standard_normal(grid.shape), sigma, mode="reflect")
        pert = re + 1j * im
        pert *= level / discrete_c1_norm(pert, grid, where)
        if weighting == "envelope":
            pert = pert * _envelope_modulus(data, k)
        noisy.append(d.with_values(d.values + pert))
    logger.debug(f"Added noise level {level:.2e} (seed {seed}, {weighting}) to {len(noisy)} data")
    return data.model_copy(
        update={"data": noisy, "provenance": "noisy", "noise_level": level, "seed": seed}
    )


# ============================================================================
# Boundary values
# ============================================================================


class BoundaryMu(BaseModel):
    """μ at the boundary nodes recovered from the data."""

    values: np.ndarray
    imag_rel: float = Field(..., description="max|Im μ₀| / max|Re μ₀|, ≈ 0 for clean data")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


def boundary_mu(data: InternalData, mask: DomainMask, g_min_rel: float = 1e-10) -> BoundaryMu:
    """``μ₀ = Re(d/g)`` on the boundary, least squares over all data.

    ``|g|`` is measured relative to the envelope modulus when frequency metadata is
    present, otherwise relative to ``max|g|``.

    Raises:
        DivisionHazardError: If ``|g|`` falls below the floor at any boundary node
    """
    nodes = mask.boundary_nodes
    num = np.zeros(len(nodes), dtype=complex)
    den = np.zeros(len(nodes))
    for k, (d, g) in enumerate(zip(data.data, data.illuminations)):
        if d.grid != mask.grid:
            raise DimensionError("data and mask live on different grids")
        if len(g) != len(nodes):
            raise DimensionError(f"illumination {k} has {len(g)} values for {len(nodes)} nodes")
        p = data.params[k] if data.params else None
        if p is not None and data.center is not None:
            env = envelope(mask.grid, p, data.center, limit=np.inf)
            ref = np.abs(env[nodes[:, 0], nodes[:, 1]])
        else:
            ref = np.full(len(g), np.abs(g).max())
        low = np.abs(g) < g_min_rel * ref
        if np.any(low):
            i = int(np.argmax(low))
            logger.error(f"Illumination {k} vanishes at boundary node {tuple(nodes[i])}")
            raise DivisionHazardError(
                f"|g| below {g_min_rel:.1e} (relative) at boundary node {tuple(nodes[i])}"
            )
        dv = d.values[nodes[:, 0], nodes[:, 1]]
        num += dv * np.conj(g)
        den += np.abs(g) ** 2
    mu0 = num / den
    scale = np.abs(mu0.real).max()
    imag_rel = float(np.abs(mu0.imag).max() / scale) if scale > 0 else 0.0
    if imag_rel > 1e-6:
        logger.warning(f"Boundary μ has a relative imaginary part of {imag_rel:.2e}")
    return BoundaryMu(values=mu0.real.copy(), imag_rel=imag_rel)
