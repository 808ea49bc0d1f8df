"""Ground-truth phantoms: Gaussian bumps over constant backgrounds, softly clipped."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np

from qpat_py.errors import PhantomSpecError
from qpat_py.grid import DomainMask, GridSpec, ScalarField, gradient_values, laplacian_values
from qpat_py.models import GaussianBump, MaskConfig, PhantomSpec, PotentialSpec

logger = logging.getLogger(__name__)


class Phantom(NamedTuple):
    D: ScalarField
    sigma_a: ScalarField
    mask: DomainMask


def build_mask(cfg: MaskConfig, grid: GridSpec) -> DomainMask:
    """Rectangle, or a disk (default: centred, radius 0.45 of the smaller extent)."""
    if cfg.shape == "rectangle":
        return DomainMask.rectangle(grid)
    cx = 0.5 * (grid.x0 + grid.x_end)
    cy = 0.5 * (grid.y0 + grid.y_end)
    center = cfg.center or (cx, cy)
    radius = cfg.radius or 0.45 * min(grid.x_end - grid.x0, grid.y_end - grid.y0)
    return DomainMask.disk(grid, center=center, radius=radius)


def spec_grid(resolution: int, extent: Sequence[float]) -> GridSpec:
    xmin, xmax, ymin, ymax = extent
    return GridSpec.from_bounds(xmin, xmax, ymin, ymax, resolution, resolution)


def bump_sum(grid: GridSpec, background: float, bumps: Sequence[GaussianBump]) -> np.ndarray:
    X, Y = grid.coords()
    out = np.full(grid.shape, float(background))
    for b in bumps:
        r2 = (X - b.center[0]) ** 2 + (Y - b.center[1]) ** 2
        out += b.amplitude * np.exp(-r2 / (2 * b.width**2))
    return out


def soft_clip(values: np.ndarray, lo: float, hi: float, margin: float) -> np.ndarray:
    """C¹ clip: identity on ``[lo + m, hi - m]``, exponential approach to the bound outside.

    ``m = margin·(hi - lo)``. With ``m = 0`` this is a hard clip.
    """
    m = margin * (hi - lo)
    v = np.asarray(values, dtype=float)
    if m == 0:
        return np.clip(v, lo, hi)
    top, bottom = hi - m, lo + m
    out = v.copy()
    up = v > top
    down = v < bottom
    out[up] = hi - m * np.exp(-(v[up] - top) / m)
    out[down] = lo + m * np.exp((v[down] - bottom) / m)
    return out


def _clipped(name: str, raw: np.ndarray, lo: float, hi: float, margin: float) -> np.ndarray:
    m = margin * (hi - lo)
    low, high = float(raw.min()), float(raw.max())
    if low < lo - m or high > hi + m:
        logger.error(f"{name} spans [{low:.4g}, {high:.4g}], bounds [{lo:g}, {hi:g}]")
        raise PhantomSpecError(
            f"{name} ranges over [{low:.4g}, {high:.4g}], beyond the bounds [{lo:g}, {hi:g}] "
            f"by more than the clip margin {m:.3g}"
        )
    return soft_clip(raw, lo, hi, margin)


def make_phantom(spec: PhantomSpec) -> Phantom:
    """Evaluate D and σ_a at the nodes of the spec's grid.

    Raises:
        PhantomSpecError: If a background lies outside its bounds, or the bumps overshoot
            the bounds by more than the soft clip absorbs
    """
    if not spec.d_min <= spec.d_bg <= spec.d_max:
        raise PhantomSpecError(f"D background {spec.d_bg} outside [{spec.d_min}, {spec.d_max}]")
    if not spec.s_min <= spec.sigma_bg <= spec.s_max:
        raise PhantomSpecError(
            f"σ_a background {spec.sigma_bg} outside [{spec.s_min}, {spec.s_max}]"
        )
    grid = spec_grid(spec.resolution, spec.extent)
    mask = build_mask(spec.mask, grid)
    D = _clipped("D", bump_sum(grid, spec.d_bg, spec.d_bumps), spec.d_min, spec.d_max,
                 spec.clip_margin)
    sigma = _clipped("σ_a", bump_sum(grid, spec.sigma_bg, spec.sigma_bumps), spec.s_min,
                     spec.s_max, spec.clip_margin)
    logger.info(
        f"Phantom on {grid.nx}x{grid.ny}: D in [{D.min():.3f}, {D.max():.3f}], "
        f"σ_a in [{sigma.min():.3f}, {sigma.max():.3f}]"
    )
    return Phantom(
        D=ScalarField(grid=grid, values=D),
        sigma_a=ScalarField(grid=grid, values=sigma),
        mask=mask,
    )


def make_potential(spec: PotentialSpec) -> tuple[ScalarField, DomainMask]:
    """A potential q given directly as bumps over a constant."""
    grid = spec_grid(spec.resolution, spec.extent)
    q = bump_sum(grid, spec.background, spec.bumps)
    return ScalarField(grid=grid, values=q), build_mask(spec.mask, grid)


def class_norms(phantom: Phantom) -> dict[str, float]:
    """Sup norms of √D and σ_a and of their first and second differences."""
    g = phantom.D.grid
    out: dict[str, float] = {}
    for name, v in (("sqrtD", np.sqrt(phantom.D.values)), ("sigma_a", phantom.sigma_a.values)):
        gx, gy = gradient_values(v, g.dx, g.dy)
        lap = laplacian_values(v, g.dx, g.dy)
        out[f"{name}_sup"] = float(np.abs(v).max())
        out[f"{name}_grad_sup"] = float(np.hypot(gx, gy)[1:-1, 1:-1].max())
        out[f"{name}_lap_sup"] = float(np.abs(lap)[1:-1, 1:-1].max())
    return out
