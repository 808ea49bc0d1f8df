"""Transport coefficients (β, γ) and the gradient coefficient Γ built from internal data.

For two data ``d_1, d_2`` of the same equation,

    β = (d_2∇d_1 - d_1∇d_2)·χ/(2|κ|),    γ = (d_1Δd_2 - d_2Δd_1)·χ/(4|κ|)

satisfy ``β·∇μ + γμ = 0``. The conjugate pair ``(d̄, d)`` gives the imaginary forms;
the pair ``ρ_1 = -ρ_2`` gives the real forms with ``χ = 1``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from qpat_py.cgo import CGOParams, RhoSet
from qpat_py.errors import ConfigurationError, DegeneracyError, DimensionError
from qpat_py.grid import (
    ComplexField,
    DomainMask,
    GridSpec,
    ScalarField,
    VectorField,
    curl,
    gradient_values,
    laplacian_values,
)
from qpat_py.internal_data import InternalData

logger = logging.getLogger(__name__)

CENTER_TOL = 1e-12


class TransportCoefficients(BaseModel):
    """β and γ on the grid; only nodes flagged in ``valid`` carry data."""

    beta: VectorField
    gamma: ScalarField
    valid: np.ndarray = Field(..., description="Nodes whose full stencil lies in X")
    params: Optional[CGOParams] = None
    flatness_gap: Optional[float] = Field(
        None, description="max|β - (β·ê)ê| over valid nodes, ê = κ̂⊥"
    )

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def grid(self) -> GridSpec:
        return self.beta.grid

    def scaled(self, c: float) -> TransportCoefficients:
        """``(cβ, cγ)``; the transport solution is unchanged."""
        gamma = self.gamma.with_values(c * self.gamma.values)
        return self.model_copy(update={"beta": self.beta.scaled(c), "gamma": gamma})


class GradientCoefficient(BaseModel):
    """Γ with ``∇μ + Γμ = 0`` and its conditioning record."""

    gamma: VectorField
    valid: np.ndarray
    condition_max: float
    curl_residual: float

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ============================================================================
# Helpers
# ============================================================================


def _check_center(data: InternalData, mask: DomainMask) -> tuple[float, float]:
    xc = mask.center_point
    if data.center is None:
        return xc
    offset = np.hypot(data.center[0] - xc[0], data.center[1] - xc[1])
    if offset > CENTER_TOL * (1 + mask.diameter):
        logger.error(f"Data centred at {data.center}, mask centre is {xc}")
        raise ConfigurationError(
            f"data envelope centre {data.center} does not match the mask centre {xc}"
        )
    return xc


def _chi(grid: GridSpec, a: np.ndarray, center: tuple[float, float]) -> np.ndarray:
    X, Y = grid.coords()
    return np.exp(-(a[0] * (X - center[0]) + a[1] * (Y - center[1])))


def _pair_terms(
    d1: np.ndarray, d2: np.ndarray, grid: GridSpec
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``d_2∇d_1 - d_1∇d_2`` (two components) and ``d_1Δd_2 - d_2Δd_1``."""
    g1x, g1y = gradient_values(d1, grid.dx, grid.dy)
    g2x, g2y = gradient_values(d2, grid.dx, grid.dy)
    l1 = laplacian_values(d1, grid.dx, grid.dy)
    l2 = laplacian_values(d2, grid.dx, grid.dy)
    return d2 * g1x - d1 * g2x, d2 * g1y - d1 * g2y, d1 * l2 - d2 * l1


def _transverse_gap(beta: VectorField, valid: np.ndarray, direction: np.ndarray) -> float:
    e = direction / np.linalg.norm(direction)
    along = beta.x * e[0] + beta.y * e[1]
    tx = beta.x - along * e[0]
    ty = beta.y - along * e[1]
    return float(np.hypot(tx, ty)[valid].max())


def _coefficients(
    bx: np.ndarray,
    by: np.ndarray,
    gm: np.ndarray,
    grid: GridSpec,
    valid: np.ndarray,
    params: Optional[CGOParams],
    gap_direction: Optional[np.ndarray],
) -> TransportCoefficients:
    bx = np.where(valid, bx, 0.0)
    by = np.where(valid, by, 0.0)
    gm = np.where(valid, gm, 0.0)
    beta = VectorField(grid=grid, x=bx, y=by)
    gap = _transverse_gap(beta, valid, gap_direction) if gap_direction is not None else None
    return TransportCoefficients(
        beta=beta,
        gamma=ScalarField(grid=grid, values=gm),
        valid=valid,
        params=params,
        flatness_gap=gap,
    )


# ============================================================================
# Operations
# ============================================================================


def beta_gamma_two(
    data: InternalData,
    mask: DomainMask,
    params: Optional[CGOParams] = None,
    index: int = 0,
) -> TransportCoefficients:
    """β and γ from the conjugate pair ``(d̄, d)`` of one complex datum.

    ``β = χ/(2|κ|)·Im(d∇d̄ - d̄∇d)`` and ``γ = χ/(4|κ|)·Im(d̄Δd - dΔd̄)`` with
    ``χ = e^{-2κ·(x - x_c)}``. For ``μ ≡ 1, q ≡ 0`` this gives ``β = -κ̂⊥``, ``γ = 0``.

    Raises:
        ConfigurationError: If no frequency is known or the data centre differs from the mask's
    """
    params = params or (data.params[index] if data.params else None)
    if params is None:
        raise ConfigurationError("beta_gamma_two needs the frequency of the datum")
    if data.grid != mask.grid:
        raise DimensionError("data and mask live on different grids")
    center = _check_center(data, mask)
    grid = mask.grid
    d = data.data[index].values
    chi = _chi(grid, 2 * np.asarray(params.kappa), center)
    kmag = params.magnitude

    tx, ty, tl = _pair_terms(np.conj(d), d, grid)
    bx = chi * tx.imag / (2 * kmag)
    by = chi * ty.imag / (2 * kmag)
    gm = chi * tl.imag / (4 * kmag)
    coeffs = _coefficients(bx, by, gm, grid, mask.interior, params, params.kperp_hat)
    logger.debug(
        f"β, γ at |κ|={kmag:.4g}: max|β|={coeffs.beta.magnitude[mask.interior].max():.3e}, "
        f"transverse gap {coeffs.flatness_gap:.3e}"
    )
    return coeffs


def beta_gamma_multi(
    data: InternalData, mask: DomainMask, rho_set: Optional[RhoSet] = None
) -> list[TransportCoefficients]:
    """The two coefficient pairs of the gradient route.

    ``data`` holds ``d_1, d_2`` for ``ρ_1 = -ρ_2``, ``ρ_2 = κ_1 + iκ_2``. The first pair
    uses ``Re(d_2∇d_1 - d_1∇d_2)`` with ``χ = 1``; the second is the conjugate-pair
    form of ``d_2``.

    Raises:
        ConfigurationError: If the data do not carry the ``ρ_1 = -ρ_2`` pairing
    """
    if len(data) != 2:
        raise ConfigurationError(f"the gradient route needs exactly two data, got {len(data)}")
    params = list(rho_set.params) if rho_set is not None else list(data.params)
    if len(params) != 2 or any(p is None for p in params):
        raise ConfigurationError("missing frequency metadata for the gradient route")
    p1, p2 = params
    if not np.allclose(p1.rho, -p2.rho, rtol=1e-12, atol=0.0):
        raise ConfigurationError("data are not paired as ρ_1 = -ρ_2")
    if data.grid != mask.grid:
        raise DimensionError("data and mask live on different grids")
    _check_center(data, mask)
    grid = mask.grid
    kmag = p2.magnitude

    tx, ty, tl = _pair_terms(data.data[0].values, data.data[1].values, grid)
    first = _coefficients(
        tx.real / (2 * kmag),
        ty.real / (2 * kmag),
        tl.real / (4 * kmag),
        grid,
        mask.interior,
        p1,
        None,
    )
    second = beta_gamma_two(data, mask, params=p2, index=1)
    return [first, second]


def assemble_gamma(
    coeffs: Sequence[TransportCoefficients], cond_max: float = 1e6
) -> GradientCoefficient:
    """Solve ``A(x)Γ(x) = (γ_1, γ_2)`` pointwise, with the β_j as rows of A.

    Raises:
        DegeneracyError: If A is worse conditioned than ``cond_max`` at a valid node
    """
    if len(coeffs) != 2:
        raise ConfigurationError(f"need two coefficient pairs, got {len(coeffs)}")
    c1, c2 = coeffs
    grid = c1.grid
    valid = c1.valid & c2.valid
    A = np.empty(grid.shape + (2, 2))
    A[..., 0, 0], A[..., 0, 1] = c1.beta.x, c1.beta.y
    A[..., 1, 0], A[..., 1, 1] = c2.beta.x, c2.beta.y
    rhs = np.stack([c1.gamma.values, c2.gamma.values], axis=-1)

    Av = A[valid]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.linalg.cond(Av)
    cond = np.where(np.isfinite(cond), cond, np.inf)
    worst = int(np.argmax(cond))
    cmax = float(cond[worst])
    if cmax > cond_max:
        node = tuple(int(i) for i in np.argwhere(valid)[worst])
        logger.error(f"β_1, β_2 degenerate at node {node}: condition {cmax:.3e}")
        raise DegeneracyError(
            f"β_1, β_2 do not form a basis at node {node} (condition {cmax:.3e} > {cond_max:.1e})",
            node=node,
        )
    sol = np.linalg.solve(Av, rhs[valid][..., None])[..., 0]
    gx = np.zeros(grid.shape)
    gy = np.zeros(grid.shape)
    gx[valid], gy[valid] = sol[:, 0], sol[:, 1]
    field = VectorField(grid=grid, x=gx, y=gy)

    # curl stencil needs valid neighbours
    inner = valid.copy()
    inner[1:-1, 1:-1] &= valid[2:, 1:-1] & valid[:-2, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2]
    inner[[0, -1], :] = False
    inner[:, [0, -1]] = False
    curl_res = float(np.abs(curl(field).values[inner]).max()) if inner.any() else 0.0
    logger.debug(f"Γ assembled: condition max {cmax:.3e}, curl residual {curl_res:.3e}")
    return GradientCoefficient(
        gamma=field, valid=valid, condition_max=cmax, curl_residual=curl_res
    )


# ============================================================================
# Diagnostics
# ============================================================================


def flatness_gap(coeffs: TransportCoefficients, reference: Optional[VectorField] = None) -> float:
    """``max|β - β_ref|`` over valid nodes, or the transverse gap when no reference is given."""
    if reference is None:
        if coeffs.params is None:
            raise ConfigurationError("a transverse gap needs the frequency metadata")
        return _transverse_gap(coeffs.beta, coeffs.valid, coeffs.params.kperp_hat)
    v = coeffs.valid
    return float(np.hypot(coeffs.beta.x - reference.x, coeffs.beta.y - reference.y)[v].max())


def transport_residual(coeffs: TransportCoefficients, mu: ScalarField) -> float:
    """``max|β·∇μ + γμ|`` over valid nodes."""
    g = coeffs.grid
    mx, my = gradient_values(mu.values, g.dx, g.dy)
    r = coeffs.beta.x * mx + coeffs.beta.y * my + coeffs.gamma.values * mu.values
    return float(np.abs(r[coeffs.valid]).max())


def flatness_remainder(
    psi_1: ComplexField, psi_2: ComplexField, params: CGOParams
) -> VectorField:
    """The real deviation ĥ with ``β = μ²(-κ̂⊥ + ĥ)`` for CGO data.

    ``psi_1`` belongs to ``ρ`` and ``psi_2`` to ``ρ̄``. With ``S = ψ_1 + ψ_2 + ψ_1ψ_2`` and
    ``T = ∇ψ_2(1 + ψ_1) - ∇ψ_1(1 + ψ_2)``, ``ĥ = -κ̂⊥·Re S + Im T/(2|κ|)``.
    """
    if psi_1.grid != psi_2.grid:
        raise DimensionError("remainders live on different grids")
    g = psi_1.grid
    p1, p2 = psi_1.values, psi_2.values
    s = (p1 + p2 + p1 * p2).real
    g1x, g1y = gradient_values(p1, g.dx, g.dy)
    g2x, g2y = gradient_values(p2, g.dx, g.dy)
    tx = g2x * (1 + p1) - g1x * (1 + p2)
    ty = g2y * (1 + p1) - g1y * (1 + p2)
    e = params.kperp_hat
    k2 = 2 * params.magnitude
    return VectorField(grid=g, x=-e[0] * s + tx.imag / k2, y=-e[1] * s + ty.imag / k2)
