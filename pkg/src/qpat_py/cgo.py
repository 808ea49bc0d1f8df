"""Complex geometrical optics (CGO) solutions ``u = e^{ρ·x}(1 + ψ)`` of ``Δu + qu = 0``.

The whole-plane problem is truncated to a padded box around the grid: the potential
is extended by a C² cutoff, and ψ solves

    Δψ + 2ρ·∇ψ + q̃ψ = -q̃

with ψ periodic across κ and, along κ, decaying away from the support of q̃.

All envelopes are centred at the mask centre ``x_c``: ``e^{ρ·(x - x_c)}``. The constant
factor ``e^{ρ·x_c}`` cancels in every reconstruction formula.
"""

from __future__ import annotations

import logging
from typing import Any, Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from qpat_py.elliptic import factor_matrix
from qpat_py.errors import (
    DimensionError,
    DivergenceError,
    GeometryError,
    IterationError,
    OverflowRescalingError,
)
from qpat_py.grid import (
    ComplexField,
    DomainMask,
    GridSpec,
    ScalarField,
    boundary_trace,
    gradient_values,
    laplacian_values,
)
from qpat_py.models import CGOConfig, LinearSolveConfig

logger = logging.getLogger(__name__)


# ============================================================================
# Frequencies
# ============================================================================


class CGOParams(BaseModel):
    """Complex frequency ``ρ = κ + iκ⊥`` with ``|κ| = |κ⊥|`` and ``κ·κ⊥ = 0``."""

    kappa: tuple[float, float] = Field(..., description="Real part κ (physical units)")
    kperp: tuple[float, float] = Field(..., description="Imaginary part κ⊥")

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_null(self) -> CGOParams:
        k = np.asarray(self.kappa)
        kp = np.asarray(self.kperp)
        nk, nkp = np.linalg.norm(k), np.linalg.norm(kp)
        if nk <= 0:
            raise ValueError("|κ| must be positive")
        if abs(nk - nkp) > 1e-12 * nk or abs(k @ kp) > 1e-12 * nk * nk:
            raise ValueError("need |κ| = |κ⊥| and κ·κ⊥ = 0 so that ρ·ρ = 0")
        return self

    @classmethod
    def from_angle(cls, magnitude: float, angle: float = 0.0, sign: int = 1) -> CGOParams:
        """κ along ``(cos a, sin a)``; κ⊥ is κ rotated by +90° (``sign=-1`` for -90°)."""
        k = (magnitude * np.cos(angle), magnitude * np.sin(angle))
        return cls(kappa=k, kperp=(-sign * k[1], sign * k[0]))

    @classmethod
    def for_mask(cls, kmag: float, mask: DomainMask, angle: float = 0.0) -> CGOParams:
        """Domain-scaled frequency: ``κ·(x - x_c)`` spans ``±kmag`` across X."""
        return cls.from_angle(kmag / mask.half_width, angle)

    @property
    def rho(self) -> np.ndarray:
        return np.asarray(self.kappa) + 1j * np.asarray(self.kperp)

    @property
    def magnitude(self) -> float:
        return float(np.hypot(*self.kappa))

    @property
    def khat(self) -> np.ndarray:
        return np.asarray(self.kappa) / self.magnitude

    @property
    def kperp_hat(self) -> np.ndarray:
        return np.asarray(self.kperp) / self.magnitude

    def conjugate(self) -> CGOParams:
        """Parameters of ``ρ̄ = κ - iκ⊥``."""
        return CGOParams(kappa=self.kappa, kperp=(-self.kperp[0], -self.kperp[1]))

    def negate(self) -> CGOParams:
        """Parameters of ``-ρ``."""
        return CGOParams(
            kappa=(-self.kappa[0], -self.kappa[1]), kperp=(-self.kperp[0], -self.kperp[1])
        )


class RhoSet(BaseModel):
    """The two frequencies ``ρ_1 = -ρ_2``, ``ρ_2 = κ_1 + iκ_2`` and their χ weights.

    ``chi_exponents[j]`` is the vector ``a_j`` with ``χ_j = e^{-a_j·(x - x_c)}``.
    """

    params: list[CGOParams]
    chi_exponents: list[tuple[float, float]]

    model_config = ConfigDict(frozen=True)


def multi_rho_set(kmag: float) -> RhoSet:
    """Frequencies for the gradient route, with ``κ_j = kmag·e_j``.

    Raises:
        ValueError: If ``kmag`` is not positive
    """
    if kmag <= 0:
        raise ValueError("kmag must be positive")
    rho2 = CGOParams(kappa=(kmag, 0.0), kperp=(0.0, kmag))
    rho1 = rho2.negate()
    return RhoSet(params=[rho1, rho2], chi_exponents=[(0.0, 0.0), (2 * kmag, 0.0)])


# ============================================================================
# Potential extension
# ============================================================================


class PaddedPotential(BaseModel):
    """Compactly supported extension q̃ of q on an enlarged grid."""

    q: ScalarField = Field(..., description="q̃ on the padded grid")
    pad: int = Field(..., ge=1, description="Nodes added on each side")
    taper_width: float = Field(..., gt=0, description="Width of the cutoff collar")
    mask: DomainMask = Field(..., description="Mask on the original grid")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @property
    def grid(self) -> GridSpec:
        return self.q.grid

    @property
    def window(self) -> tuple[slice, slice]:
        """Slices of the padded arrays covering the original grid."""
        nx, ny = self.mask.grid.shape
        return slice(self.pad, self.pad + nx), slice(self.pad, self.pad + ny)

    def restrict(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.window]


def _smoothstep(t: np.ndarray) -> np.ndarray:
    # C2 quintic 0 -> 1 on [0, 1]
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t * t)


def extend_potential(
    q: ScalarField, mask: DomainMask, pad_cells: int, taper_width: float
) -> PaddedPotential:
    """Extend ``q`` beyond X and cut it off smoothly inside the padding.

    Outside X, q takes the value at the nearest node of X and is multiplied by a C²
    cutoff of the distance to X that falls from 1 to 0 over ``taper_width``.

    Raises:
        GeometryError: If the padding cannot hold the collar plus two cells
    """
    if q.grid != mask.grid:
        raise DimensionError("potential and mask live on different grids")
    g = mask.grid
    h = min(g.dx, g.dy)
    if taper_width <= 0 or pad_cells < taper_width / h + 2:
        logger.error(f"pad of {pad_cells} cells cannot hold a collar of width {taper_width}")
        raise GeometryError(
            f"pad_cells={pad_cells} must be at least taper_width/h + 2 = "
            f"{taper_width / h + 2:.1f}"
        )
    pg = g.padded(pad_cells)
    inside = np.zeros(pg.shape, dtype=bool)
    window = (slice(pad_cells, pad_cells + g.nx), slice(pad_cells, pad_cells + g.ny))
    inside[window] = mask.inside
    values = np.zeros(pg.shape)
    values[window] = q.values

    dist, idx = ndimage.distance_transform_edt(
        ~inside, sampling=(g.dx, g.dy), return_indices=True
    )
    extended = values[tuple(idx)]
    cutoff = 1.0 - _smoothstep(dist / taper_width)
    q_tilde = extended * cutoff
    logger.debug(
        f"Extended potential to {pg.nx}x{pg.ny} nodes (pad {pad_cells}, taper {taper_width:.3g})"
    )
    return PaddedPotential(
        q=ScalarField(grid=pg, values=q_tilde), pad=pad_cells, taper_width=taper_width, mask=mask
    )


def extend_for_config(q: ScalarField, mask: DomainMask, cfg: CGOConfig) -> PaddedPotential:
    """:func:`extend_potential` with padding and collar taken from ``cfg``."""
    g = mask.grid
    # the collar must leave two clear cells: pad·(1 - taper_fraction) >= 2
    min_pad = int(np.ceil(2 / (1 - cfg.taper_fraction))) + 1
    pad = max(min_pad, int(round(cfg.pad_fraction * (max(g.nx, g.ny) - 1))))
    taper = cfg.taper_fraction * pad * min(g.dx, g.dy)
    return extend_potential(q, mask, pad, taper)


# ============================================================================
# Remainder ψ
# ============================================================================


def _canonical_frame(params: CGOParams) -> tuple[bool, bool, bool]:
    # (transpose, flip axis 0, flip axis 1) taking κ to +x and κ⊥ to +y
    kx, ky = params.kappa
    px, py = params.kperp
    tol = 1e-12 * params.magnitude
    if abs(ky) <= tol:
        return False, kx < 0, py < 0
    if abs(kx) <= tol:
        return True, ky < 0, px < 0
    logger.error(f"κ={params.kappa} is not aligned with a grid axis")
    raise GeometryError(f"κ={params.kappa} must lie along a grid axis for the remainder solve")


def cgo_inverse(
    grid: GridSpec, params: CGOParams, label: str = "cgo"
) -> Callable[[np.ndarray], np.ndarray]:
    """Decaying inverse ``f -> ψ`` of the discrete ``Δ + 2ρ·∇`` on ``grid``.

    Across κ the solution is periodic and handled by FFT. Along κ each Fourier mode
    obeys a three-term recurrence: when one root lies outside the unit circle, ψ keeps
    only the root that decays away from the source on each side; otherwise ψ is
    marched from the upstream edge with ``ψ = 0`` on its first two nodes. All modes
    are factored together once. ``f`` must vanish on the first and last two nodes
    along κ.

    Raises:
        GeometryError: If κ is oblique or ``|κ|·h >= 1`` along κ
    """
    transpose, flip_x, flip_y = _canonical_frame(params)
    hx, hy = (grid.dy, grid.dx) if transpose else (grid.dx, grid.dy)
    n, m = (grid.ny, grid.nx) if transpose else (grid.nx, grid.ny)
    k = params.magnitude
    if k * hx >= 1:
        logger.error(f"|κ|·h = {k * hx:.3f} leaves the centred stencil unresolved")
        raise GeometryError(
            f"|κ|={k:.4g} needs a step below {1 / k:.3e} along κ, got {hx:.3e}; refine the grid"
        )

    theta = 2 * np.pi * np.fft.fftfreq(m)
    c = -4 * np.sin(theta / 2) ** 2 / hy**2 - 2 * k * np.sin(theta) / hy
    a_lo, a_hi = 1 - k * hx, 1 + k * hx
    a0 = -2 + c * hx**2
    disc = np.sqrt((a0 * a0 - 4 * a_hi * a_lo).astype(complex))
    # cancellation-free roots of a_hi·r² + a0·r + a_lo
    s = -0.5 * (a0 + np.where(np.real(np.conj(a0) * disc) >= 0, 1.0, -1.0) * disc)
    r_big, r_small = s / a_hi, a_lo / s
    radiating = np.abs(r_big) > 1 + 1e-12

    rows, cols, vals = [], [], []

    def put(r: np.ndarray, cidx: np.ndarray, v: Any) -> None:
        r, cidx = np.broadcast_arrays(r, cidx)
        rows.append(r.ravel())
        cols.append(cidx.ravel())
        vals.append(np.broadcast_to(np.asarray(v, dtype=complex), r.shape).ravel())

    base = (np.flatnonzero(radiating) * n)[:, None]
    inner = base + np.arange(1, n - 1)
    put(base, base, -r_big[radiating][:, None])
    put(base, base + 1, 1.0)
    put(inner, inner - 1, a_lo)
    put(inner, inner, a0[radiating][:, None])
    put(inner, inner + 1, a_hi)
    last = base + n - 1
    put(last, last - 1, -r_small[radiating][:, None])
    put(last, last, 1.0)

    base = (np.flatnonzero(~radiating) * n)[:, None]
    march = base + np.arange(2, n)
    put(base, base, 1.0)
    put(base + 1, base + 1, 1.0)
    put(march, march - 2, a_lo)
    put(march, march - 1, a0[~radiating][:, None])
    put(march, march, a_hi)

    size = n * m
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    )
    solve = factor_matrix(A, label)
    logger.debug(
        f"{label}: {int(radiating.sum())}/{m} radiating modes, |κ|·h={k * hx:.3f}, {size} unknowns"
    )

    def to_frame(a: np.ndarray) -> np.ndarray:
        a = a.T if transpose else a
        a = a[::-1, :] if flip_x else a
        return a[:, ::-1] if flip_y else a

    def from_frame(a: np.ndarray) -> np.ndarray:
        a = a[:, ::-1] if flip_y else a
        a = a[::-1, :] if flip_x else a
        return a.T if transpose else a

    def apply(f: np.ndarray) -> np.ndarray:
        fh = (np.fft.fft(to_frame(np.asarray(f, dtype=complex)), axis=1) * hx**2).T
        rhs = np.zeros((m, n), dtype=complex)
        rhs[radiating, 1 : n - 1] = fh[radiating, 1 : n - 1]
        rhs[~radiating, 2:n] = fh[~radiating, 1 : n - 1]
        x = solve(rhs.ravel()).reshape(m, n)
        return np.ascontiguousarray(from_frame(np.fft.ifft(x.T, axis=1)))

    return apply


def solve_psi(
    qp: PaddedPotential, params: CGOParams, cfg: Optional[LinearSolveConfig] = None
) -> ComplexField:
    """Solve ``(Δ + 2ρ·∇ + q̃)ψ = -q̃`` on the padded box for the decaying ψ.

    GMRES runs on ``ψ + G(q̃ψ) = -G q̃`` with ``G`` from :func:`cgo_inverse`.

    Raises:
        IterationError: If the relative residual exceeds ``cfg.rel_tol``
        GeometryError: If κ is oblique or unresolved on the grid
    """
    cfg = cfg or LinearSolveConfig()
    g = qp.grid
    q = qp.q.values
    if not np.any(q):
        return ComplexField(grid=g, values=np.zeros(g.shape, dtype=complex))
    inverse = cgo_inverse(g, params)
    size = q.size

    def matvec(v: np.ndarray) -> np.ndarray:
        v = np.asarray(v).reshape(g.shape)
        return (v + inverse(q * v)).ravel()

    op = spla.LinearOperator((size, size), matvec=matvec, dtype=complex)
    b = -inverse(q.astype(complex)).ravel()
    restart = 60
    x, info = spla.gmres(
        op,
        b,
        rtol=min(cfg.rel_tol, 1e-12),
        atol=0.0,
        restart=restart,
        maxiter=max(1, cfg.max_iter // restart),
    )
    residual = float(np.linalg.norm(b - op.matvec(x)) / np.linalg.norm(b))
    if info != 0 and residual > cfg.rel_tol:
        logger.error(
            f"CGO remainder solve failed at |κ|={params.magnitude:.4g}: "
            f"GMRES info={info}, residual {residual:.3e}"
        )
        raise IterationError(
            f"cgo: GMRES did not converge (info={info}, relative residual {residual:.3e})",
            residual=residual,
        )
    values = x.reshape(g.shape)
    logger.debug(
        f"ψ solve |κ|={params.magnitude:.4g}: max|ψ|={np.abs(values).max():.3e}, "
        f"residual {residual:.2e}"
    )
    return ComplexField(grid=g, values=values)


class BornResult(BaseModel):
    """Partial Born sum with its convergence record."""

    psi: ComplexField
    first_term: ComplexField
    terms: int
    contraction_ratio: float
    term_norms: list[float] = Field(default_factory=list)

    model_config = ConfigDict(arbitrary_types_allowed=True)


def born_series_psi(
    qp: PaddedPotential,
    params: CGOParams,
    jmax: int = 60,
    tol: float = 1e-10,
) -> BornResult:
    """Sum ``ψ = Σ ψ_j`` with ``Δψ_j + 2ρ·∇ψ_j = -q̃ψ_{j-1}`` and ``ψ_{-1} = 1``.

    Stops at the first term with ``‖ψ_j‖∞ < tol·(1 + ‖ψ_0‖∞)`` or after ``jmax`` terms.

    Raises:
        DivergenceError: If a term ratio reaches 1 once three terms are known
    """
    inverse = cgo_inverse(qp.grid, params, label="born")
    q = qp.q.values
    term = -inverse(q.astype(complex))
    first = term
    total = term.copy()
    norms = [float(np.abs(term).max())]
    stop = tol * (1 + norms[0])
    ratio = 0.0
    j = 1
    while norms[-1] >= stop and j < jmax:
        term = -inverse(q * term)
        norms.append(float(np.abs(term).max()))
        ratio = norms[-1] / norms[-2] if norms[-2] > 0 else 0.0
        if j >= 2 and ratio >= 1.0:
            logger.error(f"Born series diverging at term {j}: ratio {ratio:.3f}")
            raise DivergenceError(
                f"Born terms stopped contracting (ratio {ratio:.3f} at term {j}); "
                "increase |κ| or reduce the potential"
            )
        total += term
        j += 1
    logger.debug(f"Born series: {j} terms, last ratio {ratio:.3e}")
    return BornResult(
        psi=ComplexField(grid=qp.grid, values=total),
        first_term=ComplexField(grid=qp.grid, values=first),
        terms=j,
        contraction_ratio=ratio,
        term_norms=norms,
    )


# ============================================================================
# Solutions
# ============================================================================


class CGOSolution(BaseModel):
    """A CGO solution restricted to the original grid, with its boundary trace."""

    params: CGOParams
    psi: ComplexField = Field(..., description="ψ on the padded grid")
    u: ComplexField = Field(..., description="Centred u = e^{ρ·(x - x_c)}(1 + ψ)")
    trace: np.ndarray = Field(..., description="u at the mask boundary nodes")
    residual_norm: float
    center: tuple[float, float]
    pad: int = Field(..., description="Padding of the ψ grid on each side")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def psi_on_grid(self) -> np.ndarray:
        """ψ restricted to the original grid."""
        nx, ny = self.u.grid.shape
        return self.psi.values[self.pad : self.pad + nx, self.pad : self.pad + ny]


def envelope(
    grid: GridSpec, params: CGOParams, center: tuple[float, float], limit: float = 300.0
) -> np.ndarray:
    """Centred envelope ``e^{ρ·(x - x_c)}`` evaluated in closed form at the nodes.

    Raises:
        OverflowRescalingError: If the real exponent exceeds ``limit``
    """
    X, Y = grid.coords()
    rx, ry = params.rho
    expo = rx * (X - center[0]) + ry * (Y - center[1])
    peak = float(np.abs(expo.real).max())
    if peak > limit:
        logger.error(f"Envelope exponent {peak:.1f} exceeds {limit:.0f}")
        raise OverflowRescalingError(
            f"envelope exponent reaches {peak:.1f} (limit {limit:.0f}); reduce |κ| or recentre"
        )
    return np.exp(expo)


def assemble_cgo(
    qp: PaddedPotential, params: CGOParams, psi: ComplexField, overflow_limit: float = 300.0
) -> CGOSolution:
    """Form ``u`` on the original grid, its boundary trace and its equation residual.

    The residual ``‖Δu + qu‖∞/‖u‖∞`` on interior nodes is computed with the analytic
    envelope derivatives (``Δe = 0``, ``∇e = ρe``) and differenced ψ.
    """
    if psi.grid != qp.grid:
        raise DimensionError("ψ does not live on the padded grid")
    mask = qp.mask
    g = qp.grid
    center = mask.center_point
    e = envelope(mask.grid, params, center, overflow_limit)

    p = psi.values
    lap = laplacian_values(p, g.dx, g.dy)
    px, py = gradient_values(p, g.dx, g.dy)
    rx, ry = params.rho
    inner = lap + 2 * (rx * px + ry * py) + qp.q.values * (1 + p)

    one_plus = 1 + qp.restrict(p)
    u = e * one_plus
    where = mask.interior
    scale = np.abs(u[where]).max()
    residual = float(np.abs(e * qp.restrict(inner))[where].max() / scale)
    logger.debug(f"CGO |κ|={params.magnitude:.4g}: residual {residual:.2e}")

    field = ComplexField(grid=mask.grid, values=u)
    return CGOSolution(
        params=params,
        psi=psi,
        u=field,
        trace=boundary_trace(field, mask),
        residual_norm=residual,
        center=center,
        pad=qp.pad,
    )


def build_cgo(
    q: ScalarField,
    mask: DomainMask,
    params: CGOParams,
    cfg: Optional[CGOConfig] = None,
    method: str = "direct",
) -> CGOSolution:
    """Extend, solve for ψ (``direct`` or ``born``) and assemble in one call."""
    cfg = cfg or CGOConfig()
    qp = extend_for_config(q, mask, cfg)
    if method == "born":
        psi = born_series_psi(qp, params, cfg.born_jmax, cfg.born_tol).psi
    elif method == "direct":
        psi = solve_psi(qp, params, cfg.solver)
    else:
        raise ValueError(f"unknown ψ method {method!r}")
    return assemble_cgo(qp, params, psi, cfg.overflow_limit)


# ============================================================================
# Illumination perturbation
# ============================================================================


def boundary_c1_norm(values: np.ndarray, mask: DomainMask) -> float:
    """Max of |value| and arclength slopes along the closed boundary traversal."""
    v = np.asarray(values)
    pts = mask.boundary_points
    seg = np.hypot(*(np.roll(pts, -1, axis=0) - pts).T)
    slopes = np.abs(np.roll(v, -1) - v) / np.maximum(seg, 1e-300)
    return float(max(np.abs(v).max(), slopes.max()))


def perturb_illumination(
    trace: np.ndarray, eps: float, mask: DomainMask, seed: Any = 0, smooth_nodes: float = 4.0
) -> np.ndarray:
    """``trace + eps·n̂`` with n̂ a smooth complex boundary field of unit C¹ norm.

    The norm is measured on the stored (centred) trace values.
    """
    trace = np.asarray(trace)
    if eps == 0:
        return trace.copy()
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal(len(trace)) + 1j * rng.standard_normal(len(trace))
    smooth = ndimage.gaussian_filter1d(raw.real, smooth_nodes, mode="wrap") + 1j * (
        ndimage.gaussian_filter1d(raw.imag, smooth_nodes, mode="wrap")
    )
    n_hat = smooth / boundary_c1_norm(smooth, mask)
    return trace + eps * n_hat

