"""Sparse finite-difference solves for the diffusion, Schrödinger and shifted problems.

All operators are assembled on the interior nodes of a :class:`DomainMask` with a
5-point stencil. Dirichlet values on the boundary nodes are eliminated into the
right-hand side. Operators are written as

    (A u)_p = diag_p u_p - sum_dir w_dir,p u_{p+dir}

so the diffusion and shifted operators are M-matrices.
"""

from __future__ import annotations

import logging
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from qpat_py.errors import (
    DimensionError,
    DomainError,
    EigenvalueCollisionError,
    IterationError,
)
from qpat_py.grid import ComplexField, DomainMask, ScalarField
from qpat_py.models import LinearSolveConfig

logger = logging.getLogger(__name__)

# Neighbour offsets (east, west, north, south)
DIRECTIONS = {"E": (1, 0), "W": (-1, 0), "N": (0, 1), "S": (0, -1)}

# Smallest admissible |U_ii| / max|U_ii| of the LU factor before calling it singular
PIVOT_RATIO_MIN = 1e-13


class EllipticSystem(NamedTuple):
    """Assembled operator on interior unknowns plus the boundary coupling."""

    matrix: sp.csr_matrix
    coupling: sp.csr_matrix
    mask: DomainMask
    unknowns: np.ndarray


# ============================================================================
# Assembly
# ============================================================================


def assemble_operator(
    mask: DomainMask, weights: dict[str, np.ndarray], diag: np.ndarray
) -> EllipticSystem:
    """Assemble ``diag·u - Σ w_dir·u_nbr`` on the interior nodes of ``mask``.

    Args:
        mask: Reconstruction domain; its interior nodes are the unknowns
        weights: Neighbour weights per direction key of :data:`DIRECTIONS`, as grid arrays
        diag: Diagonal coefficient as a grid array

    Returns:
        EllipticSystem whose ``coupling`` maps boundary values to right-hand-side terms
    """
    interior = mask.interior
    nx, ny = mask.grid.shape
    idx = np.full((nx, ny), -1, dtype=np.int64)
    pi, pj = np.nonzero(interior)
    n = len(pi)
    idx[pi, pj] = np.arange(n)

    bidx = np.full((nx, ny), -1, dtype=np.int64)
    nodes = mask.boundary_nodes
    bidx[nodes[:, 0], nodes[:, 1]] = np.arange(len(nodes))

    dtype = np.result_type(diag, *weights.values())
    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.asarray(diag[pi, pj], dtype=dtype)]
    brows, bcols, bvals = [], [], []

    for key, (di, dj) in DIRECTIONS.items():
        w = np.asarray(weights[key][pi, pj], dtype=dtype)
        ni, nj = pi + di, pj + dj
        inner = idx[ni, nj]
        is_inner = inner >= 0
        rows.append(np.arange(n)[is_inner])
        cols.append(inner[is_inner])
        vals.append(-w[is_inner])
        bnd = bidx[ni, nj]
        is_bnd = ~is_inner
        if np.any(bnd[is_bnd] < 0):
            raise DimensionError("interior node with a neighbour outside the mask")
        brows.append(np.arange(n)[is_bnd])
        bcols.append(bnd[is_bnd])
        bvals.append(w[is_bnd])

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    B = sp.csr_matrix(
        (np.concatenate(bvals), (np.concatenate(brows), np.concatenate(bcols))),
        shape=(n, len(nodes)),
    )
    return EllipticSystem(matrix=A, coupling=B, mask=mask, unknowns=interior)


def _laplacian_weights(mask: DomainMask) -> dict[str, np.ndarray]:
    g = mask.grid
    ones = np.ones(g.shape)
    return {"E": ones / g.dx**2, "W": ones / g.dx**2, "N": ones / g.dy**2, "S": ones / g.dy**2}


def assemble_diffusion(D: ScalarField, sigma_a: ScalarField, mask: DomainMask) -> EllipticSystem:
    """Flux-form ``-∇·D∇u + σ_a u`` with harmonic-mean face diffusivities."""
    g = mask.grid
    d = D.values
    weights = {k: np.zeros(g.shape) for k in DIRECTIONS}
    face_x = 2 * d[1:, :] * d[:-1, :] / (d[1:, :] + d[:-1, :])
    face_y = 2 * d[:, 1:] * d[:, :-1] / (d[:, 1:] + d[:, :-1])
    weights["E"][:-1, :] = face_x / g.dx**2
    weights["W"][1:, :] = face_x / g.dx**2
    weights["N"][:, :-1] = face_y / g.dy**2
    weights["S"][:, 1:] = face_y / g.dy**2
    diag = sum(weights.values()) + sigma_a.values
    return assemble_operator(mask, weights, diag)


def assemble_shifted(q: ScalarField, mask: DomainMask) -> EllipticSystem:
    """``-Δ - q`` with the 5-point Laplacian."""
    g = mask.grid
    diag = (2 / g.dx**2 + 2 / g.dy**2) * np.ones(g.shape) - q.values
    return assemble_operator(mask, _laplacian_weights(mask), diag)


# ============================================================================
# Solving
# ============================================================================


def _check_grid(mask: DomainMask, *fields: Union[ScalarField, ComplexField]) -> None:
    for f in fields:
        if f.grid != mask.grid:
            raise DimensionError("field and mask live on different grids")


def _boundary_vector(mask: DomainMask, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g)
    if g.ndim == 0:
        g = np.full(len(mask.boundary_nodes), g)
    if g.shape != (len(mask.boundary_nodes),):
        raise DimensionError(
            f"boundary data needs {len(mask.boundary_nodes)} values, got {g.shape}"
        )
    return g


def _factor(A: sp.csr_matrix, label: str) -> spla.SuperLU:
    try:
        lu = spla.splu(A.tocsc())
    except RuntimeError as e:
        logger.error(f"{label}: factorization failed: {e}")
        raise EigenvalueCollisionError(
            f"{label}: singular system ({e}); 0 is a discrete eigenvalue, "
            "try a different potential extension or grid"
        ) from e
    pivots = np.abs(lu.U.diagonal())
    if pivots.min() < PIVOT_RATIO_MIN * pivots.max():
        logger.error(f"{label}: pivot ratio {pivots.min() / pivots.max():.2e}")
        raise EigenvalueCollisionError(
            f"{label}: near-singular system (pivot ratio {pivots.min() / pivots.max():.2e}); "
            "0 is close to a discrete eigenvalue, try a different potential extension or grid"
        )
    return lu


def _lu_solve(lu: spla.SuperLU, b: np.ndarray) -> np.ndarray:
    # A real factor cannot take a complex right-hand side in one call
    if np.iscomplexobj(b) and not np.iscomplexobj(lu.U.data):
        return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(
            np.ascontiguousarray(b.imag)
        )
    return lu.solve(np.ascontiguousarray(b, dtype=np.result_type(b, lu.U.dtype)))


def _direct(A: sp.csr_matrix, b: np.ndarray, label: str) -> np.ndarray:
    return factor_matrix(A, label)(b)


def factor_matrix(A: sp.spmatrix, label: str = "elliptic") -> Callable[[np.ndarray], np.ndarray]:
    """Factor ``A`` once and return ``b -> A⁻¹b`` with one step of iterative refinement.

    Raises:
        EigenvalueCollisionError: If ``A`` is singular or nearly so
    """
    A = sp.csr_matrix(A)
    lu = _factor(A, label)

    def solve(b: np.ndarray) -> np.ndarray:
        x = _lu_solve(lu, b)
        r = b - A @ x
        if np.linalg.norm(r) > 0:
            x = x + _lu_solve(lu, r)
        return x

    return solve


def _krylov(A: sp.csr_matrix, b: np.ndarray, cfg: LinearSolveConfig, label: str) -> np.ndarray:
    d = A.diagonal()
    M = sp.diags(1.0 / d)
    x, info = spla.bicgstab(A, b, M=M, rtol=cfg.rel_tol, atol=0.0, maxiter=cfg.max_iter)
    if info != 0:
        res = np.linalg.norm(b - A @ x) / np.linalg.norm(b)
        logger.error(f"{label}: BiCGSTAB stopped with info={info}, residual {res:.3e}")
        raise IterationError(
            f"{label}: Krylov solve did not converge (info={info}, relative residual {res:.3e})",
            residual=float(res),
        )
    return x


def solve_system(
    system: EllipticSystem,
    source: Optional[np.ndarray],
    g: np.ndarray,
    cfg: Optional[LinearSolveConfig] = None,
    label: str = "elliptic",
) -> tuple[np.ndarray, float]:
    """Solve ``A u = source + B g`` and scatter onto the grid.

    Returns:
        Grid array (boundary nodes carry ``g``, outside nodes 0) and the relative residual

    Raises:
        IterationError: If the residual exceeds ``cfg.rel_tol``
        EigenvalueCollisionError: If the operator is singular
    """
    cfg = cfg or LinearSolveConfig()
    mask = system.mask
    g = _boundary_vector(mask, g)
    A = system.matrix
    b = system.coupling @ g
    if source is not None:
        b = b + np.asarray(source)[system.unknowns]
    n = A.shape[0]
    dtype = np.result_type(A.dtype, b.dtype, g.dtype)

    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        x = np.zeros(n, dtype=dtype)
        residual = 0.0
    else:
        method = cfg.resolve(n)
        logger.debug(f"{label}: {n} unknowns, method={method}")
        x = _direct(A, b, label) if method == "direct" else _krylov(A, b, cfg, label)
        residual = float(np.linalg.norm(b - A @ x) / bnorm)
        if not np.all(np.isfinite(x)):
            raise EigenvalueCollisionError(f"{label}: non-finite solution, system is singular")
        if residual > cfg.rel_tol:
            logger.error(f"{label}: relative residual {residual:.3e} above {cfg.rel_tol:.1e}")
            raise IterationError(
                f"{label}: relative residual {residual:.3e} exceeds {cfg.rel_tol:.1e}",
                residual=residual,
            )
        logger.debug(f"{label}: relative residual {residual:.3e}")

    out = np.zeros(mask.grid.shape, dtype=dtype)
    out[system.unknowns] = x
    nodes = mask.boundary_nodes
    out[nodes[:, 0], nodes[:, 1]] = g
    return out, residual


# ============================================================================
# Public solves
# ============================================================================


def solve_diffusion(
    D: ScalarField,
    sigma_a: ScalarField,
    g: np.ndarray,
    mask: DomainMask,
    cfg: Optional[LinearSolveConfig] = None,
) -> ScalarField:
    """Solve ``-∇·D∇u + σ_a u = 0`` in X with ``u = g`` on the boundary nodes.

    Args:
        D: Diffusion coefficient, positive on the mask
        sigma_a: Absorption coefficient, positive on the mask
        g: Real boundary values ordered like ``mask.boundary_nodes``
        mask: Reconstruction domain
        cfg: Linear solver settings

    Raises:
        DomainError: If D or σ_a is not positive inside the mask
    """
    _check_grid(mask, D, sigma_a)
    if np.any(D.values[mask.inside] <= 0):
        raise DomainError("diffusion coefficient must be positive on the mask")
    if np.any(sigma_a.values[mask.inside] <= 0):
        raise DomainError("absorption coefficient must be positive on the mask")
    g = _boundary_vector(mask, g)
    if np.iscomplexobj(g):
        raise DomainError("diffusion illuminations are real; solve real and imaginary parts apart")
    values, _ = solve_system(assemble_diffusion(D, sigma_a, mask), None, g, cfg, "diffusion")
    return ScalarField(grid=mask.grid, values=values)


def solve_schrodinger(
    q: ScalarField,
    g: np.ndarray,
    mask: DomainMask,
    cfg: Optional[LinearSolveConfig] = None,
) -> ComplexField:
    """Solve ``Δu + q u = 0`` with (possibly complex) Dirichlet data ``g``."""
    _check_grid(mask, q)
    values, _ = solve_system(assemble_shifted(q, mask), None, g, cfg, "schrodinger")
    return ComplexField(grid=mask.grid, values=values)


def solve_shifted(
    q: ScalarField,
    rhs: ScalarField,
    bc: np.ndarray,
    mask: DomainMask,
    cfg: Optional[LinearSolveConfig] = None,
) -> ScalarField:
    """Solve ``-Δw - q w = rhs`` with ``w = bc`` on the boundary nodes."""
    _check_grid(mask, q, rhs)
    values, _ = solve_system(assemble_shifted(q, mask), rhs.values, bc, cfg, "shifted")
    return ScalarField(grid=mask.grid, values=np.real(values))
