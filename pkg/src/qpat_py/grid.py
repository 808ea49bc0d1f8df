"""Structured-grid fields, finite-difference stencils and the reconstruction domain.

Fields are node-centred on a rectangle. Arrays have shape ``(nx, ny)`` and are
indexed ``values[i, j]`` with node ``(i, j)`` at ``(x0 + i*dx, y0 + j*dy)``;
flattening is row-major. Differential operators return a field of the same kind
whose one-node grid rim is zero; consumers intersect with
:meth:`DomainMask.valid` before trusting values.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from typing import Any, ClassVar, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, field_validator, model_validator
from scipy import ndimage

from qpat_py.errors import DimensionError, GeometryError, OutOfRangeError

logger = logging.getLogger(__name__)

MIN_NODES = 5

_CROSS = ndimage.generate_binary_structure(2, 1)


# ============================================================================
# Grid geometry
# ============================================================================


class GridSpec(BaseModel):
    """Node-centred rectangular grid."""

    nx: int = Field(..., description="Number of nodes along x")
    ny: int = Field(..., description="Number of nodes along y")
    x0: float = Field(0.0, description="x coordinate of node (0, 0)")
    y0: float = Field(0.0, description="y coordinate of node (0, 0)")
    dx: float = Field(..., gt=0, description="Node spacing along x")
    dy: float = Field(..., gt=0, description="Node spacing along y")

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={"example": {"nx": 129, "ny": 129, "x0": 0.0, "y0": 0.0,
                                       "dx": 1 / 128, "dy": 1 / 128}},
    )

    @field_validator("nx", "ny")
    @classmethod
    def _check_count(cls, v: int) -> int:
        if v < MIN_NODES:
            raise ValueError(f"grid needs at least {MIN_NODES} nodes per axis, got {v}")
        return v

    @classmethod
    def unit_square(cls, n: int) -> GridSpec:
        """Grid with ``n`` nodes per side covering ``[0, 1]^2``."""
        return cls(nx=n, ny=n, x0=0.0, y0=0.0, dx=1.0 / (n - 1), dy=1.0 / (n - 1))

    @classmethod
    def from_bounds(
        cls, xmin: float, xmax: float, ymin: float, ymax: float, nx: int, ny: int
    ) -> GridSpec:
        """Grid whose first and last nodes sit on the given bounds."""
        return cls(
            nx=nx, ny=ny, x0=xmin, y0=ymin, dx=(xmax - xmin) / (nx - 1), dy=(ymax - ymin) / (ny - 1)
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x_end(self) -> float:
        return self.x0 + (self.nx - 1) * self.dx

    @property
    def y_end(self) -> float:
        return self.y0 + (self.ny - 1) * self.dy

    @property
    def h(self) -> float:
        """Smallest spacing."""
        return min(self.dx, self.dy)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinates as two ``(nx, ny)`` arrays."""
        return np.meshgrid(self.x, self.y, indexing="ij")

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.x0 + i * self.dx, self.y0 + j * self.dy)

    def contains(self, p: Any, tol: float = 1e-12) -> bool:
        """Whether point ``p`` lies in the closed grid rectangle."""
        px, py = float(p[0]), float(p[1])
        ex = tol * max(1.0, self.x_end - self.x0)
        ey = tol * max(1.0, self.y_end - self.y0)
        return (self.x0 - ex <= px <= self.x_end + ex) and (self.y0 - ey <= py <= self.y_end + ey)

    def padded(self, pad: int) -> GridSpec:
        """Same spacing, ``pad`` extra nodes on every side."""
        return GridSpec(
            nx=self.nx + 2 * pad,
            ny=self.ny + 2 * pad,
            x0=self.x0 - pad * self.dx,
            y0=self.y0 - pad * self.dy,
            dx=self.dx,
            dy=self.dy,
        )


# ============================================================================
# Fields
# ============================================================================


class _GridField(BaseModel):
    """Immutable array of nodal values bound to a grid."""

    grid: GridSpec
    values: np.ndarray

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    dtype: ClassVar[type] = float

    @model_validator(mode="before")
    @classmethod
    def _coerce_values(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "values" not in data or "grid" not in data:
            return data
        grid = data["grid"]
        if not isinstance(grid, GridSpec):
            grid = GridSpec.model_validate(grid)
        arr = np.array(data["values"], dtype=cls.dtype)
        if arr.size != grid.nx * grid.ny:
            raise DimensionError(
                f"{cls.__name__} needs {grid.nx * grid.ny} values, got {arr.size}"
            )
        arr = arr.reshape(grid.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{cls.__name__} values must be finite")
        arr.flags.writeable = False
        return {**data, "grid": grid, "values": arr}

    @classmethod
    def from_function(cls, grid: GridSpec, fn: Callable[[np.ndarray, np.ndarray], Any]):
        """Sample ``fn(x, y)`` at every node."""
        X, Y = grid.coords()
        return cls(grid=grid, values=np.broadcast_to(fn(X, Y), grid.shape))

    @classmethod
    def constant(cls, grid: GridSpec, value: Any):
        return cls(grid=grid, values=np.full(grid.shape, value, dtype=cls.dtype))

    def with_values(self, values: np.ndarray):
        """New field of the same kind on the same grid."""
        return type(self)(grid=self.grid, values=values)

    def flat(self) -> np.ndarray:
        """Row-major copy of the values."""
        return self.values.ravel().copy()


class ScalarField(_GridField):
    """Real nodal field (μ, q, γ, D, σ_a, √D)."""

    dtype: ClassVar[type] = float


class ComplexField(_GridField):
    """Complex nodal field (d, u_ρ, ψ_ρ)."""

    dtype: ClassVar[type] = complex

    @property
    def real(self) -> ScalarField:
        return ScalarField(grid=self.grid, values=self.values.real)

    @property
    def imag(self) -> ScalarField:
        return ScalarField(grid=self.grid, values=self.values.imag)

    def conj(self) -> ComplexField:
        return ComplexField(grid=self.grid, values=np.conj(self.values))


class VectorField(BaseModel):
    """Real 2-vector nodal field (β, Γ)."""

    grid: GridSpec
    x: np.ndarray = Field(..., description="Component along e1")
    y: np.ndarray = Field(..., description="Component along e2")

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    @model_validator(mode="before")
    @classmethod
    def _coerce_components(cls, data: Any) -> Any:
        if not isinstance(data, dict) or "grid" not in data:
            return data
        grid = data["grid"]
        if not isinstance(grid, GridSpec):
            grid = GridSpec.model_validate(grid)
        out = {**data, "grid": grid}
        for key in ("x", "y"):
            arr = np.array(data[key], dtype=float)
            if arr.size != grid.nx * grid.ny:
                raise DimensionError(f"component {key} needs {grid.nx * grid.ny} values")
            arr = arr.reshape(grid.shape)
            if not np.all(np.isfinite(arr)):
                raise ValueError("VectorField components must be finite")
            arr.flags.writeable = False
            out[key] = arr
        return out

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.x, self.y)

    def stacked(self) -> np.ndarray:
        """Components as an ``(nx, ny, 2)`` array."""
        return np.stack([self.x, self.y], axis=-1)

    def scaled(self, c: float) -> VectorField:
        return VectorField(grid=self.grid, x=c * self.x, y=c * self.y)


AnyField = Union[ScalarField, ComplexField]


# ============================================================================
# Stencils on raw arrays
# ============================================================================


def _require_stencil(shape: tuple[int, ...]) -> None:
    if len(shape) != 2 or min(shape) < MIN_NODES:
        raise DimensionError(f"stencils need at least {MIN_NODES}x{MIN_NODES} nodes, got {shape}")


def laplacian_values(a: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """5-point Laplacian; the one-node rim is zero."""
    _require_stencil(a.shape)
    out = np.zeros_like(a)
    c = a[1:-1, 1:-1]
    out[1:-1, 1:-1] = (a[2:, 1:-1] - 2 * c + a[:-2, 1:-1]) / dx**2 + (
        a[1:-1, 2:] - 2 * c + a[1:-1, :-2]
    ) / dy**2
    return out


def gradient_values(a: np.ndarray, dx: float, dy: float) -> tuple[np.ndarray, np.ndarray]:
    """Centred first differences; the one-node rim is zero."""
    _require_stencil(a.shape)
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[1:-1, 1:-1] = (a[2:, 1:-1] - a[:-2, 1:-1]) / (2 * dx)
    gy[1:-1, 1:-1] = (a[1:-1, 2:] - a[1:-1, :-2]) / (2 * dy)
    return gx, gy


def bilinear_values(values: np.ndarray, grid: GridSpec, points: np.ndarray) -> np.ndarray:
    """Bilinear interpolation at ``points[..., 2]``, clamped to the grid rectangle."""
    px = np.clip((points[..., 0] - grid.x0) / grid.dx, 0.0, grid.nx - 1)
    py = np.clip((points[..., 1] - grid.y0) / grid.dy, 0.0, grid.ny - 1)
    i = np.minimum(np.floor(px).astype(int), grid.nx - 2)
    j = np.minimum(np.floor(py).astype(int), grid.ny - 2)
    tx = px - i
    ty = py - j
    return (
        (1 - tx) * (1 - ty) * values[i, j]
        + tx * (1 - ty) * values[i + 1, j]
        + (1 - tx) * ty * values[i, j + 1]
        + tx * ty * values[i + 1, j + 1]
    )


def extrapolate_nearest(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Copy of ``values`` where every invalid node takes its nearest valid value."""
    if not valid.any():
        raise GeometryError("no valid nodes to extrapolate from")
    if valid.all():
        return np.array(values, copy=True)
    idx = ndimage.distance_transform_edt(~valid, return_distances=False, return_indices=True)
    return np.asarray(values)[tuple(idx)]


def extrapolate_linear(values: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Like :func:`extrapolate_nearest`, but nodes next to the valid set get ``2v₁ - v₂``.

    ``v₁`` is the nearest valid node and ``v₂`` the next node on the same line, when
    that one is valid too. Farther nodes keep the nearest value.
    """
    out = extrapolate_nearest(values, valid)
    if valid.all():
        return out
    src = np.asarray(values)
    idx = ndimage.distance_transform_edt(~valid, return_distances=False, return_indices=True)
    ii, jj = np.nonzero(~valid)
    n1i, n1j = idx[0][ii, jj], idx[1][ii, jj]
    di, dj = n1i - ii, n1j - jj
    n2i, n2j = n1i + di, n1j + dj
    nx, ny = valid.shape
    ok = (np.maximum(np.abs(di), np.abs(dj)) == 1) & (n2i >= 0) & (n2i < nx)
    ok &= (n2j >= 0) & (n2j < ny)
    ok[ok] &= valid[n2i[ok], n2j[ok]]
    out[ii[ok], jj[ok]] = 2 * src[n1i[ok], n1j[ok]] - src[n2i[ok], n2j[ok]]
    return out


# ============================================================================
# Field operations
# ============================================================================


def laplacian(f: AnyField) -> AnyField:
    """Discrete Laplacian of a real or complex field (rim set to zero)."""
    _require_stencil(f.values.shape)
    return f.with_values(laplacian_values(f.values, f.grid.dx, f.grid.dy))


def gradient(f: AnyField) -> tuple[AnyField, AnyField]:
    """Centred-difference gradient as a pair of same-kind fields."""
    gx, gy = gradient_values(f.values, f.grid.dx, f.grid.dy)
    return f.with_values(gx), f.with_values(gy)


def divergence(v: VectorField) -> ScalarField:
    """Centred divergence; rim set to zero."""
    gx, _ = gradient_values(v.x, v.grid.dx, v.grid.dy)
    _, gy = gradient_values(v.y, v.grid.dx, v.grid.dy)
    return ScalarField(grid=v.grid, values=gx + gy)


def curl(v: VectorField) -> ScalarField:
    """Scalar curl ``d1 v2 - d2 v1``; rim set to zero."""
    d1v2, _ = gradient_values(v.y, v.grid.dx, v.grid.dy)
    _, d2v1 = gradient_values(v.x, v.grid.dx, v.grid.dy)
    return ScalarField(grid=v.grid, values=d1v2 - d2v1)


def sample_bilinear(f: Union[AnyField, VectorField], p: Any) -> Any:
    """Bilinear interpolation of ``f`` at point ``p``.

    Raises:
        OutOfRangeError: If ``p`` lies outside the grid rectangle.
    """
    if not f.grid.contains(p):
        raise OutOfRangeError(f"point {tuple(p)} outside grid rectangle")
    pt = np.asarray(p, dtype=float)
    if isinstance(f, VectorField):
        return (
            float(bilinear_values(f.x, f.grid, pt)),
            float(bilinear_values(f.y, f.grid, pt)),
        )
    out = bilinear_values(f.values, f.grid, pt)
    return complex(out) if isinstance(f, ComplexField) else float(out)


def boundary_trace(f: AnyField, mask: DomainMask) -> np.ndarray:
    """Values of ``f`` at the mask boundary nodes, in counter-clockwise order."""
    if f.grid != mask.grid:
        raise DimensionError("field and mask live on different grids")
    nodes = mask.boundary_nodes
    return np.array(f.values[nodes[:, 0], nodes[:, 1]], copy=True)


# ============================================================================
# Norms
# ============================================================================


def discrete_c1_norm(
    values: np.ndarray, grid: GridSpec, where: Optional[np.ndarray] = None
) -> float:
    """Max of |value| and first-difference slopes over ``where`` (default all nodes).

    A difference counts only if both of its nodes are in ``where``.
    """
    a = np.asarray(values)
    w = np.ones(a.shape, dtype=bool) if where is None else where
    if not w.any():
        return 0.0
    vmax = np.abs(a[w]).max()
    sx = np.abs(np.diff(a, axis=0)) / grid.dx
    sy = np.abs(np.diff(a, axis=1)) / grid.dy
    wx = w[1:, :] & w[:-1, :]
    wy = w[:, 1:] & w[:, :-1]
    gx = sx[wx].max() if wx.any() else 0.0
    gy = sy[wy].max() if wy.any() else 0.0
    return float(max(vmax, gx, gy))


def relative_sup_error(approx: np.ndarray, exact: np.ndarray, where: np.ndarray) -> float:
    """``max|approx - exact| / max|exact|`` over ``where``."""
    scale = np.abs(exact[where]).max()
    err = np.abs(approx[where] - exact[where]).max()
    return float(err / scale) if scale > 0 else float(err)


def relative_c1_error(
    approx: np.ndarray, exact: np.ndarray, grid: GridSpec, where: np.ndarray
) -> float:
    """Discrete C1 norm of the error relative to that of the exact field."""
    scale = discrete_c1_norm(exact, grid, where)
    err = discrete_c1_norm(approx - exact, grid, where)
    return err / scale if scale > 0 else err


# ============================================================================
# Reconstruction domain
# ============================================================================


class DomainMask(BaseModel):
    """The reconstruction domain X on a grid: the full rectangle or an inscribed disk.

    Boundary nodes are inside nodes with at least one 4-neighbour outside; they are
    ordered counter-clockwise by angle about the mask centre and, joined in that
    order, form the star-shaped polygon used as the continuous boundary when
    characteristics are traced.
    """

    grid: GridSpec
    shape: Literal["rectangle", "disk"] = Field("rectangle", description="Domain shape")
    center: Optional[tuple[float, float]] = Field(None, description="Disk centre")
    radius: Optional[float] = Field(None, gt=0, description="Disk radius")

    model_config = ConfigDict(frozen=True)

    _inside: np.ndarray = PrivateAttr()
    _interior: np.ndarray = PrivateAttr()
    _boundary: np.ndarray = PrivateAttr()
    _theta: np.ndarray = PrivateAttr()
    _vertices: np.ndarray = PrivateAttr()
    _normals: np.ndarray = PrivateAttr()

    @model_validator(mode="after")
    def _check_geometry(self) -> DomainMask:
        g = self.grid
        if self.shape == "disk":
            if self.center is None or self.radius is None:
                raise ValueError("disk mask needs center and radius")
            cx, cy = self.center
            r = self.radius
            if not (cx - r > g.x0 and cx + r < g.x_end and cy - r > g.y0 and cy + r < g.y_end):
                raise ValueError("disk must fit strictly inside the grid rectangle")
            if r < 2 * max(g.dx, g.dy):
                raise ValueError("disk radius must span at least two grid cells")
        return self

    def model_post_init(self, __context: Any) -> None:
        g = self.grid
        X, Y = g.coords()
        if self.shape == "disk":
            cx, cy = self.center  # type: ignore[misc]
            r = float(self.radius)  # type: ignore[arg-type]
            inside = (X - cx) ** 2 + (Y - cy) ** 2 <= r * r * (1 + 1e-12)
        else:
            inside = np.ones(g.shape, dtype=bool)
        interior = ndimage.binary_erosion(inside, structure=_CROSS, border_value=0)
        boundary = inside & ~interior
        if not interior.any():
            raise GeometryError("mask has no interior nodes")

        cx, cy = self.center_point
        bi, bj = np.nonzero(boundary)
        bx, by = X[bi, bj], Y[bi, bj]
        theta = np.arctan2(by - cy, bx - cx)
        order = np.lexsort((np.hypot(bx - cx, by - cy), theta))
        nodes = np.stack([bi[order], bj[order]], axis=1)
        verts = np.stack([bx[order], by[order]], axis=1)

        self._inside = inside
        self._interior = interior
        self._boundary = nodes
        self._theta = theta[order]
        self._vertices = verts
        self._normals = self.normal_at(verts)
        for arr in (inside, interior, nodes, self._theta, verts, self._normals):
            arr.flags.writeable = False
        logger.debug(
            f"Built {self.shape} mask: {int(inside.sum())} inside nodes, "
            f"{len(nodes)} boundary nodes"
        )

    @classmethod
    def rectangle(cls, grid: GridSpec) -> DomainMask:
        return cls(grid=grid, shape="rectangle")

    @classmethod
    def disk(cls, grid: GridSpec, center: tuple[float, float], radius: float) -> DomainMask:
        return cls(grid=grid, shape="disk", center=center, radius=radius)

    # ------------------------------------------------------------------ geometry

    @property
    def center_point(self) -> tuple[float, float]:
        """Domain centre x_c used for envelope centring."""
        if self.shape == "disk":
            return (float(self.center[0]), float(self.center[1]))  # type: ignore[index]
        g = self.grid
        return (0.5 * (g.x0 + g.x_end), 0.5 * (g.y0 + g.y_end))

    @property
    def satisfies_r0(self) -> bool:
        """Uniform strict convexity of the boundary (true for disks only)."""
        return self.shape == "disk"

    @property
    def half_width(self) -> float:
        """Half of the larger extent of X."""
        if self.shape == "disk":
            return float(self.radius)  # type: ignore[arg-type]
        g = self.grid
        return 0.5 * max(g.x_end - g.x0, g.y_end - g.y0)

    @property
    def diameter(self) -> float:
        if self.shape == "disk":
            return 2.0 * float(self.radius)  # type: ignore[arg-type]
        g = self.grid
        return float(np.hypot(g.x_end - g.x0, g.y_end - g.y0))

    @property
    def inside(self) -> np.ndarray:
        return self._inside

    @property
    def interior(self) -> np.ndarray:
        return self._interior

    @property
    def boundary_nodes(self) -> np.ndarray:
        """``(nb, 2)`` integer node indices in counter-clockwise order."""
        return self._boundary

    @property
    def boundary_points(self) -> np.ndarray:
        return self._vertices

    @property
    def normals(self) -> np.ndarray:
        """Outward unit normals at the boundary nodes."""
        return self._normals

    @property
    def boundary_mask(self) -> np.ndarray:
        out = np.zeros(self.grid.shape, dtype=bool)
        out[self._boundary[:, 0], self._boundary[:, 1]] = True
        return out

    def arclength(self) -> np.ndarray:
        """Arclength parameter of each boundary node along the traversal."""
        seg = np.hypot(*np.diff(self._vertices, axis=0).T)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def valid(self, rim: int = 1) -> np.ndarray:
        """Inside nodes at least ``rim`` 4-steps away from the outside."""
        out = self._inside
        for _ in range(rim):
            out = ndimage.binary_erosion(out, structure=_CROSS, border_value=0)
        return out

    def boundary_values(self, fn: Callable[[np.ndarray, np.ndarray], Any]) -> np.ndarray:
        """Evaluate ``fn(x, y)`` at the boundary nodes."""
        v = self._vertices
        return np.broadcast_to(fn(v[:, 0], v[:, 1]), (len(v),)).copy()

    # --------------------------------------------------- continuous boundary

    def _edge(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Polygon edge hit by the ray from the centre through each point."""
        c = np.asarray(self.center_point)
        d = points - c
        th = np.arctan2(d[..., 1], d[..., 0])
        nb = len(self._theta)
        k = (np.searchsorted(self._theta, th, side="right") - 1) % nb
        kn = (k + 1) % nb
        P = self._vertices[k] - c
        E = self._vertices[kn] - self._vertices[k]
        u = np.stack([np.cos(th), np.sin(th)], axis=-1)
        denom = u[..., 0] * E[..., 1] - u[..., 1] * E[..., 0]
        s = (P[..., 0] * E[..., 1] - P[..., 1] * E[..., 0]) / denom
        t = ((s[..., None] * u - P) * E).sum(axis=-1) / (E * E).sum(axis=-1)
        return k, kn, s, np.clip(t, 0.0, 1.0)

    def level(self, points: np.ndarray) -> np.ndarray:
        """Negative inside the boundary polygon, zero on it, positive outside."""
        if self.shape == "rectangle":
            g = self.grid
            return np.maximum.reduce(
                [g.x0 - points[..., 0], points[..., 0] - g.x_end,
                 g.y0 - points[..., 1], points[..., 1] - g.y_end]
            )
        c = np.asarray(self.center_point)
        r = np.hypot(points[..., 0] - c[0], points[..., 1] - c[1])
        _, _, s, _ = self._edge(points)
        return r - s

    def interpolate_boundary(self, values: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Linear interpolation of boundary-node values along the polygon edges."""
        k, kn, _, t = self._edge(points)
        v = np.asarray(values)
        return (1 - t) * v[k] + t * v[kn]

    def normal_at(self, points: np.ndarray) -> np.ndarray:
        """Outward unit normals at points on (or near) the boundary."""
        pts = np.asarray(points, dtype=float)
        if self.shape == "disk":
            d = pts - np.asarray(self.center_point)
            return d / np.linalg.norm(d, axis=-1, keepdims=True)
        g = self.grid
        dist = np.stack(
            [pts[..., 0] - g.x0, g.x_end - pts[..., 0], pts[..., 1] - g.y0, g.y_end - pts[..., 1]],
            axis=-1,
        )
        faces = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]])
        tol = 1e-9 * max(g.dx, g.dy)
        hit = dist <= dist.min(axis=-1, keepdims=True) + tol
        n = hit.astype(float) @ faces
        return n / np.linalg.norm(n, axis=-1, keepdims=True)
