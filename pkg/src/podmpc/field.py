"""
Uniform rectilinear 3-D grids and the vector fields sampled on them.

Fields store their samples as an array of shape ``(nx, ny, nz, 3)`` so that
``values[i, j, k]`` is the velocity at ``origin + (i*dx, j*dy, k*dz)``. When a
field is flattened (for serialization or for the snapshot matrix) the point
order is x fastest, then y, then z.

All differential operators use finite differences: second-order central
differences in the interior and one-sided stencils on boundary faces. Integrals
use the composite trapezoidal rule, whose weights are 1/8 at corners, 1/4 on
edges, 1/2 on faces and 1 in the interior, times the cell volume.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DimensionError, OutOfDomainError

__all__ = [
    "Grid3",
    "VectorField3",
    "ScalarField3",
    "inner_product",
    "norm",
    "sample",
    "sample_many",
    "sample_many_with_gradient",
    "gradient_op",
    "laplacian_op",
    "advect",
    "divergence",
    "boundary_flux",
    "write_vf3",
    "read_vf3",
    "format_vf3",
    "parse_vf3",
]

# Relative slack on bounding-box checks so points computed as origin + n*spacing
# are not rejected for rounding.
_BOX_RTOL = 1e-12


@dataclass(frozen=True)
class Grid3:
    """Uniform rectilinear grid.

    Parameters
    ----------
    origin : tuple of 3 floats
        Coordinates of the ``(0, 0, 0)`` node.
    spacing : tuple of 3 floats
        Node spacing ``(dx, dy, dz)``; strictly positive.
    dims : tuple of 3 ints
        Node counts ``(nx, ny, nz)``; each at least 2.
    """

    origin: tuple[float, float, float]
    spacing: tuple[float, float, float]
    dims: tuple[int, int, int]

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        spacing = tuple(float(v) for v in self.spacing)
        dims = tuple(int(v) for v in self.dims)
        if len(origin) != 3 or len(spacing) != 3 or len(dims) != 3:
            raise DimensionError("origin, spacing and dims need 3 entries each")
        if not all(np.isfinite(origin)) or not all(np.isfinite(spacing)):
            raise ValueError("grid origin and spacing must be finite")
        if min(spacing) <= 0.0:
            raise ValueError(f"grid spacing must be positive, got {spacing}")
        if min(dims) < 2:
            raise DimensionError(f"every grid dimension must be >= 2, got {dims}")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def from_bounds(cls, lower, upper, dims) -> Grid3:
        """Grid with ``dims`` nodes spanning the box ``[lower, upper]``."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        dims = tuple(int(d) for d in dims)
        spacing = (upper - lower) / (np.asarray(dims) - 1)
        return cls(tuple(lower), tuple(spacing), dims)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.dims

    @property
    def npoints(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def lower(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def upper(self) -> np.ndarray:
        return self.lower + np.array(self.spacing) * (np.array(self.dims) - 1)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """1-D node coordinates along x, y and z."""
        return tuple(o + h * np.arange(n) for o, h, n in zip(self.origin, self.spacing, self.dims))

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Node coordinate arrays of shape ``dims`` (``ij`` indexing)."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """All node coordinates as ``(npoints, 3)`` in storage order (x fastest)."""
        X, Y, Z = self.mesh()
        return np.stack([_flatten(X), _flatten(Y), _flatten(Z)], axis=1)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        slack = _BOX_RTOL * np.maximum(1.0, np.abs(self.upper - self.lower))
        return bool(np.all(p >= self.lower - slack) and np.all(p <= self.upper + slack))

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights, shape ``dims``."""
        w1 = []
        for h, n in zip(self.spacing, self.dims):
            w = np.full(n, h)
            w[0] = w[-1] = 0.5 * h
            w1.append(w)
        return np.einsum("i,j,k->ijk", *w1)


def _flatten(a: np.ndarray) -> np.ndarray:
    # (nx, ny, nz, ...) -> (npoints, ...) with x fastest
    return np.ascontiguousarray(np.swapaxes(a, 0, 2)).reshape((-1,) + a.shape[3:])


def _unflatten(a: np.ndarray, dims) -> np.ndarray:
    nx, ny, nz = dims
    return np.swapaxes(np.asarray(a).reshape((nz, ny, nx) + a.shape[1:]), 0, 2)


@dataclass(frozen=True, eq=False)
class VectorField3:
    """Three-component field sampled at every node of ``grid``."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        expected = self.grid.dims + (3,)
        if values.shape != expected:
            if values.size == 3 * self.grid.npoints and values.ndim <= 2:
                values = _unflatten(values.reshape(-1, 3), self.grid.dims)
            else:
                raise DimensionError(f"field samples have shape {values.shape}, expected {expected}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field samples must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: Grid3) -> VectorField3:
        return cls(grid, np.zeros(grid.dims + (3,)))

    @classmethod
    def constant(cls, grid: Grid3, v) -> VectorField3:
        return cls(grid, np.broadcast_to(np.asarray(v, dtype=float), grid.dims + (3,)))

    @classmethod
    def from_function(cls, grid: Grid3, func) -> VectorField3:
        """Sample ``func(X, Y, Z) -> (vx, vy, vz)`` on the grid nodes."""
        X, Y, Z = grid.mesh()
        comps = [np.broadcast_to(np.asarray(c, dtype=float), grid.dims) for c in func(X, Y, Z)]
        return cls(grid, np.stack(comps, axis=-1))

    def flat(self) -> np.ndarray:
        """Samples as ``(npoints, 3)`` in storage order."""
        return _flatten(self.values)

    def __add__(self, other: VectorField3) -> VectorField3:
        _check_same_grid(self, other)
        return VectorField3(self.grid, self.values + other.values)

    def __sub__(self, other: VectorField3) -> VectorField3:
        _check_same_grid(self, other)
        return VectorField3(self.grid, self.values - other.values)

    def __neg__(self) -> VectorField3:
        return VectorField3(self.grid, -self.values)

    def __mul__(self, alpha: float) -> VectorField3:
        return VectorField3(self.grid, float(alpha) * self.values)

    __rmul__ = __mul__

    def allclose(self, other: VectorField3, rtol=1e-9, atol=1e-12) -> bool:
        return self.grid == other.grid and np.allclose(self.values, other.values, rtol=rtol, atol=atol)


@dataclass(frozen=True, eq=False)
class ScalarField3:
    """One value per grid node, shape ``dims``."""

    grid: Grid3
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.dims:
            raise DimensionError(f"scalar samples have shape {values.shape}, expected {self.grid.dims}")
        if not np.all(np.isfinite(values)):
            raise ValueError("field samples must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def interior(self) -> np.ndarray:
        return self.values[1:-1, 1:-1, 1:-1]


def _check_same_grid(f, g):
    if f.grid != g.grid:
        raise DimensionError(f"grid mismatch: {f.grid} vs {g.grid}")


def inner_product(f: VectorField3, g: VectorField3) -> float:
    """Trapezoidal approximation of the volume integral of ``f . g``."""
    _check_same_grid(f, g)
    return float(np.sum(f.grid.weights * np.einsum("...c,...c->...", f.values, g.values)))


def norm(f: VectorField3) -> float:
    return float(np.sqrt(inner_product(f, f)))


def _locate(grid: Grid3, points: np.ndarray):
    """Cell indices and local coordinates for trilinear interpolation."""
    lower = grid.lower
    upper = grid.upper
    slack = _BOX_RTOL * np.maximum(1.0, np.abs(upper - lower))
    outside = np.any((points < lower - slack) | (points > upper + slack), axis=1)
    if np.any(outside):
        bad = points[np.argmax(outside)]
        raise OutOfDomainError(bad, f"point {tuple(bad.tolist())} lies outside the grid box "
                                    f"[{lower.tolist()}, {upper.tolist()}]")
    s = (points - lower) / np.array(grid.spacing)
    # snap coordinates within rounding of a node so node queries are exact
    nearest = np.round(s)
    s = np.where(np.abs(s - nearest) <= 1e-9, nearest, s)
    dims = np.array(grid.dims)
    idx = np.clip(np.floor(s).astype(np.int64), 0, dims - 2)
    frac = np.clip(s - idx, 0.0, 1.0)
    return idx, frac


def sample_many(values: np.ndarray, grid: Grid3, points) -> np.ndarray:
    """Trilinear interpolation of node data at many points.

    ``values`` has shape ``dims + trailing`` (e.g. a vector field's ``values``
    or a stack of modes); the result has shape ``(len(points),) + trailing``.
    Raises :class:`OutOfDomainError` for the first point outside the box.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    idx, frac = _locate(grid, points)
    i, j, k = idx.T
    fx, fy, fz = frac.T
    trailing = values.shape[3:]
    expand = (slice(None),) + (None,) * len(trailing)
    fx, fy, fz = fx[expand], fy[expand], fz[expand]
    out = np.zeros((len(points),) + trailing)
    for di, wx in ((0, 1.0 - fx), (1, fx)):
        for dj, wy in ((0, 1.0 - fy), (1, fy)):
            wxy = wx * wy
            for dk, wz in ((0, 1.0 - fz), (1, fz)):
                out += (wxy * wz) * values[i + di, j + dj, k + dk]
    return out


def sample_many_with_gradient(values: np.ndarray, grid: Grid3, points):
    """Trilinear interpolant and its spatial gradient at many points.

    Returns ``(out, grad)`` where ``out`` matches :func:`sample_many` and
    ``grad`` has one extra trailing axis of length 3 holding ``d out / d x_j``.
    The gradient is that of the cell containing the point (one-sided on cell
    faces).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    idx, frac = _locate(grid, points)
    i, j, k = idx.T
    trailing = values.shape[3:]
    expand = (slice(None),) + (None,) * len(trailing)
    fx, fy, fz = (f[expand] for f in frac.T)
    inv = 1.0 / np.array(grid.spacing)
    out = np.zeros((len(points),) + trailing)
    grad = np.zeros((len(points),) + trailing + (3,))
    for di, wx, dx in ((0, 1.0 - fx, -inv[0]), (1, fx, inv[0])):
        for dj, wy, dy in ((0, 1.0 - fy, -inv[1]), (1, fy, inv[1])):
            for dk, wz, dz in ((0, 1.0 - fz, -inv[2]), (1, fz, inv[2])):
                node = values[i + di, j + dj, k + dk]
                out += (wx * wy * wz) * node
                grad[..., 0] += (dx * wy * wz) * node
                grad[..., 1] += (wx * dy * wz) * node
                grad[..., 2] += (wx * wy * dz) * node
    return out, grad


def sample(f: VectorField3, p) -> np.ndarray:
    """Trilinear interpolation of ``f`` at the single position ``p``."""
    p = np.asarray(p, dtype=float).reshape(3)
    return sample_many(f.values, f.grid, p[None, :])[0]


def _derivative(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    # central in the interior, first-order one-sided on the two boundary faces
    return np.gradient(a, h, axis=axis, edge_order=1)


def gradient_op(f: VectorField3) -> np.ndarray:
    """Velocity gradient, shape ``dims + (3, 3)`` with ``[..., i, j] = d f_i / d x_j``."""
    out = np.empty(f.grid.dims + (3, 3))
    for j, h in enumerate(f.grid.spacing):
        out[..., :, j] = _derivative(f.values, h, axis=j)
    return out


def _second_difference(a: np.ndarray, h: float, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    out = np.empty_like(a)
    out[1:-1] = (a[2:] - 2.0 * a[1:-1] + a[:-2]) / h**2
    out[0] = (a[0] - 2.0 * a[1] + a[2]) / h**2
    out[-1] = (a[-1] - 2.0 * a[-2] + a[-3]) / h**2
    return np.moveaxis(out, 0, axis)


def laplacian_op(f: VectorField3) -> VectorField3:
    """Componentwise 7-point Laplacian; boundary nodes use one-sided second differences."""
    if min(f.grid.dims) < 3:
        raise DimensionError(f"laplacian needs at least 3 nodes per axis, got {f.grid.dims}")
    out = np.zeros_like(f.values)
    for axis, h in enumerate(f.grid.spacing):
        out += _second_difference(f.values, h, axis)
    return VectorField3(f.grid, out)


def advect(a: VectorField3, b: VectorField3) -> VectorField3:
    """Pointwise ``(a . grad) b``."""
    _check_same_grid(a, b)
    return VectorField3(a.grid, np.einsum("...j,...ij->...i", a.values, gradient_op(b)))


def divergence(f: VectorField3) -> ScalarField3:
    div = np.zeros(f.grid.dims)
    for j, h in enumerate(f.grid.spacing):
        div += _derivative(f.values[..., j], h, axis=j)
    return ScalarField3(f.grid, div)


def boundary_flux(f: VectorField3) -> float:
    """Net outward flux of ``f`` through the six faces of the grid box.

    Zero for fields that vanish on the boundary; used to report how far a
    field is from the no-through-flow condition the pressure-free Galerkin
    model assumes.
    """
    total = 0.0
    for axis in range(3):
        others = [ax for ax in range(3) if ax != axis]
        w = []
        for ax in others:
            h, n = f.grid.spacing[ax], f.grid.dims[ax]
            wa = np.full(n, h)
            wa[0] = wa[-1] = 0.5 * h
            w.append(wa)
        face_w = np.outer(*w)
        comp = np.moveaxis(f.values[..., axis], axis, 0)
        total += float(np.sum(face_w * comp[-1]) - np.sum(face_w * comp[0]))
    return total


# -- VF3 v1 text format -------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def format_vf3(f: VectorField3) -> str:
    """Render ``f`` as a VF3 v1 block (header line plus one line per node)."""
    g = f.grid
    header = " ".join(["VF3", "1"] + [str(n) for n in g.dims]
                      + [_fmt(v) for v in g.origin] + [_fmt(v) for v in g.spacing])
    lines = [header]
    lines.extend(" ".join(_fmt(c) for c in row) for row in f.flat())
    return "\n".join(lines) + "\n"


def parse_vf3(lines, start: int = 0) -> tuple[VectorField3, int]:
    """Parse one VF3 block from ``lines`` beginning at ``start``.

    Returns the field and the index of the first line after the block.
    """
    header = lines[start].split()
    if len(header) != 11 or header[0] != "VF3" or header[1] != "1":
        raise ValueError(f"line {start + 1}: not a VF3 v1 header: {lines[start]!r}")
    dims = tuple(int(v) for v in header[2:5])
    grid = Grid3(tuple(float(v) for v in header[5:8]), tuple(float(v) for v in header[8:11]), dims)
    n = grid.npoints
    body = lines[start + 1:start + 1 + n]
    if len(body) != n:
        raise ValueError(f"VF3 block at line {start + 1} is truncated: {len(body)} of {n} rows")
    data = np.array([[float(v) for v in row.split()] for row in body])
    if data.shape != (n, 3):
        raise ValueError(f"VF3 block at line {start + 1}: every row needs 3 values")
    return VectorField3(grid, _unflatten(data, dims)), start + 1 + n


def write_vf3(path, f: VectorField3) -> None:
    Path(path).write_text(format_vf3(f), encoding="utf-8", newline="\n")


def read_vf3(path) -> VectorField3:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    field, _ = parse_vf3(lines)
    return field
