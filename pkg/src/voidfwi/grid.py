"""Structured 1D/2D meshes with tensor-product Lagrange elements.

Nodes are numbered lexicographically on the global node lattice with the
x index running fastest. Inside an element the local numbering follows the
same rule, so local node ``a = ix + (p + 1) * iy``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre
from scipy import sparse


class GridError(ValueError):
    """Raised for invalid grid construction or out-of-domain queries."""


@lru_cache(maxsize=None)
def gll_nodes(degree: int) -> np.ndarray:
    """Gauss-Lobatto-Legendre points on [-1, 1] for a degree-``degree`` basis."""
    if degree < 1:
        raise GridError(f"polynomial degree must be >= 1, got {degree}")
    if degree == 1:
        nodes = np.array([-1.0, 1.0])
    else:
        interior = legendre.Legendre.basis(degree).deriv().roots()
        nodes = np.concatenate(([-1.0], np.sort(interior.real), [1.0]))
    nodes.setflags(write=False)
    return nodes


def lagrange_1d(nodes: np.ndarray, xi) -> tuple[np.ndarray, np.ndarray]:
    """Values and first derivatives of the 1D Lagrange basis.

    Returns two arrays of shape ``xi.shape + (len(nodes),)``.
    """
    xi = np.asarray(xi, dtype=float)
    n = len(nodes)
    x = xi[..., None]
    vals = np.ones(xi.shape + (n,))
    ders = np.zeros(xi.shape + (n,))
    for j in range(n):
        others = [m for m in range(n) if m != j]
        denom = np.prod([nodes[j] - nodes[m] for m in others])
        factors = [x[..., 0] - nodes[m] for m in others]
        vals[..., j] = np.prod(factors, axis=0) / denom
        d = np.zeros(xi.shape)
        for k in range(len(others)):
            d += np.prod([factors[m] for m in range(len(others)) if m != k], axis=0)
        ders[..., j] = d / denom
    return vals, ders


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (nq, dim) reference coordinates
    weights: np.ndarray  # (nq,)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


def gauss_rule(dimension: int, npoints: int) -> QuadratureRule:
    """Tensor Gauss-Legendre rule with ``npoints`` points per axis."""
    x, w = legendre.leggauss(npoints)
    if dimension == 1:
        return QuadratureRule(x[:, None].copy(), w.copy())
    xx, yy = np.meshgrid(x, x, indexing="xy")
    wx, wy = np.meshgrid(w, w, indexing="xy")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return QuadratureRule(pts, (wx * wy).ravel())


@dataclass(frozen=True)
class Grid:
    dimension: int
    counts: tuple[int, ...]
    element_size: tuple[float, ...]
    origin: tuple[float, ...]
    extents: tuple[float, ...]
    degree: int
    coords: np.ndarray = field(repr=False)
    connectivity: np.ndarray = field(repr=False)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.counts))

    @property
    def n_nodes(self) -> int:
        return self.coords.shape[0]

    @property
    def nodes_per_axis(self) -> tuple[int, ...]:
        return tuple(c * self.degree + 1 for c in self.counts)

    @property
    def nodes_per_element(self) -> int:
        return (self.degree + 1) ** self.dimension

    @property
    def element_measure(self) -> float:
        return float(np.prod(self.element_size))

    @property
    def jacobian_det(self) -> float:
        """Reference-to-physical volume ratio (uniform over the grid)."""
        return self.element_measure / 2.0**self.dimension

    def element_index(self, multi_index) -> int:
        if self.dimension == 1:
            return int(multi_index[0])
        return int(multi_index[0] + self.counts[0] * multi_index[1])

    def element_multi_index(self, element: int) -> tuple[int, ...]:
        if self.dimension == 1:
            return (int(element),)
        return (int(element % self.counts[0]), int(element // self.counts[0]))

    def element_lower_corner(self, element) -> np.ndarray:
        """Lower-left physical corner of one element, or of many (vectorized)."""
        element = np.asarray(element)
        if self.dimension == 1:
            idx = element[..., None]
        else:
            idx = np.stack([element % self.counts[0], element // self.counts[0]], axis=-1)
        return np.asarray(self.origin) + idx * np.asarray(self.element_size)

    def reference_to_physical(self, element, reference_point) -> np.ndarray:
        lo = self.element_lower_corner(element)
        ref = np.asarray(reference_point, dtype=float)
        return lo + 0.5 * (ref + 1.0) * np.asarray(self.element_size)

    def basis(self, reference_points) -> tuple[np.ndarray, np.ndarray]:
        """Tensor basis at many reference points.

        Returns ``(values, gradients)`` with shapes ``(n, nloc)`` and
        ``(n, nloc, dim)``; gradients are with respect to reference
        coordinates.
        """
        ref = np.atleast_2d(np.asarray(reference_points, dtype=float))
        nodes = gll_nodes(self.degree)
        if self.dimension == 1:
            v, d = lagrange_1d(nodes, ref[:, 0])
            return v, d[:, :, None]
        vx, dx = lagrange_1d(nodes, ref[:, 0])
        vy, dy = lagrange_1d(nodes, ref[:, 1])
        n = ref.shape[0]
        vals = (vy[:, :, None] * vx[:, None, :]).reshape(n, -1)
        gx = (vy[:, :, None] * dx[:, None, :]).reshape(n, -1)
        gy = (dy[:, :, None] * vx[:, None, :]).reshape(n, -1)
        return vals, np.stack([gx, gy], axis=-1)

    def gradient_scale(self) -> np.ndarray:
        """Factor mapping reference gradients to physical gradients per axis."""
        return 2.0 / np.asarray(self.element_size)


def build_grid(dimension: int, extents, element_size, degree: int = 1, origin=None) -> Grid:
    """Uniform structured grid of ``extents`` split into cells of ``element_size``.

    ``extents`` and ``element_size`` accept a scalar (applied to every axis)
    or one value per axis.
    """
    if dimension not in (1, 2):
        raise GridError(f"dimension must be 1 or 2, got {dimension}")
    if degree < 1:
        raise GridError(f"polynomial degree must be >= 1, got {degree}")
    ext = np.broadcast_to(np.asarray(extents, dtype=float), (dimension,)).copy()
    h = np.broadcast_to(np.asarray(element_size, dtype=float), (dimension,)).copy()
    org = np.zeros(dimension) if origin is None else np.broadcast_to(
        np.asarray(origin, dtype=float), (dimension,)).copy()
    if np.any(ext <= 0) or np.any(h <= 0):
        raise GridError("extents and element sizes must be positive")
    ratio = ext / h
    counts = np.rint(ratio).astype(int)
    if np.any(counts < 1) or np.any(np.abs(ratio - counts) > 1e-9 * ratio):
        raise GridError(f"extents {ext.tolist()} not divisible by element size {h.tolist()}")

    p = degree
    ref = gll_nodes(p)
    axes = []
    for ax in range(dimension):
        lo = org[ax] + np.arange(counts[ax])[:, None] * h[ax]
        pts = lo + 0.5 * (ref[None, :-1] + 1.0) * h[ax]
        axes.append(np.append(pts.ravel(), org[ax] + counts[ax] * h[ax]))

    local = np.arange(p + 1)
    if dimension == 1:
        coords = axes[0][:, None]
        conn = np.arange(counts[0])[:, None] * p + local[None, :]
    else:
        nx_nodes = counts[0] * p + 1
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="xy")
        coords = np.column_stack([xx.ravel(), yy.ravel()])
        ex, ey = np.meshgrid(np.arange(counts[0]), np.arange(counts[1]), indexing="xy")
        lx, ly = np.meshgrid(local, local, indexing="xy")
        base = (ey.ravel() * p)[:, None] * nx_nodes + (ex.ravel() * p)[:, None]
        conn = base + (ly.ravel() * nx_nodes + lx.ravel())[None, :]

    coords.setflags(write=False)
    conn = np.ascontiguousarray(conn, dtype=np.int64)
    conn.setflags(write=False)
    return Grid(
        dimension=dimension,
        counts=tuple(int(c) for c in counts),
        element_size=tuple(float(v) for v in h),
        origin=tuple(float(v) for v in org),
        extents=tuple(float(v) for v in ext),
        degree=p,
        coords=coords,
        connectivity=conn,
    )


def evaluate_basis(grid: Grid, element: int, reference_point) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and reference gradients of ``element`` at one point."""
    if not 0 <= element < grid.n_elements:
        raise GridError(f"element {element} out of range")
    ref = np.asarray(reference_point, dtype=float).reshape(grid.dimension)
    if np.any(np.abs(ref) > 1.0 + 1e-12):
        raise GridError(f"reference point {ref.tolist()} outside [-1, 1]^{grid.dimension}")
    vals, grads = grid.basis(ref[None, :])
    return vals[0], grads[0]


def _locate_axis(x, lo, h, n):
    s = (x - lo) / h
    k = np.floor(s).astype(int)
    # an interface point belongs to the lower-index element
    on_face = (np.abs(s - np.rint(s)) < 1e-12 * np.maximum(1.0, np.abs(s))) & (np.rint(s) > 0)
    k = np.where(on_face, np.rint(s).astype(int) - 1, k)
    k = np.clip(k, 0, n - 1)
    xi = 2.0 * (x - (lo + k * h)) / h - 1.0
    return k, np.clip(xi, -1.0, 1.0)


def locate_points(grid: Grid, points) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`locate_point` for an ``(n, dim)`` array."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != grid.dimension:
        pts = pts.reshape(-1, grid.dimension)
    org = np.asarray(grid.origin)
    ext = np.asarray(grid.extents)
    tol = 1e-12 * np.maximum(ext, 1.0)
    if np.any(pts < org - tol) or np.any(pts > org + ext + tol):
        raise GridError("point outside the grid domain")
    ks, refs = [], []
    for ax in range(grid.dimension):
        k, xi = _locate_axis(pts[:, ax], org[ax], grid.element_size[ax], grid.counts[ax])
        ks.append(k)
        refs.append(xi)
    elem = ks[0] if grid.dimension == 1 else ks[0] + grid.counts[0] * ks[1]
    return elem.astype(np.int64), np.column_stack(refs)


def locate_point(grid: Grid, physical_point) -> tuple[int, np.ndarray]:
    """Owning element and reference coordinates of a physical point."""
    elem, ref = locate_points(grid, np.asarray(physical_point, dtype=float).reshape(1, -1))
    return int(elem[0]), ref[0]


def interpolation_matrix(grid: Grid, points) -> sparse.csr_matrix:
    """Sparse ``(n_points, n_nodes)`` matrix evaluating nodal fields at points."""
    elem, ref = locate_points(grid, points)
    vals, _ = grid.basis(ref)
    rows = np.repeat(np.arange(len(elem)), grid.nodes_per_element)
    cols = grid.connectivity[elem].ravel()
    mat = sparse.csr_matrix((vals.ravel(), (rows, cols)), shape=(len(elem), grid.n_nodes))
    mat.sum_duplicates()
    return mat
