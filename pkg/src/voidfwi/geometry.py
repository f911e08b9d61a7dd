"""Implicit geometry, the FCM indicator and composed cut-cell quadrature.

Every primitive exposes ``level(points)``: negative strictly inside the
shape, positive outside, roughly a signed distance. Shapes describe voids or
fictitious regions, so a point is *in* a shape only when its level is below
``-BOUNDARY_TOL``; boundary points count as physical material.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import Grid, QuadratureRule, gauss_rule

BOUNDARY_TOL = 1e-12


class GeometryError(ValueError):
    pass


class Shape:
    """Base class for implicit shapes; subclasses implement :meth:`level`."""

    def level(self, points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return self.level(pts) < -BOUNDARY_TOL

    def __or__(self, other):
        return Union((self, other))

    def __and__(self, other):
        return Intersection((self, other))

    def __invert__(self):
        return Complement(self)


@dataclass(frozen=True)
class Circle(Shape):
    center: tuple[float, float]
    radius: float

    def level(self, points):
        d = points - np.asarray(self.center)
        return np.hypot(d[:, 0], d[:, 1]) - self.radius


@dataclass(frozen=True)
class Ellipse(Shape):
    """Ellipse with semi-axes ``(a, b)`` rotated counter-clockwise by ``angle_deg``."""

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    angle_deg: float = 0.0

    def level(self, points):
        a, b = self.semi_axes
        phi = np.deg2rad(self.angle_deg)
        d = points - np.asarray(self.center)
        xr = np.cos(phi) * d[:, 0] + np.sin(phi) * d[:, 1]
        yr = -np.sin(phi) * d[:, 0] + np.cos(phi) * d[:, 1]
        q = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        return (q - 1.0) * min(a, b)


@dataclass(frozen=True)
class Box(Shape):
    """Axis-aligned interval (1D) or box (2D) from ``lower`` to ``upper``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def level(self, points):
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.max(np.maximum(lo - points, points - hi), axis=1)


def build_spline(points) -> CubicSpline:
    """Natural cubic spline through ``points`` (an ``(n, 2)`` array)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise GeometryError("spline needs an (n, 2) array with n >= 2")
    if np.any(np.diff(pts[:, 0]) <= 0):
        raise GeometryError("spline abscissae must be strictly increasing")
    return CubicSpline(pts[:, 0], pts[:, 1], bc_type="natural")


@dataclass(frozen=True)
class BelowSpline(Shape):
    """Region under a cubic spline; material lies above the curve."""

    points: tuple[tuple[float, float], ...]
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_spline", build_spline(self.points))

    def level(self, points):
        return points[:, 1] - self._spline(points[:, 0])


@dataclass(frozen=True)
class Union(Shape):
    parts: tuple[Shape, ...]

    def level(self, points):
        return np.min([p.level(points) for p in self.parts], axis=0)


@dataclass(frozen=True)
class Intersection(Shape):
    parts: tuple[Shape, ...]

    def level(self, points):
        return np.max([p.level(points) for p in self.parts], axis=0)


@dataclass(frozen=True)
class Complement(Shape):
    part: Shape

    def level(self, points):
        return -self.part.level(points)


def union_of(shapes: Sequence[Shape]) -> Shape | None:
    shapes = tuple(shapes)
    if not shapes:
        return None
    return shapes[0] if len(shapes) == 1 else Union(shapes)


@dataclass(frozen=True)
class IndicatorField:
    """FCM indicator: ``alpha_phys`` in material, ``alpha_fict`` inside ``geometry``."""

    geometry: Shape | None = None
    alpha_phys: float = 1.0
    alpha_fict: float = 1e-3

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.geometry is None:
            return np.full(len(pts), self.alpha_phys)
        return np.where(self.geometry.contains(pts), self.alpha_fict, self.alpha_phys)


def evaluate_indicator(indicator: IndicatorField, point) -> float:
    return float(indicator(np.asarray(point, dtype=float).reshape(1, -1))[0])


class Classification(str, Enum):
    INSIDE = "fully_inside"  # entirely physical
    OUTSIDE = "fully_outside"  # entirely in the void / fictitious part
    CUT = "cut"


def _probe_offsets(dimension: int) -> np.ndarray:
    """Corners, center and edge midpoints of the reference cell [-1, 1]^d."""
    if dimension == 1:
        return np.array([[-1.0], [0.0], [1.0]])
    s = np.array([-1.0, 0.0, 1.0])
    xx, yy = np.meshgrid(s, s, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def _as_shapes(geometry) -> list[Shape]:
    if geometry is None:
        return []
    if isinstance(geometry, Shape):
        return [geometry]
    return [g for g in geometry if g is not None]


def _classify_cells(shapes, grid: Grid, element, centers, halves):
    """Classify sub-cells ``center + half * [-1, 1]^d`` of one element.

    Returns an int array: 0 physical, 1 void, 2 cut. A cell is cut if the
    probes disagree for any of the shapes.
    """
    probes = _probe_offsets(grid.dimension)
    ref = centers[:, None, :] + halves[:, None, None] * probes[None, :, :]
    phys = grid.reference_to_physical(element, ref.reshape(-1, grid.dimension))
    n = len(centers)
    status = np.zeros(n, dtype=int)
    any_void = np.zeros(n, dtype=bool)
    for shape in shapes:
        inside = shape.contains(phys).reshape(n, -1)
        all_in = inside.all(axis=1)
        some_in = inside.any(axis=1)
        status[some_in & ~all_in] = 2
        any_void |= all_in
    status[(status != 2) & any_void] = 1
    return status


def classify_element(geometry, grid: Grid, element: int) -> Classification:
    shapes = _as_shapes(geometry)
    if not shapes:
        return Classification.INSIDE
    code = _classify_cells(shapes, grid, element, np.zeros((1, grid.dimension)), np.ones(1))[0]
    return (Classification.INSIDE, Classification.OUTSIDE, Classification.CUT)[code]


def classify_elements(geometry, grid: Grid) -> np.ndarray:
    """Vectorized classification of every element (0 physical, 1 void, 2 cut)."""
    shapes = _as_shapes(geometry)
    ne = grid.n_elements
    if not shapes:
        return np.zeros(ne, dtype=int)
    probes = _probe_offsets(grid.dimension)
    elems = np.arange(ne)
    lo = grid.element_lower_corner(elems)
    h = np.asarray(grid.element_size)
    phys = lo[:, None, :] + 0.5 * (probes[None, :, :] + 1.0) * h
    phys = phys.reshape(-1, grid.dimension)
    status = np.zeros(ne, dtype=int)
    any_void = np.zeros(ne, dtype=bool)
    for shape in shapes:
        inside = shape.contains(phys).reshape(ne, -1)
        all_in = inside.all(axis=1)
        status[inside.any(axis=1) & ~all_in] = 2
        any_void |= all_in
    status[(status != 2) & any_void] = 1
    return status


@dataclass(frozen=True)
class ComposedQuadrature:
    """Quadrature of one element.

    ``ref_points`` are element reference coordinates, ``weights`` are
    physical (Jacobian included), and ``sample_points`` hold the physical
    center of the leaf cell each point belongs to; piecewise-constant fields
    such as the indicator are evaluated there.
    """

    element: int
    ref_points: np.ndarray
    weights: np.ndarray
    sample_points: np.ndarray
    depth: int

    @property
    def points(self) -> np.ndarray:
        return self.sample_points  # kept for symmetry with the physical view


def build_composed_quadrature(geometry, grid: Grid, element: int, depth: int = 5,
                              base_rule: QuadratureRule | None = None) -> ComposedQuadrature:
    """Space-tree quadrature: cut cells split in 2^d children down to ``depth``."""
    if depth < 0:
        raise GeometryError("tree depth must be >= 0")
    shapes = _as_shapes(geometry)
    if base_rule is None:
        base_rule = gauss_rule(grid.dimension, grid.degree + 1)
    dim = grid.dimension
    centers = np.zeros((1, dim))
    halves = np.ones(1)
    leaf_c, leaf_h = [], []
    for level in range(depth + 1):
        if shapes:
            status = _classify_cells(shapes, grid, element, centers, halves)
        else:
            status = np.zeros(len(centers), dtype=int)
        split = (status == 2) & (level < depth)
        leaf_c.append(centers[~split])
        leaf_h.append(halves[~split])
        if not split.any():
            break
        c, h = centers[split], halves[split] / 2.0
        kids = _probe_offsets(dim)
        kids = kids[np.all(kids != 0.0, axis=1)]  # the 2^d child-center directions
        centers = (c[:, None, :] + h[:, None, None] * kids[None, :, :]).reshape(-1, dim)
        halves = np.repeat(h, len(kids))
    c = np.concatenate(leaf_c)
    h = np.concatenate(leaf_h)
    nq = len(base_rule.weights)
    ref = (c[:, None, :] + h[:, None, None] * base_rule.points[None, :, :]).reshape(-1, dim)
    w = (h[:, None] ** dim * base_rule.weights[None, :]).ravel() * grid.jacobian_det
    samples = np.repeat(grid.reference_to_physical(element, c), nq, axis=0)
    return ComposedQuadrature(element, ref, w, samples, depth)


@dataclass
class QuadratureSet:
    """Quadrature for a whole grid: one base rule plus composed rules for cut elements."""

    grid: Grid
    base_rule: QuadratureRule
    cut: dict[int, ComposedQuadrature]
    depth: int
    status: np.ndarray  # per-element classification code

    @property
    def standard_elements(self) -> np.ndarray:
        mask = np.ones(self.grid.n_elements, dtype=bool)
        mask[list(self.cut)] = False
        return np.flatnonzero(mask)

    def element_centers(self, elements) -> np.ndarray:
        return self.grid.reference_to_physical(
            np.asarray(elements), np.zeros((len(elements), self.grid.dimension)))


def build_quadrature_set(grid: Grid, geometry=None, depth: int = 5) -> QuadratureSet:
    """Composed quadrature for every element cut by any of ``geometry``."""
    base = gauss_rule(grid.dimension, grid.degree + 1)
    shapes = _as_shapes(geometry)
    status = classify_elements(shapes, grid)
    cut = {int(e): build_composed_quadrature(shapes, grid, int(e), depth, base)
           for e in np.flatnonzero(status == 2)}
    return QuadratureSet(grid, base, cut, depth, status)


def integrate_indicator(qset: QuadratureSet, indicator: IndicatorField) -> float:
    """Integral of the indicator over the grid using composed quadrature."""
    grid = qset.grid
    std = qset.standard_elements
    base_w = qset.base_rule.weights.sum() * grid.jacobian_det
    total = base_w * indicator(qset.element_centers(std)).sum()
    for quad in qset.cut.values():
        total += np.dot(quad.weights, indicator(quad.sample_points))
    return float(total)
