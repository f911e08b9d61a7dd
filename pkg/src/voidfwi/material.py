"""Void parametrizations by dimensionless scaling fields.

Four tags are supported:

``rho``       density scaled:       (a gamma rho0,  a gamma rho0 c0^2)
``c``         wave speed scaled:    (a rho0,        a gamma^2 rho0 c0^2)
``rhoc``      both by one field:    (a gamma rho0,  a gamma^3 rho0 c0^2)
``separate``  two fields g_r, g_c:  (a g_r rho0,    a g_r g_c^2 rho0 c0^2)

where ``a`` is the FCM indicator. The tuples are the mass and stiffness
coefficients of the scaled wave equation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .geometry import QuadratureSet, Shape, build_quadrature_set
from .grid import Grid

TAGS = ("rho", "c", "rhoc", "separate")
GAMMA_FLOOR = 1e-8


class MaterialError(ValueError):
    pass


def field_count(tag: str) -> int:
    if tag not in TAGS:
        raise MaterialError(f"unknown parametrization tag {tag!r}; expected one of {TAGS}")
    return 2 if tag == "separate" else 1


@dataclass
class ScalingField:
    """Nodal coefficients of a scaling function on the solution basis."""

    grid: Grid
    coefficients: np.ndarray
    lower: float = 0.0
    upper: float = 1.2

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.grid.n_nodes,):
            raise MaterialError(
                f"expected {self.grid.n_nodes} coefficients, got {self.coefficients.shape}")

    @classmethod
    def constant(cls, grid: Grid, value: float = 1.0, **bounds) -> "ScalingField":
        return cls(grid, np.full(grid.n_nodes, float(value)), **bounds)


@dataclass(frozen=True)
class PiecewiseScaling:
    """Pointwise scaling: ``inside`` within ``geometry``, ``outside`` elsewhere.

    Evaluated at leaf centers of the composed quadrature, exactly like the
    indicator, so its interface needs the same cut-cell treatment.
    """

    geometry: Shape | None
    inside: float
    outside: float = 1.0

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.geometry is None:
            return np.full(len(pts), self.outside)
        return np.where(self.geometry.contains(pts), self.inside, self.outside)


Scaling = Union[ScalingField, PiecewiseScaling]


@dataclass(frozen=True)
class MaterialModel:
    rho0: float
    c0: float
    tag: str
    fields: tuple

    def __post_init__(self):
        if self.rho0 <= 0 or self.c0 <= 0:
            raise MaterialError("rho0 and c0 must be positive")
        if len(self.fields) != field_count(self.tag):
            raise MaterialError(
                f"tag {self.tag!r} needs {field_count(self.tag)} scaling field(s), got {len(self.fields)}")

    @classmethod
    def uniform(cls, grid: Grid, rho0: float, c0: float, tag: str, value: float = 1.0,
                lower: float = 0.0, upper: float = 1.2) -> "MaterialModel":
        fields = tuple(ScalingField.constant(grid, value, lower=lower, upper=upper)
                       for _ in range(field_count(tag)))
        return cls(rho0, c0, tag, fields)

    def with_coefficients(self, vectors: Sequence[np.ndarray]) -> "MaterialModel":
        """Same model with new nodal coefficients for every (nodal) field."""
        new = tuple(ScalingField(f.grid, v, f.lower, f.upper) for f, v in zip(self.fields, vectors))
        return MaterialModel(self.rho0, self.c0, self.tag, new)

    @property
    def geometries(self) -> list[Shape]:
        return [f.geometry for f in self.fields
                if isinstance(f, PiecewiseScaling) and f.geometry is not None]


def effective_coefficients(tag: str, rho0: float, c0: float, alpha, gammas):
    """Mass and stiffness coefficients at points.

    ``gammas`` is a sequence with one array per scaling field. Scaling values
    are floored at ``GAMMA_FLOOR`` so the mass operator stays invertible when
    a bound of 0.0 becomes active.
    """
    field_count(tag)
    alpha = np.asarray(alpha, dtype=float)
    g = [np.maximum(np.asarray(x, dtype=float), GAMMA_FLOOR) for x in gammas]
    k0 = rho0 * c0 * c0
    if tag == "rho":
        return alpha * g[0] * rho0, alpha * g[0] * k0
    if tag == "c":
        return alpha * rho0 * np.ones_like(g[0]), alpha * g[0] ** 2 * k0
    if tag == "rhoc":
        return alpha * g[0] * rho0, alpha * g[0] ** 3 * k0
    return alpha * g[0] * rho0, alpha * g[0] * g[1] ** 2 * k0


def coefficient_derivatives(tag: str, rho0: float, c0: float, alpha, gammas):
    """Derivatives of the coefficients with respect to each scaling field.

    Returns a list (one entry per field) of ``(d_mass, d_stiffness)``; the
    derivative vanishes where the floor is active.
    """
    field_count(tag)
    alpha = np.asarray(alpha, dtype=float)
    raw = [np.asarray(x, dtype=float) for x in gammas]
    live = [(x >= GAMMA_FLOOR).astype(float) for x in raw]
    g = [np.maximum(x, GAMMA_FLOOR) for x in raw]
    k0 = rho0 * c0 * c0
    zero = np.zeros_like(g[0])
    if tag == "rho":
        return [(alpha * rho0 * live[0], alpha * k0 * live[0])]
    if tag == "c":
        return [(zero, 2.0 * alpha * g[0] * k0 * live[0])]
    if tag == "rhoc":
        return [(alpha * rho0 * live[0], 3.0 * alpha * g[0] ** 2 * k0 * live[0])]
    return [
        (alpha * rho0 * live[0], alpha * g[1] ** 2 * k0 * live[0]),
        (zero, 2.0 * alpha * g[0] * g[1] * k0 * live[1]),
    ]


def clip_field(field: ScalingField) -> ScalingField:
    return ScalingField(field.grid, np.clip(field.coefficients, field.lower, field.upper),
                        field.lower, field.upper)


def mass_matrix(grid: Grid, qset: QuadratureSet | None = None) -> sparse.csr_matrix:
    """Unit-coefficient consistent mass matrix of the basis."""
    from .assembly import assemble_weighted_mass

    if qset is None:
        qset = build_quadrature_set(grid)
    return assemble_weighted_mass(qset, lambda elems, pts: np.ones(len(pts)))


def l2_project(grid: Grid, g: Callable, qset: QuadratureSet | None = None,
               lower: float = 0.0, upper: float = 1.2) -> ScalingField:
    """L2 projection of a pointwise function onto the nodal basis.

    ``g`` maps an ``(n, dim)`` array of physical points to values. For
    piecewise functions pass a ``qset`` built with their geometry; ``g`` is
    then sampled at leaf centers of cut elements.
    """
    from .assembly import assemble_weighted_load

    if qset is None:
        geom = getattr(g, "geometry", None)
        qset = build_quadrature_set(grid, geom)
    mass = mass_matrix(grid, qset)
    rhs = assemble_weighted_load(qset, g)
    coeffs = splu(mass.tocsc()).solve(rhs)
    return ScalingField(grid, coeffs, lower, upper)
