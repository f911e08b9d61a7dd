"""Global mass/stiffness operators of the scaled wave equation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .geometry import IndicatorField, QuadratureSet
from .grid import Grid, interpolation_matrix, locate_point
from .material import MaterialModel, PiecewiseScaling, ScalingField, effective_coefficients


class AssemblyError(RuntimeError):
    pass


@dataclass
class Block:
    """Quadrature data for a group of elements sharing one point layout."""

    elements: np.ndarray  # (nb,)
    values: np.ndarray  # (nq, nloc)
    grads: np.ndarray  # (nq, nloc, dim), physical
    weights: np.ndarray  # (nb, nq), physical
    samples: np.ndarray  # (nb, nq, dim), where piecewise fields are sampled
    points: np.ndarray  # (nb, nq, dim), physical quadrature points


def iter_blocks(qset: QuadratureSet, chunk: int = 2048) -> Iterator[Block]:
    """Standard elements in chunks sharing the base rule, then each cut element."""
    grid = qset.grid
    scale = grid.gradient_scale()
    vals, grads = grid.basis(qset.base_rule.points)
    grads = grads * scale
    w = qset.base_rule.weights * grid.jacobian_det
    nq = len(w)
    std = qset.standard_elements
    for start in range(0, len(std), chunk):
        elems = std[start:start + chunk]
        centers = qset.element_centers(elems)
        points = grid.reference_to_physical(elems[:, None], qset.base_rule.points[None, :, :])
        yield Block(elems, vals, grads, np.broadcast_to(w, (len(elems), nq)),
                    np.broadcast_to(centers[:, None, :], (len(elems), nq, grid.dimension)), points)
    for e in sorted(qset.cut):
        quad = qset.cut[e]
        v, g = grid.basis(quad.ref_points)
        yield Block(np.array([e]), v, g * scale, quad.weights[None, :], quad.sample_points[None, :, :],
                    grid.reference_to_physical(e, quad.ref_points)[None, :, :])


def field_at_points(grid: Grid, block: Block, f) -> np.ndarray:
    """Values ``(nb, nq)`` of a nodal field or a pointwise callable on a block.

    Piecewise constant fields (indicators and :class:`PiecewiseScaling`) are
    sampled at leaf centers; any other callable at the quadrature points.
    """
    if isinstance(f, ScalingField):
        local = f.coefficients[grid.connectivity[block.elements]]  # (nb, nloc)
        return local @ block.values.T
    if isinstance(f, np.ndarray):
        return f[grid.connectivity[block.elements]] @ block.values.T
    where = block.samples if isinstance(f, (PiecewiseScaling, IndicatorField)) else block.points
    nb, nq, dim = where.shape
    return np.asarray(f(where.reshape(-1, dim)), dtype=float).reshape(nb, nq)


def block_coefficients(grid, block, material: MaterialModel, indicator: IndicatorField | None):
    """Indicator and scaling values on a block, plus mass/stiffness coefficients."""
    nb, nq, dim = block.samples.shape
    if indicator is None:
        alpha = np.ones((nb, nq))
    else:
        alpha = indicator(block.samples.reshape(-1, dim)).reshape(nb, nq)
    gammas = [field_at_points(grid, block, f) for f in material.fields]
    am, ak = effective_coefficients(material.tag, material.rho0, material.c0, alpha, gammas)
    return alpha, gammas, am, ak


def _scatter(grid: Grid, blocks_elems, blocks_mats) -> sparse.csr_matrix:
    nloc = grid.nodes_per_element
    rows, cols, data = [], [], []
    for elems, mats in zip(blocks_elems, blocks_mats):
        conn = grid.connectivity[elems]
        rows.append(np.repeat(conn, nloc, axis=1).ravel())
        cols.append(np.tile(conn, (1, nloc)).ravel())
        data.append(mats.ravel())
    n = grid.n_nodes
    mat = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return mat.tocsr()


def assemble_weighted_mass(qset: QuadratureSet, weight: Callable) -> sparse.csr_matrix:
    """``sum_e int weight N^T N`` where ``weight(elements, sample_points)`` gives values."""
    grid = qset.grid
    elems, mats = [], []
    for b in iter_blocks(qset):
        nb, nq, dim = b.samples.shape
        c = np.asarray(weight(b.elements, b.samples.reshape(-1, dim))).reshape(nb, nq)
        mats.append(np.einsum("eq,qa,qb->eab", b.weights * c, b.values, b.values))
        elems.append(b.elements)
    return _scatter(grid, elems, mats)


def assemble_weighted_load(qset: QuadratureSet, g: Callable) -> np.ndarray:
    """``int g N dOmega`` with ``g`` sampled like a piecewise field."""
    grid = qset.grid
    out = np.zeros(grid.n_nodes)
    for b in iter_blocks(qset):
        vals = field_at_points(grid, b, g)
        local = np.einsum("eq,qa->ea", b.weights * vals, b.values)
        np.add.at(out, grid.connectivity[b.elements], local)
    return out


def _bandwidth(mat: sparse.csr_matrix, perm: np.ndarray) -> int:
    inverse = np.empty_like(perm)
    inverse[perm] = np.arange(len(perm))
    coo = mat.tocoo()
    if coo.nnz == 0:
        return 0
    return int(np.abs(inverse[coo.row] - inverse[coo.col]).max())


def short_axis_ordering(grid: Grid) -> np.ndarray:
    """Lexicographic node order with the axis holding the fewest nodes fastest."""
    shape = tuple(reversed(grid.nodes_per_axis))  # numpy index order (.., y, x)
    ids = np.arange(grid.n_nodes).reshape(shape)
    order = np.argsort(shape, kind="stable")[::-1]  # largest axis slowest
    return np.transpose(ids, order).ravel()


@dataclass
class BandedFactor:
    """Cholesky factor of a symmetric positive definite matrix in band storage.

    The matrix is permuted first (reverse Cuthill-McKee, or any narrower
    candidate ordering supplied); ``perm`` maps permuted positions to
    original node indices.
    """

    perm: np.ndarray
    inverse: np.ndarray
    bandwidth: int
    cb: np.ndarray  # (bandwidth + 1, n), lower band storage, Fortran order

    @classmethod
    def from_sparse(cls, mat: sparse.spmatrix, perm: np.ndarray | None = None,
                    candidates=()) -> "BandedFactor":
        mat = sparse.csr_matrix(mat)
        n = mat.shape[0]
        if perm is None:
            options = [np.asarray(reverse_cuthill_mckee(mat, symmetric_mode=True), dtype=np.int64)]
            options += [np.asarray(c, dtype=np.int64) for c in candidates]
            perm = min(options, key=lambda p: _bandwidth(mat, p))
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(n)
        mp = mat[perm][:, perm].tocoo()
        lower = mp.row >= mp.col
        r, c, v = mp.row[lower], mp.col[lower], mp.data[lower]
        kd = int((r - c).max()) if len(r) else 0
        ab = np.zeros((kd + 1, n))
        np.add.at(ab, (r - c, c), v)
        try:
            cb = linalg.cholesky_banded(ab, lower=True)
        except linalg.LinAlgError as exc:
            raise AssemblyError(
                "mass operator is not positive definite; check the indicator/scaling floor") from exc
        return cls(perm, inverse, kd, np.asfortranarray(cb))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        x = linalg.cho_solve_banded((self.cb, True), rhs[self.perm])
        return x[self.inverse]


@dataclass
class SystemOperators:
    mass: sparse.csr_matrix
    stiffness: sparse.csr_matrix
    factor: BandedFactor
    dirichlet: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    grid: Grid | None = None
    _omega_max: float | None = field(default=None, repr=False)

    def max_frequency(self, iterations: int = 60) -> float:
        """Power-iteration estimate of the largest eigenfrequency of M^-1 K."""
        if self._omega_max is None:
            rng = np.random.default_rng(0)
            x = rng.standard_normal(self.mass.shape[0])
            if len(self.dirichlet):
                x[self.dirichlet] = 0.0
            lam = 0.0
            for _ in range(iterations):
                y = self.factor.solve(self.stiffness @ x)
                nrm = np.linalg.norm(y)
                if nrm == 0.0:
                    break
                lam = float(x @ (self.stiffness @ x)) / float(x @ (self.mass @ x))
                x = y / nrm
            lam = max(lam, float(x @ (self.stiffness @ x)) / float(x @ (self.mass @ x)))
            # power iteration approaches from below; pad to stay conservative
            self._omega_max = float(np.sqrt(max(lam, 0.0)) * 1.02)
        return self._omega_max


def assemble(grid: Grid, material: MaterialModel, indicator: IndicatorField | None,
             qset: QuadratureSet, dirichlet=None) -> SystemOperators:
    """Consistent mass and stiffness operators.

    Homogeneous Neumann conditions hold on the whole outer boundary unless
    ``dirichlet`` lists constrained nodes; those get unit mass rows and zero
    stiffness.
    """
    elems, mmats, kmats = [], [], []
    for b in iter_blocks(qset):
        _, _, am, ak = block_coefficients(grid, b, material, indicator)
        mmats.append(np.einsum("eq,qa,qb->eab", b.weights * am, b.values, b.values))
        kmats.append(np.einsum("eq,qad,qbd->eab", b.weights * ak, b.grads, b.grads))
        elems.append(b.elements)
    mass = _scatter(grid, elems, mmats)
    stiff = _scatter(grid, elems, kmats)
    fixed = np.zeros(0, dtype=np.int64) if dirichlet is None else np.unique(np.asarray(dirichlet, dtype=np.int64))
    if len(fixed):
        keep = np.ones(grid.n_nodes)
        keep[fixed] = 0.0
        d = sparse.diags(keep)
        unit = sparse.diags(1.0 - keep)
        mass = (d @ mass @ d + unit).tocsr()
        stiff = (d @ stiff @ d).tocsr()
    factor = BandedFactor.from_sparse(mass, candidates=[short_axis_ordering(grid)])
    return SystemOperators(mass, stiff, factor, fixed, grid)


def point_load_vector(grid: Grid, position) -> np.ndarray:
    """Consistent load of a unit point source: basis values at ``position``."""
    locate_point(grid, position)  # raises for out-of-domain positions
    return np.asarray(interpolation_matrix(grid, np.atleast_2d(position)).toarray()[0])


def point_load_matrix(grid: Grid, positions) -> sparse.csc_matrix:
    """Columns are point-load vectors for each position."""
    return interpolation_matrix(grid, positions).T.tocsc()
