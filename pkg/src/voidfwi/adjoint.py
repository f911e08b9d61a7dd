"""Misfit, adjoint solves and gradients with respect to nodal scaling fields.

The gradient is the exact derivative of the discrete misfit when wavefields
are stored at every step (stride 1) and both initial states are zero. With
a coarser stride the same formula is evaluated on the stored snapshots and
becomes an approximation whose error shrinks with the stride.

For one scaling field with nodal coefficients ``g_i`` the gradient reads

    G_i = sum_q w_q N_i(q) [ dm/dg(q) * Cm(q) + dk/dg(q) * Ck(q) ]

where ``Cm = -dt sum_n v_adj . v`` correlates staggered velocities
``(u^{n+1} - u^n) / dt`` and ``Ck = dt sum_n w_n grad u_adj . grad u`` uses
trapezoidal weights ``w_n``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import sparse

from . import _kernels
from .assembly import SystemOperators, block_coefficients, iter_blocks
from .geometry import IndicatorField, QuadratureSet
from .grid import interpolation_matrix
from .material import MaterialModel, ScalingField, coefficient_derivatives
from .propagate import (PropagationError, WaveRecording, WavefieldHistory, march_columns,
                        step_count)


class AdjointError(ValueError):
    pass


def trapezoid_weights(n: int) -> np.ndarray:
    """Unit-spacing trapezoidal weights for ``n`` samples."""
    w = np.ones(n)
    if n == 1:
        return w * 0.0
    w[0] = w[-1] = 0.5
    return w


def _residuals(recordings: Sequence[WaveRecording], observations: Sequence[WaveRecording]):
    if len(recordings) != len(observations):
        raise AdjointError(f"{len(recordings)} recordings but {len(observations)} observations")
    out = []
    for rec, obs in zip(recordings, observations):
        if rec.samples.shape != obs.samples.shape:
            raise AdjointError(
                f"recording shape {rec.samples.shape} does not match observation {obs.samples.shape}")
        if not np.isclose(rec.dt, obs.dt, rtol=1e-12, atol=0.0):
            raise AdjointError(f"sampling mismatch: dt {rec.dt} vs {obs.dt}")
        out.append(rec.samples - obs.samples)
    return out


def misfit(recordings: Sequence[WaveRecording], observations: Sequence[WaveRecording]) -> float:
    """``0.5 * sum over sources and receivers of the time integral of (u - u_obs)^2``."""
    total = 0.0
    for r, rec in zip(_residuals(recordings, observations), recordings):
        w = trapezoid_weights(r.shape[0]) * rec.dt
        total += 0.5 * float(w @ (r**2).sum(axis=1))
    return total


@dataclass
class AdjointSource:
    """Point loads at the receivers driven by ``-(u - u_obs)``."""

    receivers: np.ndarray  # (nr, dim)
    residual: np.ndarray  # (nt, nr), already negated
    dt: float

    @classmethod
    def from_recordings(cls, recording: WaveRecording, observation: WaveRecording) -> "AdjointSource":
        (r,) = _residuals([recording], [observation])
        return cls(np.asarray(recording.receivers, dtype=float), -r, recording.dt)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.residual)


def run_adjoint(ops: SystemOperators, sources: Sequence[AdjointSource], dt: float, duration: float,
                stride: int = 10) -> WavefieldHistory:
    """Adjoint wavefields, one column per adjoint source.

    The operators are symmetric, so the adjoint system is the forward
    system run backwards from a resting final state. It is solved as a
    forward sweep over the time-reversed loads and the stored history is
    reversed again, so ``snapshots[j]`` belongs to step ``j * stride`` of
    the forward time axis.
    """
    nsteps = step_count(dt, duration)
    if nsteps % stride:
        raise AdjointError(f"{nsteps} steps are not a multiple of the storage stride {stride}")
    if not sources:
        raise AdjointError("no adjoint sources")
    receivers = sources[0].receivers
    for s in sources:
        if s.residual.shape != (nsteps + 1, len(receivers)):
            raise AdjointError(
                f"adjoint source has {s.residual.shape} samples, expected {(nsteps + 1, len(receivers))}")
        if not np.array_equal(s.receivers, receivers):
            raise AdjointError("all adjoint sources in one batch must share the receivers")
    loads = interpolation_matrix(ops.grid, receivers).T.tocsc()
    # no trapezoidal end weight here: the half step of the starting
    # formula already supplies it for the final residual sample
    signals = np.stack([s.residual[::-1] for s in sources], axis=2)
    sampling = sparse.csr_matrix((0, ops.grid.n_nodes))
    _, hist = march_columns(ops, loads, signals, sampling, dt, nsteps, stride, True)
    return WavefieldHistory(stride, dt, nsteps, np.ascontiguousarray(hist[::-1]))


@dataclass
class GradientField:
    """Gradient vectors (one per inverted scaling field) and the mask that was applied."""

    values: list
    mask: np.ndarray

    def normalized(self) -> "GradientField":
        """Scaled so the largest magnitude over all fields is 1."""
        peak = max(float(np.abs(v).max()) for v in self.values)
        if peak == 0.0:
            return GradientField([v.copy() for v in self.values], self.mask)
        return GradientField([v / peak for v in self.values], self.mask)

    def __add__(self, other: "GradientField") -> "GradientField":
        return GradientField([a + b for a, b in zip(self.values, other.values)], self.mask)


def time_correlations(forward: WavefieldHistory, adjoint: WavefieldHistory, grid):
    """Per-element matrices ``(Cm, Ck)`` of shape ``(n_elements, nloc, nloc)``.

    ``Cm[e, a, b] = -sum_j dtau_j^-1 (da_a)(du_b)`` over snapshot intervals and
    ``Ck[e, a, b] = sum_j w_j a_a(t_j) u_b(t_j)`` with trapezoidal ``w_j``.
    Entries are summed over source columns.
    """
    if forward.stride != adjoint.stride or forward.nsteps != adjoint.nsteps:
        raise AdjointError(
            f"history mismatch: stride {forward.stride}/{adjoint.stride}, "
            f"steps {forward.nsteps}/{adjoint.nsteps}")
    if forward.snapshots.shape != adjoint.snapshots.shape:
        raise AdjointError(
            f"snapshot shapes differ: {forward.snapshots.shape} vs {adjoint.snapshots.shape}")
    tau = forward.stride * forward.dt
    nt = forward.snapshots.shape[0]
    conn = grid.connectivity
    cm = _kernels.correlate(forward.snapshots, adjoint.snapshots, conn,
                            np.full(max(nt - 1, 0), -1.0 / tau), True)
    ck = _kernels.correlate(forward.snapshots, adjoint.snapshots, conn,
                            trapezoid_weights(nt) * tau, False)
    return cm, ck


def gradient_from_correlations(cm, ck, ops: SystemOperators, material: MaterialModel,
                               indicator: IndicatorField | None, qset: QuadratureSet,
                               mask: np.ndarray | None = None) -> GradientField:
    """Spatial quadrature of the kernels against the basis of each nodal field."""
    grid = qset.grid
    nfields = len(material.fields)
    out = [np.zeros(grid.n_nodes) for _ in range(nfields)]
    for b in iter_blocks(qset):
        alpha, gammas, _, _ = block_coefficients(grid, b, material, indicator)
        derivs = coefficient_derivatives(material.tag, material.rho0, material.c0, alpha, gammas)
        # kernel densities at quadrature points, (nb, nq)
        mass_k = np.einsum("qa,qb,eab->eq", b.values, b.values, cm[b.elements], optimize=True)
        stiff_k = np.einsum("qad,qbd,eab->eq", b.grads, b.grads, ck[b.elements], optimize=True)
        conn = grid.connectivity[b.elements]
        for i, (dm, dk) in enumerate(derivs):
            if not isinstance(material.fields[i], ScalingField):
                continue
            dens = b.weights * (dm * mass_k + dk * stiff_k)
            np.add.at(out[i], conn, dens @ b.values)
    if mask is None:
        mask = np.ones(grid.n_nodes, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    for v in out:
        v[~mask] = 0.0
    return GradientField(out, mask)


def accumulate_gradient(forward: WavefieldHistory, adjoint: WavefieldHistory, ops: SystemOperators,
                        material: MaterialModel, indicator: IndicatorField | None,
                        qset: QuadratureSet, mask: np.ndarray | None = None) -> GradientField:
    """Gradient of the misfit with respect to the nodal coefficients of every field."""
    cm, ck = time_correlations(forward, adjoint, qset.grid)
    return gradient_from_correlations(cm, ck, ops, material, indicator, qset, mask)


def misfit_and_gradient(ops: SystemOperators, material: MaterialModel,
                        indicator: IndicatorField | None, qset: QuadratureSet, sources,
                        receivers, observations: Sequence[WaveRecording], dt: float,
                        duration: float, stride: int = 10, mask=None, batch: int = 4,
                        executor=None):
    """Misfit and gradient summed over sources, processed in batches.

    Each batch runs one forward and one adjoint sweep with one column per
    source, then reduces its histories to per-element correlations so
    memory is bounded by the batch size. Batch results are summed in
    source order, which keeps the result independent of ``executor``.
    """
    from .propagate import run_forward

    sources = list(sources)
    if len(sources) != len(observations):
        raise AdjointError(f"{len(sources)} sources but {len(observations)} observations")
    batch = max(1, int(batch))
    chunks = [list(range(i, min(len(sources), i + batch))) for i in range(0, len(sources), batch)]

    def work(idx):
        recs, hist = run_forward(ops, [sources[i] for i in idx], receivers, dt, duration, stride)
        obs = [observations[i] for i in idx]
        chi = misfit(recs, obs)
        adj = [AdjointSource.from_recordings(r, o) for r, o in zip(recs, obs)]
        ahist = run_adjoint(ops, adj, dt, duration, stride)
        cm, ck = time_correlations(hist, ahist, qset.grid)
        return chi, cm, ck, recs

    results = list(executor.map(work, chunks)) if executor is not None else [work(c) for c in chunks]
    chi = sum(r[0] for r in results)
    cm = sum(r[1] for r in results)
    ck = sum(r[2] for r in results)
    recordings = [rec for r in results for rec in r[3]]
    grad = gradient_from_correlations(cm, ck, ops, material, indicator, qset, mask)
    return chi, grad, recordings


def idealized_gradient_study(grid, material: MaterialModel, indicator, qset, sources, receivers,
                             observations, dt, duration, stride=10, mask=None, batch=4,
                             executor=None) -> GradientField:
    """One gradient at a prescribed state, normalized to a peak magnitude of 1.

    ``material`` carries the (already projected) scaling fields of the state.
    """
    from .assembly import assemble

    ops = assemble(grid, material, indicator, qset)
    _, grad, _ = misfit_and_gradient(ops, material, indicator, qset, sources, receivers,
                                     observations, dt, duration, stride, mask, batch, executor)
    return grad.normalized()


__all__ = [
    "AdjointError", "AdjointSource", "GradientField", "PropagationError", "accumulate_gradient",
    "gradient_from_correlations", "idealized_gradient_study", "misfit", "misfit_and_gradient",
    "run_adjoint", "time_correlations", "trapezoid_weights",
]
