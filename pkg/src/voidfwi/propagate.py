"""Explicit central-difference time integration of the semi-discrete wave equation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse

from . import _kernels
from .assembly import SystemOperators, point_load_matrix
from .grid import interpolation_matrix


class PropagationError(RuntimeError):
    pass


class UnstableTimeStep(PropagationError):
    pass


def sine_burst(t, f_c: float, cycles: float = 2.0):
    """Hann-windowed sine toneburst, zero outside ``[0, cycles / f_c]``."""
    t = np.asarray(t, dtype=float)
    duration = cycles / f_c
    inside = (t >= 0.0) & (t <= duration)
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / duration))
    return np.where(inside, np.sin(2.0 * np.pi * f_c * t) * window, 0.0)


@dataclass(frozen=True)
class SineBurst:
    center_frequency: float
    cycles: float = 2.0
    amplitude: float = 1.0

    def __call__(self, t):
        return self.amplitude * sine_burst(t, self.center_frequency, self.cycles)

    @property
    def duration(self) -> float:
        return self.cycles / self.center_frequency


@dataclass(frozen=True)
class GaussianBell:
    """``amplitude * exp(-(x - center)^2 / (2 width^2))``."""

    center: float
    width: float
    amplitude: float = 1.0

    @classmethod
    def from_frequency(cls, center: float, frequency: float, wave_speed: float,
                       amplitude: float = 1.0) -> "GaussianBell":
        return cls(center, wave_speed / (2.0 * np.pi * frequency), amplitude)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.amplitude * np.exp(-((x - self.center) ** 2) / (2.0 * self.width**2))

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        return -(x - self.center) / self.width**2 * self(x)


@dataclass(frozen=True)
class SourceSpec:
    """One source experiment.

    ``point_force``: a consistent point load at ``position`` driven by
    ``signal(t)``. ``initial_displacement``: ``profile`` sampled at the nodes
    as initial displacement (x coordinate), with initial velocity
    ``-wave_speed * profile'`` so the pulse travels towards +x.
    """

    kind: str
    position: tuple = ()
    signal: Callable | None = None
    profile: GaussianBell | None = None
    wave_speed: float = 0.0

    def __post_init__(self):
        if self.kind not in ("point_force", "initial_displacement"):
            raise PropagationError(f"unknown source kind {self.kind!r}")
        if self.kind == "point_force" and self.signal is None:
            raise PropagationError("point_force sources need a signal")
        if self.kind == "initial_displacement" and self.profile is None:
            raise PropagationError("initial_displacement sources need a profile")


@dataclass
class WaveRecording:
    receivers: np.ndarray  # (nr, dim)
    dt: float
    samples: np.ndarray  # (nt, nr)
    source_index: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.shape[0]) * self.dt


@dataclass
class WavefieldHistory:
    """Nodal states stored every ``stride`` steps: ``snapshots[j]`` is step ``j * stride``.

    ``snapshots`` has shape ``(n_stored, n_columns, n_nodes)``; one column per
    source experiment.
    """

    stride: int
    dt: float
    nsteps: int
    snapshots: np.ndarray = field(repr=False)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(self.snapshots.shape[0]) * self.stride

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    def at_step(self, step: int) -> np.ndarray:
        if step % self.stride:
            raise PropagationError(f"step {step} not stored with stride {self.stride}")
        return self.snapshots[step // self.stride]

    def at_time(self, t: float) -> np.ndarray:
        return self.at_step(int(round(t / self.dt)))


def step_count(dt: float, duration: float) -> int:
    return int(np.floor(duration / dt + 1e-9))


def _permuted(ops: SystemOperators):
    cache = getattr(ops, "_perm_cache", None)
    if cache is None:
        perm = ops.factor.perm
        cache = ops.stiffness[perm][:, perm].tocsr()
        ops._perm_cache = cache
    return cache


def march_columns(ops: SystemOperators, loads: sparse.spmatrix, signals: np.ndarray,
                  sampling: sparse.spmatrix, dt: float, nsteps: int, stride: int = 10,
                  store: bool = True, u0: np.ndarray | None = None,
                  v0: np.ndarray | None = None, check_stability: bool = True):
    """March several independent columns at once.

    ``loads`` is ``(n, n_loads)``; the force of column ``c`` at step ``k`` is
    ``loads @ signals[k, :, c]``. ``sampling`` is ``(n_receivers, n)``.
    Returns ``(recordings (nsteps+1, nc, nr), history or None)``.
    """
    if stride < 1:
        raise PropagationError("storage stride must be >= 1")
    n = ops.mass.shape[0]
    nc = signals.shape[2]
    if check_stability:
        omega = ops.max_frequency()
        if dt * omega >= 2.0:
            h = min(ops.grid.element_size) if ops.grid is not None else float("nan")
            raise UnstableTimeStep(
                f"CFL violated: dt={dt:g} s but dt*omega_max={dt * omega:.3f} >= 2 "
                f"(stable dt < {2.0 / omega:.3e} s, element size {h:g} m)")
    perm, inv = ops.factor.perm, ops.factor.inverse
    loads = sparse.csr_matrix(loads)
    if len(ops.dirichlet):
        keep = np.ones(n)
        keep[ops.dirichlet] = 0.0
        loads = sparse.diags(keep) @ loads
    u0 = np.zeros((nc, n)) if u0 is None else np.asarray(u0, dtype=float).reshape(nc, n)
    v0 = np.zeros((nc, n)) if v0 is None else np.asarray(v0, dtype=float).reshape(nc, n)
    status, failed, rec, hist = _kernels.march(
        ops.factor.cb, _permuted(ops), loads[perm], np.ascontiguousarray(signals, dtype=float),
        sparse.csr_matrix(sampling)[:, perm], np.ascontiguousarray(u0[:, perm]),
        np.ascontiguousarray(v0[:, perm]), float(dt), int(nsteps), int(stride), bool(store))
    if status != _kernels.OK:
        what = "non-finite values" if status == _kernels.NONFINITE else "unbounded growth"
        raise UnstableTimeStep(
            f"{what} at step {failed}; reduce dt (Courant check: dt*omega_max="
            f"{dt * ops.max_frequency():.3f})")
    if hist is not None:
        for j in range(hist.shape[0]):
            hist[j] = hist[j][:, inv]
    return rec, hist


def run_forward(ops: SystemOperators, sources: Sequence[SourceSpec], receivers, dt: float,
                duration: float, stride: int = 10, store: bool = True):
    """Forward solves, one column per source experiment.

    Returns a list of :class:`WaveRecording` (one per source) and the
    :class:`WavefieldHistory` (``None`` if ``store`` is false).
    """
    grid = ops.grid
    nsteps = step_count(dt, duration)
    times = np.arange(nsteps + 1) * dt
    receivers = np.atleast_2d(np.asarray(receivers, dtype=float))
    sampling = interpolation_matrix(grid, receivers)
    n, nc = grid.n_nodes, len(sources)
    forced = [i for i, s in enumerate(sources) if s.kind == "point_force"]
    if forced:
        loads = point_load_matrix(grid, np.array([sources[i].position for i in forced]))
    else:
        loads = sparse.csc_matrix((n, 0))
    signals = np.zeros((nsteps + 1, len(forced), nc))
    for j, i in enumerate(forced):
        signals[:, j, i] = sources[i].signal(times)
    u0 = np.zeros((nc, n))
    v0 = np.zeros((nc, n))
    x = grid.coords[:, 0]
    for i, s in enumerate(sources):
        if s.kind == "initial_displacement":
            u0[i] = s.profile(x)
            v0[i] = -s.wave_speed * s.profile.derivative(x)
    rec, hist = march_columns(ops, loads, signals, sampling, dt, nsteps, stride, store, u0, v0)
    recordings = [WaveRecording(receivers, dt, rec[:, i, :].copy(), i) for i in range(nc)]
    history = WavefieldHistory(stride, dt, nsteps, hist) if store else None
    return recordings, history


def analytic_free_reflection(x, t, g: Callable, x_f: float, c0: float, x_left: float | None = None):
    """d'Alembert solution of a right-travelling pulse ``g(x - c0 t)`` hitting a free end at ``x_f``.

    Without ``x_left`` this is ``g(x - c0 t) + g(2 x_f - x - c0 t)``. With
    ``x_left`` the segment ``[x_left, x_f]`` is free at both ends and the
    initial state ``u = g``, ``du/dt = -c0 g'`` is restricted to it; the
    solution then follows from the even, 2L-periodic extension of that data.
    """
    x = np.asarray(x, dtype=float)
    if x_left is None:
        return g(x - c0 * t) + g(2.0 * x_f - x - c0 * t)
    span = x_f - x_left
    period = 2.0 * span
    g_left = g(np.asarray(x_left))
    g_right = g(np.asarray(x_f))

    def folded(s):
        r = np.mod(s - x_left, period)
        return x_left + np.where(r <= span, r, period - r)

    def antiderivative(s):
        # integral from x_left of the extended initial velocity
        m = np.floor((s - (x_left - span)) / period)
        q = s - m * period
        w = np.where(q >= x_left, -c0 * (g(q) - g_left), c0 * (g(2.0 * x_left - q) - g_left))
        return m * (-2.0 * c0 * (g_right - g_left)) + w

    a, b = x - c0 * t, x + c0 * t
    return 0.5 * (g(folded(a)) + g(folded(b))) + (antiderivative(b) - antiderivative(a)) / (2.0 * c0)
