"""Scenario drivers: forward studies, synthetic observations, gradient studies, inversions."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .adjoint import GradientField, misfit_and_gradient
from .assembly import assemble
from .config import Config
from .geometry import (BelowSpline, Box, Circle, Ellipse, IndicatorField, Shape,
                       build_quadrature_set, union_of)
from .grid import Grid, build_grid, interpolation_matrix
from .material import MaterialModel, PiecewiseScaling, ScalingField, l2_project
from .optimize import InversionState, minimize
from .propagate import (GaussianBell, SineBurst, SourceSpec, WaveRecording,
                        analytic_free_reflection, run_forward, step_count)

log = logging.getLogger(__name__)


class ExperimentError(ValueError):
    pass


def make_shape(primitives) -> Shape | None:
    """Union of parsed ``(name, args)`` primitives (lengths already in metres)."""
    shapes = []
    for name, a in primitives:
        if name == "circle":
            shapes.append(Circle((a[0], a[1]), a[2]))
        elif name == "ellipse":
            shapes.append(Ellipse((a[0], a[1]), (a[2], a[3]), a[4]))
        elif name == "box":
            half = len(a) // 2
            shapes.append(Box(tuple(a[:half]), tuple(a[half:])))
        elif name == "below_spline":
            shapes.append(BelowSpline(np.reshape(a, (-1, 2))))
        else:
            raise ExperimentError(f"unknown primitive {name!r}")
    return union_of(shapes)


@dataclass(frozen=True)
class PhasedArraySpec:
    """Equally spaced transducers on the top edge, each one a source and a receiver."""

    count: int
    pitch: float
    center_x: float
    signal: Callable

    def __post_init__(self):
        if self.count < 1:
            raise ExperimentError("the array needs at least one transducer")
        if self.pitch <= 0.0 and self.count > 1:
            raise ExperimentError("pitch must be positive")

    def positions(self, grid: Grid) -> np.ndarray:
        offsets = (np.arange(self.count) - 0.5 * (self.count - 1)) * self.pitch
        x = self.center_x + offsets
        lo, hi = grid.origin[0], grid.origin[0] + grid.extents[0]
        tol = 1e-12 * grid.extents[0]
        if x.min() < lo - tol or x.max() > hi + tol:
            raise ExperimentError(
                f"array spans [{x.min():g}, {x.max():g}] m but the edge is [{lo:g}, {hi:g}] m")
        y = np.full_like(x, grid.origin[1] + grid.extents[1])
        return np.stack([x, y], axis=1)

    def sources(self, grid: Grid) -> list:
        return [SourceSpec("point_force", tuple(p), self.signal) for p in self.positions(grid)]


def array_from_config(cfg: Config, grid: Grid) -> PhasedArraySpec:
    a = cfg.section("array")
    center = a["center_x"] if a["center_x"] >= 0.0 else grid.origin[0] + 0.5 * grid.extents[0]
    signal = SineBurst(a["frequency"], a["cycles"], a["amplitude"])
    return PhasedArraySpec(a["count"], a["pitch"], center, signal)


@dataclass
class ObservationSet:
    recordings: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.recordings:
            raise ExperimentError("empty observation set")
        first = self.recordings[0]
        for r in self.recordings[1:]:
            if r.samples.shape != first.samples.shape or not np.array_equal(r.receivers, first.receivers):
                raise ExperimentError("recordings do not share receivers and duration")


@dataclass
class ModelSetup:
    """Everything needed to simulate one discretized model."""

    grid: Grid
    qset: object
    indicator: IndicatorField | None
    material: MaterialModel
    sources: list
    receivers: np.ndarray
    dt: float
    duration: float
    stride: int
    mask: np.ndarray | None = None


def _grid_from(cfg: Config, element_size: float) -> Grid:
    g = cfg.section("grid")
    if g["dimension"] == 1:
        return build_grid(1, g["extent_x"], element_size, g["degree"])
    return build_grid(2, (g["extent_x"], g["extent_y"]), element_size, g["degree"])


def _indicator(cfg: Config):
    known = make_shape(cfg["geometry.known"])
    if known is None:
        return None, None
    return known, IndicatorField(known, 1.0, cfg["geometry.alpha_fict"])


def inversion_setup(cfg: Config) -> ModelSetup:
    """Inversion model: uniform scaling fields on the configured grid."""
    grid = _grid_from(cfg, cfg["grid.element_size"])
    known, indicator = _indicator(cfg)
    qset = build_quadrature_set(grid, known, cfg["grid.quadtree_depth"])
    m = cfg.section("material")
    material = MaterialModel.uniform(grid, m["rho0"], m["c0"], m["tag"], cfg["inversion.initial_gamma"],
                                     m["lower"], m["upper"])
    array = array_from_config(cfg, grid)
    mask = np.ones(grid.n_nodes, dtype=bool)
    if cfg["inversion.mask"] == "exclude_known" and known is not None:
        mask = ~known.contains(grid.coords)
    t = cfg.section("time")
    return ModelSetup(grid, qset, indicator, material, array.sources(grid), array.positions(grid),
                      t["delta_t"], t["duration"], t["stride"], mask)


def reference_setup(cfg: Config) -> ModelSetup:
    """Refined immersed model carrying the true void as a density scaling.

    The void is encoded the same way for every inversion tag, so all tags
    invert the same data.
    """
    r = cfg.section("reference")
    same = r["same_as_inversion"]
    h = cfg["grid.element_size"] if same else r["element_size"]
    depth = cfg["grid.quadtree_depth"] if same else r["quadtree_depth"]
    dt = cfg["time.delta_t"] if same else r["delta_t"]
    grid = _grid_from(cfg, h)
    known, indicator = _indicator(cfg)
    void = make_shape(cfg["geometry.void"])
    geoms = [s for s in (known, void) if s is not None]
    qset = build_quadrature_set(grid, geoms or None, depth)
    m = cfg.section("material")
    material = MaterialModel(m["rho0"], m["c0"], "rho",
                             (PiecewiseScaling(void, cfg["geometry.void_gamma"]),))
    array = array_from_config(cfg, grid)
    return ModelSetup(grid, qset, indicator, material, array.sources(grid), array.positions(grid),
                      dt, cfg["time.duration"], cfg["time.stride"])


def resample(rec: WaveRecording, dt: float, nsteps: int) -> WaveRecording:
    """Linear resampling onto ``k * dt``; exact when the old step divides ``dt``."""
    t_new = np.arange(nsteps + 1) * dt
    if t_new[-1] > rec.times[-1] * (1 + 1e-12):
        raise ExperimentError("observations are shorter than the inversion window")
    ratio = dt / rec.dt
    if abs(ratio - round(ratio)) < 1e-9:
        samples = rec.samples[::int(round(ratio))][:nsteps + 1]
    else:
        samples = np.stack([np.interp(t_new, rec.times, s) for s in rec.samples.T], axis=1)
    return WaveRecording(rec.receivers, dt, np.ascontiguousarray(samples), rec.source_index)


def _executor(threads: int):
    return ThreadPoolExecutor(threads) if threads and threads > 1 else None


def generate_observations(cfg: Config, threads: int = 1) -> ObservationSet:
    """Full-matrix-capture recordings of the reference model, sampled at the inversion step."""
    ref = reference_setup(cfg)
    ops = assemble(ref.grid, ref.material, ref.indicator, ref.qset)
    batch = max(1, cfg["inversion.batch"])
    chunks = [ref.sources[i:i + batch] for i in range(0, len(ref.sources), batch)]

    def work(srcs):
        recs, _ = run_forward(ops, srcs, ref.receivers, ref.dt, ref.duration, store=False)
        return recs

    ex = _executor(threads)
    try:
        parts = list(ex.map(work, chunks)) if ex else [work(c) for c in chunks]
    finally:
        if ex:
            ex.shutdown()
    nsteps = step_count(cfg["time.delta_t"], cfg["time.duration"])
    recs = []
    for i, rec in enumerate(r for part in parts for r in part):
        rec = resample(rec, cfg["time.delta_t"], nsteps)
        rec.source_index = i
        recs.append(rec)
    meta = {
        "reference_element_size_m": ref.grid.element_size[0], "reference_dt_s": ref.dt,
        "quadtree_depth": int(ref.qset.depth), "void": repr(cfg["geometry.void"]),
        "void_gamma": cfg["geometry.void_gamma"], "known": repr(cfg["geometry.known"]),
    }
    return ObservationSet(recs, meta)


class Objective:
    """Normalized misfit and gradient as a function of the stacked nodal vector.

    Values are divided by the misfit at the first evaluated model so the
    optimizer sees an objective of order one.
    """

    def __init__(self, setup: ModelSetup, observations: ObservationSet, batch: int = 4,
                 threads: int = 1):
        self.setup = setup
        self.observations = observations
        self.batch = batch
        self.threads = threads
        self.scale = None
        self.evaluations = 0
        self.n = setup.grid.n_nodes

    def material_for(self, x) -> MaterialModel:
        parts = np.split(np.asarray(x, dtype=float), len(self.setup.material.fields))
        return self.setup.material.with_coefficients(parts)

    def raw(self, x):
        s = self.setup
        material = self.material_for(x)
        ops = assemble(s.grid, material, s.indicator, s.qset)
        ex = _executor(self.threads)
        try:
            chi, grad, _ = misfit_and_gradient(ops, material, s.indicator, s.qset, s.sources,
                                               s.receivers, self.observations.recordings, s.dt,
                                               s.duration, s.stride, s.mask, self.batch, ex)
        finally:
            if ex:
                ex.shutdown()
        self.evaluations += 1
        return chi, np.concatenate(grad.values)

    def __call__(self, x):
        chi, g = self.raw(x)
        if self.scale is None:
            if chi <= 0.0:
                raise ExperimentError("initial misfit is zero; nothing to invert")
            self.scale = chi
        return chi / self.scale, g / self.scale


@dataclass
class InversionResult:
    state: InversionState
    snapshots: dict  # iteration -> list of nodal vectors (one per field)
    setup: ModelSetup
    initial_misfit: float
    evaluations: int


def run_inversion_experiment(cfg: Config, observations: ObservationSet | None = None,
                             threads: int = 1, on_iteration: Callable | None = None) -> InversionResult:
    """Projected L-BFGS inversion of the configured model against observations."""
    if observations is None:
        observations = generate_observations(cfg, threads)
    setup = inversion_setup(cfg)
    inv = cfg.section("inversion")
    objective = Objective(setup, observations, inv["batch"], threads)
    nf = len(setup.material.fields)
    x0 = np.concatenate([f.coefficients for f in setup.material.fields])
    lower = np.full(nf * setup.grid.n_nodes, cfg["material.lower"])
    upper = np.full(nf * setup.grid.n_nodes, cfg["material.upper"])
    wanted = set(inv["snapshot_iterations"])
    snapshots = {}

    def callback(state):
        log.info("iteration %d: normalized objective %.6g", state.iteration, state.normalized[-1])
        if state.iteration in wanted:
            snapshots[state.iteration] = np.split(state.x.copy(), nf)
        if on_iteration is not None:
            on_iteration(state)

    state = minimize(objective, x0, (lower, upper), inv["max_iterations"], inv["memory"], callback)
    return InversionResult(state, snapshots, setup, objective.scale, objective.evaluations)


def void_statistics(grid: Grid, gamma: np.ndarray, void: Shape, halo: float) -> dict:
    """Mean nodal scaling inside the void and beyond ``halo`` from it.

    Distances are exact for a circle. Other shapes use the nearest point of a
    lattice of spacing ``h / 8`` sampled inside the void.
    """
    coords = grid.coords
    inside = void.contains(coords)
    if isinstance(void, Circle):
        far = void.level(coords) > halo
    else:
        step = min(grid.element_size) / 8.0
        axes = [np.arange(o, o + e + step, step) for o, e in zip(grid.origin, grid.extents)]
        lattice = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
        lattice = lattice[void.contains(lattice)]
        if len(lattice) == 0:
            far = ~inside
        else:
            dist, _ = cKDTree(lattice).query(coords)
            far = (dist > halo) & ~inside
    return {"mean_inside": float(gamma[inside].mean()) if inside.any() else float("nan"),
            "mean_outside_halo": float(gamma[far].mean()),
            "n_inside": int(inside.sum()), "n_outside": int(far.sum())}


def idealized_state(cfg: Config, setup: ModelSetup, gamma_void: float) -> MaterialModel:
    """L2 projection of a piecewise constant scaling (``gamma_void`` in the true void)."""
    void = make_shape(cfg["geometry.void"])
    g = PiecewiseScaling(void, gamma_void)
    qset = build_quadrature_set(setup.grid, void, cfg["grid.quadtree_depth"])
    proj = l2_project(setup.grid, g, qset, cfg["material.lower"], cfg["material.upper"])
    coeffs = np.clip(proj.coefficients, cfg["material.lower"], cfg["material.upper"])
    return setup.material.with_coefficients([coeffs] * len(setup.material.fields))


def run_gradient_study(cfg: Config, observations: ObservationSet | None = None,
                       threads: int = 1) -> dict:
    """Normalized gradients at an idealized intermediate state, one per tag in the study."""
    if observations is None:
        observations = generate_observations(cfg, threads)
    out = {}
    for tag in cfg["study.tags"]:
        setup = inversion_setup(cfg)
        m = setup.material
        setup.material = MaterialModel.uniform(setup.grid, m.rho0, m.c0, tag, 1.0,
                                               cfg["material.lower"], cfg["material.upper"])
        material = idealized_state(cfg, setup, cfg["study.gamma_void"])
        ops = assemble(setup.grid, material, setup.indicator, setup.qset)
        ex = _executor(threads)
        try:
            _, grad, _ = misfit_and_gradient(ops, material, setup.indicator, setup.qset,
                                             setup.sources, setup.receivers, observations.recordings,
                                             setup.dt, setup.duration, setup.stride, setup.mask,
                                             cfg["inversion.batch"], ex)
        finally:
            if ex:
                ex.shutdown()
        out[tag] = (grad.normalized(), setup)
    return out


def lobe_sign(grid: Grid, gradient: GradientField, void: Shape, field_index: int = 0) -> float:
    """Sign of the mean gradient over nodes inside the void."""
    inside = void.contains(grid.coords)
    return float(np.sign(gradient.values[field_index][inside].mean()))


# forward studies -----------------------------------------------------------------


@dataclass
class ForwardStudyResult:
    tag: str
    grid: Grid
    times: list
    snapshots: list  # nodal displacement per snapshot time
    errors: dict  # time -> relative L2 error
    extra: dict = field(default_factory=dict)


def _relative_l2(x, u, ref):
    den = np.trapezoid(ref**2, x)
    return float(np.sqrt(np.trapezoid((u - ref) ** 2, x) / den)) if den > 0 else float("nan")


def interface_study(cfg: Config, tag: str, degree: int | None = None) -> ForwardStudyResult:
    """1D pulse hitting an immersed void interface; errors against the analytic solution."""
    st = cfg.section("study")
    m = cfg.section("material")
    deg = cfg["grid.degree"] if degree is None else degree
    h = cfg["grid.element_size"]
    length = cfg["grid.extent_x"]
    grid = build_grid(1, length, h, deg)
    xf = st["interface"]
    void = Box((xf,), (length + h,))
    qset = build_quadrature_set(grid, void, cfg["grid.quadtree_depth"])
    nf = 2 if tag == "separate" else 1
    fields = (PiecewiseScaling(void, cfg["geometry.void_gamma"]),) * nf
    material = MaterialModel(m["rho0"], m["c0"], tag, fields)
    ops = assemble(grid, material, None, qset)
    bell = GaussianBell.from_frequency(st["pulse_center"], st["pulse_frequency"], m["c0"])
    src = SourceSpec("initial_displacement", profile=bell, wave_speed=m["c0"])
    dt, duration = cfg["time.delta_t"], cfg["time.duration"]
    _, hist = run_forward(ops, [src], [[0.0]], dt, duration, stride=1)
    xs = np.linspace(0.0, xf, 4001)
    sample = interpolation_matrix(grid, xs[:, None])
    times = list(st["snapshot_times"])
    snaps, errors = [], {}
    for t in times + [st["error_time"]]:
        u = hist.at_time(t)[0]
        exact = analytic_free_reflection(xs, t, bell, xf, m["c0"], x_left=0.0)
        errors[float(t)] = _relative_l2(xs, sample @ u, exact)
        if t in times:
            snaps.append(u)
    # nodes of the void that do not belong to the cut element
    cut_hi = (np.floor(xf / h) + 1.0) * h
    void_nodes = grid.coords[:, 0] > cut_hi + 1e-9 * h
    # the reflected pulse has left the interface once its 4-sigma tail has passed
    t_after = (xf - st["pulse_center"] + 4.0 * bell.width) / m["c0"]
    after = hist.times >= t_after
    void_max = float(np.abs(hist.snapshots[after][:, 0, :][:, void_nodes]).max())
    return ForwardStudyResult(tag, grid, times, snaps, errors,
                              {"void_max_after_reflection": void_max, "degree": deg,
                               "after_reflection_from_s": t_after})


def plate_study(cfg: Config, tag: str, degree: int | None = None) -> ForwardStudyResult:
    """2D plate with a void excited at the top center; error against a refined model."""
    m = cfg.section("material")
    deg = cfg["grid.degree"] if degree is None else degree
    void = make_shape(cfg["geometry.void"])
    t_snap = list(cfg["study.snapshot_times"])
    dt, duration = cfg["time.delta_t"], cfg["time.duration"]

    def simulate(h, depth, step, p, tag_, gamma):
        grid = build_grid(2, (cfg["grid.extent_x"], cfg["grid.extent_y"]), h, p)
        qset = build_quadrature_set(grid, void, depth)
        nf = 2 if tag_ == "separate" else 1
        material = MaterialModel(m["rho0"], m["c0"], tag_, (PiecewiseScaling(void, gamma),) * nf)
        ops = assemble(grid, material, None, qset)
        top = (0.5 * cfg["grid.extent_x"], cfg["grid.extent_y"])
        src = SourceSpec("point_force", top, SineBurst(cfg["array.frequency"], cfg["array.cycles"],
                                                       cfg["array.amplitude"]))
        nsteps = step_count(step, duration)
        stride = max(1, int(round(min(t_snap) / step)))
        stride = int(np.gcd.reduce([int(round(t / step)) for t in t_snap] + [stride]))
        stride = stride if nsteps % stride == 0 else 1
        _, hist = run_forward(ops, [src], [top], step, duration, stride=stride)
        return grid, hist

    grid, hist = simulate(cfg["grid.element_size"], cfg["grid.quadtree_depth"], dt, deg, tag,
                          cfg["geometry.void_gamma"])
    r = cfg.section("reference")
    rgrid, rhist = simulate(r["element_size"], r["quadtree_depth"], r["delta_t"], 1, "rho",
                            cfg["geometry.void_gamma"])
    # compare on the physical part of a sampling lattice
    n = 201
    xs = np.linspace(0, cfg["grid.extent_x"], n)
    ys = np.linspace(0, cfg["grid.extent_y"], n)
    pts = np.stack([a.ravel() for a in np.meshgrid(xs, ys)], axis=1)
    pts = pts[~void.contains(pts)] if void is not None else pts
    a_mat, b_mat = interpolation_matrix(grid, pts), interpolation_matrix(rgrid, pts)
    snaps, errors = [], {}
    for t in t_snap:
        u = hist.at_time(t)[0]
        ur = rhist.at_time(t)[0]
        ua, ub = a_mat @ u, b_mat @ ur
        errors[float(t)] = float(np.linalg.norm(ua - ub) / np.linalg.norm(ub))
        snaps.append(u)
    return ForwardStudyResult(tag, grid, t_snap, snaps, errors, {"degree": deg})


def run_forward_study(cfg: Config) -> list:
    kind = cfg["experiment.kind"]
    if kind == "interface1d":
        return [interface_study(cfg, tag) for tag in cfg["study.tags"]]
    if kind == "plate2d":
        return [plate_study(cfg, tag) for tag in cfg["study.tags"]]
    raise ExperimentError(f"experiment kind {kind!r} is not a forward study")


__all__ = [
    "ExperimentError", "ForwardStudyResult", "InversionResult", "ModelSetup", "Objective",
    "ObservationSet", "PhasedArraySpec", "generate_observations", "idealized_state",
    "interface_study", "inversion_setup", "lobe_sign", "make_shape", "plate_study",
    "reference_setup", "resample", "run_forward_study", "run_gradient_study",
    "run_inversion_experiment", "void_statistics",
]
