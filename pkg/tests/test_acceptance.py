"""Acceptance criteria, one test each, at their stated tolerances.

Every test collects all of its sub-checks before asserting so the summary at
the end of the run shows the full evidence, red or green.
"""

import time

import numpy as np
import pytest

from voidfwi.adjoint import misfit, misfit_and_gradient
from voidfwi.assembly import assemble
from voidfwi.config import load_config, preset_path
from voidfwi.experiments import interface_study, lobe_sign, make_shape, run_gradient_study, void_statistics
from voidfwi.geometry import Circle, IndicatorField, build_quadrature_set, integrate_indicator
from voidfwi.grid import build_grid
from voidfwi.material import MaterialModel, PiecewiseScaling
from voidfwi.optimize import minimize
from voidfwi.propagate import SineBurst, SourceSpec, run_forward

TAGS = ("rho", "c", "rhoc", "separate")


@pytest.mark.criterion(1, "1D interface study against the analytic free-boundary solution")
def test_interface_study(detail):
    problems = []
    for p in (1, 2, 4):
        cfg = load_config(preset_path(f"interface1d_p{p}"))
        res = {tag: interface_study(cfg, tag) for tag in ("rho", "c", "rhoc")}
        err = {tag: r.errors[3.5] for tag, r in res.items()}
        void_max = res["rhoc"].extra["void_max_after_reflection"]
        detail(f"p={p}: L2 error rho {err['rho']:.4f}, c {err['c']:.4f}, rhoc {err['rhoc']:.4f}; "
               f"rhoc void max |u| after reflection {void_max:.2e}")
        bound = {1: 0.05, 4: 0.01}.get(p)
        if bound is not None and not err["rho"] < bound:
            problems.append(f"p={p}: rho error {err['rho']:.4f} >= {bound}")
        if not err["c"] > err["rho"]:
            problems.append(f"p={p}: c error {err['c']:.4f} does not exceed rho error {err['rho']:.4f}")
        if not void_max < 1e-3:
            problems.append(f"p={p}: rhoc void max {void_max:.2e} >= 1e-3")
    assert not problems, "; ".join(problems)


def _gradient_model(tag, rng):
    g = build_grid(2, (10.0, 5.0), 1.0, 1)
    void = Circle((6.0, 2.0), 1.2)
    qset = build_quadrature_set(g, void, 5)
    ind = IndicatorField(void, 1.0, 1e-3)
    src = [SourceSpec("point_force", (3.3, 5.0), SineBurst(0.25))]
    rx = [[5.0, 5.0], [7.0, 5.0], [9.5, 4.0]]
    x = g.coords
    bump = 1 - 0.4 * np.exp(-((x[:, 0] - 3) ** 2 + (x[:, 1] - 2) ** 2) / 2)
    truth = MaterialModel.uniform(g, 1.0, 1.0, "rho").with_coefficients([bump])
    dt, nsteps = 0.05, 300
    obs, _ = run_forward(assemble(g, truth, ind, qset), src, rx, dt, nsteps * dt, store=False)
    nf = 2 if tag == "separate" else 1
    base = [0.9 + 0.2 * rng.random(g.n_nodes) for _ in range(nf)]
    mask = ~void.contains(g.coords)

    def model(fields):
        mat = MaterialModel.uniform(g, 1.0, 1.0, tag).with_coefficients(fields)
        return assemble(g, mat, ind, qset), mat

    def chi(fields):
        recs, _ = run_forward(model(fields)[0], src, rx, dt, nsteps * dt, store=False)
        return misfit(recs, obs)

    ops, mat = model(base)
    _, grad, _ = misfit_and_gradient(ops, mat, ind, qset, src, rx, obs, dt, nsteps * dt, stride=1, mask=mask)
    return g, base, mask, grad, chi


@pytest.mark.criterion(2, "adjoint gradient matches central finite differences for every tag")
def test_adjoint_gradient(detail, rng):
    t0 = time.perf_counter()
    problems = []
    for tag in TAGS:
        g, base, mask, grad, chi = _gradient_model(tag, rng)
        worst, rates = 0.0, []
        for _ in range(5):
            d = [rng.standard_normal(g.n_nodes) * mask for _ in base]
            ad = sum(float(a @ b) for a, b in zip(grad.values, d))

            def fd(eps):
                plus = chi([b + eps * e for b, e in zip(base, d)])
                minus = chi([b - eps * e for b, e in zip(base, d)])
                return (plus - minus) / (2 * eps)

            errs = [abs(fd(eps) - ad) / abs(ad) for eps in (4e-2, 2e-2, 1e-4)]
            worst = max(worst, errs[2])
            rates.append(np.log2(errs[0] / errs[1]))
        detail(f"{tag}: max relative FD mismatch at eps=1e-4 {worst:.1e}; "
               f"observed FD order {min(rates):.2f}..{max(rates):.2f}")
        if not worst <= 1e-3:
            problems.append(f"{tag}: mismatch {worst:.1e}")
        if not all(1.8 <= r <= 2.2 for r in rates):
            problems.append(f"{tag}: FD convergence order {rates} is not second order")
    elapsed = time.perf_counter() - t0
    detail(f"runtime {elapsed:.1f} s")
    if not elapsed < 60.0:
        problems.append(f"runtime {elapsed:.1f} s")
    assert not problems, "; ".join(problems)


@pytest.mark.criterion(3, "cut-cell quadrature area of the plate with a circular void")
def test_cut_cell_area(detail):
    g = build_grid(2, (0.05, 0.05), 5e-4, 1)
    void = Circle((0.025, 0.025), 0.005)
    exact = 2.5e-3 - np.pi * 2.5e-5
    errors = {}
    for depth in range(2, 7):
        qset = build_quadrature_set(g, void, depth)
        errors[depth] = abs(integrate_indicator(qset, IndicatorField(void, 1.0, 0.0)) - exact) / exact
    detail("relative area error by depth: " + ", ".join(f"{d}: {e:.2e}" for d, e in errors.items()))
    problems = []
    if not errors[5] < 5e-3:
        problems.append(f"depth 5 error {errors[5]:.2e} >= 0.5%")
    rising = [(d, d + 1) for d in range(2, 6) if not errors[d + 1] < errors[d]]
    if rising:
        problems.append(f"error does not decrease monotonically ({rising})")
    assert not problems, "; ".join(problems)


@pytest.mark.criterion(4, "discrete reciprocity under source/receiver swap")
def test_reciprocity(detail, rng):
    g = build_grid(2, (20.0, 10.0), 1.0, 1)
    void = Circle((12.0, 4.0), 2.2)
    qset = build_quadrature_set(g, void, 5)
    mat = MaterialModel.uniform(g, 1.0, 1.0, "separate").with_coefficients(
        [0.8 + 0.4 * rng.random(g.n_nodes), 0.8 + 0.4 * rng.random(g.n_nodes)])
    ops = assemble(g, mat, IndicatorField(void, 1.0, 1e-3), qset)
    a, b = (3.3, 10.0), (17.6, 7.2)
    dt = 0.5 / ops.max_frequency()
    sig = SineBurst(0.2)
    ab, _ = run_forward(ops, [SourceSpec("point_force", a, sig)], [b], dt, 60.0, store=False)
    ba, _ = run_forward(ops, [SourceSpec("point_force", b, sig)], [a], dt, 60.0, store=False)
    x, y = ab[0].samples[:, 0], ba[0].samples[:, 0]
    rel = np.abs(x - y).max() / np.abs(x).max()
    detail(f"max relative difference of swapped recordings {rel:.1e} over {len(x)} samples")
    assert rel < 1e-8


@pytest.mark.slow
@pytest.mark.criterion(5, "desk-scale circular-void inversion with the rho tag")
def test_desk_inversion(detail, desk_inversion, desk_observations, desk_config):
    res, wall = desk_inversion("rho")
    obs_wall = desk_observations.metadata["wall_time_s"]
    state = res.state
    void = make_shape(desk_config["geometry.void"])
    stats = void_statistics(res.setup.grid, state.x, void, halo=2e-3)
    trace = state.normalized
    detail(f"normalized objective {trace[-1]:.4f} after {state.iteration} iterations ({state.message})")
    detail(f"mean gamma inside void {stats['mean_inside']:.3f} ({stats['n_inside']} nodes), "
           f"outside 2 mm halo {stats['mean_outside_halo']:.3f} ({stats['n_outside']} nodes)")
    detail(f"runtime: observations {obs_wall:.0f} s + inversion {wall:.0f} s")
    problems = []
    if not trace[-1] < 0.35:
        problems.append(f"objective {trace[-1]:.4f}")
    if not all(b <= a for a, b in zip(trace, trace[1:])):
        problems.append("objective trace not monotone")
    if not stats["mean_inside"] < 0.5:
        problems.append(f"inside mean {stats['mean_inside']:.3f}")
    if not stats["mean_outside_halo"] > 0.85:
        problems.append(f"outside mean {stats['mean_outside_halo']:.3f}")
    if not obs_wall + wall < 900.0:
        problems.append(f"runtime {obs_wall + wall:.0f} s")
    assert not problems, "; ".join(problems)


@pytest.mark.slow
@pytest.mark.criterion(6, "parametrization ranking rho <= rhoc <= c at desk scale")
def test_parametrization_ranking(detail, desk_inversion):
    final = {tag: desk_inversion(tag)[0].state.normalized[-1] for tag in ("rho", "rhoc", "c")}
    detail("final normalized objective: " + ", ".join(f"{t} {v:.4f}" for t, v in final.items()))
    assert final["rho"] <= final["rhoc"] <= final["c"]


@pytest.mark.slow
@pytest.mark.criterion(7, "idealized gradient lobe signs at gamma_void = 0.2")
def test_idealized_gradient_signs(detail, desk_observations):
    cfg = load_config(preset_path("desk_gradient"), ["study.tags=rho, c"])
    assert cfg["study.gamma_void"] == 0.2
    void = make_shape(cfg["geometry.void"])
    grads = run_gradient_study(cfg, desk_observations)
    signs = {}
    for tag, (grad, setup) in grads.items():
        inside = void.contains(setup.grid.coords)
        v = grad.values[0][inside]
        signs[tag] = lobe_sign(setup.grid, grad, void)
        detail(f"{tag}: normalized gradient inside void mean {v.mean():+.3f}, "
               f"min {v.min():+.3f}, max {v.max():+.3f}")
    problems = []
    if signs["rho"] != 1.0:
        problems.append("rho lobe does not point toward decreasing gamma")
    if signs["c"] != -signs["rho"]:
        problems.append("c lobe does not have the opposite sign")
    assert not problems, "; ".join(problems)


@pytest.mark.criterion(8, "indicator and scaling encodings of the known geometry agree")
def test_fcm_superposition(detail):
    cfg = load_config(preset_path("full_ellipse_fcm"))
    known = make_shape(cfg["geometry.known"])
    alpha = cfg["geometry.alpha_fict"]
    g = build_grid(2, (0.1, 0.05), 2e-3, 1)
    qset = build_quadrature_set(g, known, 5)
    a = assemble(g, MaterialModel.uniform(g, 2700.0, 6000.0, "rho"), IndicatorField(known, 1.0, alpha), qset)
    b = assemble(g, MaterialModel(2700.0, 6000.0, "rho", (PiecewiseScaling(known, alpha),)), None, qset)
    src = [SourceSpec("point_force", (x, 0.05), SineBurst(5e5)) for x in (0.02, 0.05, 0.08)]
    rx = [[x, 0.05] for x in np.linspace(0.01, 0.09, 9)]
    dt = 0.5 / a.max_frequency()
    ra, _ = run_forward(a, src, rx, dt, 1e-5, store=False)
    rb, _ = run_forward(b, src, rx, dt, 1e-5, store=False)
    scale = max(np.abs(r.samples).max() for r in ra)
    rel = max(np.abs(x.samples - y.samples).max() for x, y in zip(ra, rb)) / scale
    detail(f"max relative difference of recordings {rel:.1e} ({len(qset.cut)} cut elements)")
    assert rel <= 1e-10


@pytest.mark.slow
@pytest.mark.criterion(9, "optimizer cases converge and every acceptance trace is monotone")
def test_optimizer_suite(detail, desk_inversion):
    problems = []
    a = np.array([[4.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 2.0])
    box = minimize(lambda x: (0.5 * x @ a @ x - b @ x, a @ x - b), [1.0, 1.0], ([0.0, 0.0], [0.2, 1.2]), 50)
    # the unconstrained minimizer (1/11, 7/11) is feasible; a tighter box pins x1
    tight = minimize(lambda x: (0.5 * x @ a @ x - b @ x, a @ x - b), [1.0, 1.0], ([0.2, 0.0], [1.0, 1.0]), 50)
    expect_tight = np.array([0.2, (2.0 - 0.2) / 3.0])
    rosen = minimize(lambda x: ((1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2,
                                np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2),
                                          200 * (x[1] - x[0] ** 2)])), [-1.2, 1.0], ([-5, -5], [5, 5]), 200)
    cases = {
        "quadratic, interior minimum": (box, np.array([1.0, 7.0]) / 11.0, 1e-8),
        "quadratic, active lower bound": (tight, expect_tight, 1e-8),
        "Rosenbrock": (rosen, np.ones(2), 1e-6),
    }
    for name, (state, expect, tol) in cases.items():
        err = np.abs(state.x - expect).max()
        detail(f"{name}: {state.iteration} iterations, error {err:.1e} ({state.message})")
        if not err < tol:
            problems.append(f"{name} error {err:.1e}")
    traces = {name: s.objective for name, (s, _, _) in cases.items()}
    for tag in ("rho", "rhoc", "c"):
        traces[f"desk {tag}"] = desk_inversion(tag)[0].state.objective
    for name, tr in traces.items():
        if not all(y <= x for x, y in zip(tr, tr[1:])):
            problems.append(f"{name} trace not monotone")
    detail(f"monotone objective traces checked: {', '.join(traces)}")
    assert not problems, "; ".join(problems)
