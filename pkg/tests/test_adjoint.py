from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from voidfwi.adjoint import (AdjointError, AdjointSource, GradientField, accumulate_gradient,
                             misfit, misfit_and_gradient, run_adjoint, time_correlations,
                             trapezoid_weights)
from voidfwi.assembly import assemble
from voidfwi.geometry import Circle, IndicatorField, build_quadrature_set
from voidfwi.grid import build_grid
from voidfwi.material import MaterialModel
from voidfwi.propagate import SineBurst, SourceSpec, WaveRecording, run_forward, step_count

DT, NSTEPS = 0.05, 200
T = NSTEPS * DT
RECEIVERS = [[5.0, 5.0], [7.0, 5.0], [9.5, 4.0]]


@pytest.fixture(scope="module")
def model():
    g = build_grid(2, (10.0, 5.0), 1.0, 1)
    void = Circle((6.0, 2.0), 1.2)
    qset = build_quadrature_set(g, void, 4)
    ind = IndicatorField(void, 1.0, 0.05)
    srcs = [SourceSpec("point_force", (x, 5.0), SineBurst(0.25)) for x in (2.3, 4.1, 8.2)]
    truth = MaterialModel.uniform(g, 1.0, 1.0, "rho")
    x = g.coords
    bump = 1 - 0.5 * np.exp(-((x[:, 0] - 3) ** 2 + (x[:, 1] - 2) ** 2) / 2)
    obs, _ = run_forward(assemble(g, truth.with_coefficients([bump]), ind, qset), srcs, RECEIVERS, DT, T,
                         store=False)
    return g, qset, ind, srcs, obs


def _rec(samples, dt=1.0):
    return WaveRecording(np.zeros((samples.shape[1], 2)), dt, samples)


def test_trapezoid_weights():
    assert trapezoid_weights(4).tolist() == [0.5, 1.0, 1.0, 0.5]
    assert trapezoid_weights(1).tolist() == [0.0]


def test_misfit_closed_forms():
    obs = _rec(np.zeros((11, 1)), 0.1)
    assert misfit([obs], [obs]) == 0.0
    d = 0.3
    const = _rec(np.full((11, 1), d), 0.1)
    assert np.isclose(misfit([const], [obs]), 0.5 * d * d * 1.0)
    r = _rec(np.sin(np.arange(11.0))[:, None], 0.1)
    r2 = _rec(2 * np.sin(np.arange(11.0))[:, None], 0.1)
    assert np.isclose(misfit([r2], [obs]), 4 * misfit([r], [obs]))


def test_misfit_shape_checks():
    with pytest.raises(AdjointError):
        misfit([_rec(np.zeros((3, 1)))], [_rec(np.zeros((4, 1)))])
    with pytest.raises(AdjointError):
        misfit([_rec(np.zeros((3, 1)))], [])
    with pytest.raises(AdjointError):
        misfit([_rec(np.zeros((3, 1)), 0.1)], [_rec(np.zeros((3, 1)), 0.2)])


def _ops(model, tag="rho", gamma=None):
    g, qset, ind, _, _ = model
    mat = MaterialModel.uniform(g, 1.0, 1.0, tag)
    if gamma is not None:
        mat = mat.with_coefficients(gamma)
    return assemble(g, mat, ind, qset), mat


def test_zero_residual_gives_zero_adjoint(model):
    ops, _ = _ops(model)
    src = AdjointSource(np.array(RECEIVERS), np.zeros((NSTEPS + 1, 3)), DT)
    assert src.is_zero
    hist = run_adjoint(ops, [src], DT, T, stride=10)
    assert not np.any(hist.snapshots)


def test_point_residual_gives_reversed_green_response(model):
    ops, _ = _ops(model)
    m = 120
    res = np.zeros((NSTEPS + 1, 3))
    res[m, 1] = 1.0
    adj = run_adjoint(ops, [AdjointSource(np.array(RECEIVERS), res, DT)], DT, T, stride=1)
    t_imp = (NSTEPS - m) * DT
    src = SourceSpec("point_force", tuple(RECEIVERS[1]),
                     lambda t: np.where(np.isclose(t, t_imp, rtol=0, atol=1e-9), 1.0, 0.0))
    _, fwd = run_forward(ops, [src], RECEIVERS, DT, T, stride=1)
    assert np.array_equal(adj.snapshots[:, 0], fwd.snapshots[::-1, 0])
    # causality in reversed time: nothing before the residual instant
    assert not np.any(adj.snapshots[m:, 0])


def test_adjoint_input_checks(model):
    ops, _ = _ops(model)
    good = AdjointSource(np.array(RECEIVERS), np.ones((NSTEPS + 1, 3)), DT)
    with pytest.raises(AdjointError):
        run_adjoint(ops, [good], DT, T, stride=7)
    with pytest.raises(AdjointError):
        run_adjoint(ops, [AdjointSource(np.array(RECEIVERS), np.ones((5, 3)), DT)], DT, T)
    other = AdjointSource(np.array(RECEIVERS[::-1]), np.ones((NSTEPS + 1, 3)), DT)
    with pytest.raises(AdjointError):
        run_adjoint(ops, [good, other], DT, T)
    with pytest.raises(AdjointError):
        run_adjoint(ops, [], DT, T)


def test_zero_adjoint_gives_zero_gradient(model):
    g, qset, ind, srcs, _ = model
    ops, mat = _ops(model, "rhoc")
    _, fwd = run_forward(ops, srcs, RECEIVERS, DT, T, stride=10)
    adj = run_adjoint(ops, [AdjointSource(np.array(RECEIVERS), np.zeros((NSTEPS + 1, 3)), DT)] * 3,
                      DT, T, 10)
    grad = accumulate_gradient(fwd, adj, ops, mat, ind, qset)
    assert not np.any(grad.values[0])


def test_c_kernel_with_itself_is_nonnegative(model):
    g, qset, ind, srcs, _ = model
    ops, mat = _ops(model, "c")
    _, fwd = run_forward(ops, srcs, RECEIVERS, DT, T, stride=1)
    grad = accumulate_gradient(fwd, fwd, ops, mat, ind, qset)
    v = grad.values[0]
    assert v.max() > 0.0
    assert v.min() >= -1e-14 * v.max()


def test_correlation_shapes(model):
    g, qset, ind, srcs, _ = model
    ops, _ = _ops(model)
    _, fwd = run_forward(ops, srcs, RECEIVERS, DT, T, stride=10)
    cm, ck = time_correlations(fwd, fwd, g)
    assert cm.shape == ck.shape == (g.n_elements, 4, 4)
    # the mass correlation of a field with itself is minus a sum of squares
    assert np.all(np.einsum("eaa->e", cm) <= 0.0)


@pytest.mark.parametrize("tag", ["rho", "c", "rhoc", "separate"])
def test_gradient_matches_finite_differences(model, rng, tag):
    g, qset, ind, srcs, obs = model
    nf = 2 if tag == "separate" else 1
    base = [0.9 + 0.1 * rng.random(g.n_nodes) for _ in range(nf)]
    ops, mat = _ops(model, tag, base)
    mask = g.coords[:, 1] < 4.5
    _, grad, _ = misfit_and_gradient(ops, mat, ind, qset, srcs, RECEIVERS, obs, DT, T, stride=1, mask=mask)
    d = [rng.standard_normal(g.n_nodes) * mask for _ in range(nf)]

    def chi(vs):
        ops_, _ = _ops(model, tag, vs)
        recs, _ = run_forward(ops_, srcs, RECEIVERS, DT, T, store=False)
        return misfit(recs, obs)

    eps = 1e-4
    fd = (chi([b + eps * e for b, e in zip(base, d)]) - chi([b - eps * e for b, e in zip(base, d)])) / (2 * eps)
    ad = sum(float(a @ b) for a, b in zip(grad.values, d))
    assert abs(fd - ad) <= 1e-5 * abs(fd)
    for v in grad.values:
        assert not np.any(v[~mask])


def test_coarse_stride_approximates_exact_gradient(model):
    g, qset, ind, srcs, obs = model
    ops, mat = _ops(model, "rho", [np.full(g.n_nodes, 0.95)])
    _, exact, _ = misfit_and_gradient(ops, mat, ind, qset, srcs, RECEIVERS, obs, DT, T, stride=1)
    _, coarse, _ = misfit_and_gradient(ops, mat, ind, qset, srcs, RECEIVERS, obs, DT, T, stride=5)
    a, b = exact.values[0], coarse.values[0]
    assert np.linalg.norm(a - b) < 0.05 * np.linalg.norm(a)


def test_batching_and_threads_do_not_change_result(model):
    g, qset, ind, srcs, obs = model
    ops, mat = _ops(model, "c")
    chi1, g1, _ = misfit_and_gradient(ops, mat, ind, qset, srcs, RECEIVERS, obs, DT, T, batch=1)
    with ThreadPoolExecutor(2) as ex:
        chi2, g2, _ = misfit_and_gradient(ops, mat, ind, qset, srcs, RECEIVERS, obs, DT, T, batch=2,
                                          executor=ex)
    assert np.isclose(chi1, chi2, rtol=1e-12)
    assert np.allclose(g1.values[0], g2.values[0], rtol=1e-10, atol=1e-14 * np.abs(g1.values[0]).max())


def test_source_count_must_match(model):
    g, qset, ind, srcs, obs = model
    ops, mat = _ops(model)
    with pytest.raises(AdjointError):
        misfit_and_gradient(ops, mat, ind, qset, srcs[:2], RECEIVERS, obs, DT, T)


def test_normalized_gradient():
    gf = GradientField([np.array([1.0, -4.0]), np.array([2.0, 0.5])], np.ones(2, bool))
    n = gf.normalized()
    assert max(np.abs(v).max() for v in n.values) == 1.0
    assert n.values[0][1] == -1.0
    z = GradientField([np.zeros(2)], np.ones(2, bool)).normalized()
    assert not np.any(z.values[0])
    s = gf + gf
    assert np.allclose(s.values[1], [4.0, 1.0])


def test_step_count_consistency():
    assert step_count(DT, T) == NSTEPS
