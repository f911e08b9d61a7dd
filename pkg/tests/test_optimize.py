import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voidfwi.optimize import (InversionState, OptimizeError, PGTOL, armijo_search, lbfgs_direction,
                              minimize, projected_gradient)


def quadratic(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return lambda x: (0.5 * x @ a @ x - b @ x, a @ x - b)


def exact_search(a):
    """Exact minimizing step along ``d`` for a quadratic with Hessian ``a``."""

    def search(fun, x, f, g, d, lower, upper, t0=1.0):
        t = -float(g @ d) / float(d @ a @ d)
        cand = x + t * d
        fc, gc = fun(cand)
        return t, cand, fc, gc

    return search


def rosenbrock(x):
    f = (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    g = np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
    return f, g


def _state(n=2):
    return InversionState(np.zeros(n), np.full(n, -np.inf), np.full(n, np.inf))


def test_empty_history_gives_steepest_descent():
    g = np.array([1.0, -2.0])
    assert np.array_equal(lbfgs_direction(_state(), g), -g)


def test_non_finite_gradient_rejected():
    with pytest.raises(OptimizeError):
        lbfgs_direction(_state(), np.array([np.nan, 0.0]))


def test_exact_quadratic_in_two_variables():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    s = minimize(quadratic(a, b), [0.0, 0.0], ([-10, -10], [10, 10]), 3, line_search=exact_search(a))
    assert s.iteration <= 3
    assert np.allclose(s.x, np.linalg.solve(a, b), atol=1e-12)


def test_armijo_quadratic_converges():
    a = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    s = minimize(quadratic(a, b), [0.0, 0.0], ([-10, -10], [10, 10]), 50)
    assert s.message == "projected gradient below tolerance"
    assert np.allclose(s.x, np.linalg.solve(a, b), atol=1e-12)


def test_unbounded_minimum_in_one_variable():
    s = minimize(lambda x: ((x[0] - 3) ** 2, 2 * (x - 3)), [0.0], ([-10], [10]), 50)
    assert np.isclose(s.x[0], 3.0, atol=1e-12)


def test_active_upper_bound():
    s = minimize(lambda x: ((x[0] - 2) ** 2, 2 * (x - 2)), [0.0], ([0.0], [1.2]), 50)
    assert s.x[0] == 1.2
    assert s.grad_norm[-1] == 0.0


def test_rosenbrock():
    s = minimize(rosenbrock, [-1.2, 1.0], ([-5, -5], [5, 5]), 200)
    assert s.iteration <= 200
    assert np.abs(s.x - 1.0).max() < 1e-6
    assert all(b <= a for a, b in zip(s.objective, s.objective[1:]))


def test_descent_in_every_iteration():
    seen = []

    def fun(x):
        f, g = rosenbrock(x)
        seen.append((x.copy(), g))
        return f, g

    def check(state):
        g = next(gg for xx, gg in reversed(seen) if np.array_equal(xx, state.x))
        d = lbfgs_direction(state, g)
        if state.grad_norm[-1] > PGTOL:
            assert g @ d < 0.0

    minimize(fun, [-1.2, 1.0], ([-5, -5], [5, 5]), 200, callback=check)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 6), m=st.integers(1, 8))
def test_two_loop_direction_is_descent(seed, n, m):
    rng = np.random.default_rng(seed)
    state = _state(n)
    state.memory = 5
    for _ in range(m):
        s = rng.standard_normal(n)
        y = s + 0.3 * rng.standard_normal(n)
        state.push_pair(s, y)
    g = rng.standard_normal(n)
    d = lbfgs_direction(state, g)
    assert len(state.s_hist) <= 5
    assert g @ d < 0.0


def test_curvature_pairs_filtered():
    state = _state()
    assert not state.push_pair(np.array([1.0, 0.0]), np.array([-1.0, 0.0]))
    assert state.skipped_pairs == 1 and not state.s_hist
    assert state.push_pair(np.array([1.0, 0.0]), np.array([1.0, 0.0]))


def _cg_iterates(a, b, x0, n):
    x = np.array(x0, dtype=float)
    r = b - a @ x
    p = r.copy()
    out = [x.copy()]
    for _ in range(n):
        if np.linalg.norm(r) < 1e-14:
            break
        alpha = (r @ r) / (p @ a @ p)
        x = x + alpha * p
        r_new = r - alpha * (a @ p)
        p = r_new + (r_new @ r_new) / (r @ r) * p
        r = r_new
        out.append(x.copy())
    return out


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 5))
def test_matches_conjugate_gradient_with_exact_search(seed, n):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    a = q @ np.diag(rng.uniform(1.0, 10.0, n)) @ q.T
    b = rng.standard_normal(n)
    x0 = rng.standard_normal(n)
    iterates = []
    minimize(quadratic(a, b), x0, (np.full(n, -1e6), np.full(n, 1e6)), n,
             callback=lambda s: iterates.append(s.x.copy()), line_search=exact_search(a))
    cg = _cg_iterates(a, b, x0, n)
    for xl, xc in zip(iterates, cg):
        assert np.allclose(xl, xc, rtol=1e-7, atol=1e-8 * np.linalg.norm(xc))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6))
def test_bounded_quadratic_trace_monotone_and_feasible(seed, n):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    a = m @ m.T + 0.1 * np.eye(n)
    b = 3 * rng.standard_normal(n)
    lower, upper = np.zeros(n), np.full(n, 1.2)
    s = minimize(quadratic(a, b), rng.uniform(0, 1.2, n), (lower, upper), 60)
    assert np.all(s.x >= lower) and np.all(s.x <= upper)
    assert all(y <= x for x, y in zip(s.objective, s.objective[1:]))
    # first-order optimality on the box
    _, g = quadratic(a, b)(s.x)
    assert np.abs(projected_gradient(s.x, g, lower, upper)).max() < 1e-6


def test_projected_gradient():
    x = np.array([0.0, 1.2, 0.5])
    g = np.array([1.0, -1.0, 2.0])
    assert projected_gradient(x, g, 0.0, 1.2).tolist() == [0.0, 0.0, 2.0]
    assert projected_gradient(x, -g, 0.0, 1.2).tolist() == [-1.0, 1.0, -2.0]


def test_armijo_rejects_ascent():
    fun = quadratic(np.eye(2), np.zeros(2))
    x = np.array([1.0, 1.0])
    f, g = fun(x)
    assert armijo_search(fun, x, f, g, g, np.full(2, -5.0), np.full(2, 5.0)) is None


def test_line_search_failure_reported():
    # the gradient has the wrong sign, so no step can satisfy the decrease condition
    s = minimize(lambda x: (float(x @ x), -2 * x), [1.0, 1.0], ([-5, -5], [5, 5]), 10)
    assert s.message == "line search failed"
    assert s.iteration == 0


def test_bad_inputs():
    with pytest.raises(OptimizeError):
        minimize(rosenbrock, [0.0, 0.0], ([1.0, 1.0], [0.0, 0.0]), 5)
    with pytest.raises(OptimizeError):
        minimize(lambda x: (np.inf, x), [0.0], ([-1.0], [1.0]), 5)


def test_convergence_csv(tmp_path):
    s = minimize(rosenbrock, [-1.2, 1.0], ([-5, -5], [5, 5]), 5)
    s.write_csv(tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective,normalized,grad_norm,step"
    assert len(lines) == s.iteration + 2
    row = lines[-1].split(",")
    assert float(row[1]) == s.objective[-1]
    assert float(row[2]) == s.normalized[-1]
    assert s.normalized[0] == 1.0
