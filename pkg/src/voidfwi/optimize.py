"""Projected limited-memory BFGS with box clipping."""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class OptimizeError(ValueError):
    pass


ARMIJO_C1 = 1e-4
MAX_HALVINGS = 30
PGTOL = 1e-12
CURVATURE_EPS = 1e-16


@dataclass
class InversionState:
    """Iterate, curvature history and traces of a bounded L-BFGS run.

    ``objective`` holds raw values; ``normalized`` divides by the first one.
    ``step`` records the accepted line-search factor per iteration (the
    first entry, for the starting point, is 0).
    """

    x: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    memory: int = 10
    iteration: int = 0
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    objective: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    step: list = field(default_factory=list)
    message: str = ""
    skipped_pairs: int = 0

    @property
    def normalized(self) -> list:
        if not self.objective:
            return []
        f0 = self.objective[0]
        return [f / f0 if f0 != 0.0 else 0.0 for f in self.objective]

    def push_pair(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Store a curvature pair unless ``s.y`` is not safely positive."""
        sy = float(s @ y)
        if sy <= CURVATURE_EPS * np.linalg.norm(s) * np.linalg.norm(y):
            self.skipped_pairs += 1
            return False
        self.s_hist.append(s.copy())
        self.y_hist.append(y.copy())
        while len(self.s_hist) > self.memory:
            self.s_hist.popleft()
            self.y_hist.popleft()
        return True

    def write_csv(self, path) -> None:
        """Columns: iteration, objective, normalized objective, gradient norm, step."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective", "normalized", "grad_norm", "step"])
            for k, (f, fn, g, a) in enumerate(zip(self.objective, self.normalized,
                                                   self.grad_norm, self.step)):
                w.writerow([k, f"{f:.17g}", f"{fn:.17g}", f"{g:.17g}", f"{a:.17g}"])


def lbfgs_direction(state: InversionState, gradient: np.ndarray, free: np.ndarray | None = None) -> np.ndarray:
    """Two-loop recursion: ``-H g`` from the stored pairs, ``-g`` without history.

    With a boolean ``free`` mask the recursion runs on the free components
    only and the direction is zero elsewhere.
    """
    g = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(g)):
        raise OptimizeError("gradient contains non-finite values")
    if free is not None and not np.all(free):
        d = np.zeros_like(g)
        sub = InversionState(state.x[free], state.lower[free], state.upper[free], state.memory)
        for s, y in zip(state.s_hist, state.y_hist):
            if float(s[free] @ y[free]) > 0.0:
                sub.s_hist.append(s[free])
                sub.y_hist.append(y[free])
        d[free] = lbfgs_direction(sub, g[free])
        return d
    q = g.copy()
    pairs = list(zip(state.s_hist, state.y_hist))
    if not pairs:
        return -q
    rhos = [1.0 / float(y @ s) for s, y in pairs]
    alphas = []
    for (s, y), rho in zip(reversed(pairs), reversed(rhos)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y = pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y), rho, a in zip(pairs, rhos, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def projected_gradient(x, g, lower, upper) -> np.ndarray:
    """Gradient with components that push against an active bound removed."""
    pg = np.array(g, dtype=float)
    pg[(x <= lower) & (pg > 0.0)] = 0.0
    pg[(x >= upper) & (pg < 0.0)] = 0.0
    return pg


def armijo_search(fun, x, f, g, d, lower, upper, t0=1.0):
    """Backtracking on the clipped path ``clip(x + t d)``, halving from ``t0``.

    Returns ``(t, x_new, f_new, g_new)`` or ``None`` after ``MAX_HALVINGS``
    halvings (or once the clipped step vanishes).
    """
    t = t0
    for _ in range(MAX_HALVINGS + 1):
        cand = np.clip(x + t * d, lower, upper)
        step = cand - x
        if not np.any(step):
            return None
        fc, gc = fun(cand)
        if np.isfinite(fc) and fc <= f + ARMIJO_C1 * float(g @ step):
            return t, cand, float(fc), np.asarray(gc, dtype=float)
        t *= 0.5
    return None


def minimize(fun: Callable, x0, bounds, max_iterations: int, memory: int = 10,
             callback: Callable | None = None, scale_first_step: bool = True,
             line_search: Callable | None = None) -> InversionState:
    """Minimize ``fun(x) -> (value, gradient)`` over the box ``bounds``.

    Each iteration takes the L-BFGS direction, backtracks from the full step
    (halving until the Armijo condition with ``c1 = 1e-4`` holds on the
    clipped candidate) and updates the history with the projected step.
    While no curvature information exists yet the first trial step is
    shortened to unit Euclidean length (``scale_first_step``). A custom
    ``line_search`` with the signature of :func:`armijo_search` may replace
    the backtracking. ``callback`` receives the state after every accepted
    iteration.
    """
    search = armijo_search if line_search is None else line_search
    x = np.asarray(x0, dtype=float).copy()
    lower, upper = (np.broadcast_to(np.asarray(b, dtype=float), x.shape).copy() for b in bounds)
    if np.any(lower > upper):
        raise OptimizeError("lower bound exceeds upper bound")
    x = np.clip(x, lower, upper)
    state = InversionState(x, lower, upper, memory)
    f, g = fun(x)
    f, g = float(f), np.asarray(g, dtype=float)
    if not np.isfinite(f):
        raise OptimizeError("objective is not finite at the starting point")
    state.objective.append(f)
    state.grad_norm.append(float(np.abs(projected_gradient(x, g, lower, upper)).max(initial=0.0)))
    state.step.append(0.0)
    if callback is not None:
        callback(state)
    while True:
        if state.iteration >= max_iterations:
            state.message = "maximum iterations reached"
            break
        if state.grad_norm[-1] < PGTOL:
            state.message = "projected gradient below tolerance"
            break
        free = ~(((x <= lower) & (g > 0.0)) | ((x >= upper) & (g < 0.0)))
        d = lbfgs_direction(state, g, free)
        if float(g @ d) >= 0.0:
            # history no longer yields descent; restart from steepest descent
            state.s_hist.clear()
            state.y_hist.clear()
            d = np.where(free, -g, 0.0)
        t0 = 1.0
        if scale_first_step and state.iteration == 0 and not state.s_hist:
            t0 = min(1.0, 1.0 / float(np.linalg.norm(d)))
        found = search(fun, x, f, g, d, lower, upper, t0)
        if found is None and state.s_hist:
            # at an active bound the clipped quasi-Newton path can miss descent
            # while the projected steepest-descent path cannot
            state.s_hist.clear()
            state.y_hist.clear()
            found = search(fun, x, f, g, -g, lower, upper, 1.0)
        if found is None:
            state.message = "line search failed"
            break
        t, cand, fc, gc = found
        state.push_pair(cand - x, gc - g)
        x, f, g = cand, fc, gc
        state.x = x
        state.iteration += 1
        state.objective.append(f)
        state.grad_norm.append(float(np.abs(projected_gradient(x, g, lower, upper)).max(initial=0.0)))
        state.step.append(t)
        if callback is not None:
            callback(state)
    return state
