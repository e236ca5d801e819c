"""Augmented Lagrangian driver with Heaviside continuation.

Each subproblem minimizes the augmented Lagrangian for fixed multipliers and
penalty with a steepest descent whose step is bounded per variable by
adaptive moving limits. Multipliers and penalty are then updated from the
stress measures at the subproblem solution.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from typing import Callable

import numpy as np

from .problem import Problem
from .sensitivity import Analysis, al_gradient, al_value, analyze, volume_fraction

log = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class ALSettings:
    r1: float = 0.01
    r_max: float = 1e4
    gamma: float = 10.0
    omega: float = 0.8
    tol_out: float = 0.1
    tol_sigma: float = 0.01
    tol_sub: float = 0.01
    nit_max: int = 50
    move_max: float = 0.1
    move_min: float = 0.02
    k1: float = 0.7
    k2: float = 1.1
    max_iterations: int = 25000

    def __post_init__(self):
        if not self.gamma > 1:
            raise ValueError("penalty growth factor must exceed 1")
        if not 0 < self.omega < 1:
            raise ValueError("progress factor must lie in (0, 1)")
        if not 0 < self.move_min <= self.move_max:
            raise ValueError("moving limits must satisfy 0 < move_min <= move_max")
        if not 0 < self.r1 <= self.r_max:
            raise ValueError("penalty bounds must satisfy 0 < r1 <= r_max")
        for name in ("tol_out", "tol_sigma", "tol_sub"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.nit_max < 1 or self.max_iterations < 1:
            raise ValueError("iteration limits must be positive")
        if not (0 < self.k1 < 1 < self.k2):
            raise ValueError("moving-limit factors need k1 < 1 < k2")


@dataclasses.dataclass
class IterationRecord:
    iteration: int
    subproblem: int
    delta: float
    r: float
    volume_fraction: float
    max_violation: float
    change: float

    FIELDS = ("iteration", "subproblem", "delta", "r", "volume_fraction", "max_violation", "change")


@dataclasses.dataclass
class ALState:
    rho: np.ndarray
    mu: np.ndarray
    r: float
    delta: float
    subproblems: int = 0
    iterations: int = 0
    violations: list = dataclasses.field(default_factory=list)
    volumes: list = dataclasses.field(default_factory=list)
    changes: list = dataclasses.field(default_factory=list)


@dataclasses.dataclass
class SubproblemResult:
    rho: np.ndarray
    iterations: int
    change: float  # max |rho_end - rho_start|
    converged: bool
    aux: object = None  # whatever the objective returned alongside the last evaluation


def update_moving_limits(m: np.ndarray, d_now: np.ndarray, d_prev: np.ndarray | None,
                         settings: ALSettings) -> np.ndarray:
    """Shrink limits where the change flipped sign, grow them elsewhere."""
    if d_prev is None:
        return m
    osc = d_now * d_prev < 0
    m = np.where(osc, settings.k1 * m, settings.k2 * m)
    return np.clip(m, settings.move_min, settings.move_max)


def _secant_scale(scale: np.ndarray, d: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Per-variable inverse curvature ``d / dg`` where positive, kept within a factor 10 of the old scale.

    Variables that did not move or show non-positive curvature keep their scale.
    """
    pos = (d != 0) & (d * dg > 0)
    out = scale.copy()
    out[pos] = np.clip(d[pos] / dg[pos], 0.1 * scale[pos], 10.0 * scale[pos])
    return out


def solve_subproblem(fun: Callable, rho: np.ndarray, move0: float, settings: ALSettings,
                     callback: Callable | None = None, budget: int | None = None) -> SubproblemResult:
    """Box-constrained scaled steepest descent on ``[0, 1]^n`` with moving limits.

    ``fun(rho)`` returns ``(value, grad, aux)``. The step on variable ``e`` is
    ``-a_e g_e`` limited to ``+-m_e``. The scale starts at ``m / G0``, with
    ``G0`` the largest gradient magnitude over variables that have at least
    ``m`` of room towards their bound (all free variables if none has), so
    the first step moves some variable by the full limit instead of stalling
    on one pinned against a bound. Afterwards ``a_e``
    follows the secant estimate ``d_e / (g_e - g_e_prev)`` of the inverse
    curvature, so each variable takes a Newton-like step inside its limit.
    A step that increases ``value`` is rejected and the scales of the moved
    variables are halved; the trial still counts as an iteration.
    ``callback(it, rho, change, aux)`` is invoked after every iteration with
    the current (accepted) point; ``change`` is 0 for a rejected step.
    """
    rho = np.asarray(rho, dtype=float).copy()
    start = rho.copy()
    m = np.full(rho.shape, float(move0))
    f, grad, aux = fun(rho)
    free = ~(((rho <= 0) & (grad > 0)) | ((rho >= 1) & (grad < 0)))
    room = np.where(grad < 0, 1.0 - rho, rho)  # distance to the bound in the descent direction
    roomy = free & (room >= move0)
    pool = grad[roomy] if roomy.any() else grad[free]
    g0 = float(np.max(np.abs(pool))) if pool.size else 0.0
    scale = np.full(rho.shape, 0.0 if g0 == 0 else float(move0) / g0)
    d_prev = None
    nit = settings.nit_max if budget is None else max(1, min(settings.nit_max, budget))
    it = 0
    converged = False
    while it < nit:
        it += 1
        step = np.clip(-scale * grad, -m, m)
        new = np.clip(rho + step, 0.0, 1.0)
        d = new - rho
        change = float(np.max(np.abs(d)))
        f_new, g_new, aux_new = fun(new)
        if f_new > f:
            scale[d != 0] *= 0.5
            if callback is not None:
                callback(it, rho, 0.0, aux)
            if change < settings.tol_sub:
                converged = True
                break
            continue
        rho, f, aux = new, f_new, aux_new
        g_old, grad = grad, g_new
        if callback is not None:
            callback(it, rho, change, aux)
        if change < settings.tol_sub:
            converged = True
            break
        scale = _secant_scale(scale, d, grad - g_old)
        m = update_moving_limits(m, d, d_prev, settings)
        d_prev = d
    return SubproblemResult(rho, it, float(np.max(np.abs(rho - start))), converged, aux)


def update_multipliers(mu: np.ndarray, ratios: np.ndarray, r: float) -> np.ndarray:
    """``mu <- max(0, r (ratio - 1) + mu)``."""
    return np.maximum(0.0, r * (np.asarray(ratios) - 1.0) + mu)


def update_penalty(r: float, violation: float, previous: float | None, settings: ALSettings) -> float:
    """Grow ``r`` when the maximum violation did not drop by the factor ``omega``."""
    if previous is None:
        return r
    if violation > settings.omega * previous:
        return min(settings.gamma * r, settings.r_max)
    return r


@dataclasses.dataclass
class RunResult:
    rho: np.ndarray
    rho_bar: np.ndarray
    mu: np.ndarray
    r: float
    converged: bool
    iterations: int
    subproblems: int
    volume_fraction: float
    max_violation: float
    history: list
    analysis: Analysis
    elapsed: float
    note: str = ""


def run(problem: Problem, settings: ALSettings | None = None, rho0=None,
        log_every: int = 0, on_record: Callable | None = None) -> RunResult:
    """Full continuation run from ``rho = 1``.

    For each projection sharpness in the schedule, subproblems are repeated
    until the subproblem design change drops below ``tol_out``. At the final
    sharpness the loop also requires ``max_violation < tol_sigma``. Exceeding
    ``settings.max_iterations`` ends the run with ``converged = False`` and
    the best feasible final-sharpness design seen, if any.
    """
    settings = settings or ALSettings()
    c = problem.constants
    schedule = c.delta_schedule()
    ne = problem.n_elements
    rho = np.ones(ne) if rho0 is None else np.clip(np.asarray(rho0, dtype=float), 0.0, 1.0)
    state = ALState(rho, np.zeros(ne), settings.r1, float(schedule[0]))
    history: list[IterationRecord] = []
    best = None  # (volume, rho, analysis) of feasible designs at the final sharpness
    t0 = time.perf_counter()
    analysis = analyze(problem, state.rho, state.delta)
    converged = False
    exhausted = False

    def record(it, rho_i, change, a):
        state.iterations += 1
        rec = IterationRecord(state.iterations, state.subproblems + 1, state.delta, state.r,
                              volume_fraction(a.rho_bar), a.max_violation, change)
        history.append(rec)
        if on_record is not None:
            on_record(rec)
        if log_every and state.iterations % log_every == 0:
            log.info("it %5d  delta %5.1f  r %8.2g  V %.4f  viol %+.4f  change %.4f",
                     rec.iteration, rec.delta, rec.r, rec.volume_fraction, rec.max_violation, change)

    for delta in schedule:
        state.delta = float(delta)
        final = delta == schedule[-1]
        move0 = settings.move_max if delta == 0 else settings.move_min
        analysis = analyze(problem, state.rho, state.delta)
        while True:
            first = analysis

            def fun(x, _first=first):
                a = _first if np.array_equal(_first.rho, x) else analyze(problem, x, state.delta)
                return al_value(problem, a, state.mu, state.r), al_gradient(problem, a, state.mu, state.r), a

            budget = settings.max_iterations - state.iterations
            sub = solve_subproblem(fun, state.rho, move0, settings, callback=record, budget=budget)
            state.rho = sub.rho
            analysis = sub.aux
            state.subproblems += 1
            viol = analysis.max_violation
            prev = state.violations[-1] if state.violations else None
            state.violations.append(viol)
            state.volumes.append(volume_fraction(analysis.rho_bar))
            state.changes.append(sub.change)
            if final and viol < settings.tol_sigma and (best is None or state.volumes[-1] < best[0]):
                best = (state.volumes[-1], state.rho.copy(), analysis)
            state.mu = update_multipliers(state.mu, analysis.ratios, state.r)
            state.r = update_penalty(state.r, viol, prev, settings)
            done = sub.change < settings.tol_out and (not final or viol < settings.tol_sigma)
            if done:
                converged = final
                break
            if state.iterations >= settings.max_iterations:
                exhausted = True
                break
        if exhausted:
            break

    note = ""
    if exhausted:
        note = f"iteration budget of {settings.max_iterations} exhausted"
        log.warning(note)
        if best is not None:
            state.rho, analysis = best[1], best[2]
            note += "; returning best feasible design at final sharpness"
    return RunResult(state.rho, analysis.rho_bar, state.mu, state.r, converged, state.iterations,
                     state.subproblems, volume_fraction(analysis.rho_bar), analysis.max_violation,
                     history, analysis, time.perf_counter() - t0, note)


def al_objective(problem: Problem, mu, r: float, delta: float):
    """``(value, grad)`` of the augmented Lagrangian as a plain function of ``rho``."""
    def f(rho):
        a = analyze(problem, rho, delta)
        return al_value(problem, a, mu, r), al_gradient(problem, a, mu, r)
    return f
