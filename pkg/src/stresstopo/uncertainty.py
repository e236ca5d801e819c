"""Stress measures under uncertain loads.

Every measure works on a :class:`~stresstopo.stress.StressBasis`, so the
stress at any load realization is an affine combination of precomputed
element stresses and no equilibrium solve is needed inside the inner loops.
All solvers are vectorized over elements.
"""

from __future__ import annotations

import dataclasses
import enum
import itertools
import logging

import numpy as np

from .stress import StressBasis, m_apply, quad_form

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class LoadMode(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    GAUSSIAN = "gaussian"
    INTERVAL = "interval"


class Formulation(str, enum.Enum):
    DETERMINISTIC = "det"
    ROBUST = "robust"
    RELIABILITY = "rbto"
    ANTIOPT = "antiopt"


@dataclasses.dataclass
class LoadModel:
    """Magnitudes of the uncertain loads multiplying the unit load vectors."""

    mode: LoadMode
    mean: np.ndarray
    cov: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None

    def __post_init__(self):
        self.mode = LoadMode(self.mode)
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        n = self.mean.size
        if self.mode is LoadMode.GAUSSIAN:
            cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
            if cov.shape != (n, n):
                raise ConfigurationError(f"covariance must be {n}x{n}")
            if not np.allclose(cov, cov.T):
                raise ConfigurationError("covariance must be symmetric")
            if n and np.linalg.eigvalsh(cov).min() < -1e-12 * max(1.0, np.abs(cov).max()):
                raise ConfigurationError("covariance must be positive semidefinite")
            self.cov = cov
        if self.mode is LoadMode.INTERVAL:
            lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
            hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
            if lo.shape != (n,) or hi.shape != (n,):
                raise ConfigurationError("interval bounds must match the number of variables")
            if np.any(lo > hi):
                raise ConfigurationError("lower bounds must not exceed upper bounds")
            self.lower, self.upper = lo, hi

    @classmethod
    def deterministic(cls, values) -> "LoadModel":
        return cls(LoadMode.DETERMINISTIC, values)

    @classmethod
    def gaussian(cls, mean, std=None, cov=None) -> "LoadModel":
        if cov is None:
            cov = np.diag(np.atleast_1d(np.asarray(std, dtype=float)) ** 2)
        return cls(LoadMode.GAUSSIAN, mean, cov=cov)

    @classmethod
    def interval(cls, lower, upper) -> "LoadModel":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        return cls(LoadMode.INTERVAL, 0.5 * (lower + upper), lower=lower, upper=upper)

    @property
    def n(self) -> int:
        return self.mean.size

    @property
    def nominal(self) -> np.ndarray:
        return self.mean

    def transform_factor(self) -> np.ndarray:
        """``L`` with ``L L^T = cov``, so ``z = mean + L y`` maps standard normal ``y``."""
        if self.mode is not LoadMode.GAUSSIAN:
            raise ConfigurationError("standard-normal transform needs a Gaussian load model")
        cov = self.cov
        if np.allclose(cov, np.diag(np.diag(cov))):
            return np.diag(np.sqrt(np.diag(cov)))
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            w, V = np.linalg.eigh(cov)
            return V * np.sqrt(np.clip(w, 0.0, None))


@dataclasses.dataclass
class RobustSettings:
    alpha: float = 2.0

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigurationError("robustness weight must be non-negative")


@dataclasses.dataclass
class ReliabilitySettings:
    beta_target: float = 2.0
    hmv_tol: float = 1e-6
    hmv_maxit: int = 200

    def __post_init__(self):
        if not self.beta_target > 0:
            raise ConfigurationError("target reliability index must be positive")


@dataclasses.dataclass
class AntiOptSettings:
    grid_points: int = 3
    initial_step: float = 0.1
    shrink: float = 0.5
    tol: float = 1e-6

    def __post_init__(self):
        if self.grid_points < 2:
            raise ConfigurationError("the grid needs both interval bounds")


# --- gradients in load space ------------------------------------------------

def grad_sigma_wrt_loads(s: np.ndarray, units: np.ndarray, sigma_min: float) -> np.ndarray:
    """d sigma_eq / d z_i for element stresses ``s`` (Ne, 3) and unit stresses (N, Ne, 3)."""
    sig = np.sqrt(quad_form(s) + sigma_min**2)
    return (quad_form(s[None], units) / sig[None]).T


# --- robust -------------------------------------------------------------

def robust_measure(basis: StressBasis, model: LoadModel, alpha: float,
                   with_partials: bool = False):
    """``sigma_eq(mean) + alpha * sqrt(g^T Cov g + sigma_min^2)`` per element.

    With ``with_partials`` also returns d measure / d s_j for the base field
    and each unit field, shape (N+1, Ne, 3).
    """
    smin = basis.sigma_min
    units = basis.units
    s = basis.stress_at(model.nominal)
    sig = np.sqrt(quad_form(s) + smin**2)
    g = (quad_form(s[None], units) / sig[None]).T  # (Ne, N)
    Cg = g @ model.cov
    std = np.sqrt(np.einsum("ei,ei->e", g, Cg) + smin**2)
    value = sig + alpha * std
    if not with_partials:
        return value
    Ms = m_apply(s)
    Mu = m_apply(units)
    w = Cg / std[:, None]  # d std / d g
    dg_ds = (Mu - g.T[:, :, None] * Ms[None] / sig[None, :, None]) / sig[None, :, None]
    d_s = Ms / sig[:, None] + alpha * np.einsum("ei,iek->ek", w, dg_ds)
    partials = np.empty((model.n + 1,) + s.shape)
    partials[0] = d_s
    partials[1:] = (model.nominal[:, None, None] * d_s[None]
                    + alpha * w.T[:, :, None] * Ms[None] / sig[None, :, None])
    return value, partials


# --- reliability (inverse FORM on the target sphere) --------------------------

@dataclasses.dataclass
class HMVResult:
    y: np.ndarray  # (B, N)
    value: np.ndarray  # (B,)
    converged: np.ndarray  # (B,) bool
    iterations: np.ndarray  # (B,) int

    @property
    def n_flagged(self) -> int:
        return int((~self.converged).sum())


def _unit(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nrm = np.linalg.norm(v, axis=-1)
    safe = np.where(nrm > 0, nrm, 1.0)
    return v / safe[..., None], nrm


def hmv_search(value_fn, grad_fn, y0_dir: np.ndarray, beta: float,
               tol: float = 1e-6, maxit: int = 200) -> HMVResult:
    """Hybrid mean value search for the maximizer of a function on ``|y| = beta``.

    ``value_fn(y, idx)`` and ``grad_fn(y, idx)`` evaluate the function and its
    gradient for the batch members ``idx`` at points ``y`` (len(idx), N).
    Convex-type steps use the plain fixed point ``y = beta n``; when the
    direction sequence oscillates (non-positive indicator) the step uses the
    normalized mean of the last three directions.
    """
    B, N = y0_dir.shape
    n_prev, _ = _unit(y0_dir)
    y = beta * n_prev
    n_prev2 = np.full_like(n_prev, np.nan)
    best_y = y.copy()
    best_v = value_fn(y, np.arange(B))
    converged = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=np.int64)
    active = np.arange(B)
    for it in range(1, maxit + 1):
        if active.size == 0:
            break
        ya = y[active]
        n, nrm = _unit(grad_fn(ya, active))
        stalled = nrm == 0  # flat: any point is a stationary point
        n = np.where(stalled[:, None], n_prev[active], n)
        iters[active] = it
        done = stalled | (1.0 - np.einsum("bi,bi->b", n, n_prev[active]) < tol)
        p1, p2 = n_prev[active], n_prev2[active]
        xi = np.einsum("bi,bi->b", n - p1, p1 - p2)
        concave = np.isfinite(xi) & (xi <= 0)
        direction = n.copy()
        if concave.any():
            avg, anrm = _unit(n[concave] + p1[concave] + p2[concave])
            direction[concave] = np.where(anrm[:, None] > 0, avg, n[concave])
        y_new = np.where(done[:, None], ya, beta * direction)
        v_new = value_fn(y_new, active)
        better = v_new > best_v[active]
        best_v[active[better]] = v_new[better]
        best_y[active[better]] = y_new[better]
        y[active] = y_new
        n_prev2[active] = p1
        n_prev[active] = n
        converged[active[done]] = True
        active = active[~done]
    return HMVResult(best_y, best_v, converged, iters)


def _sphere_start(s: np.ndarray, shat: np.ndarray, sigma_min: float) -> np.ndarray:
    """Steepest-ascent direction at the mean; principal quadratic direction where it vanishes."""
    g0 = (quad_form(s[None], shat) / np.sqrt(quad_form(s) + sigma_min**2)[None]).T
    _, nrm = _unit(g0)
    scale = np.sqrt(quad_form(shat).sum(axis=0)) + 1e-300
    flat = nrm <= 1e-12 * scale
    if flat.any():
        Q = np.einsum("iek,jek->eij", shat[:, flat], m_apply(shat[:, flat]))
        _, V = np.linalg.eigh(Q)
        g0[flat] = V[:, :, -1]
        g0[flat & (nrm == 0) & (scale <= 1e-300)] = 1.0
    return g0


def hmv_solve(basis: StressBasis, model: LoadModel, settings: ReliabilitySettings) -> HMVResult:
    """Per-element worst point of the von Mises stress on the target-reliability sphere.

    Returns standard-normal coordinates ``y`` (Ne, N); loads are ``mean + L y``.
    """
    if model.mode is not LoadMode.GAUSSIAN:
        raise ConfigurationError("reliability measure needs a Gaussian load model")
    L = model.transform_factor()
    smin = basis.sigma_min
    s_mean = basis.stress_at(model.nominal)
    shat = np.einsum("ij,iek->jek", L, basis.units)  # stress per standard-normal unit

    def stress(y, idx):
        return s_mean[idx] + np.einsum("bj,jbk->bk", y, shat[:, idx])

    def value(y, idx):
        return np.sqrt(quad_form(stress(y, idx)) + smin**2)

    def grad(y, idx):
        s = stress(y, idx)
        return (quad_form(s[None], shat[:, idx]) / np.sqrt(quad_form(s) + smin**2)[None]).T

    y0 = _sphere_start(s_mean, shat, smin)
    res = hmv_search(value, grad, y0, settings.beta_target, settings.hmv_tol, settings.hmv_maxit)
    if res.n_flagged:
        log.debug("HMV did not converge for %d of %d constraints", res.n_flagged, len(res.converged))
    return res


# --- non-probabilistic (anti-optimization over a box) -----------------------------

@dataclasses.dataclass
class AntiOptResult:
    w: np.ndarray  # (Ne, N)
    value: np.ndarray
    grid_value: np.ndarray


def tensor_grid(lower: np.ndarray, upper: np.ndarray, points: int) -> np.ndarray:
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(lower, upper)]
    return np.array(list(itertools.product(*axes))).reshape(-1, len(lower))


def antiopt_solve(basis: StressBasis, model: LoadModel, settings: AntiOptSettings) -> AntiOptResult:
    """Worst-case loads in the box: grid search, then projected steepest ascent."""
    if model.mode is not LoadMode.INTERVAL:
        raise ConfigurationError("anti-optimization needs an interval load model")
    lo, hi = model.lower, model.upper
    width = hi - lo
    smin = basis.sigma_min
    s0, units = basis.base, basis.units
    n_el = s0.shape[0]

    grid = tensor_grid(lo, hi, settings.grid_points)
    sq = quad_form(s0[None] + np.einsum("pi,iek->pek", grid, units))  # (P, Ne)
    best = np.argmax(sq, axis=0)  # first maximum wins ties
    w = grid[best].copy()
    val = np.sqrt(sq[best, np.arange(n_el)] + smin**2)
    grid_val = val.copy()

    movable = width > 0
    if not movable.any():
        return AntiOptResult(w, val, grid_val)
    step = np.full(n_el, settings.initial_step)
    active = np.arange(n_el)
    while active.size:
        s = s0[active] + np.einsum("bi,ibk->bk", w[active], units[:, active])
        g = (quad_form(s[None], units[:, active]) / val[active][None]).T * width
        # projected gradient: drop components pushing outside the box
        at_hi = w[active] >= hi - 1e-15 * np.abs(hi)
        at_lo = w[active] <= lo + 1e-15 * np.abs(lo)
        g[(at_hi & (g > 0)) | (at_lo & (g < 0)) | ~movable] = 0.0
        gmax = np.abs(g).max(axis=1)
        stop = gmax <= 0
        d = g / np.where(stop, 1.0, gmax)[:, None]
        trial = np.clip(w[active] + step[active, None] * d * width, lo, hi)
        st = s0[active] + np.einsum("bi,ibk->bk", trial, units[:, active])
        tval = np.sqrt(quad_form(st) + smin**2)
        up = (tval > val[active]) & ~stop
        idx = active[up]
        w[idx] = trial[up]
        val[idx] = tval[up]
        step[active[~up]] *= settings.shrink
        active = active[~stop & (step[active] >= settings.tol)]
    return AntiOptResult(w, val, grid_val)


# --- dispatch -----------------------------------------------------------

@dataclasses.dataclass
class MeasureSettings:
    robust: RobustSettings = dataclasses.field(default_factory=RobustSettings)
    reliability: ReliabilitySettings = dataclasses.field(default_factory=ReliabilitySettings)
    antiopt: AntiOptSettings = dataclasses.field(default_factory=AntiOptSettings)


@dataclasses.dataclass
class MeasureResult:
    values: np.ndarray  # (Ne,)
    z_star: np.ndarray | None  # loads at the inner optimum, (Ne, N)
    partials: np.ndarray | None = None  # (N+1, Ne, 3)
    n_flagged: int = 0


def _pointwise(basis: StressBasis, z: np.ndarray, with_partials: bool) -> MeasureResult:
    s = basis.stress_at(z)
    sig = np.sqrt(quad_form(s) + basis.sigma_min**2)
    partials = None
    if with_partials:
        d = m_apply(s) / sig[:, None]
        zz = np.broadcast_to(z, (s.shape[0], basis.n_uncertain)) if z.ndim == 1 else z
        partials = np.concatenate([d[None], zz.T[:, :, None] * d[None]], axis=0)
    return MeasureResult(sig, None, partials)


def check_mode(model: LoadModel, formulation: Formulation) -> None:
    need = {Formulation.ROBUST: LoadMode.GAUSSIAN, Formulation.RELIABILITY: LoadMode.GAUSSIAN,
            Formulation.ANTIOPT: LoadMode.INTERVAL}.get(Formulation(formulation))
    if need is not None and model.mode is not need:
        raise ConfigurationError(f"formulation {Formulation(formulation).value!r} needs a {need.value} load model, "
                                 f"got {model.mode.value}")


def stress_measure(basis: StressBasis, model: LoadModel, formulation, settings: MeasureSettings | None = None,
                   z_star: np.ndarray | None = None, with_partials: bool = False) -> MeasureResult:
    """Stress measure of ``formulation`` for every element.

    For the nested formulations the inner optimum is returned in load space
    as ``z_star``; passing it back in freezes the inner solution.
    """
    formulation = Formulation(formulation)
    settings = settings or MeasureSettings()
    check_mode(model, formulation)
    if formulation is Formulation.DETERMINISTIC:
        return _pointwise(basis, model.nominal, with_partials)
    if formulation is Formulation.ROBUST:
        out = robust_measure(basis, model, settings.robust.alpha, with_partials)
        if with_partials:
            return MeasureResult(out[0], None, out[1])
        return MeasureResult(out, None)
    flagged = 0
    if z_star is None:
        if formulation is Formulation.RELIABILITY:
            res = hmv_solve(basis, model, settings.reliability)
            z_star = model.nominal + res.y @ model.transform_factor().T
            flagged = res.n_flagged
        else:
            z_star = antiopt_solve(basis, model, settings.antiopt).w
    out = _pointwise(basis, np.asarray(z_star, dtype=float), with_partials)
    out.z_star = z_star
    out.n_flagged = flagged
    return out
