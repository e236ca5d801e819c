"""Augmented Lagrangian value and its adjoint gradient.

The gradient of the nested formulations is taken at the frozen inner optimum
(``z_star``). The inner feasible sets (the reliability sphere and the load
box) do not depend on the design, so by the envelope theorem this is the
total derivative of the inner maximum.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .fem import Factorization, assemble_stiffness, element_stiffness_solid, simp_scale
from .filtering import chain_apply, f_sigma, f_sigma_prime, f_v, f_v_prime, heaviside_project
from .problem import Problem
from .stress import StressBasis, raw_stresses
from .uncertainty import MeasureResult, stress_measure


@dataclasses.dataclass
class Analysis:
    """Finite-element response and stress measures of one design."""

    rho: np.ndarray
    rho_tilde: np.ndarray
    rho_bar: np.ndarray
    delta: float
    factor: Factorization
    U: np.ndarray  # (n_fields, ndof)
    basis: StressBasis
    measure: MeasureResult
    sigma_y: float

    @property
    def ratios(self) -> np.ndarray:
        return self.measure.values / self.sigma_y

    @property
    def max_violation(self) -> float:
        """``max_k(measure_k / sigma_y) - 1``."""
        return float(self.ratios.max() - 1.0)

    @property
    def z_star(self):
        return self.measure.z_star


def analyze(problem: Problem, rho: np.ndarray, delta: float, z_star=None,
            with_partials: bool = True) -> Analysis:
    """Solve the state equations and evaluate the stress measures of design ``rho``."""
    rho = np.asarray(rho, dtype=float)
    rho_tilde = problem.filter(rho)
    rho_bar = heaviside_project(rho_tilde, delta)
    c = problem.constants
    K = assemble_stiffness(problem.mesh, problem.material, rho_bar, c.penal, c.rho_min)
    factor = Factorization(problem.mesh, K)
    U = factor.solve(problem.loads)
    raw = raw_stresses(problem.mesh, problem.stress_ctx, U)
    basis = StressBasis(raw, f_sigma(rho_bar, c.delta_sigma), problem.stress_ctx.sigma_min)
    measure = stress_measure(basis, problem.analysis_model, problem.formulation, problem.measures,
                             z_star=z_star, with_partials=with_partials)
    return Analysis(rho, rho_tilde, rho_bar, delta, factor, U, basis, measure, problem.sigma_y)


def volume_term(problem: Problem, rho_bar: np.ndarray) -> float:
    """Normalized penalized volume ``Ne / sum(V) * sum(V_e f_v)``."""
    return float(np.sum(f_v(rho_bar, problem.constants.delta_v)))


def volume_fraction(rho_bar: np.ndarray) -> float:
    return float(np.mean(rho_bar))


def _bracket(analysis: Analysis, mu: np.ndarray, r: float) -> np.ndarray:
    return np.maximum(0.0, mu / r + analysis.ratios - 1.0)


def al_terms(problem: Problem, analysis: Analysis, mu: np.ndarray, r: float) -> np.ndarray:
    """Per-element contributions (volume + constraint penalty) summing to the AL value."""
    b = _bracket(analysis, mu, r)
    return f_v(analysis.rho_bar, problem.constants.delta_v) + 0.5 * r * b * b


def al_value(problem: Problem, analysis: Analysis, mu: np.ndarray, r: float) -> float:
    return math.fsum(al_terms(problem, analysis, mu, r))


def al_gradient(problem: Problem, analysis: Analysis, mu: np.ndarray, r: float) -> np.ndarray:
    """Adjoint gradient of the augmented Lagrangian with respect to the design variables."""
    c = problem.constants
    mesh = problem.mesh
    rho_bar = analysis.rho_bar
    grad = f_v_prime(rho_bar, c.delta_v).copy()

    lam = r * _bracket(analysis, mu, r) / problem.sigma_y
    if np.any(lam > 0):
        P = analysis.measure.partials  # (nf, Ne, 3)
        raw = analysis.basis.raw
        grad += lam * f_sigma_prime(rho_bar, c.delta_sigma) * np.einsum("nek,nek->e", P, raw)
        # adjoint loads, one per displacement field
        weight = lam * f_sigma(rho_bar, c.delta_sigma)
        elem = np.einsum("e,nek,kd->ned", weight, P, problem.stress_ctx.CB)
        A = np.stack([np.bincount(mesh.edof.ravel(), weights=a.ravel(), minlength=mesh.ndof) for a in elem])
        psi = analysis.factor.solve(A)
        ke = element_stiffness_solid(problem.material, mesh.h)
        dscale = c.penal * rho_bar ** (c.penal - 1)
        u_e = analysis.U[:, mesh.edof]
        psi_e = psi[:, mesh.edof]
        grad -= dscale * np.einsum("ned,df,nef->e", psi_e, ke, u_e)
    return chain_apply(problem.filter, analysis.rho_tilde, analysis.delta, grad)


@dataclasses.dataclass
class ALEvaluation:
    value: float
    grad: np.ndarray | None
    ratios: np.ndarray
    max_violation: float
    analysis: Analysis


def evaluate(problem: Problem, rho, mu, r: float, delta: float, z_star=None,
             gradient: bool = True) -> ALEvaluation:
    a = analyze(problem, rho, delta, z_star=z_star, with_partials=gradient)
    g = al_gradient(problem, a, mu, r) if gradient else None
    return ALEvaluation(al_value(problem, a, mu, r), g, a.ratios, a.max_violation, a)


def fd_gradient(func, x: np.ndarray, h: float = 1e-6, indices=None) -> np.ndarray:
    """Central finite differences of ``sum(func(x))``; only ``indices`` are filled.

    ``func`` may return a vector of additive terms, which are differenced
    term by term before summation so that large unchanged terms cancel exactly.
    """
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for j in range(x.size) if indices is None else indices:
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        diff = np.asarray(func(xp), dtype=float) - np.asarray(func(xm), dtype=float)
        out[j] = math.fsum(np.atleast_1d(diff)) / (2 * h)
    return out


def al_fd_gradient(problem: Problem, rho, mu, r: float, delta: float, h: float = 1e-5, indices=None):
    """Central-difference AL gradient with the inner solutions frozen at ``rho``.

    Verification oracle, independent of the adjoint path. Each perturbed
    design is evaluated as an increment on the unperturbed one: the filter
    increment, projection, interpolations, stresses and AL terms are carried
    in extended precision and only the displacement increment is solved in
    double precision. Without this the differences of the projected densities
    (close to 0 or 1 at large ``delta``) drown in rounding.
    """
    ld = np.longdouble
    c = problem.constants
    mesh = problem.mesh
    ref = analyze(problem, rho, delta, with_partials=False)
    z_star = ref.z_star
    ke = element_stiffness_solid(problem.material, mesh.h)
    H = problem.filter.H.tocsc()
    tilde_ref = ref.rho_tilde.astype(ld)
    raw_ref = ref.basis.raw.astype(ld)
    scale_ref = simp_scale(ref.rho_bar.astype(ld), c.penal, c.rho_min)
    mu_l = np.asarray(mu, dtype=ld)
    sigma_y = ld(problem.sigma_y)

    def terms(j, step):
        col = H[:, [j]]
        rho_tilde = tilde_ref.copy()
        rho_tilde[col.indices] += ld(step) * col.data.astype(ld)
        rho_bar = heaviside_project(rho_tilde, delta)
        dscale = simp_scale(rho_bar, c.penal, c.rho_min) - scale_ref
        changed = np.flatnonzero(dscale)
        edof = mesh.edof[changed]
        f_el = np.einsum("e,df,ned->nef", dscale[changed].astype(float), ke, ref.U[:, edof])
        dK_U = np.stack([np.bincount(edof.ravel(), weights=f.ravel(), minlength=mesh.ndof) for f in f_el])
        dU = ref.factor.solve(-dK_U)
        raw = raw_ref + raw_stresses(mesh, problem.stress_ctx, dU).astype(ld)
        basis = StressBasis(raw, f_sigma(rho_bar, c.delta_sigma), ld(problem.stress_ctx.sigma_min))
        m = stress_measure(basis, problem.analysis_model, problem.formulation, problem.measures,
                           z_star=z_star).values
        b = np.maximum(ld(0), mu_l / ld(r) + m / sigma_y - ld(1))
        return f_v(rho_bar, c.delta_v) + ld(0.5) * ld(r) * b * b

    x = np.asarray(rho, dtype=float)
    out = np.zeros_like(x)
    for j in range(x.size) if indices is None else indices:
        out[j] = float(np.sum(terms(j, h) - terms(j, -h)) / ld(2 * h))
    return out
