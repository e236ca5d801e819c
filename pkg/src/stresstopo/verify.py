"""Oracle checks on small built-in instances.

Each suite compares a production code path against an independent reference:
finite differences for the adjoint gradient, direct solves for load
superposition, vertex enumeration for anti-optimization, a dense angular grid
for the reliability search and the complementary error function for the
inverse normal CDF.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .benchmarks import rectangle_problem
from .fem import ElasticMaterial, Factorization, StructuredMesh, assemble_stiffness, superposition_fields
from .postprocess import inv_std_normal
from .sensitivity import al_fd_gradient, analyze, evaluate
from .stress import StressBasis, quad_form
from .uncertainty import (AntiOptSettings, LoadModel, ReliabilitySettings, antiopt_solve, hmv_solve,
                          tensor_grid)

FORMULATIONS = ("det", "robust", "rbto", "antiopt")


@dataclasses.dataclass
class Check:
    name: str
    measured: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return f"[{status}] {self.name}: {self.measured:.3e} (limit {self.threshold:.1e}){extra}"


def gradient_instance(formulation: str, delta: float, seed: int = 0, nx: int = 12, ny: int = 6):
    """Random design, multipliers and a yield stress that leaves about half the constraints active."""
    rng = np.random.default_rng(seed)
    probe = rectangle_problem(formulation, nx, ny, radius=0.35)
    rho = rng.uniform(0.3, 0.9, probe.n_elements)
    m = analyze(probe, rho, delta, with_partials=False).measure.values
    problem = rectangle_problem(formulation, nx, ny, radius=0.35, sigma_y=float(np.median(m)))
    mu = rng.uniform(0.0, 1.0, problem.n_elements)
    return problem, rho, mu, 10.0


def gradient_error(formulation: str, delta: float, seed: int = 0, h: float = 1e-6) -> float:
    """Max relative adjoint-vs-FD error over components above ``1e-8 * max|grad|``."""
    problem, rho, mu, r = gradient_instance(formulation, delta, seed)
    g = evaluate(problem, rho, mu, r, delta).grad
    fd = al_fd_gradient(problem, rho, mu, r, delta, h=h)
    mask = np.abs(fd) > 1e-8 * np.abs(fd).max()
    return float(np.max(np.abs(g[mask] - fd[mask]) / np.abs(fd[mask])))


def check_gradient(formulations=FORMULATIONS, deltas=(0.0, 20.0), tol: float = 1e-5) -> list[Check]:
    out = []
    for form in formulations:
        for delta in deltas:
            err = gradient_error(form, delta)
            out.append(Check(f"gradient {form} delta={delta:g}", err, tol, err < tol))
    return out


def superposition_error(n_meshes: int = 5, n_z: int = 100, seed: int = 0) -> float:
    """Worst ``|U(z) - (U0 + sum z_i U_i)| / |U(z)|`` over random meshes, designs and loads."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    mat = ElasticMaterial()
    for _ in range(n_meshes):
        nx, ny = rng.integers(3, 13, size=2)
        mesh = StructuredMesh(int(nx), int(ny), 1.0 / nx)
        mesh.fix_segment((0.0, 0.0), (0.0, ny * mesh.h))
        n_unc = int(rng.integers(1, 4))
        nodes = rng.choice(np.flatnonzero(mesh.node_xy[:, 0] > 0), size=n_unc + 1, replace=False)
        F = rng.normal(size=(n_unc + 1, 2))
        F_all = np.zeros((n_unc + 1, mesh.ndof))
        F_all[np.arange(n_unc + 1), 2 * nodes] = F[:, 0]
        F_all[np.arange(n_unc + 1), 2 * nodes + 1] = F[:, 1]
        K = assemble_stiffness(mesh, mat, rng.uniform(0.05, 1.0, mesh.n_elements))
        factor = Factorization(mesh, K)
        fields = superposition_fields(factor, F_all[0], F_all[1:])
        for z in rng.normal(scale=5.0, size=(n_z // n_meshes, n_unc)):
            direct = factor.solve(F_all[0] + z @ F_all[1:])
            worst = max(worst, np.linalg.norm(direct - fields.at(z)) / np.linalg.norm(direct))
    return float(worst)


def check_superposition(tol: float = 1e-10) -> list[Check]:
    err = superposition_error()
    return [Check("superposition", err, tol, err <= tol)]


def random_basis(rng, n_el: int, n_unc: int, sigma_min: float = 1e-3) -> StressBasis:
    raw = rng.normal(size=(n_unc + 1, n_el, 3))
    return StressBasis(raw, rng.uniform(0.2, 1.0, n_el), sigma_min)


def antiopt_vertex_error(n_designs: int = 200, seed: int = 0) -> float:
    """Worst relative gap between the two-step anti-optimization and the best box vertex."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_designs):
        basis = random_basis(rng, 50, 2)
        lo = rng.uniform(-3.0, 1.0, 2)
        model = LoadModel.interval(lo, lo + rng.uniform(0.1, 4.0, 2))
        res = antiopt_solve(basis, model, AntiOptSettings())
        vertices = tensor_grid(model.lower, model.upper, 2)
        s = basis.base[None] + np.einsum("pi,iek->pek", vertices, basis.units)
        vmax = np.sqrt(quad_form(s) + basis.sigma_min**2).max(axis=0)
        worst = max(worst, float(np.max(np.abs(res.value - vmax) / vmax)))
    return worst


def check_antiopt(tol: float = 1e-9) -> list[Check]:
    err = antiopt_vertex_error()
    return [Check("anti-optimization vs vertices", err, tol, err <= tol)]


def hmv_grid_gap(n_instances: int = 200, seed: int = 0, beta: float = 2.0):
    """Shortfall of the reliability search below a 0.1 degree grid on the sphere, and the flagged share."""
    rng = np.random.default_rng(seed)
    basis = random_basis(rng, n_instances, 2)
    A = rng.normal(size=(2, 2))
    model = LoadModel.gaussian(rng.normal(size=2), cov=A @ A.T + 0.1 * np.eye(2))
    res = hmv_solve(basis, model, ReliabilitySettings(beta_target=beta))
    theta = np.deg2rad(np.arange(0.0, 360.0, 0.1))
    y = beta * np.column_stack([np.cos(theta), np.sin(theta)])
    z = model.mean + y @ model.transform_factor().T
    s = basis.base[None] + np.einsum("pi,iek->pek", z, basis.units)
    grid = np.sqrt(quad_form(s) + basis.sigma_min**2).max(axis=0)
    gap = float(np.max((grid - res.value) / grid))
    return gap, res.n_flagged / n_instances


def check_hmv(tol: float = 1e-4, flag_tol: float = 0.01) -> list[Check]:
    gap, flagged = hmv_grid_gap()
    return [Check("reliability search vs angular grid", max(gap, 0.0), tol, gap < tol),
            Check("reliability search flagged share", flagged, flag_tol, flagged < flag_tol)]


PHI_POINTS = (1e-6, 0.0227501319, 0.5, 0.9772498681)


def std_normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def check_inverse_normal(tol: float = 1e-10) -> list[Check]:
    err = max(abs(std_normal_cdf(inv_std_normal(p)) - p) for p in PHI_POINTS)
    q = inv_std_normal(1e-6)
    return [Check("inverse normal round trip", err, tol, err < tol),
            Check("inverse normal at 1e-6", abs(q + 4.753), 1e-3, abs(q + 4.753) < 1e-3, f"value {q:.6f}")]


SUITES = {
    "gradient": check_gradient,
    "superposition": check_superposition,
    "antiopt": check_antiopt,
    "hmv": check_hmv,
    "phi": check_inverse_normal,
}


def run_suites(names=None) -> list[Check]:
    checks = []
    for name in names or SUITES:
        checks.extend(SUITES[name]())
    return checks
