"""Design-variable to physical-density map and material interpolation functions."""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .fem import StructuredMesh


@dataclasses.dataclass(frozen=True)
class InterpolationConstants:
    penal: float = 3.0
    rho_min: float = 1e-9
    delta_v: float = 5.0
    delta_sigma: float = 3.0
    delta_max: float = 100.0
    delta_step: float = 5.0

    def delta_schedule(self) -> np.ndarray:
        n = int(round(self.delta_max / self.delta_step))
        return self.delta_step * np.arange(n + 1)


def _floating(x) -> np.ndarray:
    x = np.asarray(x)
    return x if np.issubdtype(x.dtype, np.floating) else x.astype(float)


def exp_interp(x, d: float):
    """``1 - exp(-d x) + x exp(-d)``: zero at 0, one at 1, concave for d > 0.

    Evaluated in the precision of ``x`` (float64 or extended).
    """
    x = _floating(x)
    d = x.dtype.type(d)
    return 1 - np.exp(-d * x) + x * np.exp(-d)


def exp_interp_deriv(x, d: float):
    x = _floating(x)
    d = x.dtype.type(d)
    return d * np.exp(-d * x) + np.exp(-d)


def f_v(rho_bar, delta_v: float = 5.0):
    """Volume penalization; makes intermediate densities uneconomical."""
    return exp_interp(rho_bar, delta_v)


def f_v_prime(rho_bar, delta_v: float = 5.0):
    return exp_interp_deriv(rho_bar, delta_v)


def f_sigma(rho_bar, delta_sigma: float = 3.0):
    """Stress relaxation; vanishes with the density so void constraints are inactive."""
    return exp_interp(rho_bar, delta_sigma)


def f_sigma_prime(rho_bar, delta_sigma: float = 3.0):
    return exp_interp_deriv(rho_bar, delta_sigma)


def heaviside_project(rho_tilde, delta: float):
    """Smoothed Heaviside projection; identity at ``delta = 0``."""
    if delta < 0:
        raise ValueError("projection sharpness must be non-negative")
    return exp_interp(rho_tilde, delta)


def heaviside_derivative(rho_tilde, delta: float):
    return exp_interp_deriv(rho_tilde, delta)


class DensityFilter:
    """Linear-hat density filter over element centroids.

    Neighbourhoods are truncated at the domain boundary and at inactive cells;
    rows are renormalized so constant fields are preserved. All elements share
    the same volume, so the volume factor cancels in the weights.
    """

    def __init__(self, mesh: StructuredMesh, radius: float):
        if not radius > 0:
            raise ValueError("filter radius must be positive")
        self.radius = float(radius)
        h = mesh.h
        reach = int(np.ceil(radius / h))
        cell_id = np.full((mesh.ny, mesh.nx), -1, dtype=np.int64)
        ij = mesh.cell_ij
        cell_id[ij[:, 1], ij[:, 0]] = np.arange(mesh.n_elements)

        rows, cols, vals = [], [], []
        for di in range(-reach, reach + 1):
            for dj in range(-reach, reach + 1):
                w = radius - h * np.hypot(di, dj)
                if w <= 0:
                    continue
                i2, j2 = ij[:, 0] + di, ij[:, 1] + dj
                ok = (i2 >= 0) & (i2 < mesh.nx) & (j2 >= 0) & (j2 < mesh.ny)
                nb = np.full(mesh.n_elements, -1, dtype=np.int64)
                nb[ok] = cell_id[j2[ok], i2[ok]]
                ok = nb >= 0
                rows.append(np.flatnonzero(ok))
                cols.append(nb[ok])
                vals.append(np.full(ok.sum(), w))
        rows, cols, vals = map(np.concatenate, (rows, cols, vals))
        W = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n_elements,) * 2)
        self.row_sums = np.asarray(W.sum(axis=1)).ravel()
        self.H = sp.diags(1.0 / self.row_sums) @ W
        self.H = self.H.tocsr()
        self.HT = self.H.T.tocsr()

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return self.H @ rho

    __call__ = apply

    def transpose(self, grad: np.ndarray) -> np.ndarray:
        return self.HT @ grad


@dataclasses.dataclass
class DensityTriple:
    rho: np.ndarray
    rho_tilde: np.ndarray
    rho_bar: np.ndarray
    delta: float


def physical_densities(filt: DensityFilter, rho: np.ndarray, delta: float) -> DensityTriple:
    rho_tilde = filt(rho)
    return DensityTriple(rho, rho_tilde, heaviside_project(rho_tilde, delta), delta)


def chain_apply(filt: DensityFilter, rho_tilde: np.ndarray, delta: float, grad_bar: np.ndarray) -> np.ndarray:
    """Map a gradient with respect to physical densities onto the design variables."""
    return filt.transpose(heaviside_derivative(rho_tilde, delta) * grad_bar)
