"""Centroid stresses and the regularized von Mises measure."""

from __future__ import annotations

import dataclasses

import numpy as np

from .fem import ElasticMaterial, StructuredMesh, SuperpositionFields, centroid_strain_displacement
from .filtering import f_sigma

# plane-stress von Mises quadratic form, s = (sx, sy, txy)
VON_MISES_M = np.array([[1.0, -0.5, 0.0], [-0.5, 1.0, 0.0], [0.0, 0.0, 3.0]])


@dataclasses.dataclass
class VonMisesContext:
    sigma_y: float
    C: np.ndarray
    B: np.ndarray
    sigma_min: float = dataclasses.field(init=False)
    M: np.ndarray = dataclasses.field(init=False)
    CB: np.ndarray = dataclasses.field(init=False)
    delta_sigma: float = 3.0

    def __post_init__(self):
        if not self.sigma_y > 0:
            raise ValueError("yield stress must be positive")
        self.sigma_min = 1e-4 * self.sigma_y
        self.M = VON_MISES_M.copy()
        self.CB = self.C @ self.B

    @classmethod
    def for_mesh(cls, mesh: StructuredMesh, mat: ElasticMaterial, sigma_y: float, delta_sigma: float = 3.0):
        return cls(sigma_y, mat.constitutive(), centroid_strain_displacement(mesh.h), delta_sigma)


def quad_form(s: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    """``s^T M t`` over the trailing axis of length 3."""
    if t is None:
        t = s
    return (s[..., 0] * (t[..., 0] - 0.5 * t[..., 1])
            + s[..., 1] * (t[..., 1] - 0.5 * t[..., 0])
            + 3.0 * s[..., 2] * t[..., 2])


def m_apply(s: np.ndarray) -> np.ndarray:
    """``M s`` over the trailing axis."""
    return s @ VON_MISES_M


def von_mises(s, sigma_min: float) -> np.ndarray:
    s = np.asarray(s)
    if not np.issubdtype(s.dtype, np.floating):
        s = s.astype(float)
    return np.sqrt(quad_form(s) + s.dtype.type(sigma_min) ** 2)


def element_stress(ctx: VonMisesContext, rho_bar_k: float, u_k: np.ndarray) -> np.ndarray:
    return f_sigma(rho_bar_k, ctx.delta_sigma) * (ctx.CB @ np.asarray(u_k, dtype=float))


@dataclasses.dataclass
class StressBasis:
    """Centroid stresses from the base field (index 0) and each unit-load field.

    ``raw`` holds the unrelaxed stresses ``C B u``; ``scale`` the relaxation
    factor per element, so ``stresses = scale * raw``.
    """

    raw: np.ndarray  # (N+1, Ne, 3)
    scale: np.ndarray  # (Ne,)
    sigma_min: float

    @property
    def stresses(self) -> np.ndarray:
        return self.scale[None, :, None] * self.raw

    @property
    def base(self) -> np.ndarray:
        return self.scale[:, None] * self.raw[0]

    @property
    def units(self) -> np.ndarray:
        return self.scale[None, :, None] * self.raw[1:]

    @property
    def n_uncertain(self) -> int:
        return self.raw.shape[0] - 1

    def stress_at(self, z) -> np.ndarray:
        """Stress vectors for one realization ``z`` (N,) or per element ``z`` (Ne, N)."""
        s = self.base.copy()
        z = np.asarray(z, dtype=s.dtype)
        if self.n_uncertain:
            if z.ndim == 1:
                s += np.einsum("i,iek->ek", z, self.units)
            else:
                s += np.einsum("ei,iek->ek", z, self.units)
        return s

    def von_mises_at(self, z) -> np.ndarray:
        return von_mises(self.stress_at(z), self.sigma_min)


def raw_stresses(mesh: StructuredMesh, ctx: VonMisesContext, U: np.ndarray) -> np.ndarray:
    """Unrelaxed centroid stresses for displacement stack ``U`` (n, ndof) -> (n, Ne, 3)."""
    U = np.atleast_2d(U)
    return np.einsum("kd,ned->nek", ctx.CB, U[:, mesh.edof])


def stress_basis(mesh: StructuredMesh, ctx: VonMisesContext, rho_bar: np.ndarray,
                 fields: SuperpositionFields) -> StressBasis:
    raw = raw_stresses(mesh, ctx, fields.stacked)
    return StressBasis(raw, f_sigma(rho_bar, ctx.delta_sigma), ctx.sigma_min)
