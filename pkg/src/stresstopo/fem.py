"""Structured Q4 plane-stress finite elements.

Square bilinear elements on a regular grid, with an optional activity mask so
that non-rectangular domains (the L-bracket) are carved out of a bounding
rectangle. Supports are imposed by eliminating the fixed DOFs from the system.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

try:  # optional, ~3x faster than SuperLU on these meshes
    from sksparse import cholmod as _cholmod
except ImportError:  # pragma: no cover - depends on the environment
    _cholmod = None

log = logging.getLogger(__name__)

PENALTY = 3.0
RHO_MIN = 1e-9


class SingularSystemError(RuntimeError):
    """Raised when the reduced stiffness matrix cannot be factorized."""


@dataclasses.dataclass(frozen=True)
class ElasticMaterial:
    E: float = 1e6
    nu: float = 0.3
    t: float = 1e-3

    def __post_init__(self):
        if not self.E > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.E}")
        if not 0 <= self.nu < 0.5:
            raise ValueError(f"Poisson ratio must lie in [0, 0.5), got {self.nu}")
        if not self.t > 0:
            raise ValueError(f"thickness must be positive, got {self.t}")

    def constitutive(self) -> np.ndarray:
        """Plane-stress constitutive matrix for solid material."""
        E, nu = self.E, self.nu
        return E / (1 - nu**2) * np.array(
            [[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, (1 - nu) / 2]]
        )


def element_stiffness_solid(mat: ElasticMaterial, h: float) -> np.ndarray:
    """Closed-form 8x8 stiffness of a square Q4 element of edge ``h``.

    Nodes are ordered counter-clockwise from the lower-left corner and DOFs
    are interleaved ``(u1, v1, ..., u4, v4)``. For a square element the
    result does not depend on ``h``; it is accepted for interface symmetry.
    """
    if not h > 0:
        raise ValueError("element size must be positive")
    nu = mat.nu
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    idx = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return mat.E * mat.t / (1 - nu**2) * k[idx]


def centroid_strain_displacement(h: float) -> np.ndarray:
    """3x8 strain-displacement matrix of the square Q4 element at its centroid."""
    dx = np.array([-1.0, 1.0, 1.0, -1.0]) / (2 * h)
    dy = np.array([-1.0, -1.0, 1.0, 1.0]) / (2 * h)
    B = np.zeros((3, 8))
    B[0, 0::2] = dx
    B[1, 1::2] = dy
    B[2, 0::2] = dy
    B[2, 1::2] = dx
    return B


@dataclasses.dataclass
class LoadRegion:
    """Unit total force spread over a boundary segment.

    ``weights`` sum to one; end nodes carry half the weight of interior nodes.
    """

    nodes: np.ndarray
    weights: np.ndarray
    direction: np.ndarray
    name: str = ""


class StructuredMesh:
    """Regular grid of square Q4 elements with an activity mask.

    Cells are indexed row by row from the bottom: cell ``(i, j)`` spans
    ``[i*h, (i+1)*h] x [j*h, (j+1)*h]``. ``active`` has shape ``(ny, nx)``.
    Only nodes touched by an active cell carry DOFs, numbered contiguously.
    """

    def __init__(self, nx: int, ny: int, h: float, active: np.ndarray | None = None):
        if nx < 1 or ny < 1:
            raise ValueError("mesh needs at least one element per direction")
        if not h > 0:
            raise ValueError("element size must be positive")
        self.nx, self.ny, self.h = int(nx), int(ny), float(h)
        if active is None:
            active = np.ones((ny, nx), dtype=bool)
        active = np.asarray(active, dtype=bool)
        if active.shape != (ny, nx):
            raise ValueError(f"active mask must have shape {(ny, nx)}, got {active.shape}")
        if not active.any():
            raise ValueError("mesh has no active elements")
        self.active = active

        jj, ii = np.nonzero(active)  # row-major: bottom row first
        self.cell_ij = np.column_stack([ii, jj])
        self.n_elements = len(ii)
        grid = lambda i, j: j * (nx + 1) + i  # noqa: E731
        corners = np.column_stack([grid(ii, jj), grid(ii + 1, jj), grid(ii + 1, jj + 1), grid(ii, jj + 1)])

        used = np.zeros((nx + 1) * (ny + 1), dtype=bool)
        used[corners.ravel()] = True
        self.grid_to_node = np.full(used.size, -1, dtype=np.int64)
        self.grid_to_node[used] = np.arange(used.sum())
        self.node_grid = np.flatnonzero(used)
        self.n_nodes = int(used.sum())
        self.ndof = 2 * self.n_nodes
        self.node_xy = np.column_stack([self.node_grid % (nx + 1), self.node_grid // (nx + 1)]) * self.h

        enodes = self.grid_to_node[corners]
        self.enodes = enodes
        self.edof = np.empty((self.n_elements, 8), dtype=np.int64)
        self.edof[:, 0::2] = 2 * enodes
        self.edof[:, 1::2] = 2 * enodes + 1
        self.centroids = (self.cell_ij + 0.5) * self.h

        self.supports: set[int] = set()
        self.load_regions: list[LoadRegion] = []
        self._pattern = None

    @property
    def element_volume_fraction(self) -> float:
        return self.n_elements / (self.nx * self.ny)

    # boundary conditions -------------------------------------------------

    def nodes_on_segment(self, p0, p1) -> np.ndarray:
        """Active nodes lying on the axis-aligned segment ``p0``-``p1``, sorted along it."""
        p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
        tol = 1e-6 * self.h
        lo, hi = np.minimum(p0, p1) - tol, np.maximum(p0, p1) + tol
        xy = self.node_xy
        inside = np.all((xy >= lo) & (xy <= hi), axis=1)
        if not (abs(p0[0] - p1[0]) < tol or abs(p0[1] - p1[1]) < tol):
            raise ValueError("segments must be axis-aligned")
        nodes = np.flatnonzero(inside)
        axis = 0 if abs(p1[0] - p0[0]) >= abs(p1[1] - p0[1]) else 1
        return nodes[np.argsort(xy[nodes, axis], kind="stable")]

    def fix_segment(self, p0, p1, components=(0, 1)) -> None:
        nodes = self.nodes_on_segment(p0, p1)
        if nodes.size == 0:
            raise ValueError(f"no nodes on support segment {p0}-{p1}")
        for c in components:
            self.supports.update((2 * nodes + c).tolist())
        self._pattern = None

    def add_load_region(self, p0, p1, direction, name: str = "") -> LoadRegion:
        nodes = self.nodes_on_segment(p0, p1)
        if nodes.size == 0:
            raise ValueError(f"no nodes on load segment {p0}-{p1}")
        if nodes.size == 1:
            weights = np.ones(1)
        else:
            weights = np.ones(nodes.size)
            weights[[0, -1]] = 0.5
            weights /= weights.sum()
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.linalg.norm(direction)
        region = LoadRegion(nodes, weights, direction, name)
        self.load_regions.append(region)
        return region

    def unit_load_vector(self, region: LoadRegion) -> np.ndarray:
        F = np.zeros(self.ndof)
        F[2 * region.nodes] += region.weights * region.direction[0]
        F[2 * region.nodes + 1] += region.weights * region.direction[1]
        return F

    @property
    def free_dofs(self) -> np.ndarray:
        return self._assembly_pattern()["free"]

    # assembly ------------------------------------------------------------

    def check_supports(self) -> None:
        """Raise ``SingularSystemError`` if a connected part of the mesh can move rigidly.

        Each part (elements joined through shared nodes) needs fixed DOFs that
        suppress both translations and the in-plane rotation.
        """
        n_el = self.n_elements
        incidence = sp.csr_matrix((np.ones(4 * n_el), (np.repeat(np.arange(n_el), 4), self.enodes.ravel())),
                                  shape=(n_el, self.n_nodes))
        n_parts, part = connected_components(incidence @ incidence.T, directed=False)
        fixed = np.array(sorted(self.supports), dtype=np.int64)
        node, comp = fixed // 2, fixed % 2
        node_part = np.empty(self.n_nodes, dtype=np.int64)
        node_part[self.enodes.ravel()] = np.repeat(part, 4)
        for p in range(n_parts):
            sel = node_part[node] == p
            x, y = self.node_xy[node[sel]].T
            c = comp[sel]
            # rows: response of each fixed DOF to (translate x, translate y, rotate)
            modes = np.column_stack([c == 0, c == 1, np.where(c == 0, -y, x)]).astype(float)
            if np.linalg.matrix_rank(modes, tol=1e-9 * max(1.0, self.h)) < 3:
                first = int(np.flatnonzero(part == p)[0])
                raise SingularSystemError(
                    f"supports do not prevent rigid-body motion of the part containing element {first}")

    def _assembly_pattern(self) -> dict:
        if self._pattern is not None:
            return self._pattern
        self.check_supports()
        fixed = np.zeros(self.ndof, dtype=bool)
        fixed[list(self.supports)] = True
        free = np.flatnonzero(~fixed)
        reduced = np.full(self.ndof, -1, dtype=np.int64)
        reduced[free] = np.arange(free.size)
        red_edof = reduced[self.edof]
        rows = np.repeat(red_edof, 8, axis=1).ravel()
        cols = np.tile(red_edof, (1, 8)).ravel()
        keep = (rows >= 0) & (cols >= 0)
        nfree = free.size
        # position of every kept COO entry inside the CSC data array
        pattern = sp.csc_matrix(
            (np.ones(keep.sum()), (rows[keep], cols[keep])), shape=(nfree, nfree)
        )
        pattern.sum_duplicates()
        pattern.sort_indices()
        key = cols[keep] * nfree + rows[keep]
        csc_keys = np.repeat(np.arange(nfree), np.diff(pattern.indptr)) * nfree + pattern.indices
        slot = np.searchsorted(csc_keys, key)
        self._pattern = {
            "free": free,
            "keep": keep,
            "slot": slot,
            "indices": pattern.indices.copy(),
            "indptr": pattern.indptr.copy(),
            "nnz": pattern.nnz,
            "nfree": nfree,
            "symbolic": None,
        }
        return self._pattern


def simp_scale(rho_bar: np.ndarray, penal: float = PENALTY, rho_min: float = RHO_MIN) -> np.ndarray:
    """SIMP stiffness factor, in the precision of ``rho_bar``."""
    t = rho_bar.dtype.type
    return rho_bar ** t(penal) + t(rho_min)


def assemble_stiffness(mesh: StructuredMesh, mat: ElasticMaterial, rho_bar: np.ndarray,
                       penal: float = PENALTY, rho_min: float = RHO_MIN) -> sp.csc_matrix:
    """Reduced global stiffness (fixed DOFs eliminated) for physical densities ``rho_bar``."""
    rho_bar = np.asarray(rho_bar, dtype=float)
    if rho_bar.shape != (mesh.n_elements,):
        raise ValueError(f"expected {mesh.n_elements} densities, got shape {rho_bar.shape}")
    if rho_bar.min() < -1e-12 or rho_bar.max() > 1 + 1e-12:
        raise ValueError("physical densities must lie in [0, 1]")
    rho_bar = np.clip(rho_bar, 0.0, 1.0)  # filter row sums carry rounding
    pat = mesh._assembly_pattern()
    ke = element_stiffness_solid(mat, mesh.h)
    vals = (simp_scale(rho_bar, penal, rho_min)[:, None] * ke.ravel()[None, :]).ravel()
    data = np.bincount(pat["slot"], weights=vals[pat["keep"]], minlength=pat["nnz"])
    n = pat["nfree"]
    return sp.csc_matrix((data, pat["indices"], pat["indptr"]), shape=(n, n))


class Factorization:
    """Direct factorization of a reduced stiffness matrix, reused across right-hand sides.

    Right-hand sides and solutions live in the full DOF space of ``mesh``;
    fixed DOFs are returned as zero. Each solve applies one step of
    iterative refinement.
    """

    def __init__(self, mesh: StructuredMesh, K: sp.csc_matrix):
        self.mesh = mesh
        self.K = K
        self.free = mesh.free_dofs
        pat = mesh._assembly_pattern()
        if _cholmod is not None:
            try:
                if pat["symbolic"] is None:
                    pat["symbolic"] = _cholmod.analyze(K)
                self._factor = pat["symbolic"].cholesky(K)
                self._solve = self._factor
            except _cholmod.CholmodNotPositiveDefiniteError as exc:
                raise SingularSystemError(f"stiffness matrix is not positive definite: {exc}") from exc
        else:
            try:
                lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
            except RuntimeError as exc:
                raise SingularSystemError(f"stiffness factorization failed: {exc}") from exc
            diag = lu.U.diagonal()
            bad = np.flatnonzero(~(diag > 0))
            if bad.size:
                col = int(lu.perm_c[bad[0]])
                raise SingularSystemError(
                    f"non-positive pivot at reduced column {col} (global DOF {self.free[col]})"
                )
            self._solve = lu.solve

    def solve(self, F: np.ndarray) -> np.ndarray:
        """Solve ``K U = F`` for one vector (``ndof``) or a stack (``n x ndof``)."""
        F = np.asarray(F, dtype=float)
        single = F.ndim == 1
        Fs = np.atleast_2d(F)
        out = np.zeros_like(Fs)
        for row, f in enumerate(Fs):
            b = f[self.free]
            if not b.any():
                continue
            u = self._solve(b)
            u = u + self._solve(b - self.K @ u)
            out[row, self.free] = u
        return out[0] if single else out


def solve(mesh: StructuredMesh, K: sp.csc_matrix, F: np.ndarray) -> np.ndarray:
    return Factorization(mesh, K).solve(F)


@dataclasses.dataclass
class SuperpositionFields:
    """Displacements under the base load and under each unit uncertain load."""

    U0: np.ndarray
    Ui: np.ndarray  # (N, ndof)

    @property
    def n_uncertain(self) -> int:
        return self.Ui.shape[0]

    @property
    def stacked(self) -> np.ndarray:
        return np.vstack([self.U0[None, :], self.Ui])

    def at(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.size != self.n_uncertain:
            raise ValueError(f"expected {self.n_uncertain} load variables, got {z.size}")
        return self.U0 + z @ self.Ui


def superposition_fields(factor: Factorization, F_base: np.ndarray, F_unit) -> SuperpositionFields:
    F_unit = np.asarray(F_unit, dtype=float).reshape(-1, np.size(F_base))
    U = factor.solve(np.vstack([np.asarray(F_base, float)[None, :], F_unit]))
    return SuperpositionFields(U[0], U[1:])
