import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresstopo.fem import (ElasticMaterial, Factorization, SingularSystemError, StructuredMesh,
                            assemble_stiffness, centroid_strain_displacement, element_stiffness_solid,
                            simp_scale, solve, superposition_fields)
from stresstopo.benchmarks import lshape_mesh, rectangle_mesh, rectangle_problem

MAT = ElasticMaterial(1e6, 0.3, 1e-3)


def gauss_stiffness(mat, h):
    """2x2 Gauss quadrature of B^T C B t over a square element (independent oracle)."""
    C = mat.constitutive()
    xi_n = np.array([-1, 1, 1, -1.0])
    eta_n = np.array([-1, -1, 1, 1.0])
    k = np.zeros((8, 8))
    g = 1 / np.sqrt(3)
    for xi in (-g, g):
        for eta in (-g, g):
            dN_dxi = xi_n * (1 + eta * eta_n) / 4
            dN_deta = eta_n * (1 + xi * xi_n) / 4
            J = h / 2  # square element: x = h/2 xi + c
            dx, dy = dN_dxi / J, dN_deta / J
            B = np.zeros((3, 8))
            B[0, 0::2], B[1, 1::2] = dx, dy
            B[2, 0::2], B[2, 1::2] = dy, dx
            k += B.T @ C @ B * mat.t * J * J
    return k


def dense_assembly(mesh, mat, rho_bar):
    K = np.zeros((mesh.ndof, mesh.ndof))
    ke = gauss_stiffness(mat, mesh.h)
    for e, dofs in enumerate(mesh.edof):
        K[np.ix_(dofs, dofs)] += (rho_bar[e] ** 3 + 1e-9) * ke
    free = mesh.free_dofs
    return K[np.ix_(free, free)]


def clamped_mesh(nx=4, ny=2, h=0.25):
    mesh = StructuredMesh(nx, ny, h)
    mesh.fix_segment((0, 0), (0, ny * h))
    return mesh


class TestMaterial:
    @pytest.mark.parametrize("kw", [dict(E=0), dict(E=-1), dict(nu=0.5), dict(nu=-0.1), dict(t=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ElasticMaterial(**kw)


class TestElementStiffness:
    def test_symmetric(self):
        k = element_stiffness_solid(MAT, 0.005)
        assert np.array_equal(k, k.T)

    @pytest.mark.parametrize("u", [(1, 0) * 4, (0, 1) * 4])
    def test_rigid_translation(self, u):
        k = element_stiffness_solid(MAT, 0.005)
        assert np.allclose(k @ np.array(u, float), 0, atol=1e-9 * np.abs(k).max())

    def test_rank_five(self):
        w = np.linalg.eigvalsh(element_stiffness_solid(MAT, 0.005))
        assert np.sum(w > 1e-10 * w.max()) == 5

    def test_matches_gauss_quadrature(self):
        k = element_stiffness_solid(MAT, 0.005)
        ref = gauss_stiffness(MAT, 0.005)
        assert np.max(np.abs(k - ref)) <= 1e-12 * np.abs(ref).max()

    def test_rejects_nonpositive_size(self):
        with pytest.raises(ValueError):
            element_stiffness_solid(MAT, 0.0)


class TestMesh:
    def test_numbering_contiguous(self):
        mesh = lshape_mesh(10)
        assert mesh.n_elements == 100 - 36
        used = np.unique(mesh.edof)
        assert np.array_equal(used, np.arange(mesh.ndof))

    def test_load_weights(self):
        mesh = rectangle_mesh(20, 10)
        reg = mesh.load_regions[0]
        assert np.isclose(reg.weights.sum(), 1.0)
        assert np.isclose(reg.weights[0], 0.5 * reg.weights[1])
        assert np.isclose(reg.weights[-1], 0.5 * reg.weights[1])
        F = mesh.unit_load_vector(reg)
        assert np.isclose(F[0::2].sum(), 1.0) and F[1::2].sum() == 0

    def test_bad_mask(self):
        with pytest.raises(ValueError):
            StructuredMesh(2, 2, 1.0, np.zeros((2, 2), bool))
        with pytest.raises(ValueError):
            StructuredMesh(2, 2, 1.0, np.ones((3, 2), bool))

    def test_empty_support_segment(self):
        mesh = StructuredMesh(2, 2, 1.0)
        with pytest.raises(ValueError):
            mesh.fix_segment((5, 5), (6, 5))


class TestAssembly:
    def test_full_density(self):
        mesh = clamped_mesh()
        K = assemble_stiffness(mesh, MAT, np.ones(mesh.n_elements))
        ref = dense_assembly(mesh, MAT, np.ones(mesh.n_elements))
        assert np.allclose(K.toarray(), ref, rtol=0, atol=1e-12 * np.abs(ref).max())

    def test_void_still_positive_definite(self):
        mesh = clamped_mesh()
        K = assemble_stiffness(mesh, MAT, np.zeros(mesh.n_elements)).toarray()
        assert np.linalg.eigvalsh(K).min() > 0

    def test_random_matches_dense_oracle(self):
        rng = np.random.default_rng(3)
        mesh = clamped_mesh()
        rho = rng.uniform(0, 1, mesh.n_elements)
        ref = dense_assembly(mesh, MAT, rho)
        K = assemble_stiffness(mesh, MAT, rho).toarray()
        assert np.max(np.abs(K - ref)) <= 1e-12 * np.abs(ref).max()

    def test_rejects_out_of_range(self):
        mesh = clamped_mesh()
        with pytest.raises(ValueError):
            assemble_stiffness(mesh, MAT, np.full(mesh.n_elements, 1.5))

    def test_simp_scale(self):
        assert np.allclose(simp_scale(np.array([0.0, 0.5, 1.0])), [1e-9, 0.125 + 1e-9, 1 + 1e-9])


class TestSolve:
    def test_zero_load(self):
        mesh = clamped_mesh()
        K = assemble_stiffness(mesh, MAT, np.ones(mesh.n_elements))
        assert not solve(mesh, K, np.zeros(mesh.ndof)).any()

    def test_residual(self):
        rng = np.random.default_rng(0)
        mesh = clamped_mesh(8, 4)
        K = assemble_stiffness(mesh, MAT, rng.uniform(0, 1, mesh.n_elements))
        F = rng.normal(size=mesh.ndof)
        F[~np.isin(np.arange(mesh.ndof), mesh.free_dofs)] = 0
        U = solve(mesh, K, F)
        free = mesh.free_dofs
        assert np.linalg.norm(K @ U[free] - F[free]) <= 1e-10 * np.linalg.norm(F)

    def test_multi_rhs_bitwise(self):
        rng = np.random.default_rng(1)
        mesh = clamped_mesh()
        K = assemble_stiffness(mesh, MAT, rng.uniform(0, 1, mesh.n_elements))
        F = rng.normal(size=(2, mesh.ndof))
        fac = Factorization(mesh, K)
        both = fac.solve(F)
        assert np.array_equal(both[0], Factorization(mesh, K).solve(F[0]))
        assert np.array_equal(both[1], Factorization(mesh, K).solve(F[1]))

    def test_unsupported_is_singular(self):
        mesh = StructuredMesh(2, 1, 1.0)
        mesh.fix_segment((0, 0), (0, 1), components=(0,))  # no vertical restraint
        with pytest.raises(SingularSystemError, match="rigid-body"):
            assemble_stiffness(mesh, MAT, np.ones(2))

    def test_disconnected_part_needs_own_support(self):
        active = np.array([[True, False, True]])
        mesh = StructuredMesh(3, 1, 1.0, active)
        mesh.fix_segment((0, 0), (0, 1))
        with pytest.raises(SingularSystemError):
            assemble_stiffness(mesh, MAT, np.ones(2))
        mesh.fix_segment((3, 0), (3, 1))
        assemble_stiffness(mesh, MAT, np.ones(2))

    def test_cantilever_tip_deflection(self):
        L, H, n = 1.0, 0.1, 8
        mesh = StructuredMesh(10 * n, n, H / n)
        mesh.fix_segment((0, 0), (0, H))
        reg = mesh.add_load_region((L, 0), (L, H), (0, -1))
        P = 1.0
        U = solve(mesh, assemble_stiffness(mesh, MAT, np.ones(mesh.n_elements)), P * mesh.unit_load_vector(reg))
        I = MAT.t * H**3 / 12
        beam = P * L**3 / (3 * MAT.E * I)
        tip = -U[2 * reg.nodes + 1].mean()
        assert abs(tip - beam) / beam < 0.05


class TestSuperposition:
    def test_no_uncertain_loads(self):
        mesh = clamped_mesh()
        fac = Factorization(mesh, assemble_stiffness(mesh, MAT, np.ones(mesh.n_elements)))
        F = np.zeros(mesh.ndof)
        F[-1] = 1.0
        fields = superposition_fields(fac, F, np.zeros((0, mesh.ndof)))
        assert fields.n_uncertain == 0
        assert np.array_equal(fields.U0, fac.solve(F))

    def test_mean_loads_reproduce_direct_solve(self):
        p = rectangle_problem("robust", 20, 10)
        fac = Factorization(p.mesh, assemble_stiffness(p.mesh, p.material, np.ones(p.n_elements)))
        fields = superposition_fields(fac, p.F_base, p.F_unit)
        direct = fac.solve(p.load_vector([2.0, 10.0]))
        sup = fields.at([2.0, 10.0])
        assert np.linalg.norm(sup - direct) <= 1e-10 * np.linalg.norm(direct)


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_stiffness_symmetric_and_monotone(nx, ny, seed):
    rng = np.random.default_rng(seed)
    mesh = StructuredMesh(nx, ny, 0.1)
    mesh.fix_segment((0, 0), (0, ny * 0.1))
    rho = rng.uniform(0, 1, mesh.n_elements)
    K = assemble_stiffness(mesh, MAT, rho)
    assert abs(K - K.T).max() == 0
    F = np.zeros(mesh.ndof)
    F[-2:] = rng.normal(size=2)
    stiffer = np.minimum(1.0, rho + rng.uniform(0, 0.5, rho.size))
    c1 = F @ solve(mesh, K, F)
    c2 = F @ solve(mesh, assemble_stiffness(mesh, MAT, stiffer), F)
    assert c2 <= c1 * (1 + 1e-12)


def test_centroid_strain_uniform_stretch():
    h = 0.2
    B = centroid_strain_displacement(h)
    x = np.array([0, h, h, 0.0])
    u = np.zeros(8)
    u[0::2] = 1e-3 * x  # u = eps x
    assert np.allclose(B @ u, [1e-3, 0, 0], atol=1e-15)
