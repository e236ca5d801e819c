import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresstopo.benchmarks import rectangle_problem
from stresstopo.fem import ElasticMaterial, Factorization, assemble_stiffness, superposition_fields
from stresstopo.filtering import f_sigma
from stresstopo.stress import (VON_MISES_M, VonMisesContext, element_stress, quad_form, raw_stresses,
                               stress_basis, von_mises)

MAT = ElasticMaterial()
SMIN = 10.0


def ctx(h=0.1):
    from stresstopo.fem import centroid_strain_displacement
    return VonMisesContext(1e5, MAT.constitutive(), centroid_strain_displacement(h))


def test_matrix():
    assert np.array_equal(VON_MISES_M, [[1, -0.5, 0], [-0.5, 1, 0], [0, 0, 3]])
    assert np.allclose(np.linalg.eigvalsh(VON_MISES_M), [0.5, 1.5, 3])
    assert ctx().sigma_min == 10.0


@pytest.mark.parametrize("s,expected", [
    ((7.0, 0, 0), np.sqrt(49 + SMIN**2)),
    ((0, 0, 2.0), np.sqrt(12 + SMIN**2)),
    ((5.0, 5.0, 0), np.sqrt(25 + SMIN**2)),
])
def test_von_mises_cases(s, expected):
    assert np.isclose(von_mises(np.array(s), SMIN), expected, rtol=1e-15)


class TestElementStress:
    def test_zero_displacement(self):
        assert not element_stress(ctx(), 1.0, np.zeros(8)).any()

    def test_void(self):
        u = np.random.default_rng(0).normal(size=8)
        assert not element_stress(ctx(), 0.0, u).any()

    def test_uniform_stretch(self):
        h, eps = 0.1, 1e-3
        u = np.zeros(8)
        u[0::2] = eps * np.array([0, h, h, 0])
        s = element_stress(ctx(h), 1.0, u)
        E, nu = MAT.E, MAT.nu
        expected = E / (1 - nu**2) * np.array([eps, nu * eps, 0])
        assert np.allclose(s, expected, rtol=1e-12, atol=1e-12 * abs(expected).max())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.floats(0, 2 * np.pi))
def test_rotation_invariance_and_psd(s, theta):
    sx, sy, txy = s
    c, sn = np.cos(theta), np.sin(theta)
    rx = sx * c * c + sy * sn * sn + 2 * txy * sn * c
    ry = sx * sn * sn + sy * c * c - 2 * txy * sn * c
    rt = (sy - sx) * sn * c + txy * (c * c - sn * sn)
    q0 = quad_form(np.array(s))
    q1 = quad_form(np.array([rx, ry, rt]))
    assert q0 >= 0
    assert abs(q0 - q1) <= 1e-12 * max(1.0, q0) + 1e-9
    assert von_mises(np.array(s), SMIN) >= SMIN


class TestBasis:
    def setup_method(self):
        p = rectangle_problem("robust", 6, 3, radius=0.5)
        self.p = p
        rng = np.random.default_rng(4)
        self.rho_bar = rng.uniform(0.2, 1.0, p.n_elements)
        self.fac = Factorization(p.mesh, assemble_stiffness(p.mesh, p.material, self.rho_bar))
        self.basis = stress_basis(p.mesh, p.stress_ctx, self.rho_bar,
                                  superposition_fields(self.fac, p.F_base, p.F_unit))

    def direct(self, z):
        U = self.fac.solve(self.p.load_vector(z))
        return f_sigma(self.rho_bar)[:, None] * raw_stresses(self.p.mesh, self.p.stress_ctx, U)[0]

    def test_mean_loads(self):
        z = np.array([2.0, 10.0])
        d = self.direct(z)
        assert np.max(np.abs(self.basis.stress_at(z) - d)) <= 1e-10 * np.abs(d).max()

    def test_random_loads(self):
        rng = np.random.default_rng(0)
        for z in rng.normal(scale=5, size=(10, 2)):
            ref = von_mises(self.direct(z), self.basis.sigma_min)
            assert np.max(np.abs(self.basis.von_mises_at(z) - ref) / ref) <= 1e-10

    def test_zero_loads_floor(self):
        assert np.allclose(self.basis.von_mises_at(np.zeros(2)), self.basis.sigma_min)

    def test_per_element_loads(self):
        z = np.random.default_rng(1).normal(size=(self.p.n_elements, 2))
        s = self.basis.stress_at(z)
        k = 5
        assert np.allclose(s[k], self.basis.stress_at(z[k])[k])
