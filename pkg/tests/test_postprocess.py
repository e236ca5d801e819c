import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stresstopo.benchmarks import rectangle_problem
from stresstopo.postprocess import (FIELD_COLUMNS, ExportPaths, MCSettings, beta_from_pf, beta_image, colormap,
                                    density_image, design_stress_basis, export_fields, inv_std_normal,
                                    monte_carlo_map, read_fields_csv, read_pnm, reliability_of_design,
                                    stress_image)
from stresstopo.stress import StressBasis
from stresstopo.uncertainty import ConfigurationError, LoadModel


def exact_cdf(x):
    return float(mpmath.ncdf(mpmath.mpf(x)))


class TestInverseNormal:
    def test_half(self):
        assert inv_std_normal(0.5) == 0.0

    def test_two_sigma(self):
        assert abs(inv_std_normal(0.0227501319) + 2.0) < 1e-6

    def test_one_in_a_million(self):
        assert abs(inv_std_normal(1e-6) + 4.7534) < 1e-3
        with mpmath.workdps(30):
            exact = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf("1e-6") - 1))
        assert abs(inv_std_normal(1e-6) - exact) < 1e-12

    @pytest.mark.parametrize("p", [1e-6, 0.0227501319, 0.5, 0.9772498681, 1e-12, 0.3, 1 - 1e-9])
    def test_round_trip(self, p):
        assert abs(exact_cdf(inv_std_normal(p)) - p) < 1e-10 * max(1.0, p)

    @pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
    def test_domain(self, p):
        with pytest.raises(ValueError):
            inv_std_normal(p)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-300, 1 - 1e-16), st.floats(1e-300, 1 - 1e-16))
    def test_monotone(self, p, q):
        if p < q:
            assert inv_std_normal(p) <= inv_std_normal(q)


class TestBeta:
    def test_cap_default(self):
        assert MCSettings(n_samples=1_000_000).cap == pytest.approx(4.753424, abs=1e-6)

    def test_clipping(self):
        b = beta_from_pf(np.array([0.0, 1.0, 0.5, 1e-9]), 3.0)
        assert np.array_equal(b, [3.0, -3.0, 0.0, 3.0])

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 1000), min_size=2, max_size=20))
    def test_decreasing_in_pf(self, counts):
        pf = np.array(counts) / 1000
        b = beta_from_pf(pf, MCSettings(n_samples=1000).cap)
        order = np.argsort(pf, kind="stable")
        assert np.all(np.diff(b[order]) <= 0)

    def test_invalid_settings(self):
        with pytest.raises(ValueError):
            MCSettings(n_samples=0)
        with pytest.raises(ValueError):
            MCSettings(beta_cap=-1.0)


def uniaxial_basis(a, b, smin=1e-6):
    """sigma_x = a_e + b_e z on every element, other components zero."""
    ne = len(a)
    raw = np.zeros((2, ne, 3))
    raw[0, :, 0], raw[1, :, 0] = a, b
    return StressBasis(raw, np.ones(ne), smin)


class TestMonteCarlo:
    def test_zero_variance_feasible(self):
        basis = uniaxial_basis(np.array([1.0, 2.0]), np.array([1.0, 1.0]))
        m = monte_carlo_map(basis, 10.0, LoadModel.gaussian([1.0], std=[0.0]), MCSettings(1000))
        assert not m.failures.any()
        assert np.all(m.beta == m.beta_cap)

    def test_gaussian_tail(self):
        sigma_y, smin = 10.0, 1e-6
        a = np.array([6.0, 7.0, 8.0, 5.0])
        b = np.array([1.0, 2.0, 0.5, 1.5])
        mean, sd = 0.5, 1.2
        n = 100_000
        m = monte_carlo_map(uniaxial_basis(a, b, smin), sigma_y, LoadModel.gaussian([mean], std=[sd]),
                            MCSettings(n, seed=3))
        T = math.sqrt(sigma_y**2 - smin**2)
        mu_s, sd_s = a + b * mean, b * sd
        p = np.array([exact_cdf((mu - T) / s) + exact_cdf((-T - mu) / s) for mu, s in zip(mu_s, sd_s)])
        se = np.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(m.pf - p) <= 3 * se)

    def test_equality_counts_as_failure(self):
        basis = uniaxial_basis(np.array([3.0]), np.array([0.0]), smin=4.0)
        m = monte_carlo_map(basis, 5.0, LoadModel.gaussian([0.0], std=[1.0]), MCSettings(10))
        assert m.failures[0] == 10

    def test_reproducible_and_batch_independent(self):
        rng = np.random.default_rng(0)
        raw = rng.normal(size=(3, 50, 3))
        basis = StressBasis(raw, np.ones(50), 1e-3)
        model = LoadModel.gaussian([0.2, -0.1], cov=[[1.0, 0.4], [0.4, 0.8]])
        m1 = monte_carlo_map(basis, 2.5, model, MCSettings(20_000, seed=7))
        m2 = monte_carlo_map(basis, 2.5, model, MCSettings(20_000, seed=7))
        m3 = monte_carlo_map(basis, 2.5, model, MCSettings(20_000, seed=7, batch_size=777))
        assert np.array_equal(m1.failures, m2.failures)
        assert np.array_equal(m1.failures, m3.failures)
        assert m1.beta_min == m1.beta[m1.worst_element]
        assert m1.pf_max == m1.pf[m1.worst_element]

    def test_direct_sampling_oracle(self):
        rng = np.random.default_rng(1)
        basis = StressBasis(rng.normal(size=(3, 20, 3)), rng.uniform(0.3, 1, 20), 1e-3)
        model = LoadModel.gaussian([0.3, 0.1], std=[1.0, 0.5])
        mc = MCSettings(2000, seed=11)
        m = monte_carlo_map(basis, 2.0, model, mc)
        z = model.mean + np.random.default_rng(11).standard_normal((2000, 2)) @ model.transform_factor().T
        fails = np.zeros(20, int)
        for zz in z:
            fails += basis.von_mises_at(zz) >= 2.0
        assert np.abs(m.failures - fails).max() <= 1  # rounding right at the threshold only

    def test_interval_model_rejected(self):
        basis = uniaxial_basis(np.array([1.0]), np.array([1.0]))
        with pytest.raises(ConfigurationError):
            monte_carlo_map(basis, 2.0, LoadModel.interval([0.0], [1.0]), MCSettings(10))

    def test_design_basis_matches_problem(self):
        p = rectangle_problem("det", 12, 6, radius=0.35)
        b = design_stress_basis(p, np.ones(p.n_elements))
        assert b.n_uncertain == 2
        rm = reliability_of_design(p, np.ones(p.n_elements), MCSettings(500))
        assert rm.pf.shape == (p.n_elements,)


class TestExports:
    def setup_method(self):
        self.p = rectangle_problem("robust", 8, 4, radius=0.3)
        self.mesh = self.p.mesh

    def test_full_density_black(self):
        img = density_image(self.mesh, np.ones(self.p.n_elements))
        assert img.shape == (4, 8) and not img.any()

    def test_colormap_endpoints(self):
        assert colormap(0.0).tolist() == [0, 0, 255]
        assert colormap(1.0).tolist() == [255, 0, 0]
        assert colormap(0.5).tolist() == [0, 255, 0]

    def test_beta_colors(self):
        img = beta_image(self.mesh, np.linspace(1.0, 4.0, 32), 4.0)
        assert img.shape == (4, 8, 3)
        assert img[-1, 0].tolist() == [255, 0, 0]  # element 0 (bottom-left) has the smallest index
        assert img[0, -1].tolist() == [0, 0, 255]

    def test_export_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        rho_bar = rng.uniform(size=self.p.n_elements)
        ratios = rng.uniform(0, 1.2, self.p.n_elements)
        rm = reliability_of_design(self.p, rho_bar, MCSettings(1000))
        paths = ExportPaths(tmp_path / "out")
        written = export_fields(self.mesh, rho_bar, ratios, rm, paths)
        assert len(written) == 4
        data = read_fields_csv(paths["fields"])
        assert len(data["element_id"]) == self.p.n_elements
        assert np.array_equal(data["rho_bar"], rho_bar)
        assert np.array_equal(data["sigma_ratio"], ratios)
        assert np.array_equal(data["P_f"], rm.pf)
        assert np.array_equal(data["beta"], rm.beta)
        assert np.array_equal(read_pnm(paths["density"]), density_image(self.mesh, rho_bar))
        assert np.array_equal(read_pnm(paths["stress"]), stress_image(self.mesh, ratios))

    def test_export_without_mc(self, tmp_path):
        paths = ExportPaths(tmp_path)
        export_fields(self.mesh, np.ones(32), np.zeros(32), None, paths)
        assert not paths["beta"].exists()
        assert np.isnan(read_fields_csv(paths["fields"])["P_f"]).all()
        assert tuple(paths["fields"].read_text().splitlines()[0].split(",")) == FIELD_COLUMNS

    def test_masked_cells_white(self):
        from stresstopo.benchmarks import lshape_mesh
        mesh = lshape_mesh(10)
        img = density_image(mesh, np.ones(mesh.n_elements))
        assert (img == 255).sum() == 36 and (img == 0).sum() == mesh.n_elements

    def test_io_error_has_path(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError, match="file"):
            export_fields(self.mesh, np.ones(32), np.zeros(32), None, ExportPaths(blocker / "sub"))
