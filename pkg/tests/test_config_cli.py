import dataclasses

import numpy as np
import pytest

from stresstopo.cli import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, load_design, main
from stresstopo.config import PRESETS, ConfigError, RunConfig, preset

SMALL = preset("rect-robust").scaled(24)
SMALL.radius = 0.2


class TestConfig:
    @pytest.mark.parametrize("name", list(PRESETS))
    def test_round_trip(self, name):
        cfg = preset(name)
        again = RunConfig.from_text(cfg.to_text())
        assert again == cfg

    def test_rectangle_preset_constants(self):
        cfg = preset("rect-det")
        assert (cfg.nx, cfg.ny, cfg.h) == (160, 80, 2 / 160)
        assert (cfg.E, cfg.nu, cfg.t, cfg.sigma_y, cfg.radius) == (1e6, 0.3, 1e-3, 1e5, 0.04)
        fh, fv = cfg.loads
        assert (fh.mean, fh.std, fh.lower, fh.upper) == (2.0, 2.0, -2.0, 6.0)
        assert (fv.mean, fv.std, fv.lower, fv.upper) == (10.0, 2.0, 6.0, 14.0)
        assert (cfg.alpha, cfg.beta_target) == (2.0, 2.0)

    def test_lshape_preset(self):
        cfg = preset("lshape-antiopt")
        assert cfg.build_mesh().n_elements == 14400
        fh, fv = cfg.loads
        assert (fh.mean, fh.std, fh.lower, fh.upper) == (0.0, 0.015, -0.03, 0.03)
        assert fv.value == 0.3 and not fv.uncertain

    def test_scaled(self):
        cfg = preset("rect-det").scaled(40)
        assert (cfg.nx, cfg.ny, cfg.h) == (40, 20, 0.05)
        with pytest.raises(ConfigError):
            preset("rect-det").scaled(33)

    def test_unknown_key_line_number(self):
        text = preset("rect-det").to_text().replace("nu = 0.3", "nu = 0.3\npoisson = 0.3")
        with pytest.raises(ConfigError) as err:
            RunConfig.from_text(text, source="x.cfg")
        line = text.splitlines().index("poisson = 0.3") + 1
        assert err.value.line == line and f"x.cfg:{line}" in str(err.value)

    def test_bad_number_line_number(self):
        text = preset("rect-det").to_text().replace("sigma_y = 100000.0", "sigma_y = lots")
        with pytest.raises(ConfigError) as err:
            RunConfig.from_text(text)
        assert err.value.line == text.splitlines().index("sigma_y = lots") + 1

    def test_formulation_needs_matching_load_data(self):
        cfg = preset("rect-antiopt")
        for ld in cfg.loads:
            ld.lower = ld.upper = None
        with pytest.raises(ConfigError, match="lower/upper"):
            cfg.validate()

    def test_missing_support(self):
        cfg = dataclasses.replace(preset("rect-det"), supports=[])
        with pytest.raises(ConfigError, match="support"):
            cfg.validate()

    def test_solver_override(self):
        text = preset("rect-det").to_text() + "\n[solver]\nnit_max = 20\n"
        assert RunConfig.from_text(text).al_settings().nit_max == 20


class TestCLI:
    def test_presets(self, capsys):
        assert main(["presets"]) == EXIT_OK
        assert capsys.readouterr().out.split() == list(PRESETS)

    def test_zero_samples_rejected(self, capsys):
        with pytest.raises(SystemExit) as err:
            main(["run", "--preset", "rect-det", "--samples", "0"])
        assert err.value.code == 2

    def test_missing_config(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG
        assert "nope.cfg" in capsys.readouterr().err

    def test_unknown_suite(self):
        assert main(["verify", "bogus"]) == EXIT_CONFIG

    def test_verify_suite(self, capsys):
        assert main(["verify", "phi", "superposition"]) == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert len(out) == 3 and all(line.startswith("[PASS]") for line in out)

    def test_verify_failure_exit_code(self, monkeypatch):
        from stresstopo import verify
        monkeypatch.setitem(verify.SUITES, "phi", lambda: [verify.Check("x", 1.0, 0.0, False)])
        assert main(["verify", "phi"]) == EXIT_CHECK_FAILED

    def test_run_and_postprocess(self, tmp_path, capsys):
        cfg_path = tmp_path / "small.cfg"
        SMALL.save(cfg_path)
        out = tmp_path / "run"
        assert main(["run", str(cfg_path), "--out", str(out), "--samples", "2000", "--log-every", "0"]) == EXIT_OK
        for name in ("config.txt", "convergence.csv", "design.npz", "fields.csv", "density.pgm", "stress.ppm",
                     "beta.ppm", "summary.txt"):
            assert (out / name).exists(), name
        summary = (out / "summary.txt").read_text()
        assert "converged = True" in summary and "beta_min" in summary
        cfg, rho, rho_bar = load_design(out / "design.npz")
        assert cfg == RunConfig.from_text((out / "config.txt").read_text())
        assert rho.shape == rho_bar.shape == (24 * 12,)
        assert main(["postprocess", str(out / "design.npz"), "--samples", "2000", "--out",
                     str(tmp_path / "pp")]) == EXIT_OK
        assert "beta_min" in (tmp_path / "pp" / "reliability.txt").read_text()
        # sampling is fully determined by the seed, so a repeat reproduces the run's field file
        assert (tmp_path / "pp" / "fields.csv").read_bytes() == (out / "fields.csv").read_bytes()

    def test_postprocess_bad_file(self, tmp_path):
        bad = tmp_path / "bad.npz"
        bad.write_bytes(b"not an archive")
        assert main(["postprocess", str(bad)]) == EXIT_CONFIG
