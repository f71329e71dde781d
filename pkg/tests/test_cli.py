import os

import numpy as np
import pytest

from anisoflux.cli import main
from anisoflux.config import ConfigError, dump_manifest, load_config, resolve


def write(path, text):
    path.write_text(text)
    return str(path)


GAUSS_SMALL = """
case = "gaussian"

[mesh]
nx = 8
ny = 8

[discretization]
scheme = "mixed"
degree = 2

[schedule]
dt = 1e-4
n_steps = 5
"""


class TestConfig:
    def test_unknown_key_is_hard_error(self, tmp_path):
        cfg = write(tmp_path / "bad.toml", """
case = "gaussian"

[kappa]
kapa_par = 1.0
""")
        with pytest.raises(ConfigError, match="kapa_par"):
            load_config(cfg)

    def test_unknown_section(self):
        with pytest.raises(ConfigError, match="solver"):
            resolve({"case": "gaussian", "solver": {"x": 1}})

    def test_supg_with_dq_zeta_rejected(self):
        with pytest.raises(ConfigError, match="continuous"):
            resolve({"case": "gaussian",
                     "discretization": {"scheme": "supg", "zeta_space": "dq"}})

    def test_defaults_materialized(self):
        cfg = resolve({"case": "flux_surface"})
        assert cfg.mesh["nx"] == 120
        assert cfg.schedule["t_max"] == 14.0
        assert cfg.kappa["kappa_par"] == 10.0
        assert cfg.zeta_space == "cg"

    def test_manifest_roundtrip(self, tmp_path):
        cfg = resolve({"case": "annulus_equilibrium",
                       "discretization": {"scheme": "mixed"}})
        path = tmp_path / "manifest.toml"
        dump_manifest(cfg, path, extra={"version": "0.1.0", "output_dir": "."})
        back = load_config(path)
        assert back.case == cfg.case
        assert back.scheme == cfg.scheme
        assert back.mesh == cfg.mesh
        assert back.schedule == cfg.schedule
        assert back.kappa == cfg.kappa


class TestRunCommand:
    def test_gaussian_run_outputs(self, tmp_path):
        cfg = write(tmp_path / "g.toml", GAUSS_SMALL)
        out = tmp_path / "out"
        assert main(["run", cfg, "--output-dir", str(out)]) == 0
        lines = (out / "errors.csv").read_text().strip().splitlines()
        assert lines[0] == "step,t,error"
        assert len(lines) == 1 + 6  # header + initial row + 5 steps
        assert (out / "manifest.toml").exists()
        assert (out / "summary.txt").exists()

    def test_unknown_key_exits_1(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.toml", GAUSS_SMALL + "\n[kappa]\nkapa_par = 2.0\n")
        assert main(["run", cfg]) == 1
        assert "kapa_par" in capsys.readouterr().err

    def test_supg_dq_config_exits_1(self, tmp_path):
        cfg = write(tmp_path / "bad.toml", """
case = "gaussian"

[discretization]
scheme = "supg"
zeta_space = "dq"
""")
        assert main(["run", cfg]) == 1

    def test_missing_config_exits_1(self, tmp_path):
        assert main(["run", str(tmp_path / "nope.toml")]) == 1

    def test_rerun_from_manifest_bitwise(self, tmp_path):
        cfg = write(tmp_path / "g.toml", GAUSS_SMALL)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(["run", cfg, "--output-dir", str(out1)]) == 0
        assert main(["run", str(out1 / "manifest.toml"), "--output-dir",
                     str(out2)]) == 0
        assert (out1 / "errors.csv").read_bytes() == (out2 / "errors.csv").read_bytes()

    def test_snapshots_written(self, tmp_path):
        cfg = write(tmp_path / "g.toml", GAUSS_SMALL)
        out = tmp_path / "snap"
        assert main(["run", cfg, "--output-dir", str(out),
                     "--snapshot-every", "2"]) == 0
        assert (out / "T_000002.vtk").exists()
        assert (out / "T_000004.vtk").exists()


class TestConvergenceCommand:
    def test_two_levels_smoke(self, tmp_path):
        cfg = write(tmp_path / "c.toml", """
case = "gaussian"

[discretization]
scheme = "primal"
degree = 1

[schedule]
dt = 2e-4
n_steps = 4

[convergence]
levels = [0, 1]
base_cells = 4
""")
        out = tmp_path / "conv"
        assert main(["convergence", cfg, "--output-dir", str(out)]) == 0
        lines = (out / "rates.csv").read_text().strip().splitlines()
        assert lines[0] == "level,dofs,error,rate"
        assert len(lines) == 3
        # exactly two rows carry a rate value... the first level has none
        assert lines[1].endswith(",")
        assert not lines[2].endswith(",")

    def test_single_level_exits_1(self, tmp_path):
        cfg = write(tmp_path / "c.toml", """
case = "gaussian"

[convergence]
levels = [1]
""")
        assert main(["convergence", cfg]) == 1

    def test_wrong_case_exits_1(self, tmp_path):
        cfg = write(tmp_path / "c.toml", 'case = "flux_surface"\n')
        assert main(["convergence", cfg]) == 1


class TestNondimCommand:
    def test_iter_defaults_check_passes(self, capsys):
        assert main(["nondim", "--iter-defaults", "--check"]) == 0
        out = capsys.readouterr().out
        assert "check passed" in out
        assert "K_par" in out

    def test_custom_params_file(self, tmp_path, capsys):
        cfg = write(tmp_path / "p.toml", "B0 = 10.84\n")
        assert main(["nondim", cfg]) == 0
        assert "t_A" in capsys.readouterr().out

    def test_b0_scaling_relations(self, capsys):
        from anisoflux.coeffs import PlasmaParams, braginskii_constants

        base = braginskii_constants(PlasmaParams())
        dbl = braginskii_constants(PlasmaParams(B0=2 * 5.42))
        assert dbl.t_A == pytest.approx(base.t_A / 2, rel=1e-12)
        assert dbl.K_perp == pytest.approx(base.K_perp / 8, rel=1e-12)

    def test_invalid_params_exit_1(self, tmp_path, capsys):
        cfg = write(tmp_path / "p.toml", "n0 = 0.0\n")
        assert main(["nondim", cfg]) == 1

    def test_unknown_param_exit_1(self, tmp_path):
        cfg = write(tmp_path / "p.toml", "dens = 1e20\n")
        assert main(["nondim", cfg]) == 1

    def test_csv_output(self, tmp_path):
        assert main(["nondim", "--iter-defaults", "--output-dir",
                     str(tmp_path)]) == 0
        text = (tmp_path / "nondim.csv").read_text()
        assert text.splitlines()[0] == "name,value"
        assert "K_par" in text


def test_identical_runs_bitwise(tmp_path):
    cfg = write(tmp_path / "g.toml", GAUSS_SMALL)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["run", cfg, "--output-dir", str(out)]) == 0
        outs.append((out / "errors.csv").read_bytes())
    assert outs[0] == outs[1]
