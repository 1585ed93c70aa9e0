import json

import numpy as np
import pytest
from click.testing import CliRunner

from spikestruct.cli import main
from spikestruct.config import ConfigError, ExperimentConfig, parse_config
from spikestruct.spectra import build_builtin_density, sample_eigenvalues


@pytest.fixture
def runner():
    return CliRunner()


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


class TestConfigParsing:
    def test_round_trip(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path / "c.txt", """
# comment line
noise = quartic
prior = sparse_rademacher
prior.eps = 0.5477225575051661
lambda_grid = 1.0,2.0,3.0
n = 256
trials = 4
seed = 99
tau = 0.8
"""))
        assert cfg.noise == "quartic"
        assert cfg.prior_params["eps"] == pytest.approx(0.5477, abs=1e-3)
        assert cfg.lambda_grid == [1.0, 2.0, 3.0]
        assert cfg.n == 256 and cfg.trials == 4 and cfg.seed == 99

    def test_grid_range_syntax(self, tmp_path):
        cfg = parse_config(write_cfg(tmp_path / "c.txt", "lambda_grid = 0.5:2.0:0.5\n"))
        assert cfg.lambda_grid == [0.5, 1.0, 1.5, 2.0]

    def test_unknown_key_carries_line_number(self, tmp_path):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config(write_cfg(tmp_path / "c.txt", "noise = quartic\n\nnois = quartic\n"))

    def test_bad_value_carries_line_number(self, tmp_path):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config(write_cfg(tmp_path / "c.txt", "n = twelve\n"))

    def test_validation_rules(self):
        cfg = ExperimentConfig(trials=0)
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg = ExperimentConfig(n=32)
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg = ExperimentConfig(lambda_grid=[2.0, 1.0])
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            parse_config("/nonexistent/config.txt")


class TestReplicaCurveCommand:
    def test_gaussian_curve_has_kink_at_one(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt",
                        "noise = semicircle\nprior = gaussian\nlambda_grid = 0.0:3.0:0.5\n")
        result = runner.invoke(main, ["replica-curve", "--config", cfg,
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        rows = np.loadtxt(tmp_path / "out" / "phase_curve.csv", delimiter=",", skiprows=2)
        lam, mmse = rows[:, 0], rows[:, 2]
        assert np.all(mmse[lam <= 1.0] >= 1.0 - 1e-6)
        assert np.all(mmse[lam >= 1.5] < 1.0)
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_figures_rendered_by_default(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt",
                        "noise = semicircle\nprior = gaussian\nlambda_grid = 1.0,2.0\n")
        result = runner.invoke(main, ["replica-curve", "--config", cfg,
                                      "--out", str(tmp_path / "out")])
        assert result.exit_code == 0, result.output
        assert (tmp_path / "out" / "phase_curve.png").exists()

    def test_empty_grid_is_validation_error(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt", "lambda_grid = \n")
        result = runner.invoke(main, ["replica-curve", "--config", cfg,
                                      "--out", str(tmp_path / "out")])
        assert result.exit_code == 2

    def test_unknown_noise_is_numerical_failure(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt", "noise = cauchy\n")
        result = runner.invoke(main, ["replica-curve", "--config", cfg,
                                      "--out", str(tmp_path / "out")])
        assert result.exit_code == 3


class TestTapRunCommand:
    BASE = ("noise = quartic\nprior = rademacher\nlambda_grid = 0.0,3.0\n"
            "n = 96\nseed = 5\nmax_iter = 800\n")

    def test_zero_lambda_row_and_aggregate(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt", self.BASE + "trials = 3\n")
        result = runner.invoke(main, ["tap-run", "--config", cfg, "--workers", "1",
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        lines = (tmp_path / "out" / "trials.csv").read_text().splitlines()
        assert lines[1] == ("seed,lambda,iterations,converged,mse_spike,"
                            "mse_vector,overlap,clamp_warnings")
        agg = (tmp_path / "out" / "aggregate.csv").read_text().splitlines()
        zero_row = agg[2].split(",")
        assert float(zero_row[4]) == pytest.approx(1.0, abs=0.1)

    def test_single_trial_std_is_na(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt", self.BASE + "trials = 1\n")
        result = runner.invoke(main, ["tap-run", "--config", cfg, "--workers", "1",
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        agg = (tmp_path / "out" / "aggregate.csv").read_text().splitlines()
        assert "n/a" in agg[2]

    def test_reproducible_bodies(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt", self.BASE + "trials = 2\n")
        for name in ("a", "b"):
            result = runner.invoke(main, ["tap-run", "--config", cfg, "--workers", "1",
                                          "--out", str(tmp_path / name), "--no-figures"])
            assert result.exit_code == 0, result.output
        assert ((tmp_path / "a" / "trials.csv").read_bytes()
                == (tmp_path / "b" / "trials.csv").read_bytes())
        assert ((tmp_path / "a" / "aggregate.csv").read_bytes()
                == (tmp_path / "b" / "aggregate.csv").read_bytes())


class TestOampCheckCommand:
    def test_rademacher_gaps_small(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt",
                        "noise = quartic\nprior = rademacher\nlambda_grid = 0.0,2.0\n")
        result = runner.invoke(main, ["oamp-check", "--config", cfg,
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "out" / "equivalence.json").read_text())
        by_lam = {r["lambda"]: r for r in payload["records"]}
        assert by_lam[2.0]["gap_m"] <= 1e-6
        assert by_lam[0.0]["gap_m"] == 0.0

    def test_gaussian_prior_flagged_degenerate(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt",
                        "noise = quartic\nprior = gaussian\nlambda_grid = 2.0\n")
        result = runner.invoke(main, ["oamp-check", "--config", cfg,
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        payload = json.loads((tmp_path / "out" / "equivalence.json").read_text())
        assert payload["records"][0]["degenerate"]


class TestSurrogateCompareCommand:
    def test_writes_paired_trajectories(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt",
                        "noise = quartic\nprior = rademacher\nlambda = 2.0\n"
                        "n = 96\ntrials = 2\nseed = 3\nmax_iter = 600\n")
        result = runner.invoke(main, ["surrogate-compare", "--config", cfg, "--workers", "1",
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        rows = np.loadtxt(tmp_path / "out" / "surrogate_trajectories.csv",
                          delimiter=",", skiprows=2)
        assert rows.shape[1] == 3
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["surrogate_snr"] > 2.0

    def test_zero_snr_flat_at_one(self, runner, tmp_path):
        cfg = write_cfg(tmp_path / "c.txt",
                        "noise = quartic\nprior = rademacher\nlambda = 0.0\n"
                        "n = 96\ntrials = 2\nseed = 3\nmax_iter = 400\n")
        result = runner.invoke(main, ["surrogate-compare", "--config", cfg, "--workers", "1",
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        rows = np.loadtxt(tmp_path / "out" / "surrogate_trajectories.csv",
                          delimiter=",", skiprows=2)
        assert rows[-1, 1] == pytest.approx(1.0, abs=0.15)
        assert rows[-1, 2] == pytest.approx(1.0, abs=0.15)


class TestSpectrumIngestCommand:
    def test_planted_semicircle_recovers_identity(self, runner, tmp_path):
        rho = build_builtin_density("semicircle")
        vals = sample_eigenvalues(rho, 3000, seed=77)
        eigs = tmp_path / "eigs.csv"
        np.savetxt(eigs, vals, header="eigenvalue", comments="")
        cfg = write_cfg(tmp_path / "c.txt",
                        "prior = rademacher\nlambda = 2.0\nlambda_grid = 2.0\n")
        result = runner.invoke(main, ["spectrum-ingest", str(eigs), "--outliers", "0",
                                      "--config", cfg, "--out", str(tmp_path / "out"),
                                      "--no-figures"])
        assert result.exit_code == 0, result.output
        table = np.loadtxt(tmp_path / "out" / "potential_derivative.csv",
                           delimiter=",", skiprows=2)
        inner = np.abs(table[:, 0]) < 1.2
        slope = np.polyfit(table[inner, 0], table[inner, 1], 1)[0]
        assert slope == pytest.approx(1.0, abs=0.1)

    def test_outliers_removed_variance_one(self, runner, tmp_path):
        rng = np.random.default_rng(4)
        vals = np.concatenate([rng.standard_normal(1500), np.full(8, 14.0)])
        eigs = tmp_path / "eigs.csv"
        np.savetxt(eigs, vals, header="eigenvalue", comments="")
        result = runner.invoke(main, ["spectrum-ingest", str(eigs), "--outliers", "8",
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 0, result.output
        spec = np.loadtxt(tmp_path / "out" / "standardized_spectrum.csv",
                          delimiter=",", skiprows=2)
        assert spec.size == 1500
        assert abs(spec.mean()) <= 1e-10
        assert abs(spec.std() - 1.0) <= 1e-10

    def test_empty_file_is_validation_error(self, runner, tmp_path):
        eigs = tmp_path / "eigs.csv"
        eigs.write_text("")
        result = runner.invoke(main, ["spectrum-ingest", str(eigs),
                                      "--out", str(tmp_path / "out"), "--no-figures"])
        assert result.exit_code == 2
