import configparser
import filecmp
import math
import os

import numpy as np
import pytest

from gwp.errors import ShapeError
from gwp.evaluation import (NOT_APPLICABLE, RESULT_COLUMNS, ExperimentConfig, ModelConfig,
                            ResultTable, forecast_loglik, load_config, mse_paths, parse_config,
                            run_experiment)
from gwp.inference import ObservationSet, gaussian_path_loglik, log_likelihood
from gwp.kernels import KernelFamily
from gwp.wishart import CovariancePath, GWPState, sigma_path


def random_path(rng, n, d, inputs=None):
    a = rng.standard_normal((n, d, d))
    m = a @ np.swapaxes(a, 1, 2) + 0.1 * np.eye(d)
    return CovariancePath(np.arange(float(n)) if inputs is None else inputs, m)


def naive_mse(p, q):
    total, count = 0.0, 0
    for n in range(len(p)):
        for i in range(p.dim):
            for j in range(i + 1):
                total += (p.matrices[n, i, j] - q.matrices[n, i, j]) ** 2
                count += 1
    return total / count


def naive_loglik(matrices, x):
    total = 0.0
    for S, v in zip(matrices, x):
        d = len(v)
        total += -0.5 * (d * math.log(2 * math.pi) + math.log(np.linalg.det(S))
                         + v @ np.linalg.inv(S) @ v)
    return total


class TestMse:
    def test_examples(self):
        eye = CovariancePath([0.0], [np.eye(2)])
        assert mse_paths(eye, eye) == 0.0
        two = CovariancePath([0.0], [np.diag([2.0, 1.0])])
        # vech has three entries and one differs by 1
        assert mse_paths(two, eye) == pytest.approx(1 / 3, abs=1e-15)

    def test_off_diagonal_counted_once(self):
        a = CovariancePath([0.0], [[[2.0, 0.5], [0.5, 2.0]]])
        b = CovariancePath([0.0], [[[2.0, 0.0], [0.0, 2.0]]])
        assert mse_paths(a, b) == pytest.approx(0.25 / 3, abs=1e-15)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n, d = int(rng.integers(1, 8)), int(rng.integers(1, 4))
            p, q = random_path(rng, n, d), random_path(rng, n, d)
            assert abs(mse_paths(p, q) - naive_mse(p, q)) < 1e-12

    def test_misaligned(self):
        rng = np.random.default_rng(1)
        with pytest.raises(ShapeError):
            mse_paths(random_path(rng, 3, 2), random_path(rng, 4, 2))
        with pytest.raises(ShapeError):
            mse_paths(random_path(rng, 3, 2), random_path(rng, 3, 2, np.arange(1.0, 4.0)))
        with pytest.raises(ShapeError):
            mse_paths(random_path(rng, 3, 2), random_path(rng, 3, 3))


class TestForecastLoglik:
    def test_unit_example(self):
        ll = forecast_loglik(CovariancePath([0.0], [[[1.0]]]), ObservationSet([0.0], [[0.0]]))
        assert ll == pytest.approx(-0.918939, abs=1e-6)

    def test_matches_oracle_and_inference_likelihood(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            n, d = int(rng.integers(1, 10)), int(rng.integers(1, 4))
            state = GWPState(rng.standard_normal(n * d * (d + 1)), 1.0,
                             np.eye(d) + np.tril(0.3 * rng.standard_normal((d, d)), -1),
                             d + 1, np.arange(float(n)))
            mats = sigma_path(state.latents, state.L) + 0.05 * np.eye(d)
            obs = ObservationSet(np.arange(float(n)), rng.standard_normal((n, d)))
            ll = forecast_loglik(CovariancePath(obs.inputs, mats), obs)
            assert abs(ll - naive_loglik(mats, obs.x)) < 1e-8
            assert ll == gaussian_path_loglik(mats, obs.x)
            raw = sigma_path(state.latents, state.L)
            if np.linalg.eigvalsh(raw).min() > 1e-6:
                assert abs(log_likelihood(state, obs) - gaussian_path_loglik(raw, obs.x)) < 1e-10

    def test_correct_sharp_beats_vague(self):
        rng = np.random.default_rng(3)
        S = np.array([[1.0, 0.8], [0.8, 1.0]])
        x = rng.standard_normal((500, 2)) @ np.linalg.cholesky(S).T
        obs = ObservationSet(np.arange(500.0), x)
        good = CovariancePath(obs.inputs, np.broadcast_to(S, (500, 2, 2)))
        vague = CovariancePath(obs.inputs, np.broadcast_to(10 * np.eye(2), (500, 2, 2)))
        assert forecast_loglik(good, obs) > forecast_loglik(vague, obs)


SMALL_CONFIG = """
[experiment]
seed = 3
n_train = 30
n_forecast = 5
metrics = mse_historical, mse_forecast, loglik_forecast
output_dir = {out}
timing = no

[data]
kind = periodic2d
n_points = 40
periods = 20, 10, 20

[model:gwp]
type = gwp
kernel = periodic_standard
period = 20
iterations = 40
thinning = 4
condition_iterations = 2
particles = 2

[model:wp]
type = gwp
kernel = ou
iterations = 40
thinning = 4
condition_iterations = 2
particles = 2

[model:mgarch]
type = bekk
restarts = 1
"""


def write_config(tmp_path, text, out="out", name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text.format(out=out), encoding="utf-8")
    return p


class TestConfig:
    def test_parse_small(self, tmp_path):
        cfg = load_config(write_config(tmp_path, SMALL_CONFIG))
        assert [m.name for m in cfg.models] == ["gwp", "wp", "mgarch"]
        gwp, wp, mg = cfg.models
        assert gwp.kernel.family is KernelFamily.PERIODIC_STANDARD and gwp.kernel.period == 20
        assert gwp.sampler.n_iterations == 40 and gwp.sampler.n_burnin == 20
        assert gwp.n_particles == 2 and gwp.condition_iterations == 2
        # the WP baseline is the GWP model with an OU kernel, not separate code
        assert wp.type == "gwp" and wp.kernel.family is KernelFamily.ORNSTEIN_UHLENBECK
        assert mg.type == "bekk" and mg.bekk.n_restarts == 1
        assert cfg.output_dir == os.path.join(str(tmp_path), "out")
        assert cfg.synthetic.periods == (20.0, 10.0, 20.0)
        assert not cfg.timing
        assert len({m.sampler.seed for m in cfg.models[:2]}) == 2

    def test_reseed(self, tmp_path):
        cfg = load_config(write_config(tmp_path, SMALL_CONFIG))
        before = cfg.models[0].sampler.seed
        cfg.reseed(4)
        assert cfg.seed == 4 and cfg.synthetic.seed == 4
        assert cfg.models[0].sampler.seed != before

    def test_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig().validate()
        cfg = ExperimentConfig(models=[ModelConfig(name="a")])
        cfg.validate(291)
        with pytest.raises(ValueError):
            cfg.validate(100)
        for bad in (dict(metrics=("rmse",)), dict(metrics=()), dict(historical_window="some"),
                    dict(n_train=0), dict(models=[ModelConfig(name="a"), ModelConfig(name="a")])):
            c = ExperimentConfig(models=[ModelConfig(name="a")])
            for k, v in bad.items():
                setattr(c, k, v)
            with pytest.raises(ValueError):
                c.validate()

    def test_bad_sections(self):
        parser = configparser.ConfigParser()
        parser.read_string("[data]\nkind = nope\n")
        with pytest.raises(ValueError):
            parse_config(parser)
        parser = configparser.ConfigParser()
        parser.read_string("[data]\nkind = csv\n")
        with pytest.raises(ValueError):
            parse_config(parser)
        parser = configparser.ConfigParser()
        parser.read_string("[model:x]\ntype = lstm\n")
        with pytest.raises(ValueError):
            parse_config(parser)


class TestResultTable:
    def test_round_trip(self, tmp_path):
        t = ResultTable()
        t.add("periodic", "gwp", mse_historical=0.1, mse_forecast=1 / 3, loglik_forecast=-5.0,
              seconds=2.5, status="ok")
        t.add("periodic", "mgarch", status="failed: x")
        t.to_csv(tmp_path / "r.csv")
        back = ResultTable.from_csv(tmp_path / "r.csv")
        assert back.get("gwp")["mse_forecast"] == 1 / 3
        assert back.get("mgarch")["mse_historical"] == NOT_APPLICABLE
        assert list(back.rows[0]) == RESULT_COLUMNS
        with pytest.raises(KeyError):
            back.get("wp")
        assert "gwp" in t.format()


class TestRunExperiment:
    @staticmethod
    @pytest.fixture(scope="class")
    def small_run(tmp_path_factory):
        tmp = tmp_path_factory.mktemp("exp")
        cfg = load_config(write_config(tmp, SMALL_CONFIG))
        return cfg, run_experiment(cfg)

    def test_filled_table_and_artefacts(self, small_run):
        cfg, table = small_run
        for row in table.rows:
            assert row["status"] == "ok"
            for c in ("mse_historical", "mse_forecast", "loglik_forecast"):
                assert isinstance(row[c], float) and math.isfinite(row[c])
            assert row["seconds"] == NOT_APPLICABLE
        out = cfg.output_dir
        for name in ("results.csv", "proxy_results.csv", "plot_data.csv", "report.txt",
                     "returns.csv", "truth.csv", "paths/gwp_historical.csv",
                     "paths/mgarch_forecast.csv"):
            assert os.path.exists(os.path.join(out, name)), name
        fc = CovariancePath.from_csv(os.path.join(out, "paths", "wp_forecast.csv"))
        np.testing.assert_array_equal(fc.inputs, np.arange(31.0, 36.0))
        hist = CovariancePath.from_csv(os.path.join(out, "paths", "gwp_historical.csv"))
        assert len(hist) == 35

    def test_byte_identical_rerun(self, small_run, tmp_path):
        cfg, _ = small_run
        again = load_config(write_config(tmp_path, SMALL_CONFIG, out="again"))
        run_experiment(again)
        cmp = filecmp.dircmp(cfg.output_dir, again.output_dir)
        assert not cmp.diff_files and not cmp.left_only and not cmp.right_only
        sub = cmp.subdirs["paths"]
        assert not sub.diff_files and not sub.left_only and not sub.right_only
        for sub_dir in ("", "paths"):
            left = os.path.join(cfg.output_dir, sub_dir)
            names = [f for f in os.listdir(left) if os.path.isfile(os.path.join(left, f))]
            _, mismatch, errors = filecmp.cmpfiles(left, os.path.join(again.output_dir, sub_dir),
                                                   names, shallow=False)
            assert not errors and not mismatch

    def test_zero_forecast_single_model(self, tmp_path):
        text = SMALL_CONFIG.split("[model:wp]")[0].replace("n_forecast = 5", "n_forecast = 0")
        cfg = load_config(write_config(tmp_path, text))
        row = run_experiment(cfg).get("gwp")
        assert isinstance(row["mse_historical"], float)
        assert row["mse_forecast"] == NOT_APPLICABLE
        assert row["loglik_forecast"] == NOT_APPLICABLE

    def test_dense_grid(self, tmp_path):
        text = SMALL_CONFIG.split("[model:wp]")[0].replace("timing = no",
                                                           "timing = no\ndense_grid = yes")
        cfg = load_config(write_config(tmp_path, text))
        run_experiment(cfg)
        assert os.path.exists(os.path.join(cfg.output_dir, "dense_grid.csv"))
        dense = CovariancePath.from_csv(os.path.join(cfg.output_dir, "paths", "gwp_dense.csv"))
        np.testing.assert_allclose(dense.inputs, np.arange(1.5, 35.0))

    def test_csv_with_gaps(self, tmp_path):
        rng = np.random.default_rng(0)
        t = np.r_[np.arange(20.0), np.arange(25.0, 45.0)]
        lines = ["t,a,b"] + [f"{v},{float(x[0])!r},{float(x[1])!r}" for v, x in zip(t, rng.standard_normal((40, 2)))]
        (tmp_path / "r.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        text = (SMALL_CONFIG.replace("kind = periodic2d", "kind = csv\npath = r.csv\n"
                                     "time_column = t")
                .replace("n_points = 40\nperiods = 20, 10, 20\n", ""))
        cfg = load_config(write_config(tmp_path, text))
        table = run_experiment(cfg)
        row = table.get("mgarch")
        assert row["status"].startswith("failed")
        assert row["mse_historical"] == "failed"
        assert table.get("gwp")["status"] == "ok"
        report = (tmp_path / "out" / "report.txt").read_text()
        assert "training error" in report
        assert not os.path.exists(tmp_path / "out" / "truth.csv")
