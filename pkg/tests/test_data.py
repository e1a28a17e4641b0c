import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gwp.data import (CsvConfig, SyntheticSpec, generate_equity_like_path, generate_path,
                      generate_periodic_path, load_returns_csv, periodic_sigma, realized_proxy,
                      simulate_returns, write_returns_csv)
from gwp.errors import InsufficientData, NotPositiveDefinite, ParseError, ShapeError
from gwp.inference import ObservationSet
from gwp.wishart import CovariancePath


class TestPeriodic:
    def test_defaults(self):
        path = generate_periodic_path(SyntheticSpec())
        assert len(path) == 291
        assert path.inputs[0] == 1.0 and path.inputs[-1] == 291.0
        assert np.linalg.eigvalsh(path.matrices).min() >= 0.5 - 1e-12

    def test_eigenvalues_are_scales(self):
        t = np.linspace(0, 300, 97)
        m = periodic_sigma(t)
        s1 = 1 + 0.5 * np.sin(2 * np.pi * t / 40)
        s2 = 1 + 0.5 * np.cos(2 * np.pi * t / 25)
        np.testing.assert_allclose(np.linalg.eigvalsh(m), np.sort(np.c_[s1, s2], axis=1), atol=1e-12)

    def test_off_diagonal_expansion(self):
        t = np.linspace(0, 100, 41)
        s1 = 1 + 0.5 * np.sin(2 * np.pi * t / 40)
        s2 = 1 + 0.5 * np.cos(2 * np.pi * t / 25)
        a = (math.pi / 4) * np.sin(2 * np.pi * t / 60)
        np.testing.assert_allclose(periodic_sigma(t)[:, 0, 1], (s1 - s2) * np.sin(a) * np.cos(a),
                                   atol=1e-14)

    def test_periodicity(self):
        lcm = 600.0  # lcm(40, 25, 60)
        t = np.arange(1.0, 50.0)
        np.testing.assert_allclose(periodic_sigma(t), periodic_sigma(t + lcm), atol=1e-12)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SyntheticSpec(n_points=1)
        with pytest.raises(ValueError):
            SyntheticSpec(amplitude=1.0)
        with pytest.raises(ValueError):
            SyntheticSpec(kind="garch")


class TestEquityLike:
    def test_constant_returns(self):
        x = np.tile([0.5, -1.0], (30, 1))
        path = generate_equity_like_path(ObservationSet(np.arange(30.0), x), 10)
        expected = np.outer([0.5, -1.0], [0.5, -1.0])
        # rank one, so the floor shift applies; otherwise every step is the same matrix
        assert np.max(np.abs(path.matrices - path.matrices[0])) == 0.0
        np.testing.assert_allclose(path.matrices[0], expected, atol=1e-7)

    def test_full_window(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((50, 2))
        path = generate_equity_like_path(ObservationSet(np.arange(50.0), x), 50)
        np.testing.assert_allclose(path.matrices, np.broadcast_to(x.T @ x / 50, (50, 2, 2)), atol=1e-12)

    def test_white_noise_close_to_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1000, 2))
        path = generate_equity_like_path(ObservationSet(np.arange(1000.0), x), 100)
        # a 100-sample covariance has Frobenius sampling error ~0.2-0.25, so the
        # bound is on the typical window; the worst of ~900 windows reaches ~0.45
        err = np.linalg.norm(path.matrices - np.eye(2), axis=(1, 2))
        assert math.sqrt(np.mean(err**2)) < 0.3

    def test_matches_naive_window(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((40, 3))
        path = generate_equity_like_path(ObservationSet(np.arange(40.0), x), 8)
        for n in (7, 20, 39):
            w = x[n - 7:n + 1]
            np.testing.assert_allclose(path.matrices[n], w.T @ w / 8, atol=1e-12)
        assert np.linalg.eigvalsh(path.matrices).min() > 1e-8

    def test_errors(self):
        obs = ObservationSet(np.arange(5.0), np.ones((5, 2)))
        with pytest.raises(InsufficientData):
            generate_equity_like_path(obs, 10)
        with pytest.raises(ValueError):
            generate_equity_like_path(obs, 2)

    def test_generate_path_dispatch(self):
        rng = np.random.default_rng(3)
        obs = ObservationSet(np.arange(100.0), rng.standard_normal((100, 2)))
        path = generate_path(SyntheticSpec(kind="equity", n_points=80, window=20), obs)
        assert len(path) == 80
        with pytest.raises(ValueError):
            generate_path(SyntheticSpec(kind="equity"))


class TestSimulate:
    def test_identity_path(self):
        path = CovariancePath(np.arange(10_000.0), np.broadcast_to(np.eye(2), (10_000, 2, 2)))
        obs = simulate_returns(path, 0)
        cov = obs.x.T @ obs.x / len(obs)
        assert np.max(np.abs(cov - np.eye(2))) < 0.05

    def test_seeded(self):
        path = generate_periodic_path(SyntheticSpec())
        np.testing.assert_array_equal(simulate_returns(path, 4).x, simulate_returns(path, 4).x)
        assert not np.array_equal(simulate_returns(path, 4).x, simulate_returns(path, 5).x)

    def test_proxy_unbiased_for_path(self):
        path = generate_periodic_path(SyntheticSpec(n_points=60))
        acc = np.zeros_like(path.matrices)
        reps = 500
        for r in range(reps):
            acc += realized_proxy(simulate_returns(path, r)).matrices
        # bin over time to tame single-step noise: compare 6-step block means
        est = (acc / reps).reshape(10, 6, 2, 2).mean(axis=1)
        ref = path.matrices.reshape(10, 6, 2, 2).mean(axis=1)
        scale = np.max(np.abs(ref))
        assert np.max(np.abs(est - ref)) / scale < 0.1

    def test_singular_path_rejected(self):
        path = CovariancePath([0.0], [np.zeros((2, 2))])
        with pytest.raises(NotPositiveDefinite):
            simulate_returns(path, 0)


class TestProxy:
    def test_examples(self):
        p = realized_proxy(ObservationSet([0.0, 1.0], [[1.0, 2.0], [0.0, 0.0]]))
        np.testing.assert_array_equal(p.matrices[0], [[1, 2], [2, 4]])
        np.testing.assert_array_equal(p.matrices[1], np.zeros((2, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=4))
    def test_trace_is_squared_norm(self, x):
        p = realized_proxy(ObservationSet([0.0], [x]))
        assert np.trace(p.matrices[0]) == pytest.approx(float(np.dot(x, x)), rel=1e-12, abs=1e-12)


class TestCsv:
    def write(self, tmp_path, text, name="r.csv"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    def test_zeros(self, tmp_path):
        obs = load_returns_csv(self.write(tmp_path, "a,b\n0,0\n0,0\n0,0\n"))
        np.testing.assert_array_equal(obs.x, np.zeros((3, 2)))
        np.testing.assert_array_equal(obs.inputs, [0.0, 1.0, 2.0])

    def test_prices_to_log_returns(self, tmp_path):
        e = math.e
        p = self.write(tmp_path, f"p\n1\n{e!r}\n{e * e!r}\n")
        obs = load_returns_csv(p, CsvConfig(prices=True))
        np.testing.assert_allclose(obs.x[:, 0], [1.0, 1.0], atol=1e-15)
        np.testing.assert_array_equal(obs.inputs, [0.0, 1.0])

    def test_missing_cell_dropped(self, tmp_path, caplog):
        p = self.write(tmp_path, "t,a,b\n0,1,2\n1,,3\n2,4,5\n")
        with caplog.at_level(logging.WARNING):
            obs = load_returns_csv(p, CsvConfig(time_column="t"))
        np.testing.assert_array_equal(obs.inputs, [0.0, 2.0])
        np.testing.assert_array_equal(obs.x, [[1, 2], [4, 5]])
        assert "line 3" in caplog.text

    def test_missing_without_time_column_keeps_gap(self, tmp_path):
        obs = load_returns_csv(self.write(tmp_path, "a\n1\nNA\n3\n"))
        np.testing.assert_array_equal(obs.inputs, [0.0, 2.0])

    def test_dates(self, tmp_path):
        p = self.write(tmp_path, "date,a\n2020-01-01,1\n2020-01-02,2\n2020-01-06,3\n")
        obs = load_returns_csv(p, CsvConfig(time_column="date"))
        np.testing.assert_allclose(obs.inputs, [0.0, 1.0, 5.0])

    def test_parse_error_line(self, tmp_path):
        p = self.write(tmp_path, "a,b\n1,2\n3,abc\n")
        with pytest.raises(ParseError) as info:
            load_returns_csv(p)
        assert info.value.line == 3

    def test_ragged_row(self, tmp_path):
        with pytest.raises(ShapeError):
            load_returns_csv(self.write(tmp_path, "a,b\n1,2\n3\n"))

    def test_bad_header_requests(self, tmp_path):
        p = self.write(tmp_path, "a,b\n1,2\n")
        with pytest.raises(ParseError):
            load_returns_csv(p, CsvConfig(time_column="t"))
        with pytest.raises(ParseError):
            load_returns_csv(p, CsvConfig(columns=["c"]))
        with pytest.raises(ParseError):
            load_returns_csv(self.write(tmp_path, "", "empty.csv"))

    def test_column_selection_and_demean(self, tmp_path):
        p = self.write(tmp_path, "t,a,b,c\n0,1,9,3\n1,3,9,5\n")
        obs = load_returns_csv(p, CsvConfig(time_column="t", columns=["c", "a"], demean=True))
        np.testing.assert_array_equal(obs.x, [[-1, -1], [1, 1]])

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        obs = ObservationSet(np.sort(rng.uniform(0, 10, 25)), rng.standard_normal((25, 3)) * 1e-3)
        write_returns_csv(obs, tmp_path / "rt.csv")
        back = load_returns_csv(tmp_path / "rt.csv", CsvConfig(time_column="t"))
        np.testing.assert_allclose(back.inputs, obs.inputs, atol=1e-12)
        np.testing.assert_allclose(back.x, obs.x, atol=1e-12)
