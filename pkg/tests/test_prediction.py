import math

import numpy as np
import pytest
from scipy.linalg import block_diag

from gwp.inference import ObservationSet, PosteriorSamples, SamplerConfig, run_gibbs
from gwp.kernels import KernelFamily, KernelSpec
from gwp.prediction import (LatentMode, PredictiveRequest, condition_latents, one_step_forecast,
                            predict_sigma, sample_quantiles)
from gwp.wishart import GWPState, build_sigma


def dense_condition(state, kernel, t_star, jitter):
    """Joint Gaussian over (u, u_*) assembled densely, then conditioned."""
    nu, D, N = state.nu, state.dim, state.n_inputs
    blocks, cross = [], []
    for i in range(nu):
        for d in range(D):
            k = kernel.with_lengthscale(state.theta[0 if state.theta.size == 1 else d])
            K = np.array([[k(a, b) for b in state.inputs] for a in state.inputs])
            blocks.append(K + jitter * np.eye(N))
            cross.append(np.array([k(t_star, b) for b in state.inputs]))
    KB = block_diag(*blocks)
    A = np.zeros((nu * D, nu * D * N))
    for j, row in enumerate(cross):
        A[j, j * N:(j + 1) * N] = row
    mean = A @ np.linalg.solve(KB, state.u)
    cov = np.eye(nu * D) - A @ np.linalg.solve(KB, A.T)
    return mean, cov


def random_state(rng, family, per_dim=False):
    N = int(rng.integers(1, 9))
    D = int(rng.integers(1, 4))
    nu = D + int(rng.integers(0, 2))
    t = np.sort(rng.uniform(0, 10, N))
    theta = rng.uniform(0.3, 3.0, D if per_dim else 1)
    L = np.tril(rng.standard_normal((D, D)))
    L[np.diag_indices(D)] = np.abs(np.diag(L)) + 0.2
    return GWPState(rng.standard_normal(N * D * nu), theta, L, nu, t)


class TestConditionLatents:
    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(0)
        families = list(KernelFamily)
        for k in range(100):
            fam = families[k % len(families)]
            state = random_state(rng, fam, per_dim=bool(k % 3 == 0))
            kernel = KernelSpec(fam, 1.0, period=7.0)
            t_star = rng.uniform(-2, 12)
            mean, cov = condition_latents(state, t_star, kernel, jitter=1e-6)
            m_ref, c_ref = dense_condition(state, kernel, t_star, 1e-6)
            np.testing.assert_allclose(mean, m_ref, atol=1e-8)
            np.testing.assert_allclose(cov, c_ref, atol=1e-8)

    def test_interpolates_training_point(self):
        rng = np.random.default_rng(1)
        t = np.array([0.0, 1.5, 3.0, 4.0])
        state = GWPState(rng.standard_normal(4 * 2 * 3), 1.0, np.eye(2), 3, t)
        mean, cov = condition_latents(state, 1.5, KernelSpec("se", 1.0), jitter=1e-10)
        np.testing.assert_allclose(mean, state.latents[:, :, 1].ravel(), atol=1e-6)
        assert np.max(np.diag(cov)) <= 1e-6

    def test_far_extrapolation_reverts_to_prior(self):
        rng = np.random.default_rng(2)
        state = GWPState(rng.standard_normal(5 * 2 * 3), 1.0, np.eye(2), 3, np.arange(5.0))
        mean, cov = condition_latents(state, 500.0, KernelSpec("se", 1.0))
        np.testing.assert_allclose(mean, 0.0, atol=1e-12)
        np.testing.assert_allclose(cov, np.eye(6), atol=1e-12)


def _posterior(states, kernel=KernelSpec("se", 1.0), jitter=1e-8):
    return PosteriorSamples(states=states, loglik_trace=np.zeros(1), theta_trace=np.ones((1, 1)),
                            L_acceptance_rate=0.3, kernel=kernel, jitter=jitter)


class TestPredictSigma:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.t = np.arange(6.0)
        self.states = []
        for _ in range(40):
            L = np.array([[1.0, 0.0], [0.3, 0.7]]) * rng.uniform(0.8, 1.2)
            self.states.append(GWPState(rng.standard_normal(6 * 2 * 3), 1.2, L, 3, self.t))

    def test_single_sample_at_training_input(self):
        s = self.states[0]
        post = _posterior([s], jitter=1e-10)
        path, per = predict_sigma(PredictiveRequest([2.0], post))
        np.testing.assert_allclose(path.matrices[0], build_sigma(s.latents[:, :, 2].ravel(), s.L),
                                   atol=1e-6)
        assert per.shape == (1, 1, 2, 2)

    def test_far_extrapolation_gives_nu_v(self):
        post = _posterior(self.states)
        target = 3 * np.mean([s.L @ s.L.T for s in self.states], axis=0)
        exp, _ = predict_sigma(PredictiveRequest([1e4], post, latent_mode="expected"))
        np.testing.assert_allclose(exp.matrices[0], target, atol=1e-10)
        draws = np.mean([predict_sigma(PredictiveRequest([1e4], post, latent_mode="draw",
                                                         seed=k))[0].matrices[0]
                         for k in range(200)], axis=0)
        assert np.linalg.norm(draws - target) / np.linalg.norm(target) < 0.1

    def test_draws_average_to_expectation(self):
        post = _posterior(self.states[:3])
        test = [2.5, 6.7]
        exp, _ = predict_sigma(PredictiveRequest(test, post, latent_mode="expected"))
        mean, _ = predict_sigma(PredictiveRequest(test, post, latent_mode="mean"))
        draws = np.mean([predict_sigma(PredictiveRequest(test, post, latent_mode="draw",
                                                         seed=k))[0].matrices
                         for k in range(3000)], axis=0)
        np.testing.assert_allclose(draws, exp.matrices, atol=0.1)
        # the variance correction only ever adds a PSD term
        assert np.all(np.linalg.eigvalsh(exp.matrices - mean.matrices) > -1e-12)

    def test_outputs_are_valid_paths(self):
        post = _posterior(self.states)
        test = np.linspace(-1, 8, 37)
        for mode in LatentMode:
            path, per = predict_sigma(PredictiveRequest(test, post, latent_mode=mode))
            path.check()
            assert per.shape == (40, 37, 2, 2)
        q = sample_quantiles(per)
        assert q.shape == (3, 37, 2, 2)
        assert np.all(q[0] <= q[1]) and np.all(q[1] <= q[2])

    def test_continuity(self):
        post = _posterior(self.states)
        for t0 in (0.3, 2.0, 4.71, 7.5):
            a, _ = predict_sigma(PredictiveRequest([t0], post))
            b, _ = predict_sigma(PredictiveRequest([t0 + 1e-6], post))
            assert np.linalg.norm(a.matrices[0] - b.matrices[0]) < 1e-3

    def test_forecast_mode_validation(self):
        post = _posterior(self.states)
        with pytest.raises(ValueError):
            PredictiveRequest([5.0], post, mode="forecast")
        with pytest.raises(ValueError):
            PredictiveRequest([], post)
        PredictiveRequest([5.5], post, mode="forecast")


class TestOneStepForecast:
    @staticmethod
    @pytest.fixture(scope="class")
    def constant_obs():
        rng = np.random.default_rng(20)
        sigma = np.array([[1.0, 0.3], [0.3, 0.5]])
        x = rng.standard_normal((215, 2)) @ np.linalg.cholesky(sigma).T
        return ObservationSet(np.arange(215.0), x)

    def test_single_step_is_fit_then_predict(self, constant_obs):
        spec = KernelSpec("se", 1.0)
        cfg = SamplerConfig(n_iterations=80, thinning=4, seed=2)
        obs = constant_obs.head(60)
        post = run_gibbs(obs.head(59), spec, cfg)
        direct, _ = predict_sigma(PredictiveRequest([59.0], post, mode="forecast",
                                                    latent_mode="expected"))
        rolled = one_step_forecast(obs, spec, cfg, 1)
        np.testing.assert_array_equal(rolled.inputs, [59.0])
        np.testing.assert_allclose(rolled.matrices, direct.matrices, atol=1e-12)

    def test_constant_data_gives_flat_forecasts(self, constant_obs):
        spec = KernelSpec("se", 1.0)
        cfg = SamplerConfig(n_iterations=400, seed=4, theta_prior_mean_log=math.log(1000.0),
                            theta_prior_sd_log=0.3)
        path = one_step_forecast(constant_obs, spec, cfg, 15)
        m = path.matrices
        dev = np.linalg.norm(m - m.mean(axis=0), axis=(1, 2)) / np.linalg.norm(m.mean(axis=0))
        assert dev.max() < 0.15
        path.check()

    def test_rejects_bad_horizon(self, constant_obs):
        with pytest.raises(ValueError):
            one_step_forecast(constant_obs, KernelSpec("se", 1.0), SamplerConfig(), 215)
