"""Predictive covariance matrices at new inputs and rolling one-step forecasts.

Given the training latents ``u``, each latent function conditions on its own
path only (the joint prior covariance of ``u`` and ``u_*`` is block structured),
so ``u_{id}(t_*) | u ~ N(k^T K^{-1} u_{id}, 1 - k^T K^{-1} k)`` where ``k`` holds
``k(t_*, t_n)`` for the training inputs.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import GWPError
from .inference import (ObservationSet, PosteriorSamples, SamplerConfig, gibbs_chain,
                        run_gibbs)
from .kernels import DEFAULT_JITTER, KernelSpec, build_gram
from .wishart import CovariancePath, GWPState, sigma_path

logger = logging.getLogger(__name__)


class PredictionMode(str, enum.Enum):
    HISTORICAL = "historical"
    FORECAST = "forecast"


class LatentMode(str, enum.Enum):
    """How ``u_*`` enters ``Sigma(t_*)`` for one posterior sample.

    ``MEAN`` plugs in the conditional mean.  ``DRAW`` samples ``u_*`` from its
    conditional.  ``EXPECTED`` returns the exact conditional expectation of
    ``Sigma(t_*)``, i.e. the plug-in value plus ``L diag(nu * var) L^T``, which
    is what averaging infinitely many draws would give.
    """

    MEAN = "mean"
    DRAW = "draw"
    EXPECTED = "expected"


def conditional_moments(state: GWPState, kernel: KernelSpec, test_inputs,
                        jitter: float = DEFAULT_JITTER):
    """Conditional means ``(nu, D, M)`` and variances ``(D, M)`` of the test latents."""
    t_star = np.asarray(test_inputs, dtype=float)
    if t_star.ndim == 0:
        t_star = t_star.reshape(1)
    nu, dim = state.nu, state.dim
    lat = state.latents
    means = np.empty((nu, dim, len(t_star)))
    var = np.empty((dim, len(t_star)))
    shared = state.theta.size == 1
    groups = [(0, list(range(dim)))] if shared else [(d, [d]) for d in range(dim)]
    for g, dims in groups:
        k_spec = kernel.with_lengthscale(state.theta[g])
        gram = build_gram(k_spec, state.inputs, jitter)
        w = gram.whiten(k_spec.cross(state.inputs, t_star))          # (N, M)
        paths = lat[:, dims, :].reshape(-1, state.n_inputs)
        means[:, dims, :] = (gram.whiten(paths.T).T @ w).reshape(nu, len(dims), -1)
        var[dims, :] = 1.0 - np.sum(w * w, axis=0)
    lo = -1e-10
    hi = 1.0 + 10.0 * jitter
    if np.any(var < lo) or np.any(var > hi):
        raise GWPError(f"conditional variance outside [0, 1]: [{var.min():.3g}, {var.max():.3g}]")
    return means, np.clip(var, 0.0, None)


def condition_latents(state: GWPState, t_star, kernel: KernelSpec,
                      jitter: float = DEFAULT_JITTER):
    """Mean and covariance of ``u_*`` (length ``D * nu``, dof-major) at one input.

    The covariance ``I_p - A K_B^{-1} A^T`` is diagonal because each test
    latent depends on a single block of ``u``.
    """
    if state.inputs.ndim == 1:
        point = np.array([float(t_star)])
    else:
        point = np.atleast_2d(np.asarray(t_star, dtype=float))
    means, var = conditional_moments(state, kernel, point, jitter)
    mean = means[:, :, 0].ravel()
    cov = np.diag(np.tile(var[:, 0], state.nu))
    return mean, cov


@dataclass
class PredictiveRequest:
    test_inputs: np.ndarray
    samples: PosteriorSamples
    mode: PredictionMode = PredictionMode.HISTORICAL
    latent_mode: LatentMode = LatentMode.MEAN
    seed: Optional[int] = 0

    def __post_init__(self):
        self.test_inputs = np.atleast_1d(np.asarray(self.test_inputs, dtype=float))
        self.mode = PredictionMode(self.mode)
        self.latent_mode = LatentMode(self.latent_mode)
        if self.test_inputs.size == 0:
            raise ValueError("test_inputs must be non-empty")
        if len(self.samples) == 0:
            raise ValueError("need at least one posterior sample")
        if self.mode is PredictionMode.FORECAST and (
                np.min(self.test_inputs) <= np.max(self.samples.inputs)):
            raise ValueError("forecast inputs must lie after every training input")


def _sample_sigmas(state: GWPState, kernel, jitter, t_star, latent_mode, rng) -> np.ndarray:
    means, var = conditional_moments(state, kernel, t_star, jitter)
    if latent_mode is LatentMode.DRAW:
        means = means + np.sqrt(var)[None] * rng.standard_normal(means.shape)
    sig = sigma_path(means, state.L)
    if latent_mode is LatentMode.EXPECTED:
        # E[u u^T] adds diag(var) per dof; nu dofs share the same variances.
        sig = sig + state.nu * np.einsum("id,dm,jd->mij", state.L, var, state.L)
    return sig


def predict_sigma(request: PredictiveRequest):
    """Posterior-mean covariance path plus one path per posterior sample.

    Returns
    -------
    mean_path : CovariancePath
        Average over posterior samples.
    per_sample : ndarray, shape (S, M, D, D)
    """
    samples = request.samples
    rng = np.random.default_rng(request.seed)
    per_sample = np.stack([
        _sample_sigmas(s, samples.kernel, samples.jitter, request.test_inputs,
                       request.latent_mode, rng)
        for s in samples.states])
    mean = per_sample.mean(axis=0)
    mean = 0.5 * (mean + np.swapaxes(mean, 1, 2))
    return CovariancePath(request.test_inputs.copy(), mean), per_sample


def sample_quantiles(per_sample, q=(2.5, 50.0, 97.5)) -> np.ndarray:
    """Entry-wise percentiles over posterior samples, shape ``(len(q), M, D, D)``."""
    return np.percentile(per_sample, q, axis=0)


def _extend_state(state: GWPState, kernel, jitter, t_new: float, rng) -> GWPState:
    """Append latents at ``t_new``, drawn from their conditional given ``state``."""
    means, var = conditional_moments(state, kernel, [t_new], jitter)
    new = means + np.sqrt(var)[None] * rng.standard_normal(means.shape)
    lat = np.concatenate([state.latents, new], axis=2)
    return GWPState(lat.ravel(), state.theta, state.L, state.nu,
                    np.append(state.inputs, t_new))


def _spread(states: list, count: int) -> list:
    """``count`` states evenly spaced through the retained samples."""
    if count >= len(states):
        return list(states)
    idx = np.linspace(0, len(states) - 1, count).round().astype(int)
    return [states[i] for i in idx]


def one_step_forecast(obs: ObservationSet, spec: KernelSpec, config: SamplerConfig,
                      horizon_count: int, nu: Optional[int] = None, *,
                      samples: Optional[PosteriorSamples] = None,
                      latent_mode: LatentMode = LatentMode.EXPECTED,
                      condition_iterations: int = 10, n_particles: int = 20,
                      refit_every: Optional[int] = None) -> CovariancePath:
    """Forecast ``Sigma(t_{j})`` from data up to ``t_{j-1}`` for the last ``horizon_count`` inputs.

    The model is fitted once on the leading ``N - horizon_count`` observations
    (or ``samples`` is used if given).  The first forecast averages over every
    retained sample.  After that, ``n_particles`` samples spread through the
    posterior are carried forward: at each step a particle's latents are
    extended to the newly revealed input by a conditional draw, then
    ``condition_iterations`` elliptical slice updates absorb the new
    observation with that particle's length-scale and ``L`` held fixed.  Every
    ``refit_every`` steps the length-scale and ``L`` are updated as well.
    """
    n = len(obs)
    n_train = n - horizon_count
    if horizon_count < 1 or n_train < 1:
        raise ValueError(f"cannot hold out {horizon_count} of {n} observations")
    if condition_iterations < 1 or n_particles < 1:
        raise ValueError("condition_iterations and n_particles must be positive")
    latent_mode = LatentMode(latent_mode)
    if samples is None:
        samples = run_gibbs(obs.head(n_train), spec, config, nu)
    rng = np.random.default_rng(None if config.seed is None else config.seed + 7919)
    out = np.empty((horizon_count, obs.dim, obs.dim))

    def forecast(states, t_next):
        sig = [_sample_sigmas(s, spec, config.jitter, [t_next], latent_mode, rng)[0]
               for s in states]
        return np.mean(sig, axis=0)

    out[0] = forecast(samples.states, obs.inputs[n_train])
    particles = _spread(samples.states, n_particles)
    sd = samples.L_proposal_sd if np.isfinite(samples.L_proposal_sd) else config.L_proposal_sd
    for k in range(1, horizon_count):
        j = n_train + k
        refit = refit_every is not None and k % refit_every == 0
        try:
            for p, state in enumerate(particles):
                state = _extend_state(state, spec, config.jitter, obs.inputs[j - 1], rng)
                chain = gibbs_chain(obs.head(j), spec, config, state, rng, condition_iterations,
                                    update_theta=refit and config.update_theta,
                                    update_L=refit and config.update_L, proposal_sd=sd)
                for _, state, _, _, _ in chain:
                    pass
                particles[p] = state
            out[k] = forecast(particles, obs.inputs[j])
        except GWPError as exc:
            raise type(exc)(f"forecast window index {k}: {exc}") from exc
    out = 0.5 * (out + np.swapaxes(out, 1, 2))
    return CovariancePath(obs.inputs[n_train:].copy(), out)
