"""Gibbs sampling for the generalised Wishart process.

One Gibbs cycle updates, in order,

* the latent GP values ``u`` by elliptical slice sampling against the
  block-diagonal prior ``N(0, K_B)``,
* the kernel length-scale(s) by axis-aligned slice sampling on ``log l``
  targeting ``p(u | l) p(l)`` with a lognormal prior,
* the scale factor ``L`` by random-walk Metropolis-Hastings.

The degrees of freedom ``nu`` stay fixed (``D + 1`` unless told otherwise) and
observations are zero-mean Gaussian given ``Sigma(t_n)``.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import FactorisationFailure, NotPositiveDefinite, SamplerStall, ShapeError
from .kernels import (DEFAULT_JITTER, LOG_2PI, BlockDiagonalPrior, KernelFamily,
                      KernelSpec, build_gram)
from .wishart import GWPState, scale_factor_from_covariance, sigma_path

logger = logging.getLogger(__name__)

MAX_SLICE_STEPS = 100_000


@dataclass
class ObservationSet:
    """``N`` zero-mean observations ``x(t_n)`` of dimension ``D``."""

    inputs: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.x = x
        if x.ndim != 2 or len(x) != len(self.inputs):
            raise ShapeError(f"x must be (N, D) with N={len(self.inputs)}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("observations must be finite; drop missing rows first")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def head(self, n: int) -> "ObservationSet":
        return ObservationSet(self.inputs[:n], self.x[:n])

    def subset(self, index) -> "ObservationSet":
        return ObservationSet(self.inputs[index], self.x[index])

    def empirical_covariance(self) -> np.ndarray:
        """Second moment about zero, ``X^T X / N``."""
        return self.x.T @ self.x / max(len(self.x), 1)


def gaussian_path_loglik(matrices, x, jitter: float = 1e-10) -> float:
    """``sum_n log N(x_n; 0, Sigma_n)`` via per-step Cholesky factors.

    If a factorisation fails, ``jitter * I`` is added once before giving up.

    Raises
    ------
    NotPositiveDefinite
    """
    matrices = np.asarray(matrices, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if matrices.shape[0] != x.shape[0] or matrices.shape[1] != x.shape[1]:
        raise ShapeError(f"{matrices.shape} covariances vs {x.shape} observations")
    n, dim = x.shape
    if n == 0:
        return 0.0
    try:
        chol = np.linalg.cholesky(matrices)
    except np.linalg.LinAlgError:
        try:
            chol = np.linalg.cholesky(matrices + jitter * np.eye(dim))
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("a covariance matrix is not positive definite") from exc
    diag = np.diagonal(chol, axis1=1, axis2=2)
    if dim == 1:
        z = x[:, 0] / chol[:, 0, 0]
        quad = z * z
    else:
        z = np.linalg.solve(chol, x[:, :, None])[:, :, 0]
        quad = np.sum(z * z, axis=1)
    return float(-0.5 * (n * dim * LOG_2PI + np.sum(quad)) - np.sum(np.log(diag)))


def log_likelihood(state: GWPState, obs: ObservationSet) -> float:
    """Gaussian log-likelihood of ``obs`` given ``Sigma(t_n)`` built from ``state``."""
    if state.n_inputs != len(obs) or state.dim != obs.dim:
        raise ShapeError("state and observations disagree on N or D")
    if not np.array_equal(state.inputs, obs.inputs):
        raise ShapeError("state and observations have different inputs")
    return gaussian_path_loglik(sigma_path(state.latents, state.L), obs.x)


@dataclass(frozen=True)
class LogNormalPrior:
    """``log l ~ N(mean_log, sd_log^2)``."""

    mean_log: float = 0.0
    sd_log: float = 1.5

    def __post_init__(self):
        if not self.sd_log > 0:
            raise ValueError("sd_log must be positive")

    def logpdf_log(self, log_value: float) -> float:
        """Density of ``log l`` (already includes the Jacobian of the log map)."""
        z = (log_value - self.mean_log) / self.sd_log
        return -0.5 * z * z - math.log(self.sd_log) - 0.5 * LOG_2PI

    def logpdf(self, value: float) -> float:
        return self.logpdf_log(math.log(value)) - math.log(value)

    def sample(self, rng, size=None):
        return np.exp(self.mean_log + self.sd_log * rng.standard_normal(size))


@dataclass
class SamplerConfig:
    """Settings for :func:`run_gibbs`.

    ``n_burnin`` defaults to half the iterations.  ``theta_prior_mean_log``
    defaults to ``log(median input spacing * N / 4)``.  During burn-in the
    proposal scale for ``L`` is tuned towards 20-40% acceptance when
    ``adapt_L_proposal`` is set; it is frozen afterwards.  ``whitened_theta``
    adds a second length-scale move per cycle that keeps the whitened latents
    fixed instead of ``u``; ``ess_steps`` repeats the latent update.
    """

    n_iterations: int = 2000
    n_burnin: Optional[int] = None
    thinning: int = 10
    theta_prior_mean_log: Optional[float] = None
    theta_prior_sd_log: float = 1.5
    L_proposal_sd: float = 0.05
    L_prior_sd: float = 1.0
    seed: Optional[int] = 0
    adapt_L_proposal: bool = True
    per_dimension_theta: bool = False
    update_theta: bool = True
    update_L: bool = True
    theta_init: Optional[float] = None
    slice_width: float = 1.0
    ess_steps: int = 1
    whitened_theta: bool = True
    jitter: float = DEFAULT_JITTER

    def __post_init__(self):
        if self.n_burnin is None:
            self.n_burnin = self.n_iterations // 2
        if self.n_iterations < 1:
            raise ValueError("n_iterations must be positive")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ValueError("n_burnin must lie in [0, n_iterations)")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if min(self.theta_prior_sd_log, self.L_proposal_sd, self.L_prior_sd) <= 0:
            raise ValueError("all standard deviations must be positive")
        if self.ess_steps < 1:
            raise ValueError("ess_steps must be >= 1")

    def theta_prior(self, inputs, kernel: Optional[KernelSpec] = None) -> LogNormalPrior:
        if self.theta_prior_mean_log is not None:
            return LogNormalPrior(self.theta_prior_mean_log, self.theta_prior_sd_log)
        return LogNormalPrior(default_theta_mean_log(inputs, kernel), self.theta_prior_sd_log)


def default_theta_mean_log(inputs, kernel: Optional[KernelSpec] = None) -> float:
    """``log(median spacing * N / 4)``; zero for periodic kernels, whose length-scale is unitless."""
    if kernel is not None and kernel.family in (KernelFamily.PERIODIC_SIN2,
                                                KernelFamily.PERIODIC_STANDARD):
        return 0.0
    t = np.sort(np.asarray(inputs, dtype=float).ravel())
    gaps = np.diff(t)
    gaps = gaps[gaps > 0]
    spacing = float(np.median(gaps)) if gaps.size else 1.0
    return math.log(spacing * max(len(t), 1) / 4.0)


@dataclass
class PosteriorSamples:
    """Retained Gibbs states plus per-iteration diagnostics."""

    states: list
    loglik_trace: np.ndarray
    theta_trace: np.ndarray
    L_acceptance_rate: float
    kernel: KernelSpec
    jitter: float = DEFAULT_JITTER
    L_proposal_sd: float = float("nan")
    iterations: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __len__(self) -> int:
        return len(self.states)

    @property
    def inputs(self) -> np.ndarray:
        return self.states[0].inputs

    @property
    def nu(self) -> int:
        return self.states[0].nu

    @property
    def dim(self) -> int:
        return self.states[0].dim

    def save(self, directory) -> None:
        """Write ``traces.csv``, ``u.npy``, ``L.csv``, ``theta.csv``, ``inputs.csv``, ``meta.json``."""
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "traces.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            m = self.theta_trace.shape[1]
            w.writerow(["iteration", "loglik"] + [f"theta{j + 1}" for j in range(m)])
            for it, (ll, th) in enumerate(zip(self.loglik_trace, self.theta_trace)):
                w.writerow([it, repr(float(ll))] + [repr(float(v)) for v in th])
        np.save(os.path.join(directory, "u.npy"), np.stack([s.u for s in self.states]))
        rows, cols = np.tril_indices(self.dim)
        with open(os.path.join(directory, "L.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample"] + [f"L{r + 1}{c + 1}" for r, c in zip(rows, cols)])
            for k, s in enumerate(self.states):
                w.writerow([k] + [repr(float(v)) for v in s.L[rows, cols]])
        with open(os.path.join(directory, "theta.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample"] + [f"theta{j + 1}" for j in range(self.states[0].theta.size)])
            for k, s in enumerate(self.states):
                w.writerow([k] + [repr(float(v)) for v in s.theta])
        np.savetxt(os.path.join(directory, "inputs.csv"), self.inputs, delimiter=",",
                   fmt="%.17g")
        meta = {
            "nu": self.nu,
            "dim": self.dim,
            "n_inputs": len(self.inputs),
            "kernel": {"family": self.kernel.family.value,
                       "lengthscale": self.kernel.lengthscale,
                       "period": self.kernel.period},
            "jitter": self.jitter,
            "L_acceptance_rate": self.L_acceptance_rate,
            "L_proposal_sd": self.L_proposal_sd,
            "iterations": [int(i) for i in self.iterations],
        }
        with open(os.path.join(directory, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory) -> "PosteriorSamples":
        with open(os.path.join(directory, "meta.json")) as fh:
            meta = json.load(fh)
        dim, nu = meta["dim"], meta["nu"]
        inputs = np.atleast_1d(np.loadtxt(os.path.join(directory, "inputs.csv"), delimiter=","))
        u = np.load(os.path.join(directory, "u.npy"))
        Ls = _read_numeric_csv(os.path.join(directory, "L.csv"))[:, 1:]
        thetas = _read_numeric_csv(os.path.join(directory, "theta.csv"))[:, 1:]
        traces = _read_numeric_csv(os.path.join(directory, "traces.csv"))
        rows, cols = np.tril_indices(dim)
        states = []
        for uk, lk, tk in zip(u, Ls, thetas):
            L = np.zeros((dim, dim))
            L[rows, cols] = lk
            states.append(GWPState(uk, tk, L, nu, inputs))
        k = meta["kernel"]
        return cls(states=states, loglik_trace=traces[:, 1], theta_trace=traces[:, 2:],
                   L_acceptance_rate=meta["L_acceptance_rate"],
                   kernel=KernelSpec(KernelFamily(k["family"]), k["lengthscale"], k["period"]),
                   jitter=meta["jitter"], L_proposal_sd=meta["L_proposal_sd"],
                   iterations=np.asarray(meta["iterations"], dtype=int))


def _read_numeric_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r] for r in rows if r], dtype=float)


def ess_update(u, prior: BlockDiagonalPrior, loglik: Callable, rng,
               current_loglik: Optional[float] = None, max_steps: int = MAX_SLICE_STEPS):
    """One elliptical slice sampling transition.

    Returns the new state and its log-likelihood.  The bracket on the ellipse
    angle shrinks towards the current point, so the loop ends with probability
    one; ``max_steps`` shrinkages raise :class:`SamplerStall`.
    """
    u = np.asarray(u, dtype=float)
    if current_loglik is None:
        current_loglik = loglik(u)
    nu = prior.sample(rng)
    log_y = current_loglik + math.log(rng.uniform())
    phi = rng.uniform(0.0, 2.0 * math.pi)
    lo, hi = phi - 2.0 * math.pi, phi
    for _ in range(max_steps):
        proposal = u * math.cos(phi) + nu * math.sin(phi)
        ll = loglik(proposal)
        if ll > log_y:
            return proposal, ll
        if phi < 0.0:
            lo = phi
        else:
            hi = phi
        phi = rng.uniform(lo, hi)
    raise SamplerStall(f"elliptical slice sampler did not accept after {max_steps} shrinks")


def slice_sample_1d(x0: float, logp: Callable, rng, width: float = 1.0,
                    max_step_out: int = 50, max_shrink: int = MAX_SLICE_STEPS,
                    current_logp: Optional[float] = None):
    """Univariate slice sampling with stepping out and shrinkage (Neal 2003)."""
    fx = logp(x0) if current_logp is None else current_logp
    log_y = fx + math.log(rng.uniform())
    left = x0 - width * rng.uniform()
    right = left + width
    j = int(math.floor(max_step_out * rng.uniform()))
    k = max_step_out - 1 - j
    while j > 0 and logp(left) > log_y:
        left -= width
        j -= 1
    while k > 0 and logp(right) > log_y:
        right += width
        k -= 1
    for _ in range(max_shrink):
        x1 = left + (right - left) * rng.uniform()
        f1 = logp(x1)
        if f1 > log_y:
            return x1, f1
        if x1 < x0:
            left = x1
        else:
            right = x1
    raise SamplerStall(f"slice sampler did not accept after {max_shrink} shrinks")


def latent_log_prior(latents, gram) -> float:
    """``sum_b log N(latents[b]; 0, K)`` for a stack of paths sharing one Gram matrix."""
    latents = np.asarray(latents, dtype=float).reshape(-1, gram.n)
    if latents.size == 0:
        return 0.0
    w = gram.whiten(latents.T)
    nb = latents.shape[0]
    return -0.5 * (float(np.sum(w * w)) + nb * gram.logdet() + nb * gram.n * LOG_2PI)


def slice_update_theta(theta, u, prior: LogNormalPrior, gram_builder: Callable, rng,
                       width: float = 1.0):
    """Axis-aligned slice sampling of the length-scales on the log scale.

    Parameters
    ----------
    theta : array_like
        One shared length-scale, or one per dimension.
    u : ndarray, shape (nu, D, N)
        Latent paths.  With a shared length-scale every path enters the
        target; otherwise axis ``d`` only sees ``u[:, d]``.
    prior : LogNormalPrior
    gram_builder : callable
        ``gram_builder(lengthscale) -> GramMatrix`` over the training inputs.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    u = np.asarray(u, dtype=float)
    if u.ndim != 3:
        raise ShapeError("u must be shaped (nu, D, N)")
    if theta.size not in (1, u.shape[1]):
        raise ShapeError("theta must hold one or D length-scales")
    for axis in range(theta.size):
        paths = u if theta.size == 1 else u[:, axis]

        def logp(log_l, paths=paths):
            lp = prior.logpdf_log(log_l)
            if paths.size == 0:
                return lp
            try:
                gram = gram_builder(math.exp(log_l))
            except (FactorisationFailure, OverflowError):
                return -math.inf
            return lp + latent_log_prior(paths, gram)

        new_log, _ = slice_sample_1d(math.log(theta[axis]), logp, rng, width=width)
        theta[axis] = math.exp(new_log)
    return theta


def whitened_update_theta(theta, u, prior: LogNormalPrior, gram_builder: Callable,
                          loglik: Callable, rng, width: float = 1.0,
                          current_loglik: Optional[float] = None):
    """Slice sampling of ``log l`` with the whitened latents ``chol(K_l)^{-1} u`` held fixed.

    Moving the length-scale drags ``u`` along, so the target is the data
    likelihood times the length-scale prior.  This complements
    :func:`slice_update_theta`, whose conditional ``p(l | u)`` is very narrow
    when ``u`` is long and smooth.  Returns ``(theta, u, loglik)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float)).copy()
    lat = np.array(u, dtype=float, copy=True)
    nu, dim, n = lat.shape
    ll = loglik(lat) if current_loglik is None else current_loglik
    for axis in range(theta.size):
        dims = list(range(dim)) if theta.size == 1 else [axis]
        white = gram_builder(theta[axis]).whiten(lat[:, dims, :].reshape(-1, n).T)

        def moved(log_l, white=white, dims=dims):
            gram = gram_builder(math.exp(log_l))
            out = lat.copy()
            out[:, dims, :] = (gram.chol @ white).T.reshape(nu, len(dims), n)
            return out

        def logp(log_l):
            try:
                return prior.logpdf_log(log_l) + loglik(moved(log_l))
            except (FactorisationFailure, OverflowError):
                return -math.inf

        cur = prior.logpdf_log(math.log(theta[axis])) + ll
        new_log, new_lp = slice_sample_1d(math.log(theta[axis]), logp, rng, width=width,
                                          current_logp=cur)
        theta[axis] = math.exp(new_log)
        lat = moved(new_log)
        ll = new_lp - prior.logpdf_log(new_log)
    return theta, lat, ll


def _safe_loglik(latents, L, x) -> float:
    try:
        return gaussian_path_loglik(sigma_path(latents, L), x)
    except NotPositiveDefinite:
        return -math.inf


def mh_update_L(L, u, obs: ObservationSet, nu: int, proposal_sd: float, prior_sd: float,
                rng, current_loglik: Optional[float] = None):
    """Random-walk Metropolis-Hastings step on the free entries of ``L``.

    Off-diagonal entries take Gaussian steps; the diagonal steps in log space,
    which keeps it positive and contributes ``sum log(L'_dd / L_dd)`` to the
    Hastings ratio.  The prior is ``N(0, prior_sd^2)`` on every free entry.

    Returns ``(L_new, accepted, loglik_new)``.
    """
    L = np.asarray(L, dtype=float)
    dim = L.shape[0]
    latents = np.asarray(u, dtype=float).reshape(nu, dim, len(obs))
    if current_loglik is None:
        current_loglik = _safe_loglik(latents, L, obs.x)
    rows, cols = np.tril_indices(dim, -1)
    prop = np.zeros_like(L)
    prop[rows, cols] = L[rows, cols] + proposal_sd * rng.standard_normal(rows.size)
    diag = np.diag(L)
    new_diag = diag * np.exp(proposal_sd * rng.standard_normal(dim))
    prop[np.diag_indices(dim)] = new_diag
    free = np.tril_indices(dim)
    log_prior_diff = -0.5 * (np.sum(prop[free] ** 2) - np.sum(L[free] ** 2)) / prior_sd**2
    log_jac = float(np.sum(np.log(new_diag) - np.log(diag)))
    new_ll = _safe_loglik(latents, prop, obs.x)
    log_ratio = new_ll - current_loglik + log_prior_diff + log_jac
    if math.log(rng.uniform()) < log_ratio:
        return prop, True, new_ll
    return L.copy(), False, current_loglik


class _GramCache:
    """Memoises Gram matrices by length-scale within one chain."""

    def __init__(self, spec: KernelSpec, inputs, jitter: float, size: int = 64):
        self.spec, self.inputs, self.jitter = spec, inputs, jitter
        self._cache = {}
        self._size = size

    def __call__(self, lengthscale: float):
        key = float(lengthscale)
        gram = self._cache.get(key)
        if gram is None:
            if len(self._cache) >= self._size:
                self._cache.pop(next(iter(self._cache)))
            gram = build_gram(self.spec.with_lengthscale(key), self.inputs, self.jitter)
            self._cache[key] = gram
        return gram


def latent_prior(theta, grams: Callable, nu: int, dim: int) -> BlockDiagonalPrior:
    """``K_B`` for ``nu * dim`` latent paths; block ``i*dim + d`` uses ``theta[d]``."""
    theta = np.atleast_1d(theta)
    if theta.size == 1:
        return BlockDiagonalPrior.shared_blocks(grams(theta[0]), nu * dim)
    per_dim = [grams(theta[d]) for d in range(dim)]
    return BlockDiagonalPrior([per_dim[d] for _ in range(nu) for d in range(dim)])


def initial_state(obs: ObservationSet, spec: KernelSpec, config: SamplerConfig, nu: int,
                  rng) -> GWPState:
    """``L = chol(empirical covariance / nu)``, ``theta`` at the prior median, ``u`` from the prior."""
    dim = obs.dim
    L = scale_factor_from_covariance(obs.empirical_covariance(), nu, config.jitter)
    prior = config.theta_prior(obs.inputs, spec)
    l0 = config.theta_init if config.theta_init is not None else math.exp(prior.mean_log)
    theta = np.full(dim if config.per_dimension_theta else 1, float(l0))
    grams = _GramCache(spec, obs.inputs, config.jitter)
    u = latent_prior(theta, grams, nu, dim).sample(rng)
    return GWPState(u, theta, L, nu, obs.inputs)


def gibbs_chain(obs: ObservationSet, spec: KernelSpec, config: SamplerConfig,
                state: GWPState, rng, n_iterations: int, *, update_theta: bool = True,
                update_L: bool = True, burnin: int = 0, thinning: int = 1,
                proposal_sd: Optional[float] = None, adapt: bool = False,
                keep: Optional[Callable] = None):
    """Run Gibbs cycles from ``state``.

    Yields ``(iteration, state, loglik, accepted, L_proposal_sd)`` per cycle.

    Shared by :func:`run_gibbs` and the rolling forecaster, which conditions on
    a growing data set with the hyperparameters held fixed.
    """
    nu, dim, n = state.nu, state.dim, len(obs)
    grams = _GramCache(spec, obs.inputs, config.jitter)
    prior = config.theta_prior(obs.inputs, spec)
    theta = state.theta.copy()
    L = state.L.copy()
    u = state.u.copy()
    sd = config.L_proposal_sd if proposal_sd is None else proposal_sd

    def loglik_u(v, L_=None):
        return _safe_loglik(v.reshape(nu, dim, n), L if L_ is None else L_, obs.x)

    ll = loglik_u(u)
    window_accepts = 0
    for it in range(n_iterations):
        prior_u = latent_prior(theta, grams, nu, dim)
        for _ in range(config.ess_steps):
            u, ll = ess_update(u, prior_u, loglik_u, rng, current_loglik=ll)
        if update_theta:
            theta = slice_update_theta(theta, u.reshape(nu, dim, n), prior, grams, rng,
                                       width=config.slice_width)
            if config.whitened_theta:
                theta, lat, ll = whitened_update_theta(
                    theta, u.reshape(nu, dim, n), prior, grams,
                    lambda v: _safe_loglik(v, L, obs.x), rng, width=config.slice_width,
                    current_loglik=ll)
                u = lat.ravel()
        accepted = False
        if update_L:
            L, accepted, ll = mh_update_L(L, u, obs, nu, sd, config.L_prior_sd, rng,
                                          current_loglik=ll)
            window_accepts += accepted
            if adapt and it < burnin and (it + 1) % 50 == 0:
                rate = window_accepts / 50.0
                if rate < 0.2:
                    sd *= 0.7
                elif rate > 0.4:
                    sd *= 1.3
                window_accepts = 0
        yield it, GWPState(u, theta.copy(), L.copy(), nu, obs.inputs), ll, accepted, sd


def run_gibbs(obs: ObservationSet, spec: KernelSpec, config: SamplerConfig,
              nu: Optional[int] = None, initial: Optional[GWPState] = None) -> PosteriorSamples:
    """Sample ``p(u, theta, L | data)`` with ``nu`` fixed (default ``D + 1``)."""
    if len(obs) < 1:
        raise ValueError("need at least one observation")
    nu = obs.dim + 1 if nu is None else int(nu)
    rng = np.random.default_rng(config.seed)
    state = initial if initial is not None else initial_state(obs, spec, config, nu, rng)
    m = state.theta.size
    loglik_trace = np.empty(config.n_iterations)
    theta_trace = np.empty((config.n_iterations, m))
    kept, kept_iters = [], []
    accepts_after_burnin = 0
    sd = config.L_proposal_sd
    chain = gibbs_chain(obs, spec, config, state, rng, config.n_iterations,
                        update_theta=config.update_theta, update_L=config.update_L,
                        burnin=config.n_burnin, adapt=config.adapt_L_proposal)
    it = -1
    try:
        for it, st, ll, accepted, sd in chain:
            loglik_trace[it] = ll
            theta_trace[it] = st.theta
            if it >= config.n_burnin:
                accepts_after_burnin += accepted
                if (it - config.n_burnin) % config.thinning == 0:
                    kept.append(st)
                    kept_iters.append(it)
    except (SamplerStall, FactorisationFailure) as exc:
        raise type(exc)(f"iteration {it + 1}: {exc}") from exc
    n_post = config.n_iterations - config.n_burnin
    rate = accepts_after_burnin / n_post if config.update_L else float("nan")
    logger.info("gibbs: %d iterations, %d kept, L acceptance %.2f, final theta %s",
                config.n_iterations, len(kept), rate, np.array2string(theta_trace[-1]))
    return PosteriorSamples(states=kept, loglik_trace=loglik_trace, theta_trace=theta_trace,
                            L_acceptance_rate=rate, kernel=spec, jitter=config.jitter,
                            L_proposal_sd=sd, iterations=np.asarray(kept_iters, dtype=int))
