"""BEKK(1,1) multivariate GARCH baseline.

    Sigma_t = C C^T + A^T x_{t-1} x_{t-1}^T A + B^T Sigma_{t-1} B

``C`` is lower triangular with a positive diagonal, so every ``Sigma_t`` is
positive definite.  Parameters are estimated by Gaussian maximum likelihood
with a multi-start quasi-Newton search and a soft stationarity penalty.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy import optimize

from .errors import ConvergenceFailure, InsufficientData, ShapeError
from .inference import ObservationSet, gaussian_path_loglik
from .wishart import CovariancePath

logger = logging.getLogger(__name__)

PENALTY_WEIGHT = 1.0e6
PENALTY_RADIUS = 0.999


@dataclass
class BekkParams:
    C: np.ndarray
    A: np.ndarray
    B: np.ndarray
    sigma0: np.ndarray

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.sigma0 = np.atleast_2d(np.asarray(self.sigma0, dtype=float))
        dim = self.C.shape[0]
        for name in ("C", "A", "B", "sigma0"):
            if getattr(self, name).shape != (dim, dim):
                raise ShapeError(f"{name} must be {dim}x{dim}")
        if np.any(np.triu(self.C, 1) != 0) or np.any(np.diag(self.C) <= 0):
            raise ValueError("C must be lower triangular with a positive diagonal")

    @property
    def dim(self) -> int:
        return self.C.shape[0]

    def spectral_radius(self) -> float:
        """``rho(A (x) A + B (x) B)``; below one for a covariance-stationary model."""
        m = np.kron(self.A, self.A) + np.kron(self.B, self.B)
        return float(np.max(np.abs(np.linalg.eigvals(m))))

    def unconditional_covariance(self) -> np.ndarray:
        dim = self.dim
        m = np.kron(self.A.T, self.A.T) + np.kron(self.B.T, self.B.T)
        vec = np.linalg.solve(np.eye(dim * dim) - m, (self.C @ self.C.T).reshape(-1))
        out = vec.reshape(dim, dim)
        return 0.5 * (out + out.T)

    def canonical(self) -> "BekkParams":
        """Representative with nonnegative ``A[0, 0]`` and ``B[0, 0]`` (signs are unidentified)."""
        a = -self.A if self.A[0, 0] < 0 else self.A
        b = -self.B if self.B[0, 0] < 0 else self.B
        return BekkParams(self.C, a, b, self.sigma0)

    def to_csv(self, path) -> None:
        """Rows ``matrix, row, col, value``; matrices row-major in the order C, A, B, sigma0."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["matrix", "row", "col", "value"])
            for name in ("C", "A", "B", "sigma0"):
                m = getattr(self, name)
                for i in range(self.dim):
                    for j in range(self.dim):
                        w.writerow([name, i, j, repr(float(m[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "BekkParams":
        with open(path, newline="") as fh:
            rows = [r for r in list(csv.reader(fh))[1:] if r]
        dim = 1 + max(int(r[1]) for r in rows)
        mats = {k: np.zeros((dim, dim)) for k in ("C", "A", "B", "sigma0")}
        for name, i, j, v in rows:
            mats[name][int(i), int(j)] = float(v)
        return cls(**mats)


@numba.njit(cache=True)
def _filter_kernel(x, C, A, B, sigma0):
    n, dim = x.shape
    out = np.empty((n, dim, dim))
    cc = C @ C.T
    out[0] = sigma0
    for t in range(1, n):
        ax = A.T @ x[t - 1]
        out[t] = cc + np.outer(ax, ax) + B.T @ out[t - 1] @ B
        out[t] = 0.5 * (out[t] + out[t].T)
    return out


@numba.njit(cache=True)
def _negloglik_kernel(x, C, A, B, sigma0):
    """Negative Gaussian log-likelihood of the BEKK recursion; ``inf`` if not PD."""
    n, dim = x.shape
    cc = C @ C.T
    s = sigma0.copy()
    total = 0.0
    for t in range(n):
        if t > 0:
            ax = A.T @ x[t - 1]
            s = cc + np.outer(ax, ax) + B.T @ s @ B
            s = 0.5 * (s + s.T)
        # Cholesky by hand: numba's linalg raises on failure.
        L = np.zeros((dim, dim))
        for i in range(dim):
            for j in range(i + 1):
                acc = s[i, j]
                for k in range(j):
                    acc -= L[i, k] * L[j, k]
                if i == j:
                    if acc <= 0.0 or not np.isfinite(acc):
                        return np.inf
                    L[i, i] = math.sqrt(acc)
                else:
                    L[i, j] = acc / L[j, j]
        z = np.empty(dim)
        for i in range(dim):
            acc = x[t, i]
            for k in range(i):
                acc -= L[i, k] * z[k]
            z[i] = acc / L[i, i]
            total += 2.0 * math.log(L[i, i]) + z[i] * z[i]
    return 0.5 * (total + n * dim * math.log(2.0 * math.pi))


def _check(params: BekkParams, obs: ObservationSet):
    if len(obs) < 1:
        raise InsufficientData("BEKK needs at least one observation")
    if obs.dim != params.dim:
        raise ShapeError(f"params are {params.dim}-dimensional, data {obs.dim}-dimensional")


def bekk_filter(params: BekkParams, obs: ObservationSet) -> CovariancePath:
    """Conditional covariances ``Sigma_1 = sigma0, Sigma_2, ..., Sigma_N``."""
    _check(params, obs)
    mats = _filter_kernel(obs.x, params.C, params.A, params.B, params.sigma0)
    return CovariancePath(obs.inputs.copy(), mats, validate=False)


def bekk_forecast_next(params: BekkParams, obs: ObservationSet) -> np.ndarray:
    """``Sigma_{N+1}`` given all of ``obs``."""
    path = bekk_filter(params, obs)
    ax = params.A.T @ obs.x[-1]
    s = params.C @ params.C.T + np.outer(ax, ax) + params.B.T @ path.matrices[-1] @ params.B
    return 0.5 * (s + s.T)


def bekk_log_likelihood(params: BekkParams, obs: ObservationSet) -> float:
    """``-(ND/2) log 2 pi - 1/2 sum_t [log|Sigma_t| + x_t^T Sigma_t^{-1} x_t]``."""
    return gaussian_path_loglik(bekk_filter(params, obs).matrices, obs.x)


@dataclass
class BekkFitConfig:
    """Optimiser settings for :func:`fit_bekk`.

    ``sigma0`` is ``"empirical"`` (second moment of the data) or
    ``"unconditional"`` (the model-implied stationary covariance, falling back
    to the empirical one when the candidate is not stationary).
    """

    n_restarts: int = 5
    seed: int = 0
    method: str = "L-BFGS-B"
    maxiter: int = 500
    sigma0: str = "empirical"
    min_obs: int = 10


@dataclass
class BekkFitResult:
    params: BekkParams
    loglik: float
    report: dict = field(default_factory=dict)


def _pack(C, A, B) -> np.ndarray:
    dim = C.shape[0]
    rows, cols = np.tril_indices(dim)
    c = C[rows, cols].copy()
    c[rows == cols] = np.log(c[rows == cols])
    return np.concatenate([c, A.ravel(), B.ravel()])


def _unpack(theta, dim):
    rows, cols = np.tril_indices(dim)
    k = rows.size
    C = np.zeros((dim, dim))
    c = np.array(theta[:k], dtype=float)
    diag = rows == cols
    c[diag] = np.exp(np.clip(c[diag], -50.0, 50.0))
    C[rows, cols] = c
    A = np.asarray(theta[k:k + dim * dim], dtype=float).reshape(dim, dim)
    B = np.asarray(theta[k + dim * dim:], dtype=float).reshape(dim, dim)
    return C, A, B


def _penalty(A, B) -> float:
    m = np.kron(A, A) + np.kron(B, B)
    rho = float(np.max(np.abs(np.linalg.eigvals(m))))
    return PENALTY_WEIGHT * max(0.0, rho - PENALTY_RADIUS) ** 2


def _starting_points(cov, dim, n_restarts, rng):
    """Deterministic first start, then jittered diagonal-dominant starts."""
    starts = []
    a0, b0 = math.sqrt(0.05), math.sqrt(0.90)
    for r in range(n_restarts):
        if r == 0:
            a, b = a0, b0
            A = a * np.eye(dim)
            B = b * np.eye(dim)
        else:
            a = rng.uniform(0.1, 0.5)
            b = rng.uniform(0.5, 0.95)
            while a * a + b * b >= 0.995:
                b = rng.uniform(0.5, 0.95)
            A = a * np.eye(dim) + 0.05 * rng.standard_normal((dim, dim))
            B = b * np.eye(dim) + 0.05 * rng.standard_normal((dim, dim))
        target = cov * max(1e-3, 1.0 - a * a - b * b)
        C = np.linalg.cholesky(target + 1e-12 * np.trace(cov) * np.eye(dim))
        starts.append(_pack(C, A, B))
    return starts


def fit_bekk(obs: ObservationSet, config: Optional[BekkFitConfig] = None) -> BekkFitResult:
    """Gaussian maximum likelihood for BEKK(1,1).

    The free parameters are the lower triangle of ``C`` (diagonal in log
    space) and all entries of ``A`` and ``B``.  ``sigma0`` stays at the
    empirical second moment unless ``config.sigma0`` says otherwise.
    Restarts are seeded from ``config.seed`` and the best local optimum wins.

    Raises
    ------
    ConvergenceFailure
        If no restart reaches the log-likelihood of ``A = B = 0`` with
        ``C C^T`` equal to the empirical covariance.
    """
    config = config or BekkFitConfig()
    if len(obs) < config.min_obs:
        raise InsufficientData(f"BEKK fitting needs at least {config.min_obs} observations")
    x = np.ascontiguousarray(obs.x)
    dim = obs.dim
    cov = obs.empirical_covariance()
    cov = 0.5 * (cov + cov.T)
    sigma0 = cov.copy()
    zero = np.zeros((dim, dim))
    c_base = np.linalg.cholesky(cov + 1e-12 * np.trace(cov) * np.eye(dim))
    baseline = -_negloglik_kernel(x, c_base, zero, zero, sigma0)

    scale = float(np.mean(np.diag(cov)))

    def initial_cov(C, A, B):
        if config.sigma0 != "unconditional":
            return sigma0
        try:
            s0 = BekkParams(C, A, B, sigma0).unconditional_covariance()
        except np.linalg.LinAlgError:
            return sigma0
        if np.min(np.linalg.eigvalsh(s0)) <= 0 or _penalty(A, B) > 0:
            return sigma0
        return s0

    def objective(theta):
        C, A, B = _unpack(theta, dim)
        val = _negloglik_kernel(x, C, A, B, initial_cov(C, A, B))
        if not np.isfinite(val):
            return 1e10 * (1.0 + scale)
        return val + _penalty(A, B)

    rng = np.random.default_rng(config.seed)
    starts = _starting_points(cov, dim, config.n_restarts, rng)
    best, attempts = None, []
    for r, start in enumerate(starts):
        res = optimize.minimize(objective, start, method=config.method,
                                options={"maxiter": config.maxiter})
        C, A, B = _unpack(res.x, dim)
        ll = -_negloglik_kernel(x, C, A, B, initial_cov(C, A, B))
        attempts.append({"restart": r, "loglik": float(ll), "success": bool(res.success),
                         "message": str(res.message), "nfev": int(res.nfev)})
        if np.isfinite(ll) and (best is None or ll > best[0]):
            best = (ll, C, A, B)
    if best is None or best[0] < baseline:
        raise ConvergenceFailure(
            f"no restart improved on the A=B=0 baseline loglik {baseline:.4f}")
    ll, C, A, B = best
    params = BekkParams(C, A, B, initial_cov(C, A, B)).canonical()
    rho = params.spectral_radius()
    report = {"baseline_loglik": float(baseline), "restarts": attempts,
              "spectral_radius": rho, "stationary": rho < 1.0,
              "penalty": _penalty(params.A, params.B)}
    logger.info("bekk: loglik %.4f (baseline %.4f), spectral radius %.4f", ll, baseline, rho)
    return BekkFitResult(params=params, loglik=float(ll), report=report)
