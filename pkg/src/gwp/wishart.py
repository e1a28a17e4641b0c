"""Wishart density, the outer-product construction of Sigma(t), and GWP prior draws.

Latent layout
-------------
The latent vector ``u`` of a process with ``N`` inputs, ``D`` dimensions and
``nu`` degrees of freedom has length ``N * D * nu``, ordered time-fastest,
then dimension, then degree of freedom.  ``u.reshape(nu, D, N)[i, d]`` is
the path of latent function ``u_{id}``, and ``u.reshape(nu, D, N)[:, :, n]``
holds the ``nu`` vectors ``u_hat_i(t_n)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import gammaln

from .errors import NotPositiveDefinite, ShapeError
from .kernels import DEFAULT_JITTER, KernelSpec, build_gram


def check_scale_factor(L) -> np.ndarray:
    """Validate a lower-triangular scale factor with positive diagonal."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ShapeError(f"scale factor must be square, got shape {L.shape}")
    if np.any(np.triu(L, 1) != 0):
        raise ValueError("scale factor must be lower triangular")
    if np.any(np.diag(L) <= 0):
        raise ValueError("scale factor must have a positive diagonal")
    return L


def scale_factor_from_covariance(cov, nu: int, jitter: float = DEFAULT_JITTER) -> np.ndarray:
    """``chol(cov / nu)``, the empirical-covariance initialisation of ``L``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float)) / nu
    cov = 0.5 * (cov + cov.T)
    scale = max(float(np.mean(np.diag(cov))), 1.0e-300)
    for eps in (0.0, jitter, 1e-6, 1e-4):
        try:
            return linalg.cholesky(cov + eps * scale * np.eye(len(cov)), lower=True)
        except linalg.LinAlgError:
            continue
    raise NotPositiveDefinite("empirical covariance is degenerate")


def vech(matrix) -> np.ndarray:
    """Column-stacked lower triangle: ``(S11, S21, ..., SD1, S22, ..., SDD)``."""
    matrix = np.asarray(matrix)
    cols, rows = np.triu_indices(matrix.shape[-1])
    return matrix[..., rows, cols]


def unvech(vec, dim: int) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    out = np.zeros(vec.shape[:-1] + (dim, dim))
    cols, rows = np.triu_indices(dim)
    out[..., rows, cols] = vec
    out[..., cols, rows] = vec
    return out


def vech_labels(dim: int) -> list:
    cols, rows = np.triu_indices(dim)
    return [f"s{r + 1}{c + 1}" for r, c in zip(rows, cols)]


@dataclass
class GWPState:
    """One Markov chain state of the Wishart process model."""

    u: np.ndarray
    theta: np.ndarray
    L: np.ndarray
    nu: int
    inputs: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float).ravel()
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        self.L = check_scale_factor(self.L)
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.nu = int(self.nu)
        if self.nu < 1:
            raise ValueError("nu must be at least 1")
        if self.u.size != self.n_inputs * self.dim * self.nu:
            raise ShapeError(
                f"u has length {self.u.size}, expected N*D*nu = "
                f"{self.n_inputs}*{self.dim}*{self.nu}")
        if self.theta.size not in (1, self.dim) or np.any(self.theta <= 0):
            raise ValueError("theta must hold one or D positive length-scales")

    @property
    def n_inputs(self) -> int:
        return len(self.inputs)

    @property
    def dim(self) -> int:
        return self.L.shape[0]

    @property
    def latents(self) -> np.ndarray:
        """View of ``u`` shaped ``(nu, D, N)``."""
        return self.u.reshape(self.nu, self.dim, self.n_inputs)

    def copy(self) -> "GWPState":
        return GWPState(self.u.copy(), self.theta.copy(), self.L.copy(),
                        self.nu, self.inputs.copy())


@dataclass
class CovariancePath:
    """A sequence of ``D x D`` symmetric PSD matrices indexed by inputs."""

    inputs: np.ndarray
    matrices: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        self.matrices = np.asarray(self.matrices, dtype=float)
        if self.matrices.ndim != 3 or self.matrices.shape[1] != self.matrices.shape[2]:
            raise ShapeError(f"matrices must be (N, D, D), got {self.matrices.shape}")
        if len(self.inputs) != len(self.matrices):
            raise ShapeError("inputs and matrices differ in length")
        if self.validate:
            self.check()

    def check(self, tol: float = 1e-10) -> None:
        m = self.matrices
        if len(m) == 0:
            return
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - np.swapaxes(m, 1, 2))) > tol * scale:
            raise ValueError("covariance path contains a non-symmetric matrix")
        lo = float(np.min(np.linalg.eigvalsh(m)))
        if lo < -tol * scale:
            raise NotPositiveDefinite(f"covariance path has eigenvalue {lo:.3g} < 0")

    def __len__(self) -> int:
        return len(self.matrices)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def subset(self, index) -> "CovariancePath":
        return CovariancePath(self.inputs[index], self.matrices[index], validate=False)

    def to_csv(self, path, time_label: str = "t") -> None:
        """One row per input: the input value, then the vech entries."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([time_label] + vech_labels(self.dim))
            for t, row in zip(self.inputs, vech(self.matrices)):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path, validate: bool = True) -> "CovariancePath":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], [r for r in rows[1:] if r]
        k = len(header) - 1
        dim = int(round((np.sqrt(8 * k + 1) - 1) / 2))
        if dim * (dim + 1) // 2 != k:
            raise ShapeError(f"{k} columns is not a vech length")
        data = np.array([[float(v) for v in r] for r in body]).reshape(-1, k + 1)
        return cls(data[:, 0], unvech(data[:, 1:], dim), validate=validate)


def log_multigamma(a: float, dim: int) -> float:
    """``log Gamma_D(a) = D(D-1)/4 log(pi) + sum_j log Gamma(a + (1 - j)/2)``."""
    j = np.arange(1, dim + 1)
    return dim * (dim - 1) / 4.0 * np.log(np.pi) + float(np.sum(gammaln(a + (1 - j) / 2.0)))


def _chol_or_raise(matrix, what):
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefinite(f"{what} is not positive definite") from exc


def wishart_log_density(S, V, nu: float) -> float:
    """Log density of ``W_D(V, nu)`` at ``S``.

    Raises
    ------
    NotPositiveDefinite
        If ``S`` or ``V`` has no Cholesky factor.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    V = np.atleast_2d(np.asarray(V, dtype=float))
    dim = S.shape[0]
    if S.shape != V.shape or S.shape != (dim, dim):
        raise ShapeError("S and V must be square and of equal size")
    if nu <= dim - 1:
        raise ValueError(f"nu must exceed D - 1 = {dim - 1}")
    ls = _chol_or_raise(S, "S")
    lv = _chol_or_raise(V, "V")
    logdet_s = 2.0 * np.sum(np.log(np.diag(ls)))
    logdet_v = 2.0 * np.sum(np.log(np.diag(lv)))
    w = linalg.solve_triangular(lv, ls, lower=True)
    trace = float(np.sum(w * w))  # tr(V^-1 S) = ||Lv^-1 Ls||_F^2
    return float(
        0.5 * (nu - dim - 1) * logdet_s
        - 0.5 * trace
        - 0.5 * nu * dim * np.log(2.0)
        - 0.5 * nu * logdet_v
        - log_multigamma(0.5 * nu, dim)
    )


def build_sigma(u_slice, L) -> np.ndarray:
    """``Sigma = sum_i L u_i u_i^T L^T`` from one time slice of latents.

    ``u_slice`` has length ``D * nu``, dof-major: ``(u_11..u_1D, u_21..u_2D, ...)``.
    """
    L = np.asarray(L, dtype=float)
    dim = L.shape[0]
    u_slice = np.asarray(u_slice, dtype=float)
    if u_slice.size % dim:
        raise ShapeError(f"u slice length {u_slice.size} is not a multiple of D={dim}")
    m = u_slice.reshape(-1, dim) @ L.T
    sigma = m.T @ m
    return 0.5 * (sigma + sigma.T)


def sigma_path(latents, L) -> np.ndarray:
    """Vectorised :func:`build_sigma` over a ``(nu, D, N)`` latent array."""
    m = np.einsum("ij,vjn->vni", L, latents)
    sigma = np.einsum("vni,vnj->nij", m, m)
    return 0.5 * (sigma + np.swapaxes(sigma, 1, 2))


def _psd_factor(K) -> np.ndarray:
    """Square root of a PSD matrix that tolerates rank deficiency."""
    w, Q = linalg.eigh(0.5 * (K + K.T))
    cut = len(w) * np.finfo(float).eps * max(float(w[-1]), 1.0)
    w = np.where(w > cut, w, 0.0)
    return Q * np.sqrt(w)


def sample_gwp_prior(spec: KernelSpec, inputs, L, nu: int, rng_seed=None,
                     jitter: float = DEFAULT_JITTER) -> CovariancePath:
    """Draw ``Sigma(t_n)`` at ``inputs`` from ``GWP(L L^T, nu, k)``.

    ``rng_seed`` may be an integer seed or a ``numpy.random.Generator``.  With
    ``jitter=0`` the Gram matrix is factorised by a clipped eigendecomposition,
    so degenerate kernels (e.g. an effectively constant one) sample exactly.
    """
    rng = np.random.default_rng(rng_seed)
    L = check_scale_factor(L)
    inputs = np.atleast_1d(np.asarray(inputs, dtype=float))
    if len(inputs) < 1:
        raise ValueError("need at least one input")
    if jitter > 0:
        factor = build_gram(spec, inputs, jitter).chol
    else:
        factor = _psd_factor(spec.cross(inputs, inputs))
    z = rng.standard_normal((nu * L.shape[0], len(inputs)))
    latents = (z @ factor.T).reshape(nu, L.shape[0], len(inputs))
    return CovariancePath(inputs, sigma_path(latents, L), validate=False)


def invert_path(path: CovariancePath) -> CovariancePath:
    """Pointwise inverse, mapping a GWP draw to a generalised inverse Wishart draw."""
    out = np.empty_like(path.matrices)
    eye = np.eye(path.dim)
    for n, m in enumerate(path.matrices):
        c = _chol_or_raise(m, f"Sigma at input {path.inputs[n]!r}")
        inv = linalg.cho_solve((c, True), eye)
        out[n] = 0.5 * (inv + inv.T)
    return CovariancePath(path.inputs.copy(), out, validate=False)
