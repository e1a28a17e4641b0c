"""Stationary kernels with unit variance, Gram matrices and block-diagonal priors.

Every kernel here satisfies ``k(t, t) = 1`` exactly, which the Wishart process
construction requires.  Inputs are real scalars or small real vectors.

The prior over all latent GP values is block diagonal, one ``N x N`` block per
(degree of freedom, dimension) pair.  :class:`BlockDiagonalPrior` keeps the
blocks as a list and factorises each *distinct* block once, so a prior with
``nu * D`` copies of the same Gram matrix costs a single ``O(N^3)`` Cholesky.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .errors import FactorisationFailure

DEFAULT_JITTER = 1e-8
LOG_2PI = np.log(2.0 * np.pi)


class KernelFamily(str, enum.Enum):
    SQUARED_EXPONENTIAL = "se"
    ORNSTEIN_UHLENBECK = "ou"
    PERIODIC_SIN2 = "periodic"
    PERIODIC_STANDARD = "periodic_standard"

    @classmethod
    def parse(cls, name: str) -> "KernelFamily":
        aliases = {
            "squared_exponential": cls.SQUARED_EXPONENTIAL,
            "rbf": cls.SQUARED_EXPONENTIAL,
            "ornstein_uhlenbeck": cls.ORNSTEIN_UHLENBECK,
            "exponential": cls.ORNSTEIN_UHLENBECK,
        }
        key = name.strip().lower()
        if key in aliases:
            return aliases[key]
        return cls(key)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    Parameters
    ----------
    family : KernelFamily
    lengthscale : float
        Positive length-scale, in the units of the inputs.
    period : float
        Only used by ``PERIODIC_STANDARD``: the kernel is
        ``exp(-2 sin^2(pi r / period) / l^2)``.  ``PERIODIC_SIN2`` has a
        fixed period of ``pi``: ``exp(-2 sin^2(r) / l^2)``.
    """

    family: KernelFamily = KernelFamily.SQUARED_EXPONENTIAL
    lengthscale: float = 1.0
    period: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily.parse(self.family)
                           if isinstance(self.family, str) else self.family)
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not np.isfinite(self.period) or self.period <= 0:
            raise ValueError(f"period must be positive, got {self.period}")

    def with_lengthscale(self, lengthscale: float) -> "KernelSpec":
        return replace(self, lengthscale=float(lengthscale))

    def from_distance(self, r):
        """Kernel value as a function of the Euclidean distance ``r >= 0``."""
        r = np.asarray(r, dtype=float)
        l = self.lengthscale
        fam = self.family
        if fam is KernelFamily.SQUARED_EXPONENTIAL:
            return np.exp(-0.5 * r**2 / l**2)
        if fam is KernelFamily.ORNSTEIN_UHLENBECK:
            return np.exp(-r / l)
        if fam is KernelFamily.PERIODIC_SIN2:
            return np.exp(-2.0 * np.sin(r) ** 2 / l**2)
        if fam is KernelFamily.PERIODIC_STANDARD:
            return np.exp(-2.0 * np.sin(np.pi * r / self.period) ** 2 / l**2)
        raise ValueError(f"unknown kernel family {fam!r}")

    def __call__(self, t, t_prime) -> float:
        return evaluate_kernel(self, t, t_prime)

    def cross(self, a, b) -> np.ndarray:
        """Matrix of kernel values between two sets of inputs."""
        return self.from_distance(pairwise_distance(a, b))

    def gram(self, inputs, jitter: float = DEFAULT_JITTER) -> "GramMatrix":
        return build_gram(self, inputs, jitter)


def as_points(inputs) -> np.ndarray:
    """Inputs as an ``(N, q)`` float array; scalars become ``q = 1``."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x[:, None]
    elif x.ndim != 2:
        raise ValueError("inputs must be scalars or vectors")
    return x


def pairwise_distance(a, b) -> np.ndarray:
    a, b = as_points(a), as_points(b)
    if a.shape[1] == 1:
        return np.abs(a - b.T)
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def evaluate_kernel(spec: KernelSpec, t, t_prime) -> float:
    """``k(t, t')`` for a single pair of inputs."""
    d = np.atleast_1d(np.asarray(t, dtype=float) - np.asarray(t_prime, dtype=float))
    return float(spec.from_distance(np.sqrt(np.dot(d, d))))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    """Kernel matrix over ``inputs``; ``values`` excludes the jitter.

    ``chol`` is the lower Cholesky factor of ``values + jitter * I``.
    """

    inputs: np.ndarray
    values: np.ndarray
    jitter: float
    chol: np.ndarray

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def jittered(self) -> np.ndarray:
        return self.values + self.jitter * np.eye(self.n)

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), b, check_finite=False)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def whiten(self, b) -> np.ndarray:
        """``chol^{-1} b``."""
        return linalg.solve_triangular(self.chol, b, lower=True, check_finite=False)


def _cholesky(matrix: np.ndarray, what: str = "matrix") -> np.ndarray:
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=False)
    except (linalg.LinAlgError, ValueError) as exc:
        raise FactorisationFailure(f"Cholesky of {what} failed: {exc}") from exc


def build_gram(spec: KernelSpec, inputs, jitter: float = DEFAULT_JITTER) -> GramMatrix:
    """Gram matrix ``K_ij = k(t_i, t_j)``, factorised with ``jitter`` on the diagonal.

    Raises
    ------
    FactorisationFailure
        If ``K + jitter * I`` is not numerically positive definite, e.g.
        duplicated inputs with zero jitter.
    """
    if jitter < 0:
        raise ValueError("jitter must be nonnegative")
    pts = as_points(inputs)
    values = spec.cross(pts, pts)
    values = 0.5 * (values + values.T)
    np.fill_diagonal(values, 1.0)
    if values.shape[0] == 0:
        chol = np.zeros((0, 0))
    else:
        chol = _cholesky(values + jitter * np.eye(len(pts)), "Gram matrix")
    inputs_out = np.asarray(inputs, dtype=float)
    if inputs_out.ndim == 0:
        inputs_out = inputs_out.reshape(1)
    return GramMatrix(inputs=inputs_out, values=values, jitter=float(jitter), chol=chol)


def block_cholesky(gram_blocks) -> list:
    """Lower Cholesky factors of ``blkdiag(*gram_blocks)``, one per block.

    Blocks may be :class:`GramMatrix` instances (their cached factor is reused)
    or plain SPD arrays.  Repeated objects are factorised once and the same
    factor object is returned for every occurrence.
    """
    cache = {}
    factors = []
    for block in gram_blocks:
        key = id(block)
        if key not in cache:
            if isinstance(block, GramMatrix):
                cache[key] = block.chol
            else:
                cache[key] = _cholesky(np.asarray(block, dtype=float), "block")
        factors.append(cache[key])
    return factors


class BlockDiagonalPrior:
    """Zero-mean Gaussian with block-diagonal covariance ``K_B``.

    ``blocks[j]`` is the Gram matrix of the ``j``-th latent function; the
    latent vector is the concatenation of the per-block vectors, so block ``j``
    owns entries ``j*N:(j+1)*N``.  When every block is the same object the
    prior is *shared*, and sampling/density evaluation batch all blocks through
    one factor.
    """

    def __init__(self, blocks):
        blocks = list(blocks)
        if not blocks:
            raise ValueError("need at least one block")
        sizes = {b.n for b in blocks}
        if len(sizes) != 1:
            raise ValueError("all blocks must have the same size")
        self.blocks = blocks
        self.block_size = sizes.pop()
        self.factors = block_cholesky(blocks)
        self.shared = all(b is blocks[0] for b in blocks)

    @classmethod
    def shared_blocks(cls, gram: GramMatrix, n_blocks: int) -> "BlockDiagonalPrior":
        return cls([gram] * n_blocks)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def dim(self) -> int:
        return self.n_blocks * self.block_size

    def _split(self, u) -> np.ndarray:
        return np.asarray(u, dtype=float).reshape(self.n_blocks, self.block_size)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.n_blocks, self.block_size))
        if self.shared:
            return (self.factors[0] @ z.T).T.ravel()
        return np.concatenate([f @ zj for f, zj in zip(self.factors, z)])

    def logpdf(self, u) -> float:
        """``log N(u; 0, K_B)`` without forming ``K_B``."""
        blocks = self._split(u)
        n = self.block_size
        if n == 0:
            return 0.0
        if self.shared:
            g = self.blocks[0]
            w = g.whiten(blocks.T)
            quad = float(np.sum(w * w))
            logdet = self.n_blocks * g.logdet()
        else:
            quad = 0.0
            logdet = 0.0
            for g, b in zip(self.blocks, blocks):
                w = g.whiten(b)
                quad += float(w @ w)
                logdet += g.logdet()
        return -0.5 * (quad + logdet + self.dim * LOG_2PI)

    def to_dense(self) -> np.ndarray:
        """The full jittered ``K_B``; for tests and small problems only."""
        return linalg.block_diag(*[b.jittered for b in self.blocks])
