"""Differentiable reordering: node scores to a near-permutation matrix.

Training path::

    scores --(Gaussian noise)--> pairwise "ranked above" probabilities
           --> per-node rank mean/variance --> rank distribution P_hat
           --(Gumbel noise, log-space Sinkhorn)--> doubly stochastic P
           --> P A P^T

Inference never runs Sinkhorn: scores are sorted in descending order.
Positions are 0-based; position ``i`` covers the window ``(i-0.5, i+0.5)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .sparse import Permutation, SparseSymMatrix

DENSE_MAX_N = 512


@dataclass(frozen=True)
class GumbelSinkhornConfig:
    tau: float = 0.1
    n_iters: int = 20
    eps: float = 1e-6
    sigma: float = 0.001
    noise_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")
        if not (0 < self.eps <= 1e-3):
            raise ValueError("eps must lie in (0, 1e-3]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass
class RankDistribution:
    P_hat: Tensor
    mu: Tensor
    var: Tensor


def _column(Y) -> Tensor:
    Y = ad.as_tensor(Y)
    if Y.value.ndim == 1:
        Y = ad.reshape(Y, (-1, 1))
    if Y.value.ndim != 2 or Y.shape[1] != 1:
        raise ValueError(f"scores must be a vector, got shape {Y.shape}")
    if not np.all(np.isfinite(Y.value)):
        raise NonFiniteError("scores contain non-finite values")
    return Y


def pairwise_probs(Y, sigma: float) -> Tensor:
    """``p[v, u] = Pr(Y_v + noise > Y_u + noise) = Phi((Y_v - Y_u) / (sqrt(2) sigma))``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    Y = _column(Y)
    diff = Y - ad.transpose(Y)
    return ad.normal_cdf(diff * (1.0 / (np.sqrt(2.0) * sigma)))


def rank_moments(p, eps: float = 1e-6) -> tuple[Tensor, Tensor]:
    """Mean and variance of each node's rank, summing over ``v != u``.

    ``mu[u]`` is the expected number of nodes ranked above ``u``.  Returned
    variances are floored at ``eps**2``; the unfloored values are exact sums.
    """
    p = ad.as_tensor(p)
    n = p.shape[0]
    off = 1.0 - np.eye(n)
    p_off = p * off
    ones_row = np.ones((1, n))
    mu = ad.transpose(ad.matmul(ones_row, p_off))
    var = ad.transpose(ad.matmul(ones_row, p_off * (1.0 - p) * off))
    return mu, ad.clamp_min(var, eps * eps)


def rank_distribution(mu, var) -> RankDistribution:
    """``P_hat[u, i] = Pr(i - 0.5 < R_u < i + 0.5)`` with ``R_u ~ N(mu_u, var_u)``."""
    mu, var = _column(mu), _column(var)
    n = mu.shape[0]
    sd = ad.sqrt(var)
    pos = np.arange(n, dtype=np.float64)[None, :]
    # z-scores are computed on the side of the mean that keeps the CDF
    # difference away from 1 - 1 cancellation
    upper = (pos + 0.5 - mu) / sd
    lower = (pos - 0.5 - mu) / sd
    right = np.asarray(pos - 0.5 > mu.value)
    left = ad.normal_cdf(upper) - ad.normal_cdf(lower)
    mirrored = ad.normal_cdf(ad.scale(lower, -1.0)) - ad.normal_cdf(ad.scale(upper, -1.0))
    P_hat = ad.add(ad.mul(left, 1.0 - right), ad.mul(mirrored, right.astype(float)))
    return RankDistribution(P_hat=P_hat, mu=mu, var=var)


def gumbel_noise(shape: tuple, rng: np.random.Generator, eps: float = 1e-6) -> np.ndarray:
    U = rng.random(shape)
    return -np.log(-np.log(U + eps) + eps)


def gumbel_sinkhorn(P_hat, cfg: GumbelSinkhornConfig, noise: np.ndarray | None = None,
                    rng: np.random.Generator | None = None) -> Tensor:
    """Log-space Sinkhorn on ``(log P_hat + gumbel) / tau``.

    Each sweep normalizes columns then rows, so the final row sums are 1 up
    to rounding.  ``noise`` overrides sampling; otherwise it is drawn from
    ``rng`` (or a generator seeded by ``cfg.seed``) and scaled by
    ``cfg.noise_scale``.
    """
    P_hat = ad.as_tensor(P_hat)
    if noise is None:
        rng = np.random.default_rng(cfg.seed) if rng is None else rng
        noise = cfg.noise_scale * gumbel_noise(P_hat.shape, rng, cfg.eps)
    logP = ad.log(ad.clamp_min(P_hat, cfg.eps)) + noise
    logP = logP * (1.0 / cfg.tau)
    for it in range(cfg.n_iters):
        try:
            logP = logP - ad.logsumexp_cols(logP)
            logP = logP - ad.logsumexp_rows(logP)
        except NonFiniteError as exc:
            raise NonFiniteError(f"Sinkhorn iteration {it}: {exc}") from exc
    return ad.exp(logP)


def soft_permutation(Y, cfg: GumbelSinkhornConfig, noise: np.ndarray | None = None,
                     rng: np.random.Generator | None = None) -> Tensor:
    """Full chain from scores to the doubly stochastic matrix."""
    p = pairwise_probs(Y, cfg.sigma)
    mu, var = rank_moments(p, cfg.eps)
    return gumbel_sinkhorn(rank_distribution(mu, var).P_hat, cfg, noise=noise, rng=rng)


def hard_permutation(Y) -> Permutation:
    """Descending score order; equal scores keep ascending node index."""
    Y = np.asarray(Y.value if isinstance(Y, Tensor) else Y, dtype=np.float64).ravel()
    if not np.all(np.isfinite(Y)):
        raise NonFiniteError("scores contain non-finite values")
    return Permutation(np.lexsort((np.arange(len(Y)), -Y)))


def soft_reorder(A: SparseSymMatrix | np.ndarray, P, max_n: int = DENSE_MAX_N) -> Tensor:
    """Dense ``P A P^T`` on the tape of ``P``."""
    P = ad.as_tensor(P)
    n = P.shape[0]
    if n > max_n:
        raise ValueError(f"n={n} exceeds the dense reordering bound {max_n}")
    A_dense = A.to_dense() if isinstance(A, SparseSymMatrix) else np.asarray(A, dtype=float)
    if A_dense.shape != (n, n):
        raise ValueError(f"matrix shape {A_dense.shape} does not match P shape {P.shape}")
    return ad.matmul(ad.matmul(P, A_dense), ad.transpose(P))
