"""Coordinate-ascent mean-field training of the coupled sparse-GP MIL model.

Each iteration refreshes q(u) = N(mu_u, Sigma_u) from the current expected
augmented variables E[m], then refreshes q(m) bag by bag using the
per-instance marginal variances of the coupled covariances.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .bags import block_sigma
from .errors import InputError
from .kernels import KernelConfig, gram, jittered_cholesky, kmeans_inducing
from .truncnorm import batched_bag_expectations

__all__ = [
    "FitConfig",
    "InducingPosterior",
    "AugmentedPosterior",
    "FitDiagnostics",
    "TrainedModel",
    "GramCache",
    "build_cache",
    "update_qu",
    "update_qm",
    "fit",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    lam: float = 0.5
    n_inducing: int = 200
    n_iter: int = 200
    seed: int = 0
    jitter: float = None
    neighborhood: int = 4
    kernel: KernelConfig = None

    def __post_init__(self):
        if self.lam < 0:
            raise InputError(f"lambda must be non-negative, got {self.lam}", component="vi-engine")
        if self.n_inducing < 1 or self.n_iter < 0:
            raise InputError("n_inducing must be >= 1 and n_iter >= 0", component="vi-engine")


@dataclass
class InducingPosterior:
    mean: np.ndarray
    cov: np.ndarray
    Z: np.ndarray


@dataclass
class AugmentedPosterior:
    """Stacked over all instances in dataset order."""

    mu: np.ndarray
    expectations: np.ndarray
    sigma: np.ndarray
    Z: np.ndarray
    floored: np.ndarray


@dataclass
class FitDiagnostics:
    mean_change: np.ndarray
    expectation_change: np.ndarray
    flagged_bags: list = field(default_factory=list)


@dataclass
class TrainedModel:
    """Everything prediction needs; no training data is kept."""

    kernel: KernelConfig
    lam: float
    Z: np.ndarray
    mu_u: np.ndarray
    Sigma_u: np.ndarray
    jitter: float
    seed: int = 0
    neighborhood: int = 4
    diagnostics: FitDiagnostics = None
    _factor: tuple = field(default=None, repr=False, compare=False)

    @property
    def n_inducing(self):
        return self.Z.shape[0]

    @property
    def feature_dim(self):
        return self.Z.shape[1]

    def kzz(self):
        return gram(self.Z, self.Z, self.kernel) + self.jitter * np.eye(self.n_inducing)

    def kzz_factor(self):
        if self._factor is None:
            self._factor = cho_factor(self.kzz(), lower=True)
        return self._factor


@dataclass
class GramCache:
    """Quantities fixed for a whole fit.

    ``A = K_XZ K_ZZ^{-1}`` (N x M) is cached so each iteration is O(N M).
    Sigma_u depends only on the coupled covariances and the kernel, so it is
    computed once here.
    """

    Z: np.ndarray
    Kzz: np.ndarray
    jitter: float
    Kxz: np.ndarray
    A: np.ndarray
    blocks: list
    lam: float
    offsets: np.ndarray
    bag_labels: np.ndarray
    sigma: np.ndarray
    Sigma_u: np.ndarray
    inner_factor: tuple


def _cholesky(M, jitter):
    try:
        return cho_factor(M, lower=True)
    except LinAlgError:
        return jittered_cholesky(M, jitter)[0]


def _apply_blocks(blocks, offsets, V):
    """Block-diagonal product ``Sigma @ V`` without forming Sigma."""
    out = np.empty_like(V)
    for k, S in enumerate(blocks):
        lo, hi = offsets[k], offsets[k + 1]
        out[lo:hi] = S @ V[lo:hi]
    return out


def build_cache(dataset, Z, kernel, blocks, lam):
    Z = np.asarray(Z, dtype=np.float64)
    M = Z.shape[0]
    (chol, lower), jitter = jittered_cholesky(gram(Z, Z, kernel), kernel.jitter)
    Kzz = gram(Z, Z, kernel) + jitter * np.eye(M)
    Kxz = gram(dataset.stacked_X(), Z, kernel)
    A = cho_solve((chol, lower), Kxz.T).T
    offsets = dataset.offsets()
    SK = Kxz if lam == 0 else _apply_blocks(blocks, offsets, Kxz)
    G = Kxz.T @ SK
    G = 0.5 * (G + G.T)
    # Sigma_u = (K^-1 + K^-1 G K^-1)^-1 = K (K + G)^-1 K
    inner = _cholesky(Kzz + G, kernel.jitter)
    Sigma_u = Kzz @ cho_solve(inner, Kzz)
    Sigma_u = 0.5 * (Sigma_u + Sigma_u.T)
    sigma = np.concatenate([np.sqrt(np.diag(S)) for S in blocks])
    return GramCache(
        Z=Z, Kzz=Kzz, jitter=jitter, Kxz=Kxz, A=A, blocks=blocks, lam=lam,
        offsets=offsets, bag_labels=dataset.labels, sigma=sigma,
        Sigma_u=Sigma_u, inner_factor=inner,
    )


def update_qu(cache, expectations):
    """q(u) given the current E[m] (stacked in dataset order)."""
    rhs = cache.Kxz.T @ expectations
    mean = cache.Kzz @ cho_solve(cache.inner_factor, rhs)
    return InducingPosterior(mean=mean, cov=cache.Sigma_u, Z=cache.Z)


def update_qm(cache, qu):
    """q(m): coupled means per bag, then factorized truncated expectations."""
    latent = cache.A @ qu.mean
    if cache.lam == 0:
        mu = latent
    else:
        mu = _apply_blocks(cache.blocks, cache.offsets, latent[:, None])[:, 0]
    E, Z, floored = batched_bag_expectations(mu, cache.sigma, cache.offsets, cache.bag_labels)
    return AugmentedPosterior(mu=mu, expectations=E, sigma=cache.sigma, Z=Z, floored=floored)


def fit(dataset, cfg=None):
    """Train the model; deterministic for a given ``cfg.seed``.

    Inducing locations come from class-wise K-means, E[m] starts i.i.d.
    standard normal, then q(u) and q(m) are updated alternately for
    ``cfg.n_iter`` iterations.
    """
    cfg = cfg or FitConfig()
    if dataset is None or not dataset.bags:
        raise InputError("empty dataset", component="vi-engine")
    if cfg.lam > 0 and not dataset.has_coords:
        raise InputError("grid coordinates are required when lambda > 0", component="vi-engine")
    kernel = cfg.kernel or KernelConfig.default(dataset.feature_dim, jitter=cfg.jitter)
    blocks = block_sigma(dataset, cfg.lam, cfg.neighborhood)

    Z = kmeans_inducing(dataset, cfg.n_inducing, cfg.seed, strict=False)
    if Z.shape[0] < cfg.n_inducing:
        log.warning("using %d inducing points instead of %d (not enough instances)",
                    Z.shape[0], cfg.n_inducing)
    cache = build_cache(dataset, Z, kernel, blocks, cfg.lam)

    init_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(2,)))
    E = init_rng.standard_normal(dataset.n_instances)
    mean = np.zeros(Z.shape[0])
    cov = cache.Kzz.copy()
    mean_change = np.empty(cfg.n_iter)
    e_change = np.empty(cfg.n_iter)
    floored = np.zeros(len(dataset.bags), dtype=bool)
    for t in range(cfg.n_iter):
        qu = update_qu(cache, E)
        qm = update_qm(cache, qu)
        mean_change[t] = np.max(np.abs(qu.mean - mean))
        e_change[t] = np.max(np.abs(qm.expectations - E))
        mean, cov, E = qu.mean, qu.cov, qm.expectations
        floored |= qm.floored
    flagged = [b.bag_id for b, f in zip(dataset.bags, floored) if f]
    if flagged:
        log.info("%d positive bags hit the Z floor during training", len(flagged))
    return TrainedModel(
        kernel=kernel, lam=cfg.lam, Z=Z, mu_u=mean, Sigma_u=cov,
        jitter=cache.jitter, seed=cfg.seed, neighborhood=cfg.neighborhood,
        diagnostics=FitDiagnostics(mean_change, e_change, flagged),
    )
