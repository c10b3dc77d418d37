"""Squared-exponential kernel, Gram assembly, jittered solves and K-means
initialization of the inducing locations."""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._backend import USE_NUMBA, njit
from .errors import InputError, NumericalError

__all__ = [
    "KernelConfig",
    "se_kernel",
    "gram",
    "sqdist",
    "jittered_cholesky",
    "psd_solve",
    "kmeans_inducing",
]

JITTER_ESCALATIONS = 3
KMEANS_ITERS = 25


@dataclass(frozen=True)
class KernelConfig:
    """Squared-exponential kernel hyperparameters.

    ``jitter`` defaults to ``1e-6 * variance`` when left as ``None``.
    """

    variance: float = 1.0
    lengthscale: float = 1.0
    jitter: float = None

    def __post_init__(self):
        if self.jitter is None:
            object.__setattr__(self, "jitter", 1e-6 * self.variance)
        if not (self.variance > 0 and self.lengthscale > 0 and self.jitter > 0):
            raise InputError(
                f"kernel parameters must be positive, got variance={self.variance}, "
                f"lengthscale={self.lengthscale}, jitter={self.jitter}",
                component="kernel-linalg",
            )

    @classmethod
    def default(cls, feature_dim, jitter=None):
        """gamma = 1 and lengthscale = sqrt(D)."""
        return cls(variance=1.0, lengthscale=float(np.sqrt(feature_dim)), jitter=jitter)


def se_kernel(x, y, cfg):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InputError(
            f"feature vectors must share one dimension, got {x.shape} and {y.shape}",
            component="kernel-linalg",
        )
    d2 = float(np.sum((x - y) ** 2))
    return cfg.variance * np.exp(-d2 / (2.0 * cfg.lengthscale**2))


@njit
def _sqdist_numba(A, B):
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for k in range(d):
                t = A[i, k] - B[j, k]
                s += t * t
            out[i, j] = s
    return out


def _sqdist_numpy(A, B):
    n, d = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    # bound the temporary (rows, m, d) block to ~4M doubles
    step = max(1, 4_000_000 // max(1, m * d))
    for start in range(0, n, step):
        diff = A[start:start + step, None, :] - B[None, :, :]
        out[start:start + step] = np.sum(diff * diff, axis=-1)
    return out


def sqdist(A, B):
    """Pairwise squared Euclidean distances, shape (len(A), len(B))."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    if USE_NUMBA:
        return _sqdist_numba(A, B)
    return _sqdist_numpy(A, B)


def gram(A, B, cfg):
    """Kernel matrix with entries ``se_kernel(A[i], B[j])``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    if A.shape[1] != B.shape[1]:
        raise InputError(
            f"feature dimension mismatch: {A.shape[1]} vs {B.shape[1]}",
            component="kernel-linalg",
        )
    return cfg.variance * np.exp(sqdist(A, B) / (-2.0 * cfg.lengthscale**2))


def jittered_cholesky(M, jitter, max_escalations=JITTER_ESCALATIONS):
    """Lower Cholesky factor of ``M + jitter*I``.

    The jitter is multiplied by 10 on failure, at most ``max_escalations``
    times. Returns ``(cho_factor tuple, jitter_used)``.
    """
    M = np.asarray(M, dtype=np.float64)
    eye = np.eye(M.shape[0])
    tried = jitter
    for _ in range(max_escalations + 1):
        try:
            return cho_factor(M + tried * eye, lower=True), tried
        except (LinAlgError, ValueError):
            tried *= 10.0
    raise NumericalError(
        f"Cholesky factorization failed; final jitter tried {tried / 10.0:.3e}",
        component="kernel-linalg",
    )


def psd_solve(M, B, jitter=1e-6):
    """Solve ``(M + jitter*I) X = B`` for symmetric positive (semi)definite M."""
    factor, _ = jittered_cholesky(M, jitter)
    return cho_solve(factor, np.asarray(B, dtype=np.float64))


@njit
def _assign_numba(X, C):
    n, d = X.shape
    k = C.shape[0]
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        best = np.inf
        arg = 0
        for j in range(k):
            s = 0.0
            for t in range(d):
                diff = X[i, t] - C[j, t]
                s += diff * diff
            if s < best:
                best = s
                arg = j
        labels[i] = arg
    return labels


def _assign_numpy(X, C):
    # argmin returns the first minimum, i.e. the lowest centroid index
    return np.argmin(_sqdist_numpy(X, C), axis=1)


def _assign(X, C):
    if USE_NUMBA:
        return _assign_numba(X, C)
    return _assign_numpy(X, C)


def _kmeans_pp(X, k, rng):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    closest = sqdist(X, centers[:1])[:, 0]
    for c in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = rng.choice(n, p=closest / total)
        else:
            idx = rng.integers(n)
        centers[c] = X[idx]
        closest = np.minimum(closest, sqdist(X, centers[c:c + 1])[:, 0])
    return centers


def _lloyd(X, k, rng, n_iter=KMEANS_ITERS):
    X = np.ascontiguousarray(X, dtype=np.float64)
    centers = _kmeans_pp(X, k, rng)
    labels = None
    for _ in range(n_iter):
        new_labels = _assign(X, centers)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        counts = np.bincount(labels, minlength=k)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
    return centers


def _class_instances(dataset):
    pos, neg = [], []
    for bag in sorted(dataset.bags, key=lambda b: b.bag_id):
        (pos if bag.label == 1 else neg).append(bag.X)
    dim = dataset.feature_dim
    stack = lambda parts: np.vstack(parts) if parts else np.empty((0, dim))
    return stack(pos), stack(neg)


def kmeans_inducing(dataset, M, seed, strict=True, n_iter=KMEANS_ITERS):
    """Inducing locations from K-means run separately on each bag class.

    Half of the M centroids come from instances of positive bags and half from
    instances of negative bags. Bags are sorted by id first so the result only
    depends on the data and the seed.

    With ``strict=False`` the per-class counts are reduced to what the data
    supports (used by :func:`vgpmil.vi.fit` on tiny datasets).
    """
    X_pos, X_neg = _class_instances(dataset)
    if strict:
        if M <= 0 or M % 2:
            raise InputError(f"M must be a positive even number, got {M}",
                             component="kernel-linalg")
        k_pos = k_neg = M // 2
        if len(X_pos) < k_pos or len(X_neg) < k_neg:
            raise InputError(
                f"need at least {M // 2} instances in positive and negative bags, "
                f"got {len(X_pos)} and {len(X_neg)}",
                component="kernel-linalg",
            )
    else:
        k_pos = min(M // 2, len(X_pos))
        k_neg = min(M - k_pos, len(X_neg))
        k_pos = min(M - k_neg, len(X_pos))
        if k_pos + k_neg == 0:
            raise InputError("dataset has no instances", component="kernel-linalg")
    pos_seq, neg_seq = np.random.SeedSequence(seed).spawn(2)
    parts = []
    if k_pos:
        parts.append(_lloyd(X_pos, k_pos, np.random.default_rng(pos_seq), n_iter))
    if k_neg:
        parts.append(_lloyd(X_neg, k_neg, np.random.default_rng(neg_seq), n_iter))
    return np.vstack(parts)
