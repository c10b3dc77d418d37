"""Truncated Gaussian moments and Gaussian orthant probabilities.

Includes rejection-sampling oracles used to check the closed forms and the
quasi-Monte Carlo orthant estimator.
"""
import math
from typing import NamedTuple

import numpy as np
from scipy.special import erfcx, log_ndtr, ndtr, ndtri

from ._backend import USE_NUMBA, njit
from .errors import InputError, NumericalError, OracleInfeasibleError

__all__ = [
    "hazard",
    "neg_trunc_mean",
    "positive_bag_expectations",
    "batched_bag_expectations",
    "negative_orthant_prob",
    "mc_trunc_oracle",
    "OrthantProb",
    "PositiveBagMoments",
    "OracleResult",
]

Z_FLOOR = 1e-300
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_TAIL_SWITCH = 5.0


def hazard(z):
    """phi(z) / (1 - Phi(z)), stable in the upper tail."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    lo = z <= _TAIL_SWITCH
    zl = z[lo]
    out[lo] = np.exp(-0.5 * zl * zl) / math.sqrt(2.0 * math.pi) / ndtr(-zl)
    out[~lo] = _SQRT_2_OVER_PI / erfcx(z[~lo] / math.sqrt(2.0))
    return out


def _check_sigma(sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise InputError("standard deviations must be positive", component="trunc-gauss")
    return sigma


def neg_trunc_mean(mu, sigma):
    """Mean of N(mu, sigma^2) truncated to (-inf, 0). Broadcasts."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = _check_sigma(sigma)
    out = mu - sigma * hazard(mu / sigma)
    return out if out.ndim else float(out)


class PositiveBagMoments(NamedTuple):
    expectations: np.ndarray
    Z: float
    floored: bool


def positive_bag_expectations(mu, sigma):
    """Expectations of independent N(mu_i, sigma_i^2) truncated to the
    complement of the all-negative orthant.

    ``Z`` is the probability of that region. Uses ``E_i + sigma_i*h_i/Z``,
    algebraically equal to ``(mu_i - (1 - Z) E_i) / Z`` but free of the
    cancellation in the numerator when Z is small.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_1d(_check_sigma(sigma))
    if mu.shape != sigma.shape or mu.size == 0:
        raise InputError("mu and sigma must be non-empty and of equal length",
                         component="trunc-gauss")
    z = mu / sigma
    h = hazard(z)
    E = mu - sigma * h
    Z = -math.expm1(float(np.sum(log_ndtr(-z))))
    floored = Z < Z_FLOOR
    return PositiveBagMoments(E + sigma * h / max(Z, Z_FLOOR), Z, floored)


def batched_bag_expectations(mu, sigma, offsets, bag_labels):
    """Vectorized truncated expectations for a whole stacked dataset.

    ``offsets`` are the bag start indices (plus N); instances of negative bags
    get the negative-truncation mean, instances of positive bags the
    complement-orthant expectation. Returns ``(expectations, Z, floored)``
    where Z is NaN for negative bags.
    """
    z = mu / sigma
    h = hazard(z)
    E = mu - sigma * h
    sizes = np.diff(offsets)
    owner = np.repeat(np.arange(len(sizes)), sizes)
    Z = -np.expm1(np.add.reduceat(log_ndtr(-z), offsets[:-1]))
    positive = bag_labels == 1
    Z = np.where(positive, Z, np.nan)
    floored = positive & (Z < Z_FLOOR)
    inst_pos = positive[owner]
    Zi = np.maximum(Z[owner][inst_pos], Z_FLOOR)
    out = E.copy()
    out[inst_pos] = E[inst_pos] + sigma[inst_pos] * h[inst_pos] / Zi
    return out, Z, floored


# --- orthant probability --------------------------------------------------

class OrthantProb(NamedTuple):
    prob: float
    std_error: float


# Wichura's AS241 (PPND16) coefficients
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


@njit
def _poly(c, x):
    s = 0.0
    for k in range(7, -1, -1):
        s = s * x + c[k]
    return s


@njit
def _ndtri_scalar(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


@njit
def _ndtr_scalar(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


_P_MIN = 1e-300
_GENZ_BLOCK = 128


@njit
def _genz_block(L, b, W, m, y, s, e, out):
    """Integrand for the first ``m`` rows of W, written to ``out[:m]``.

    The point index is innermost so the running dot products vectorize.
    """
    d = L.shape[0]
    e0 = _ndtr_scalar(b[0] / L[0, 0])
    for k in range(m):
        e[k] = e0
        out[k] = e0
    for i in range(1, d):
        for k in range(m):
            p = W[k, i - 1] * e[k]
            if p < _P_MIN:
                p = _P_MIN
            elif p > 1.0 - 1e-16:
                p = 1.0 - 1e-16
            y[i - 1, k] = _ndtri_scalar(p)
            s[k] = 0.0
        for j in range(i):
            c = L[i, j]
            for k in range(m):
                s[k] += c * y[j, k]
        for k in range(m):
            e[k] = _ndtr_scalar((b[i] - s[k]) / L[i, i])
            out[k] *= e[k]


@njit
def _genz_numba(L, b, W):
    """Separation-of-variables integrand evaluated at every row of W."""
    n = W.shape[0]
    d = L.shape[0]
    out = np.empty(n)
    y = np.empty((d, _GENZ_BLOCK))
    s = np.empty(_GENZ_BLOCK)
    e = np.empty(_GENZ_BLOCK)
    for lo in range(0, n, _GENZ_BLOCK):
        m = min(_GENZ_BLOCK, n - lo)
        _genz_block(L, b, W[lo:lo + m], m, y, s, e, out[lo:lo + m])
    return out


@njit
def _genz_lattice_numba(L, b, alpha, shift, n):
    """Mean of the integrand over the shifted, baker-transformed lattice
    ``k * alpha + shift`` for k = 1..n, generated block by block."""
    d = L.shape[0]
    W = np.empty((_GENZ_BLOCK, d - 1))
    y = np.empty((d, _GENZ_BLOCK))
    s = np.empty(_GENZ_BLOCK)
    e = np.empty(_GENZ_BLOCK)
    out = np.empty(_GENZ_BLOCK)
    total = 0.0
    for lo in range(0, n, _GENZ_BLOCK):
        m = min(_GENZ_BLOCK, n - lo)
        for k in range(m):
            kk = float(lo + k + 1)
            for i in range(d - 1):
                w = ((kk * alpha[i]) % 1.0 + shift[i]) % 1.0
                W[k, i] = abs(2.0 * w - 1.0)
        _genz_block(L, b, W, m, y, s, e, out)
        for k in range(m):
            total += out[k]
    return total / n


def _lattice_points(alpha, shift, n):
    ks = np.arange(1, n + 1, dtype=np.float64)[:, None]
    W = ((ks * alpha[None, :]) % 1.0 + shift) % 1.0
    return np.abs(2.0 * W - 1.0)


def _genz_numpy(L, b, W):
    n = W.shape[0]
    d = L.shape[0]
    y = np.empty((n, d))
    e = np.full(n, ndtr(b[0] / L[0, 0]))
    f = e.copy()
    for i in range(1, d):
        p = np.clip(W[:, i - 1] * e, _P_MIN, 1.0 - 1e-16)
        y[:, i - 1] = ndtri(p)
        s = y[:, :i] @ L[i, :i]
        e = ndtr((b[i] - s) / L[i, i])
        f *= e
    return f


def genz_integrand(L, b, W):
    if USE_NUMBA:
        return _genz_numba(L, b, W)
    return _genz_numpy(L, b, W)


def _first_primes(k):
    primes = []
    cand = 2
    while len(primes) < k:
        if all(cand % p for p in primes if p * p <= cand):
            primes.append(cand)
        cand += 1
    return np.array(primes, dtype=np.float64)


def negative_orthant_prob(mean, cov, n_points=2**14, n_random=8, seed=0):
    """P(X < 0 componentwise) for X ~ N(mean, cov).

    One dimension is exact. Otherwise a Genz separation-of-variables
    transform is integrated with randomly shifted rank-1 (Richtmyer) lattice
    rules plus the baker's transform; the standard error comes from the
    spread over the ``n_random`` shifts.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    d = mean.size
    if cov.shape != (d, d) or d == 0:
        raise InputError(f"mean of length {d} does not match covariance {cov.shape}",
                         component="trunc-gauss")
    if d == 1:
        if not cov[0, 0] > 0:
            raise NumericalError("variance must be positive", component="trunc-gauss")
        return OrthantProb(float(ndtr(-mean[0] / math.sqrt(cov[0, 0]))), 0.0)

    # most constrained variables first
    sd = np.sqrt(np.diag(cov))
    order = np.argsort(-mean / sd, kind="stable")
    mean = mean[order]
    cov = cov[np.ix_(order, order)]
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"covariance is not positive definite: {exc}",
                             component="trunc-gauss") from exc
    b = -mean

    alpha = np.sqrt(_first_primes(d - 1)) % 1.0
    rng = np.random.default_rng(seed)
    estimates = np.empty(n_random)
    for r in range(n_random):
        shift = rng.random(d - 1)
        if USE_NUMBA:
            estimates[r] = _genz_lattice_numba(L, b, alpha, shift, n_points)
        else:
            estimates[r] = _genz_numpy(L, b, _lattice_points(alpha, shift, n_points)).mean()
    prob = float(np.clip(estimates.mean(), 0.0, 1.0))
    se = float(estimates.std(ddof=1) / math.sqrt(n_random)) if n_random > 1 else float("nan")
    return OrthantProb(prob, se)


# --- rejection oracle -------------------------------------------------------

class OracleResult(NamedTuple):
    prob: float
    prob_se: float
    expectation: np.ndarray
    expectation_se: np.ndarray
    n_accepted: int


def mc_trunc_oracle(mean, cov, region="neg", samples=10**6, seed=0, chunk=10**6):
    """Plain Monte Carlo estimate of a region probability and the conditional
    mean of N(mean, cov) restricted to it.

    ``region`` is ``"neg"`` for the negative orthant or ``"complement"`` for
    everything outside it.
    """
    if region not in ("neg", "complement"):
        raise InputError(f"unknown region {region!r}", component="trunc-gauss")
    if samples < 10**4:
        raise InputError("oracle needs at least 1e4 samples", component="trunc-gauss")
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    L = np.linalg.cholesky(cov)
    d = mean.size
    rng = np.random.default_rng(seed)
    accepted = 0
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = mean + rng.standard_normal((m, d)) @ L.T
        inside = np.all(x < 0, axis=1)
        if region == "complement":
            inside = ~inside
        xa = x[inside]
        accepted += xa.shape[0]
        s1 += xa.sum(axis=0)
        s2 += (xa * xa).sum(axis=0)
        done += m
    rate = accepted / samples
    if rate < 1e-6 or accepted < 2:
        raise OracleInfeasibleError(f"acceptance rate {rate:.2e} too low", component="trunc-gauss")
    mu_hat = s1 / accepted
    var_hat = np.maximum(s2 / accepted - mu_hat**2, 0.0) * accepted / (accepted - 1)
    return OracleResult(
        prob=rate,
        prob_se=math.sqrt(rate * (1.0 - rate) / samples),
        expectation=mu_hat,
        expectation_se=np.sqrt(var_hat / accepted),
        n_accepted=accepted,
    )
