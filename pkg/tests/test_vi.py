import math

import numpy as np
import pytest
from scipy.stats import norm, truncnorm as sp_truncnorm

from vgpmil.bags import Bag, MilDataset, block_sigma
from vgpmil.errors import InputError
from vgpmil.kernels import KernelConfig, gram, jittered_cholesky, kmeans_inducing
from vgpmil.predict import predict_dataset
from vgpmil.synth import SyntheticSpec, generate_synthetic
from vgpmil.truncnorm import mc_trunc_oracle
from vgpmil.vi import FitConfig, build_cache, fit, update_qm, update_qu

from conftest import grid_bag


def _uncoupled_reference(dataset, Z, kernel, E0, n_iter):
    """Straight-line transcription of the uncoupled updates with explicit inverses."""
    X = dataset.stacked_X()
    jitter = jittered_cholesky(gram(Z, Z, kernel), kernel.jitter)[1]
    Kzz = gram(Z, Z, kernel) + jitter * np.eye(len(Z))
    Kxz = gram(X, Z, kernel)
    Kinv = np.linalg.inv(Kzz)
    Sigma_u = np.linalg.inv(Kinv + Kinv @ Kxz.T @ Kxz @ Kinv)
    offsets = dataset.offsets()
    E = E0.copy()
    history = []
    for _ in range(n_iter):
        mu_u = Sigma_u @ Kinv @ Kxz.T @ E
        mu = Kxz @ Kinv @ mu_u
        E = np.empty_like(mu)
        for k, bag in enumerate(dataset.bags):
            m = mu[offsets[k]:offsets[k + 1]]
            neg = sp_truncnorm.mean(-np.inf, -m, loc=m, scale=1.0)
            if bag.label == 0:
                E[offsets[k]:offsets[k + 1]] = neg
            else:
                z = 1.0 - np.prod(norm.cdf(-m))
                E[offsets[k]:offsets[k + 1]] = (m - (1.0 - z) * neg) / z
        history.append((mu_u, E))
    return Sigma_u, history


class TestUncoupledReference:
    def test_trajectory_matches_transcription(self, small_dataset):
        cfg = FitConfig(lam=0.0, n_inducing=8, n_iter=1, seed=4)
        kernel = KernelConfig.default(small_dataset.feature_dim)
        Z = kmeans_inducing(small_dataset, cfg.n_inducing, cfg.seed, strict=False)
        cache = build_cache(small_dataset, Z, kernel, block_sigma(small_dataset, 0.0), 0.0)
        E0 = np.random.default_rng(np.random.SeedSequence(4, spawn_key=(2,))).standard_normal(
            small_dataset.n_instances)
        Sigma_ref, history = _uncoupled_reference(small_dataset, Z, kernel, E0, 30)
        np.testing.assert_allclose(cache.Sigma_u, Sigma_ref, atol=1e-8)
        E = E0
        for mu_ref, E_ref in history:
            qu = update_qu(cache, E)
            E = update_qm(cache, qu).expectations
            assert np.max(np.abs(qu.mean - mu_ref)) < 1e-8
            assert np.max(np.abs(E - E_ref)) < 1e-8

    def test_fit_uses_same_init(self, small_dataset):
        m = fit(small_dataset, FitConfig(lam=0.0, n_inducing=8, n_iter=30, seed=4))
        kernel = KernelConfig.default(small_dataset.feature_dim)
        E0 = np.random.default_rng(np.random.SeedSequence(4, spawn_key=(2,))).standard_normal(
            small_dataset.n_instances)
        _, history = _uncoupled_reference(small_dataset, m.Z, kernel, E0, 30)
        assert np.max(np.abs(m.mu_u - history[-1][0])) < 1e-8


class TestUpdateQu:
    def test_zero_expectations_zero_mean(self, small_dataset):
        kernel = KernelConfig.default(2)
        Z = kmeans_inducing(small_dataset, 6, 0)
        cache = build_cache(small_dataset, Z, kernel, block_sigma(small_dataset, 0.8), 0.8)
        qu = update_qu(cache, np.zeros(small_dataset.n_instances))
        assert np.all(qu.mean == 0.0)

    def test_scalar_oracle(self):
        x = np.array([[0.4, -1.1]])
        ds = MilDataset([Bag("only", 1, x)])
        kernel = KernelConfig(variance=1.7, lengthscale=0.9)
        cache = build_cache(ds, x, kernel, block_sigma(ds, 0.0), 0.0)
        k = 1.7 + cache.jitter
        kxz = 1.7
        var = 1.0 / (1.0 / k + (kxz / k) ** 2)
        e = 0.83
        qu = update_qu(cache, np.array([e]))
        assert qu.cov[0, 0] == pytest.approx(var, rel=1e-12)
        assert qu.mean[0] == pytest.approx(var * kxz / k * e, rel=1e-12)

    def test_bag_permutation_invariance(self, small_dataset, rng):
        kernel = KernelConfig.default(2)
        Z = kmeans_inducing(small_dataset, 6, 0)
        order = rng.permutation(len(small_dataset.bags))
        shuffled = MilDataset([small_dataset.bags[i] for i in order])
        E = rng.standard_normal(small_dataset.n_instances)
        offs = small_dataset.offsets()
        E_shuf = np.concatenate([E[offs[i]:offs[i + 1]] for i in order])
        a = update_qu(build_cache(small_dataset, Z, kernel, block_sigma(small_dataset, 1.0), 1.0), E)
        b = update_qu(build_cache(shuffled, Z, kernel, block_sigma(shuffled, 1.0), 1.0), E_shuf)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-10)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)

    @pytest.mark.parametrize("lam", [0.0, 0.5, 10.0])
    def test_sigma_u_spd(self, small_dataset, lam):
        kernel = KernelConfig.default(2)
        Z = kmeans_inducing(small_dataset, 8, 1)
        cache = build_cache(small_dataset, Z, kernel, block_sigma(small_dataset, lam), lam)
        np.testing.assert_array_equal(cache.Sigma_u, cache.Sigma_u.T)
        np.linalg.cholesky(cache.Sigma_u)


class TestUpdateQm:
    def _cache(self, ds, lam, M=6):
        kernel = KernelConfig.default(ds.feature_dim)
        Z = kmeans_inducing(ds, M, 0, strict=False)
        return build_cache(ds, Z, kernel, block_sigma(ds, lam), lam)

    def test_uncoupled_sigma_is_one(self, small_dataset):
        cache = self._cache(small_dataset, 0.0)
        np.testing.assert_array_equal(cache.sigma, 1.0)

    def test_negative_bag_zero_mean(self):
        ds = MilDataset([Bag("n", 0, np.zeros((3, 2)))])
        cache = self._cache(ds, 0.0, M=2)
        qu = update_qu(cache, np.zeros(3))
        qm = update_qm(cache, qu)
        np.testing.assert_allclose(qm.expectations, -math.sqrt(2 / math.pi), rtol=1e-14)

    def test_coupled_mean(self, small_dataset, rng):
        cache = self._cache(small_dataset, 0.7)
        qu = update_qu(cache, rng.standard_normal(small_dataset.n_instances))
        qm = update_qm(cache, qu)
        latent = cache.A @ qu.mean
        offs = cache.offsets
        for k, S in enumerate(cache.blocks):
            sl = slice(offs[k], offs[k + 1])
            np.testing.assert_allclose(qm.mu[sl], S @ latent[sl], atol=1e-12)

    def test_matches_mc_on_factorized_law(self, small_dataset, rng):
        cache = self._cache(small_dataset, 0.7)
        qm = update_qm(cache, update_qu(cache, 2 * rng.standard_normal(small_dataset.n_instances)))
        offs = cache.offsets
        for k, bag in enumerate(small_dataset.bags[:2]):
            sl = slice(offs[k], offs[k + 1])
            region = "complement" if bag.label else "neg"
            oracle = mc_trunc_oracle(qm.mu[sl], np.diag(qm.sigma[sl] ** 2), region,
                                     samples=10**6, seed=k)
            assert np.all(np.abs(qm.expectations[sl] - oracle.expectation)
                          < 3 * oracle.expectation_se)

    def test_signs(self, small_dataset, rng):
        cache = self._cache(small_dataset, 2.0)
        E = 3 * rng.standard_normal(small_dataset.n_instances)
        for _ in range(5):
            qm = update_qm(cache, update_qu(cache, E))
            E = qm.expectations
            for k, bag in enumerate(small_dataset.bags):
                if bag.label == 0:
                    assert np.all(E[cache.offsets[k]:cache.offsets[k + 1]] < 0)

    def test_single_instance_positive_bag_is_positive(self, rng):
        ds = MilDataset([Bag("p", 1, rng.standard_normal((1, 2))),
                         Bag("n", 0, rng.standard_normal((1, 2)))])
        cache = self._cache(ds, 0.0, M=2)
        qm = update_qm(cache, update_qu(cache, np.array([-2.0, 2.0])))
        assert qm.expectations[0] > 0 and qm.expectations[1] < 0


class TestFit:
    def test_zero_iterations_returns_prior(self, small_dataset):
        m = fit(small_dataset, FitConfig(lam=0.5, n_inducing=4, n_iter=0))
        assert np.all(m.mu_u == 0)
        np.testing.assert_array_equal(m.Sigma_u, m.kzz())
        preds = predict_dataset(m, small_dataset, n_points=256, n_random=4)
        for p in preds:
            np.testing.assert_allclose(p.instance_probs, 0.5)
            assert 0.0 <= p.bag_prob <= 1.0

    def test_lambda_continuity(self, small_dataset):
        a = fit(small_dataset, FitConfig(lam=0.0, n_inducing=6, n_iter=50, seed=3))
        b = fit(small_dataset, FitConfig(lam=1e-12, n_inducing=6, n_iter=50, seed=3))
        assert np.max(np.abs(a.mu_u - b.mu_u)) < 1e-6

    def test_deterministic(self, small_dataset):
        cfg = FitConfig(lam=0.5, n_inducing=6, n_iter=20, seed=9)
        a, b = fit(small_dataset, cfg), fit(small_dataset, cfg)
        np.testing.assert_array_equal(a.mu_u, b.mu_u)
        np.testing.assert_array_equal(a.Sigma_u, b.Sigma_u)

    def test_change_norm_shrinks(self, small_dataset):
        m = fit(small_dataset, FitConfig(lam=0.5, n_inducing=6, n_iter=200, seed=0))
        d = m.diagnostics.mean_change
        assert d[-10:].sum() < d[:10].sum()

    def test_separable_recovers_bag_labels(self):
        spec = SyntheticSpec(n_bags=20, grid_height=4, grid_width=4, blob_radius=1.5,
                             feature_dim=4, feature_mean=3.0, noise_scale=0.5, seed=2)
        ds = generate_synthetic(spec)
        m = fit(ds, FitConfig(lam=0.5, n_inducing=20, n_iter=200, seed=0))
        preds = predict_dataset(m, ds, n_points=1024)
        assert [int(p.bag_prob > 0.5) for p in preds] == [b.label for b in ds.bags]

    def test_requires_coords_when_coupled(self):
        ds = MilDataset([Bag("a", 1, np.zeros((2, 2)))])
        with pytest.raises(InputError):
            fit(ds, FitConfig(lam=0.5, n_inducing=2))
        fit(ds, FitConfig(lam=0.0, n_inducing=2, n_iter=2))

    def test_rejects_negative_lambda(self):
        with pytest.raises(InputError):
            FitConfig(lam=-1.0)

    def test_single_bag_minimal(self):
        m = fit(MilDataset([grid_bag("g", 1, 1, 1)]), FitConfig(n_iter=5))
        assert m.n_inducing == 1
