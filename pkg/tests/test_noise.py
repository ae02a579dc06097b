import numpy as np
import pytest
from numpy.testing import assert_allclose

from kernelflows.linalg import matrix_rank_from_svd
from kernelflows.noise import (
    collect_noise_samples,
    enumerate_batches,
    exhaustive_mean_noise,
    feature_noise_matrix,
    kernel_noise_matrix,
    masked_residual,
    noise_covariance_stats,
    preconditioned_noise_check,
    sample_batches,
)
from kernelflows.supervised import default_initial_kernel, residual_mse
from kernelflows.tasks import LabelSet


class TestMaskedResidual:
    def test_full_batch_is_identity(self, rng):
        r = rng.standard_normal((5, 2))
        assert_allclose(masked_residual(r, range(5), 5), r)

    def test_zero_residual(self):
        assert_allclose(masked_residual(np.zeros((4, 2)), [0, 2], 4), np.zeros((4, 2)))

    def test_hand_masked_rows(self, rng):
        r = rng.standard_normal((4, 2))
        out = masked_residual(r, [0, 2], 4)
        assert_allclose(out[[0, 2]], 2.0 * r[[0, 2]])
        assert_allclose(out[[1, 3]], np.zeros((2, 2)))

    def test_rejects_empty_batch(self, rng):
        with pytest.raises(ValueError):
            masked_residual(rng.standard_normal((3, 1)), [], 3)

    def test_linear_unbiasedness_exhaustive(self, rng):
        # the masked residual itself is an unbiased estimate of R
        r = rng.standard_normal((6, 2))
        batches = enumerate_batches(6, 3)
        mean = sum(masked_residual(r, b, 6) for b in batches) / len(batches)
        assert np.max(np.abs(mean - r)) <= 1e-12

    def test_outer_product_mean_scalings(self, rng):
        # E[Rb Rb^T] scales diag(RR^T) by N/B and the off-diagonal part by
        # N(B-1)/(B(N-1)): the plug-in quadratic estimator is biased.
        n, b = 6, 3
        r = rng.standard_normal((n, 2))
        m = r @ r.T
        batches = enumerate_batches(n, b)
        mean = sum((rb := masked_residual(r, bb, n)) @ rb.T for bb in batches) / len(batches)
        gamma = n * (b - 1) / (b * (n - 1))
        expected = (n / b) * np.diag(np.diag(m)) + gamma * (m - np.diag(np.diag(m)))
        assert np.max(np.abs(mean - expected)) <= 1e-12


class TestKernelNoiseMatrix:
    def make_instance(self, rng, n=40, c=3):
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        k = default_initial_kernel(n, seed=1, scale=0.5, jitter=0.3)
        return k, labels

    def test_full_batch_vanishes(self, rng):
        k, labels = self.make_instance(rng, n=8, c=2)
        z = kernel_noise_matrix(k, labels, 1.0, range(8))
        assert_allclose(z, np.zeros((8, 8)), atol=1e-14)

    def test_rank_at_most_2c(self, rng):
        k, labels = self.make_instance(rng)
        for batch in sample_batches(40, 8, 25, seed=3):
            z = kernel_noise_matrix(k, labels, 1.0, batch)
            sv = np.linalg.svd(z, compute_uv=False)
            assert sv[6] <= 1e-10 * sv[0]

    def test_exhaustive_mean_is_biased(self, rng):
        # closed-form oracle for the batch average of the plug-in noise:
        # taking expectations inside the resolvent sandwich gives
        #   E[zeta] = -(1/2 lam) A [ (N/B - gamma) D + (gamma - 1) M ] A
        # with D = diag(diag(M)), M = R R^T, so the average only vanishes
        # when R does.
        n, b, lam = 6, 3, 1.0
        labels = LabelSet(Y=rng.standard_normal((n, 2)))
        k = default_initial_kernel(n, seed=2, scale=0.4, jitter=0.2)
        mean = exhaustive_mean_noise(k, labels, lam, b)
        r = residual_mse(k, labels.Y, lam)
        m = r @ r.T
        d = np.diag(np.diag(m))
        gamma = n * (b - 1) / (b * (n - 1))
        a = np.linalg.inv(k + lam * np.eye(n))
        expected = -(0.5 / lam) * a @ ((n / b - gamma) * d + (gamma - 1.0) * m) @ a
        assert np.max(np.abs(mean - expected)) <= 1e-12
        assert np.linalg.norm(mean) > 1e-3

    def test_support_inside_resolvent_residual_span(self, rng):
        k, labels = self.make_instance(rng, n=12, c=2)
        lam = 0.8
        r = residual_mse(k, labels.Y, lam)
        a = np.linalg.inv(k + lam * np.eye(12))
        for batch in sample_batches(12, 4, 10, seed=5):
            rb = masked_residual(r, batch, 12)
            z = kernel_noise_matrix(k, labels, lam, batch)
            basis, _ = np.linalg.qr(a @ np.hstack([rb, r]))
            proj = basis @ basis.T
            assert np.linalg.norm(z - proj @ z @ proj) <= 1e-8 * max(np.linalg.norm(z), 1.0)


class TestFeatureNoiseMatrix:
    def test_zero_error_signal(self, rng):
        w = rng.standard_normal((3, 8))
        d = rng.standard_normal((3, 10))
        assert_allclose(feature_noise_matrix(w, d, d), np.zeros((8, 10)))

    def test_single_output_rank_one(self, rng):
        w = rng.standard_normal((1, 12))
        d1 = rng.standard_normal((1, 9))
        d2 = rng.standard_normal((1, 9))
        z = feature_noise_matrix(w, d1, d2)
        assert matrix_rank_from_svd(z) <= 1

    def test_rank_bounded_by_outputs_over_many_draws(self, rng):
        c, kd, n = 2, 16, 20
        w = rng.standard_normal((c, kd))
        mean = rng.standard_normal((c, n))
        for _ in range(200):
            z = feature_noise_matrix(w, mean + rng.standard_normal((c, n)), mean)
            sv = np.linalg.svd(z, compute_uv=False)
            assert sv[c] <= 1e-9 * sv[0]


class TestNoiseStats:
    def test_identical_samples_have_rank_zero_covariance(self, rng):
        n, c = 10, 2
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        k = default_initial_kernel(n, seed=3, scale=0.4, jitter=0.2)
        batch = tuple(range(3))
        samples = collect_noise_samples(k, labels, 1.0, [batch, batch, batch])
        stats = noise_covariance_stats(samples, 1e-10, reference_2C=2 * c)
        assert stats.covariance_rank == 0
        assert stats.per_realization_max_rank <= 2 * c

    def test_per_realization_bound_across_samples(self, rng):
        n, c, b = 20, 2, 5
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        k = default_initial_kernel(n, seed=4, scale=0.5, jitter=0.3)
        samples = collect_noise_samples(k, labels, 1.0, sample_batches(n, b, 200, seed=9))
        stats = noise_covariance_stats(samples, 1e-10, reference_2C=2 * c)
        assert stats.per_realization_max_rank <= 2 * c
        assert stats.num_samples == 200

    def test_json_schema(self, rng):
        import json

        n, c = 8, 1
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        k = default_initial_kernel(n, seed=5, scale=0.4, jitter=0.1)
        samples = collect_noise_samples(k, labels, 1.0, sample_batches(n, 3, 5, seed=2))
        stats = noise_covariance_stats(samples, 1e-10, reference_2C=2)
        doc = json.loads(stats.to_json())
        assert set(doc) == {"singular_values", "per_realization_max_rank", "covariance_rank", "reference_2C", "num_samples"}

    def test_requires_two_samples(self, rng):
        with pytest.raises(ValueError):
            noise_covariance_stats([], 1e-10)

    def test_singular_values_descending(self, rng):
        n, c = 10, 2
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        k = default_initial_kernel(n, seed=7, scale=0.5, jitter=0.2)
        samples = collect_noise_samples(k, labels, 1.0, sample_batches(n, 3, 20, seed=3))
        stats = noise_covariance_stats(samples, 1e-10)
        assert np.all(stats.singular_values >= 0.0)
        assert np.all(np.diff(stats.singular_values) <= 0.0)


class TestPreconditionedNoise:
    def make_samples(self, rng, n=14, c=2, b=4, num=50):
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        k = default_initial_kernel(n, seed=6, scale=0.5, jitter=0.3)
        return collect_noise_samples(k, labels, 1.0, sample_batches(n, b, num, seed=8)), n

    def test_identity_congruence_is_noop(self, rng):
        samples, n = self.make_samples(rng)
        rep = preconditioned_noise_check(np.eye(n), samples)
        assert rep.bound_preserved
        assert np.array_equal(rep.ranks_before, rep.ranks_after)

    def test_random_pd_congruence_preserves_ranks(self, rng):
        samples, n = self.make_samples(rng)
        theta_half = np.diag(rng.uniform(0.5, 2.0, size=n))
        rep = preconditioned_noise_check(theta_half, samples)
        assert rep.bound_preserved

    def test_ill_conditioned_congruence_still_bounded(self, rng):
        samples, n = self.make_samples(rng)
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        theta_half = q @ np.diag(np.geomspace(0.1, 10.0, n)) @ q.T  # condition 100
        rep = preconditioned_noise_check(0.5 * (theta_half + theta_half.T), samples)
        assert rep.max_rank_after <= 4

    def test_rejects_singular_congruence(self, rng):
        samples, n = self.make_samples(rng, num=3)
        theta_half = np.eye(n)
        theta_half[0, 0] = 0.0
        with pytest.raises(ValueError):
            preconditioned_noise_check(theta_half, samples)


class TestBatchHelpers:
    def test_enumerate_small(self):
        assert len(enumerate_batches(6, 3)) == 20

    def test_enumerate_refuses_blowup(self):
        with pytest.raises(ValueError):
            enumerate_batches(60, 20)

    def test_sampling_deterministic(self):
        assert sample_batches(10, 3, 5, seed=1) == sample_batches(10, 3, 5, seed=1)

    def test_batch_sizes(self):
        for b in sample_batches(12, 4, 10, seed=0):
            assert len(b) == 4
