#!/usr/bin/env python3
"""Mini-batch kernel noise is confined to a rank-2C subspace.

Each realization swaps the full residual Gram for its mask-scaled
mini-batch version inside the resolvent sandwich, so it is a difference
of two rank-C matrices.  The script measures the singular-value profile
of a thousand realizations, shows the feature-level bottleneck at rank C,
and checks that a positive definite congruence (an optimizer geometry)
cannot inflate any of it.  The batch average of the realizations is also
printed: the plug-in quadratic estimator carries an N/B diagonal excess,
so that average is small only when the residuals are.
"""

import numpy as np

from kernelflows import (
    collect_noise_samples,
    exhaustive_mean_noise,
    noise_covariance_stats,
    preconditioned_noise_check,
    sample_batches,
)
from kernelflows.linalg import matrix_rank_from_svd
from kernelflows.supervised import default_initial_kernel
from kernelflows.tasks import LabelSet

SEED = 5
N, C, B = 40, 3, 8
rng = np.random.default_rng(np.random.PCG64(SEED))
labels = LabelSet(Y=rng.standard_normal((N, C)))
K = default_initial_kernel(N, seed=SEED, scale=0.5, jitter=0.3)
W = rng.standard_normal((C, 16))

batches = sample_batches(N, B, 1000, seed=SEED)
samples = collect_noise_samples(K, labels, 1.0, batches, W=W)

kernel_ranks = np.array([matrix_rank_from_svd(s.zeta_K, 1e-10) for s in samples])
feature_ranks = np.array([matrix_rank_from_svd(s.zeta_Phi, 1e-10) for s in samples])
print(f"N={N}, C={C}, batch size {B}, {len(samples)} draws")
print(f"kernel-level rank histogram: {np.bincount(kernel_ranks)}  (bound 2C = {2 * C})")
print(f"feature-level rank histogram: {np.bincount(feature_ranks)}  (bound C = {C})")

stats = noise_covariance_stats(samples, 1e-10, reference_2C=2 * C)
sv = stats.singular_values
print(f"covariance of the stacked realizations: rank {stats.covariance_rank} "
      f"(reported against the 2C = {2 * C} reference; realizations rotate their support with the mask)")
print(f"  top five singular values: {np.round(sv[:5], 6)}")

theta_half = np.diag(rng.uniform(0.5, 2.0, size=N))
rep = preconditioned_noise_check(theta_half, samples[:200])
print(f"PD congruence preserves every per-realization rank: {rep.bound_preserved} "
      f"(max before {rep.max_rank_before}, after {rep.max_rank_after})")

labels_small = LabelSet(Y=rng.standard_normal((6, 3)))
k_small = default_initial_kernel(6, seed=SEED + 1, scale=0.4, jitter=0.2)
mean = exhaustive_mean_noise(k_small, labels_small, 1.0, 3)
print(f"exhaustive batch mean at N=6, B=3: Frobenius norm {np.linalg.norm(mean):.4f} "
      f"(nonzero: the quadratic plug-in estimator is biased even though the masked residual is not)")
