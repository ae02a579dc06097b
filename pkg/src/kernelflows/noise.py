"""Mini-batch gradient noise at the kernel and feature level.

The kernel-level noise realization swaps the full residual Gram for its
mask-scaled mini-batch version inside the resolvent sandwich; each
realization is a difference of two matrices of rank at most C and so has
rank at most 2C, no matter the width or the batch.  Congruence by any
positive definite map cannot raise that rank.  The covariance measured
across realizations is reported against the 2C reference line but not
asserted, because the batch masks rotate the support between draws.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from math import comb
from typing import Optional

import numpy as np

from .linalg import matrix_rank_from_svd, require_finite, require_symmetric, sym
from .supervised import residual_mse
from .tasks import LabelSet

#: exhaustive enumeration is used whenever the number of batches is below this
ENUMERATION_LIMIT = 100_000


@dataclass(frozen=True)
class NoiseSample:
    """One mini-batch noise realization."""

    batch: tuple
    batch_size: int
    zeta_K: np.ndarray
    zeta_Phi: Optional[np.ndarray] = None


@dataclass
class NoiseStats:
    """Singular spectrum of the stacked vectorized realizations."""

    num_samples: int
    singular_values: np.ndarray
    covariance_rank: int
    per_realization_max_rank: int
    reference_2C: Optional[int] = None

    def to_json(self) -> str:
        doc = {
            "singular_values": [float(s) for s in self.singular_values],
            "per_realization_max_rank": self.per_realization_max_rank,
            "covariance_rank": self.covariance_rank,
            "reference_2C": self.reference_2C,
            "num_samples": self.num_samples,
        }
        return json.dumps(doc, sort_keys=True)


def masked_residual(R, batch, N: int) -> np.ndarray:
    """Zero-padded batch residual: rows in the batch scaled by N/B.

    The linear object is an unbiased estimate of R under uniform batches;
    its self-outer-product is deliberately the plug-in estimator whose
    diagonal carries the N/B scaling.
    """
    R = require_finite(R, "R")
    if R.shape[0] != N:
        raise ValueError("R row count must equal N")
    idx = np.asarray(sorted(set(int(i) for i in batch)), dtype=int)
    if idx.size == 0:
        raise ValueError("batch must be a nonempty index subset")
    if idx.min() < 0 or idx.max() >= N:
        raise ValueError("batch indices out of range")
    out = np.zeros_like(R)
    out[idx] = (N / idx.size) * R[idx]
    return out


def kernel_noise_matrix(K, labels: LabelSet, lam: float, batch) -> np.ndarray:
    """Kernel-level noise -(1/2 lam) A [Rb Rb^T - R R^T] A, A = (K+lam I)^-1."""
    K = require_symmetric(K, "K")
    n = K.shape[0]
    r = residual_mse(K, labels.Y, lam)
    rb = masked_residual(r, batch, n)
    a = np.linalg.inv(K + lam * np.eye(n))
    inner = rb @ rb.T - r @ r.T
    return sym(-(0.5 / lam) * a @ inner @ a)


def feature_noise_matrix(W, delta_batch, delta_mean) -> np.ndarray:
    """Feature-level noise W^T (delta_batch - delta_mean).

    The readout bottleneck caps the rank at C regardless of W's values.
    """
    W = require_finite(W, "W")
    delta_batch = require_finite(delta_batch, "delta_batch")
    delta_mean = require_finite(delta_mean, "delta_mean")
    if delta_batch.shape != delta_mean.shape:
        raise ValueError("batch and mean error signals must share a shape")
    if W.shape[0] != delta_batch.shape[0]:
        raise ValueError("W rows must match the error-signal rows")
    return W.T @ (delta_batch - delta_mean)


def sample_batches(N: int, B: int, num: int, seed: int) -> list:
    """Uniform without-replacement batches as sorted index tuples."""
    if not (0 < B <= N):
        raise ValueError("need 0 < B <= N")
    rng = np.random.default_rng(np.random.PCG64(seed))
    return [tuple(sorted(rng.choice(N, size=B, replace=False).tolist())) for _ in range(num)]


def enumerate_batches(N: int, B: int) -> list:
    """All size-B subsets of range(N); refuses combinatorial blowups."""
    if comb(N, B) > ENUMERATION_LIMIT:
        raise ValueError("too many batches to enumerate")
    return [tuple(c) for c in combinations(range(N), B)]


def collect_noise_samples(
    K,
    labels: LabelSet,
    lam: float,
    batches,
    W: Optional[np.ndarray] = None,
) -> list:
    """Kernel (and optionally feature) noise realizations for given batches.

    When a readout W is supplied, the feature-level realization uses the
    masked residual transpose as the batch error signal and the full
    residual transpose as its mean.
    """
    K = require_symmetric(K, "K")
    n = K.shape[0]
    r = residual_mse(K, labels.Y, lam)
    a = np.linalg.inv(K + lam * np.eye(n))
    out = []
    for batch in batches:
        rb = masked_residual(r, batch, n)
        inner = rb @ rb.T - r @ r.T
        zeta_k = sym(-(0.5 / lam) * a @ inner @ a)
        zeta_phi = None
        if W is not None:
            zeta_phi = W.T @ (rb - r).T
        out.append(NoiseSample(batch=tuple(batch), batch_size=len(batch), zeta_K=zeta_k, zeta_Phi=zeta_phi))
    return out


def noise_covariance_stats(samples, rel_threshold: float, reference_2C: Optional[int] = None) -> NoiseStats:
    """Vectorize, stack, center, and report the singular spectrum.

    The covariance rank is the count of singular values of the centered
    stack above ``rel_threshold`` times the largest; the per-realization
    maximum rank is measured at the default rank tolerance.
    """
    if len(samples) < 2:
        raise ValueError("need at least two samples")
    mats = [np.asarray(s.zeta_K, dtype=np.float64) for s in samples]
    stack = np.stack([m.ravel() for m in mats])
    raw_scale = max(float(np.max(np.abs(stack))), 1e-300)
    stack = stack - stack.mean(axis=0, keepdims=True)
    sv = np.linalg.svd(stack, compute_uv=False)
    top = sv[0] if sv.size else 0.0
    # a top singular value at the roundoff floor of the realizations means
    # the centered stack is numerically zero
    if top <= 1e3 * np.finfo(np.float64).eps * raw_scale:
        cov_rank = 0
    else:
        cov_rank = int(np.sum(sv > rel_threshold * top))
    per_real = max(matrix_rank_from_svd(m) for m in mats)
    return NoiseStats(
        num_samples=len(samples),
        singular_values=sv,
        covariance_rank=cov_rank,
        per_realization_max_rank=per_real,
        reference_2C=reference_2C,
    )


@dataclass(frozen=True)
class CongruenceReport:
    ranks_before: np.ndarray
    ranks_after: np.ndarray
    max_rank_before: int
    max_rank_after: int
    bound_preserved: bool


def preconditioned_noise_check(Theta_sqrt, samples) -> CongruenceReport:
    """Re-measure per-realization ranks after a PD congruence.

    Applies zeta -> Theta^{1/2} zeta Theta^{1/2} to every realization; a
    positive definite congruence is rank-preserving, so the per-sample
    rank profile must be identical.
    """
    ts = require_symmetric(Theta_sqrt, "Theta_sqrt")
    w = np.linalg.eigvalsh(ts)
    if w[0] <= 0.0:
        raise ValueError("Theta_sqrt must be positive definite")
    before = []
    after = []
    for s in samples:
        z = np.asarray(s.zeta_K, dtype=np.float64)
        before.append(matrix_rank_from_svd(z))
        after.append(matrix_rank_from_svd(sym(ts @ z @ ts)))
    before = np.asarray(before)
    after = np.asarray(after)
    return CongruenceReport(
        ranks_before=before,
        ranks_after=after,
        max_rank_before=int(before.max()) if before.size else 0,
        max_rank_after=int(after.max()) if after.size else 0,
        bound_preserved=bool(np.all(after == before)),
    )


def exhaustive_mean_noise(K, labels: LabelSet, lam: float, B: int) -> np.ndarray:
    """Average kernel noise over every batch of size B.

    Oracle for the batch-mean diagnostic.  The masked residual itself is
    an unbiased estimate of R, but its self outer product is not: under
    uniform subsets E[Rb Rb^T] scales the diagonal of R R^T by N/B and the
    off-diagonal by N(B-1)/(B(N-1)), so this mean is nonzero whenever R is.
    """
    K = require_symmetric(K, "K")
    n = K.shape[0]
    batches = enumerate_batches(n, B)
    acc = np.zeros_like(K)
    for batch in batches:
        acc += kernel_noise_matrix(K, labels, lam, batch)
    return acc / len(batches)
