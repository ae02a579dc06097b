"""Closed-form steady-state spectral laws and their verifiers.

Each law maps drive eigenvalues (label signal strengths, graph
frequencies, or data variances) to the predicted steady-state kernel
eigenvalues.  The verifiers check a measured kernel against a law at the
spectrum level only, so degenerate drive eigenvalues never make a check
basis-sensitive.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .linalg import effective_rank, require_finite, require_symmetric, sym, sym_eig
from .supervised import kernel_rhs_mse
from .tasks import LabelSet, RegularizationConfig, SemiConfig, SSLConfig, label_gram

#: relative guard band around the truncation threshold; modes inside the
#: band count as truncated so boundary ties cannot flap
ACTIVE_GUARD = 1e-9


@dataclass
class SpectralProfile:
    """Rows of (mode index, drive eigenvalue, predicted k, measured k)."""

    law: str
    drive: np.ndarray
    predicted: np.ndarray
    measured: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.drive = np.asarray(self.drive, dtype=np.float64)
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        self.measured = np.asarray(self.measured, dtype=np.float64)
        if not (self.drive.shape == self.predicted.shape == self.measured.shape):
            raise ValueError("profile columns must share one length")
        if np.any(self.predicted < 0.0):
            raise ValueError("predicted eigenvalues must be nonnegative")
        order = np.argsort(-self.drive, kind="stable")
        self.drive = self.drive[order]
        self.predicted = self.predicted[order]
        self.measured = self.measured[order]

    def rows(self):
        for i in range(self.drive.size):
            p, m = self.predicted[i], self.measured[i]
            abs_err = abs(m - p)
            rel_err = abs_err / abs(p) if p != 0.0 else np.inf if abs_err > 0 else 0.0
            yield (i, self.drive[i], p, m, abs_err, rel_err)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "drive", "predicted", "measured", "abs_err", "rel_err"])
            for i, d, p, m, a, r in self.rows():
                writer.writerow([i, repr(float(d)), repr(float(p)), repr(float(m)), repr(float(a)), repr(float(r))])


def water_filling_spectrum(sigma, reg: RegularizationConfig) -> np.ndarray:
    """Steady-state eigenvalues lam * (sqrt(sigma_i / tau) - 1)_+.

    tau = lam * mu is the truncation threshold: a mode survives only when
    its drive eigenvalue strictly exceeds tau.
    """
    sigma = _drive_array(sigma)
    if not (reg.mu > 0.0):
        raise ValueError("mu must be positive: the truncation threshold is lam * mu")
    tau = reg.tau
    active = sigma > tau * (1.0 + ACTIVE_GUARD)
    vals = reg.lam * (np.sqrt(np.maximum(sigma, 0.0) / tau) - 1.0)
    return np.where(active, np.maximum(vals, 0.0), 0.0)


def ssl_spectrum(nu, ssl: SSLConfig) -> np.ndarray:
    """Rectified hyperbolic law max(0, beta/(2 nu + mu) - epsilon).

    Modes pass exactly when nu < (beta/epsilon - mu)/2.
    """
    nu = _drive_array(nu)
    denom = 2.0 * nu + ssl.mu
    if np.any(denom == 0.0):
        raise ValueError("2 nu + mu vanishes for some mode; balance is degenerate")
    return np.maximum(0.0, ssl.beta / denom - ssl.epsilon)


def semi_spectrum(sigma, nu, semi: SemiConfig) -> np.ndarray:
    """Hybrid law lam * (sqrt(sigma_i / (lam (mu + alpha nu_i))) - 1)_+.

    A mode is active only when sigma_i / (mu + alpha nu_i) > lam, i.e.
    when it is both label relevant and graph smooth.
    """
    sigma = _drive_array(sigma)
    nu = _drive_array(nu)
    if sigma.shape != nu.shape:
        raise ValueError("sigma and nu must have equal length")
    lam, mu, alpha = semi.reg.lam, semi.reg.mu, semi.alpha
    cost = mu + alpha * nu
    if np.any(cost <= 0.0):
        raise ValueError("mu + alpha nu must be positive for every mode")
    active = sigma > lam * cost * (1.0 + ACTIVE_GUARD)
    vals = lam * (np.sqrt(np.maximum(sigma, 0.0) / (lam * cost)) - 1.0)
    return np.where(active, np.maximum(vals, 0.0), 0.0)


def pca_ssl_spectrum(lambda_x, lam: float, mu: float) -> np.ndarray:
    """Reconstruction-task law max(0, lambda_x / mu - lam).

    Hard thresholding: data directions with variance at or below lam * mu
    are discarded entirely.
    """
    lambda_x = _drive_array(lambda_x)
    if not (mu > 0.0):
        raise ValueError("mu must be positive")
    return np.maximum(0.0, lambda_x / mu - lam)


def water_filling_alt(s, lam: float, mu: float) -> np.ndarray:
    """Variant threshold law max(0, sqrt(s/mu) - lam).

    Comes from a differently parameterized per-mode loss; it agrees with
    ``water_filling_spectrum`` only at lam = 1 and is exposed separately,
    never substituted for the main law.
    """
    s = _drive_array(s)
    if not (mu > 0.0):
        raise ValueError("mu must be positive")
    return np.maximum(0.0, np.sqrt(np.maximum(s, 0.0) / mu) - lam)


def _drive_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).ravel()
    arr = require_finite(arr, "drive eigenvalues")
    if arr.size == 0:
        return arr
    # Roundoff-level negatives from an eigendecomposition count as zero.
    floor = -100.0 * np.finfo(np.float64).eps * max(1.0, float(np.max(np.abs(arr))))
    if np.any(arr < floor):
        raise ValueError("drive eigenvalues must be nonnegative")
    return np.maximum(arr, 0.0)


def predict_K_infinity(labels: LabelSet, reg: RegularizationConfig) -> np.ndarray:
    """Closed-form steady-state kernel in the label-Gram eigenbasis."""
    m_y, dec = label_gram(labels)
    k_eigs = water_filling_spectrum(dec.eigenvalues, reg)
    u = dec.eigenvectors
    return sym((u * k_eigs) @ u.T)


def fixed_point_residual(K, labels: LabelSet, reg: RegularizationConfig) -> float:
    """Frobenius norm of the closed-form kernel velocity at K.

    Zero exactly at fixed points of the squared-loss flow.
    """
    K = require_symmetric(K, "K")
    return float(np.linalg.norm(kernel_rhs_mse(K, labels.Y, reg.lam, reg.mu)))


def rank_compression_check(K, C: int, rel_threshold: float) -> tuple[int, bool]:
    """Effective rank of K and whether it is bounded by the class count."""
    r = effective_rank(K, rel_threshold)
    return r, r <= C


def nuclear_norm_gap(Z, mu: float, trials: int, seed: int) -> tuple[float, float, float]:
    """Certify that the balanced SVD factor split attains mu * ||Z||_*.

    Returns (optimal_energy, nuclear_penalty, min_random_energy) where the
    random energies come from ``trials`` invertible re-factorizations of Z
    and can only sit above the nuclear-norm floor.
    """
    Z = require_finite(Z, "Z")
    if not (mu > 0.0):
        raise ValueError("mu must be positive")
    if trials < 1:
        raise ValueError("trials must be at least 1")
    u, sv, vt = np.linalg.svd(Z, full_matrices=False)
    nuclear = float(mu * np.sum(sv))
    root = np.sqrt(sv)
    w2 = u * root
    w1 = root[:, None] * vt
    optimal = float(0.5 * mu * (np.sum(w1 * w1) + np.sum(w2 * w2)))

    rng = np.random.default_rng(np.random.PCG64(seed))
    d = sv.size
    if d == 0:
        return optimal, nuclear, 0.0
    best = np.inf
    for _ in range(trials):
        # Random well-conditioned invertible mixing matrix: two rotations
        # around a log-uniform diagonal keep the factorization exact.
        q1, _ = np.linalg.qr(rng.standard_normal((d, d)))
        q2, _ = np.linalg.qr(rng.standard_normal((d, d)))
        scales = np.exp(rng.uniform(-1.0, 1.0, size=d))
        t = q1 @ (scales[:, None] * q2)
        a = w2 @ t
        b = np.linalg.solve(t, w1)
        energy = float(0.5 * mu * (np.sum(a * a) + np.sum(b * b)))
        best = min(best, energy)
    return optimal, nuclear, best


def spectrum_in_basis(K, basis: np.ndarray) -> np.ndarray:
    """Diagonal of K in a given orthonormal basis (columns)."""
    K = require_symmetric(K, "K")
    return np.einsum("ij,ik,kj->j", basis, K, basis)


def profile_from_flow(
    terminal_K,
    labels: LabelSet,
    reg: RegularizationConfig,
    law: str = "water_filling",
) -> SpectralProfile:
    """Predicted-versus-measured profile for a supervised terminal kernel.

    Degenerate label eigenvalues are handled by comparing sorted spectra
    inside each drive eigenspace, never individual eigenvectors.
    """
    _, dec = label_gram(labels)
    predicted = water_filling_spectrum(dec.eigenvalues, reg)
    k_dec = sym_eig(terminal_K)
    # Pair measured eigenvalues with drive modes by matching the sorted
    # order: the trace-inequality equality condition couples larger drives
    # with larger kernel eigenvalues.
    measured = k_dec.eigenvalues
    return SpectralProfile(
        law=law,
        drive=dec.eigenvalues,
        predicted=predicted,
        measured=measured,
        params={"lam": reg.lam, "mu": reg.mu},
    )
