"""Dense symmetric linear algebra shared by all kernel flows.

Everything here is a pure function over float64 arrays: symmetric
eigendecompositions, projection onto the PSD cone, pseudo-inverse square
roots, the polar-direction operator used by spectral-norm optimizers, and
small spectral diagnostics (effective rank, commutator score, subspace
overlap).  Inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: relative singular-value threshold below which a direction counts as null
DEFAULT_RANK_TOL = 1e-10

#: absolute tolerance for "is symmetric" checks
SYM_TOL = 1e-12

_EPS = float(np.finfo(np.float64).eps)


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenpairs of a symmetric matrix, eigenvalues sorted descending.

    ``eigenvectors[:, i]`` is the unit eigenvector paired with
    ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        u, w = self.eigenvectors, self.eigenvalues
        return (u * w) @ u.T


def _as_square(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def require_finite(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def require_symmetric(a, name: str = "matrix", tol: float = SYM_TOL) -> np.ndarray:
    a = _as_square(require_finite(a, name), name)
    skew = np.max(np.abs(a - a.T)) if a.size else 0.0
    if skew > tol:
        raise ValueError(f"{name} is not symmetric (max |A - A^T| = {skew:.3e})")
    return a


def sym(a) -> np.ndarray:
    """Symmetric part (A + A^T) / 2."""
    a = np.asarray(a, dtype=np.float64)
    return 0.5 * (a + a.T)


def sym_eig(s) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Ties keep the backend order after the flip; no meaning is attached to
    the ordering inside a degenerate eigenspace.
    """
    s = require_symmetric(s, "S")
    w, u = np.linalg.eigh(sym(s))
    return EigenDecomposition(eigenvalues=w[::-1].copy(), eigenvectors=u[:, ::-1].copy())


def psd_project(s) -> np.ndarray:
    """Nearest PSD matrix in S's own eigenbasis (negative eigenvalues -> 0).

    A matrix that is already PSD is returned unchanged.
    """
    s = require_symmetric(s, "S")
    w, u = np.linalg.eigh(sym(s))
    if w.size == 0 or w[0] >= 0.0:
        return s
    w = np.maximum(w, 0.0)
    return sym((u * w) @ u.T)


def pinv_sqrt(s, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Pseudo-inverse square root S^{+1/2 inverse} of a PSD matrix.

    Eigenvalues above ``rank_tol * max_eig`` map to ``1/sqrt(eig)``, the
    rest to zero.  Rejects inputs with a genuinely negative spectrum.
    """
    s = require_symmetric(s, "S")
    w, u = np.linalg.eigh(sym(s))
    top = w[-1] if w.size else 0.0
    neg_tol = max(rank_tol * max(top, 0.0), 100.0 * _EPS * max(top, 1.0))
    if w.size and w[0] < -neg_tol:
        raise ValueError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    cut = rank_tol * max(top, 0.0)
    inv_sqrt = np.where(w > cut, 1.0 / np.sqrt(np.maximum(w, cut if cut > 0 else 1.0)), 0.0)
    if top <= 0.0:
        return np.zeros_like(s)
    return sym((u * inv_sqrt) @ u.T)


def polar_direction(g, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Polar factor U V^T of the compact SVD of G.

    This equals G (G^T G)^{+ -1/2}; all surviving singular values are
    mapped to one, rank and row/column spaces are preserved, and the map
    is 0-homogeneous (scale invariant).
    """
    g = require_finite(g, "G")
    if g.ndim != 2:
        raise ValueError("G must be a 2-D array")
    u, sv, vt = np.linalg.svd(g, full_matrices=False)
    if sv.size == 0 or sv[0] <= 0.0:
        return np.zeros_like(g)
    keep = sv > rank_tol * sv[0]
    return u[:, keep] @ vt[keep, :]


def newton_schulz_polar(g, steps: int = 5) -> np.ndarray:
    """Cubic Newton-Schulz approximation of the polar factor of G.

    Iterates X <- 1.5 X - 0.5 X X^T X starting from G / ||G||_F, which is
    inside the convergence region ||X||_2 < sqrt(3).  Cross-check only;
    `polar_direction` is the exact operator.
    """
    g = require_finite(g, "G")
    norm = np.linalg.norm(g)
    if norm == 0.0:
        return np.zeros_like(g)
    x = g / norm
    transpose = x.shape[0] < x.shape[1]
    if transpose:
        x = x.T
    for _ in range(steps):
        x = 1.5 * x - 0.5 * (x @ (x.T @ x))
    return x.T if transpose else x


def commutator_norm(a, b) -> float:
    """Normalized misalignment ||AB - BA||_F / (||A||_F ||B||_F + eps)."""
    a = require_symmetric(a, "A")
    b = require_symmetric(b, "B")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    num = np.linalg.norm(a @ b - b @ a)
    return float(num / (np.linalg.norm(a) * np.linalg.norm(b) + _EPS))


def effective_rank(s, rel_threshold: float) -> int:
    """Number of eigenvalues of a PSD matrix above rel_threshold * max_eig."""
    s = require_symmetric(s, "S")
    w = np.linalg.eigvalsh(sym(s))
    top = w[-1] if w.size else 0.0
    if top <= 0.0:
        return 0
    return int(np.sum(w > rel_threshold * top))


def subspace_overlap(u1, u2, tol: float = 1e-8) -> float:
    """Overlap score (1/r) ||U1^T U2||_F^2 for orthonormal column sets.

    Equals 1 exactly when both span the same subspace (for equal column
    counts) and 0 for orthogonal complements; r is the smaller column
    count.
    """
    u1 = require_finite(np.atleast_2d(u1), "U1")
    u2 = require_finite(np.atleast_2d(u2), "U2")
    if u1.shape[0] != u2.shape[0]:
        raise ValueError("ambient dimensions differ")
    for name, u in (("U1", u1), ("U2", u2)):
        gram = u.T @ u
        if np.max(np.abs(gram - np.eye(u.shape[1]))) > tol:
            raise ValueError(f"{name} columns are not orthonormal")
    r = min(u1.shape[1], u2.shape[1])
    if r == 0:
        return 0.0
    return float(np.linalg.norm(u1.T @ u2) ** 2 / r)


def range_projector(s, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Orthogonal projector onto the range of a PSD matrix."""
    dec = sym_eig(s)
    top = dec.eigenvalues[0] if dec.eigenvalues.size else 0.0
    if top <= 0.0:
        return np.zeros_like(np.asarray(s, dtype=np.float64))
    keep = dec.eigenvalues > rank_tol * top
    u = dec.eigenvectors[:, keep]
    return u @ u.T


def matrix_rank_from_svd(a, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Rank of a general matrix as the count of singular values above tol."""
    a = require_finite(a, "A")
    sv = np.linalg.svd(a, compute_uv=False)
    if sv.size == 0 or sv[0] <= 0.0:
        return 0
    return int(np.sum(sv > rank_tol * sv[0]))
