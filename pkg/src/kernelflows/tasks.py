"""Task construction: labels, label Gram matrices, augmentation graphs,
regularization configs, and synthetic clustered datasets.

The objects built here are the drive terms of every flow in the package.
A task is a pair (labels, graph); both sides can be dumped to and loaded
from a small JSON document so experiments are reproducible from disk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    EigenDecomposition,
    commutator_norm,
    require_finite,
    require_symmetric,
    sym_eig,
)


@dataclass(frozen=True)
class LabelSet:
    """Targets Y of shape (N, C); arbitrary real values are allowed."""

    Y: np.ndarray

    def __post_init__(self):
        y = require_finite(self.Y, "Y")
        if y.ndim != 2:
            raise ValueError("Y must be a 2-D (N, C) array")
        object.__setattr__(self, "Y", y)

    @property
    def N(self) -> int:
        return self.Y.shape[0]

    @property
    def C(self) -> int:
        return self.Y.shape[1]


@dataclass(frozen=True)
class AugmentationGraph:
    """Adjacency A (symmetric, nonnegative, zero diagonal) with L = D - A."""

    A: np.ndarray
    D: np.ndarray
    L: np.ndarray

    @property
    def N(self) -> int:
        return self.A.shape[0]

    @property
    def degrees(self) -> np.ndarray:
        return np.diag(self.D)


@dataclass(frozen=True)
class RegularizationConfig:
    """Readout ridge ``lam`` > 0 and feature decay ``mu`` >= 0.

    The derived product ``tau = lam * mu`` is the spectral truncation
    threshold of the supervised steady state.
    """

    lam: float
    mu: float

    def __post_init__(self):
        if not (self.lam > 0.0):
            raise ValueError("lam must be positive")
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")

    @property
    def tau(self) -> float:
        return self.lam * self.mu


@dataclass(frozen=True)
class SSLConfig:
    """Repulsion strength beta > 0, spectral gate epsilon > 0, trace
    penalty mu >= 0; the derived cutoff is (beta/epsilon - mu) / 2."""

    beta: float
    epsilon: float
    mu: float = 0.0

    def __post_init__(self):
        if not (self.beta > 0.0):
            raise ValueError("beta must be positive")
        if not (self.epsilon > 0.0):
            raise ValueError("epsilon must be positive")
        if self.mu < 0.0:
            raise ValueError("mu must be nonnegative")

    @property
    def lambda_cutoff(self) -> float:
        return 0.5 * (self.beta / self.epsilon - self.mu)


@dataclass(frozen=True)
class SemiConfig:
    """Manifold-regularization weight alpha >= 0 on top of a ridge config."""

    alpha: float
    reg: RegularizationConfig = field(default_factory=lambda: RegularizationConfig(1.0, 0.1))

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha < 0.0:
            raise ValueError("alpha must be finite and nonnegative")


def label_gram(labels: LabelSet) -> tuple[np.ndarray, EigenDecomposition]:
    """Label Gram M_Y = Y Y^T together with its eigendecomposition.

    At most C eigenvalues can be nonzero, which is what bounds the rank of
    the supervised drive.
    """
    y = labels.Y
    m = y @ y.T
    m = 0.5 * (m + m.T)
    return m, sym_eig(m)


def build_laplacian(adjacency) -> AugmentationGraph:
    """Combinatorial Laplacian L = D - A of a weighted undirected graph.

    The adjacency must be symmetric with zero diagonal; negative weights
    are rejected.
    """
    a = require_symmetric(adjacency, "adjacency")
    if a.size and np.max(np.abs(np.diag(a))) > 0.0:
        raise ValueError("adjacency must have zero diagonal")
    if a.size and np.min(a) < 0.0:
        raise ValueError("adjacency weights must be nonnegative")
    deg = a.sum(axis=1)
    d = np.diag(deg)
    lap = d - a
    return AugmentationGraph(A=a, D=d, L=0.5 * (lap + lap.T))


def synth_clustered_task(
    N: int,
    C: int,
    intra_weight: float,
    inter_weight: float,
    seed: int,
) -> tuple[LabelSet, AugmentationGraph]:
    """Synthetic balanced clustered dataset with one-hot labels.

    Samples are split into C equal clusters (assignment shuffled by the
    seed); the adjacency is ``intra_weight`` inside a cluster and
    ``inter_weight`` across clusters, zero diagonal.  With zero inter
    weight the label Gram and the Laplacian commute exactly, which is the
    idealized regime of the semi-supervised spectral law; a positive inter
    weight intentionally breaks that commutation.
    """
    if N <= 0 or C <= 0 or N % C != 0:
        raise ValueError("C must divide N")
    if not (intra_weight >= inter_weight >= 0.0):
        raise ValueError("need intra_weight >= inter_weight >= 0")
    rng = np.random.default_rng(np.random.PCG64(seed))
    assignment = np.repeat(np.arange(C), N // C)
    rng.shuffle(assignment)
    y = np.zeros((N, C))
    y[np.arange(N), assignment] = 1.0
    same = assignment[:, None] == assignment[None, :]
    a = np.where(same, intra_weight, inter_weight)
    np.fill_diagonal(a, 0.0)
    return LabelSet(Y=y), build_laplacian(a)


def commutes(labels: LabelSet, graph: AugmentationGraph, tol: float = 1e-6) -> bool:
    """Whether the label Gram and the graph Laplacian commute within tol."""
    m, _ = label_gram(labels)
    return commutator_norm(m, graph.L) <= tol


def task_to_json(labels: LabelSet, graph: AugmentationGraph) -> str:
    """Serialize a task to the row-major JSON document format."""
    doc = {
        "N": labels.N,
        "C": labels.C,
        "Y": labels.Y.tolist(),
        "A": graph.A.tolist(),
    }
    return json.dumps(doc, sort_keys=True)


def task_from_json(text: str) -> tuple[LabelSet, AugmentationGraph]:
    """Load a task from the JSON document format produced by task_to_json."""
    doc = json.loads(text)
    y = np.asarray(doc["Y"], dtype=np.float64)
    a = np.asarray(doc["A"], dtype=np.float64)
    if y.shape != (doc["N"], doc["C"]):
        raise ValueError("Y shape does not match declared N, C")
    if a.shape != (doc["N"], doc["N"]):
        raise ValueError("A shape does not match declared N")
    return LabelSet(Y=y), build_laplacian(a)


def save_task(path, labels: LabelSet, graph: AugmentationGraph) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(task_to_json(labels, graph))


def load_task(path) -> tuple[LabelSet, AugmentationGraph]:
    with open(path, "r", encoding="utf-8") as fh:
        return task_from_json(fh.read())
