"""Optimizer geometry: modulated tangent kernels, anisotropic weight
decay, and the polar-direction (spectral-norm steepest descent) flows.

A linear preconditioner M turns the feature dynamics into a flow driven
by J M^-1 J^T; parameter-space decay shows up as an anisotropic drift in
function space.  The polar-direction optimizer is nonlinear instead: it
rescales every surviving singular value of the drive to one, which
saturates all surviving kernel eigenvalues at the same level (eta/mu)^2
instead of water-filling them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import (
    DEFAULT_RANK_TOL,
    effective_rank,
    pinv_sqrt,
    polar_direction,
    require_finite,
    require_symmetric,
    sym,
)
from .supervised import DIVERGENCE_NORM, FlowConfig
from .tasks import LabelSet


@dataclass(frozen=True)
class PreconditionedModel:
    """Jacobian J (flattened outputs x params), PD preconditioner M, and
    the current parameter vector; G optionally carries a sample Gram."""

    J: np.ndarray
    M: np.ndarray
    theta: np.ndarray
    G: Optional[np.ndarray] = None

    def __post_init__(self):
        j = require_finite(self.J, "J")
        m = require_symmetric(self.M, "M")
        th = require_finite(np.asarray(self.theta, dtype=np.float64).ravel(), "theta")
        if j.ndim != 2 or j.shape[1] != m.shape[0] or th.size != m.shape[0]:
            raise ValueError("J, M, theta dimensions are inconsistent")
        object.__setattr__(self, "J", j)
        object.__setattr__(self, "M", m)
        object.__setattr__(self, "theta", th)


@dataclass(frozen=True)
class MuonConfig:
    """Effective step eta > 0, feature decay mu > 0, and the rank cutoff
    used by the pseudo-inverse square root."""

    eta: float
    mu: float
    rank_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        if not (self.eta > 0.0 and self.mu > 0.0):
            raise ValueError("eta and mu must be positive")


def _solve_pd(M, rhs):
    w = np.linalg.eigvalsh(M)
    if w[0] <= 0.0:
        raise ValueError("preconditioner M must be positive definite")
    return np.linalg.solve(M, rhs)


def modulated_ntk(model: PreconditionedModel) -> np.ndarray:
    """Optimizer-modulated tangent kernel J M^-1 J^T (symmetric PSD)."""
    return sym(model.J @ _solve_pd(model.M, model.J.T))


def weight_decay_image(model: PreconditionedModel) -> np.ndarray:
    """Decay drift J M^-1 theta seen in function space."""
    return model.J @ _solve_pd(model.M, model.theta)


def linear_readout_model(Phi0, W, dual_metric: bool = True) -> PreconditionedModel:
    """Preconditioned view of predictions Phi0^T W^T with parameter W.

    The Jacobian maps vec(W) (row-major) to vec(Yhat).  With
    ``dual_metric=True`` the preconditioner is the inverse feature Gram
    I_C (x) (Phi0 Phi0^T)^-1, under which the decay image reshapes to the
    Gram-weighted prediction G Yhat; with the identity metric it is the
    prediction itself.
    """
    Phi0 = require_finite(Phi0, "Phi0")
    W = require_finite(W, "W")
    k, n = Phi0.shape
    c = W.shape[0]
    if W.shape[1] != k:
        raise ValueError("W and Phi0 disagree on the feature dimension")
    j = np.kron(np.eye(c), Phi0.T)  # vec by rows: theta = W.reshape(-1)
    theta = W.reshape(-1)
    gram_feat = Phi0 @ Phi0.T
    if dual_metric:
        w_eigs = np.linalg.eigvalsh(gram_feat)
        if w_eigs[0] <= 0.0:
            raise ValueError("dual metric needs Phi0 Phi0^T to be positive definite")
        m = np.kron(np.eye(c), np.linalg.inv(gram_feat))
    else:
        m = np.eye(c * k)
    return PreconditionedModel(J=j, M=sym(m), theta=theta, G=Phi0.T @ Phi0)


def readout_decay_check(Phi0, W, lam: float, h: float = 1e-7) -> tuple[np.ndarray, np.ndarray, float]:
    """Gram-anisotropic output decay versus a finite-difference probe.

    The analytic drift is -lam * G Yhat with G = Phi0^T Phi0: weight decay
    applied through the feature-Gram geometry right-multiplies predictions
    by the sample Gram instead of shrinking them isotropically.  The probe
    steps the readout along W <- W - h lam W (Phi0 Phi0^T), the parameter
    flow whose output image is exactly that drift, and differences Yhat.
    Returns (analytic, finite_diff, gap).
    """
    Phi0 = require_finite(Phi0, "Phi0")
    W = require_finite(W, "W")
    yhat = Phi0.T @ W.T
    gram = Phi0.T @ Phi0
    analytic = -lam * gram @ yhat
    w_step = W - h * lam * W @ (Phi0 @ Phi0.T)
    fd = (Phi0.T @ w_step.T - yhat) / h
    gap = float(np.linalg.norm(fd - analytic))
    return analytic, fd, gap


def anisotropic_decay(K, G) -> np.ndarray:
    """Decay operator G K + K G induced by a Gram-weighted penalty."""
    K = require_symmetric(K, "K")
    G = require_symmetric(G, "G")
    if K.shape != G.shape:
        raise ValueError("K and G must share a shape")
    gk = G @ K
    return gk + gk.T


def muon_feature_rhs(Phi, W, R, cfg: MuonConfig) -> np.ndarray:
    """Polar-normalized feature velocity eta P(W^T R^T) - mu Phi."""
    Phi = require_finite(Phi, "Phi")
    W = require_finite(W, "W")
    R = require_finite(R, "R")
    drive = polar_direction(W.T @ R.T, cfg.rank_tol)
    return cfg.eta * drive - cfg.mu * Phi


def muon_kernel_rhs_mse(K, labels: LabelSet, lam: float, cfg: MuonConfig) -> np.ndarray:
    """Closed kernel velocity of the polar-normalized squared-loss flow.

    dK/dt = eta [K B (B K B)^{+ -1/2} + (B K B)^{+ -1/2} B K] - 2 mu K
    with B = S M_Y S.  B is symmetric, which is what lets the two halves
    be transposes of each other; that is asserted rather than assumed.
    """
    K = require_symmetric(K, "K")
    m_y = labels.Y @ labels.Y.T
    return _muon_rhs_from_gram(K, m_y, lam, cfg)


def _muon_rhs_from_gram(K, m_y, lam, cfg: MuonConfig, sigma=None):
    n = K.shape[0]
    if sigma is None:
        sigma = np.linalg.inv(K + lam * np.eye(n))
    b = sym(sigma @ m_y @ sigma)
    core = sym(b @ K @ b)
    s = pinv_sqrt(core, cfg.rank_tol)
    kbs = K @ b @ s
    return cfg.eta * (kbs + kbs.T) - 2.0 * cfg.mu * K


@dataclass
class MuonFeatureState:
    t: float
    Phi: np.ndarray
    drive_rank: int

    @property
    def K(self) -> np.ndarray:
        return self.Phi.T @ self.Phi


@dataclass
class MuonFeatureResult:
    states: list
    converged: bool
    diverged: bool
    n_steps: int

    def __iter__(self):
        return iter(self.states)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def final(self):
        return self.states[-1]


def integrate_muon_feature_flow(
    Phi0,
    labels: LabelSet,
    lam: float,
    muon: MuonConfig,
    cfg: FlowConfig,
) -> MuonFeatureResult:
    """RK4 integration of the polar feature flow with a fast readout.

    The readout is re-solved to its ridge optimum at every stage, so the
    drive is P(Phi B) with B = S M_Y S; by 0-homogeneity the lam scale of
    the residual drops out of the polar factor.
    """
    Phi = require_finite(Phi0, "Phi0").copy()
    Y = labels.Y
    n = Phi.shape[1]
    eye = np.eye(n)
    m_y = Y @ Y.T

    def rhs(phi_c):
        sigma = np.linalg.inv(phi_c.T @ phi_c + lam * eye)
        b = sym(sigma @ m_y @ sigma)
        drive = polar_direction(phi_c @ b, muon.rank_tol)
        return muon.eta * drive - muon.mu * phi_c, drive

    dt = cfg.dt if cfg.dt is not None else 0.02 / max(muon.eta, muon.mu)
    stride = cfg.snapshot_stride or max(1, cfg.max_steps // 200)
    states: list[MuonFeatureState] = []
    converged = False
    diverged = False
    t = 0.0
    step = 0
    while step < cfg.max_steps:
        f1, drive = rhs(Phi)
        if step % stride == 0:
            sv = np.linalg.svd(drive, compute_uv=False)
            dr = int(np.sum(sv > 0.5)) if sv.size else 0
            states.append(MuonFeatureState(t=t, Phi=Phi.copy(), drive_rank=dr))
        if np.linalg.norm(f1) <= cfg.stop_grad_norm:
            converged = True
            break
        f2, _ = rhs(Phi + 0.5 * dt * f1)
        f3, _ = rhs(Phi + 0.5 * dt * f2)
        f4, _ = rhs(Phi + dt * f3)
        Phi = Phi + (dt / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
        t += dt
        step += 1
        if np.linalg.norm(Phi) > DIVERGENCE_NORM or not np.all(np.isfinite(Phi)):
            diverged = True
            break
    if not diverged and (not states or states[-1].t != t):
        _, drive = rhs(Phi)
        sv = np.linalg.svd(drive, compute_uv=False)
        dr = int(np.sum(sv > 0.5)) if sv.size else 0
        states.append(MuonFeatureState(t=t, Phi=Phi.copy(), drive_rank=dr))
    return MuonFeatureResult(states=states, converged=converged, diverged=diverged, n_steps=step)


@dataclass(frozen=True)
class MuonSteadyStateReport:
    effective_rank: int
    rank_ok: bool
    nonzero_eigenvalues: np.ndarray
    target_level: float
    max_rel_level_error: float
    saturation_ok: bool

    @property
    def passed(self) -> bool:
        return self.rank_ok and self.saturation_ok


def muon_steady_state_check(
    terminal_K,
    C: int,
    cfg: MuonConfig,
    rel_threshold: float = 1e-6,
    level_rtol: float = 1e-3,
) -> MuonSteadyStateReport:
    """Check rank <= C and eigenvalue saturation at (eta/mu)^2.

    At a converged polar-flow fixed point every surviving feature singular
    value is eta/mu, so the surviving kernel eigenvalues all sit at one
    level.  A non-converged kernel shows up as ``saturation_ok=False``.
    """
    K = require_symmetric(terminal_K, "terminal_K")
    w = np.linalg.eigvalsh(K)[::-1]
    top = w[0] if w.size else 0.0
    nonzero = w[w > rel_threshold * max(top, 0.0)] if top > 0.0 else np.array([])
    target = (cfg.eta / cfg.mu) ** 2
    if nonzero.size:
        rel_err = float(np.max(np.abs(nonzero - target)) / target)
    else:
        rel_err = 0.0
    rank = int(nonzero.size)
    return MuonSteadyStateReport(
        effective_rank=rank,
        rank_ok=rank <= C,
        nonzero_eigenvalues=nonzero,
        target_level=target,
        max_rel_level_error=rel_err,
        saturation_ok=rel_err <= level_rtol,
    )


@dataclass(frozen=True)
class StationarityReport:
    raw_grad_norm: float
    preconditioned_norm: float
    theta_min_eig: float
    theta_condition: float
    bound_holds: bool
    stalled: bool


def stationarity_invariance_demo(K_star, labels: LabelSet, reg, Theta) -> StationarityReport:
    """Compare raw and Theta-preconditioned stationarity at a kernel.

    For positive definite Theta, sym(Theta grad) = 0 forces grad = 0 and
    the norms obey ||grad|| <= ||sym(Theta grad)|| / min_eig(Theta): the
    report checks that bound.  For singular Theta the report flags a
    stall: a vanishing preconditioned gradient alongside a nonzero raw
    gradient sitting in the null space of Theta.
    """
    from .supervised import effective_loss_grad

    K_star = require_symmetric(K_star, "K_star")
    Theta = require_symmetric(Theta, "Theta")
    grad = effective_loss_grad(K_star, labels.Y, reg.lam, reg.mu)
    pre = sym(Theta @ grad)
    raw_norm = float(np.linalg.norm(grad))
    pre_norm = float(np.linalg.norm(pre))
    w = np.linalg.eigvalsh(Theta)
    theta_min = float(w[0])
    theta_max = float(w[-1])
    singular = theta_min <= 1e-12 * max(theta_max, 1.0)
    cond = np.inf if singular else theta_max / theta_min
    if not singular:
        bound = raw_norm <= pre_norm / theta_min + 1e-12 * max(1.0, raw_norm)
        stalled = False
    else:
        bound = True
        stalled = pre_norm <= 1e-8 * max(1.0, raw_norm) and raw_norm > 1e-8
    return StationarityReport(
        raw_grad_norm=raw_norm,
        preconditioned_norm=pre_norm,
        theta_min_eig=theta_min,
        theta_condition=cond,
        bound_holds=bool(bound),
        stalled=bool(stalled),
    )
