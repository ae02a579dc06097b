"""Supervised kernel dynamics.

The central object is the Gram matrix K of the learned features.  Under a
ridge-optimal linear readout the feature gradient flow closes into a
matrix ODE for K alone:

    dK/dt = lam * (S M S K + K S M S) - 2 mu K,     S = (K + lam I)^-1

with M the label Gram.  This module provides the ridge resolvent,
predictions and residuals, the general and closed-form right-hand sides,
the effective (Lyapunov) loss, fixed-step RK4 integration of the kernel
ODE, the coupled feature/readout flow with optional heavy-ball friction,
the scalar one-mode toy flow, and the slow/fast (adiabatic) error sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .linalg import require_finite, require_symmetric, sym
from .tasks import LabelSet, RegularizationConfig

DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings shared by the kernel-level flows.

    ``dt=None`` selects a stability heuristic from the task at hand.
    ``friction`` enables heavy-ball dynamics in the coupled flow when
    positive; zero means plain gradient descent.  ``snapshot_stride=None``
    keeps roughly 200 evenly spaced snapshots plus the final state.
    """

    dt: Optional[float] = None
    max_steps: int = 200_000
    stop_grad_norm: float = 1e-9
    psd_guard: bool = True
    friction: float = 0.0
    snapshot_stride: Optional[int] = None

    def __post_init__(self):
        if self.dt is not None and not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        if not (self.stop_grad_norm > 0.0):
            raise ValueError("stop_grad_norm must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.friction < 0.0:
            raise ValueError("friction must be nonnegative")


@dataclass(frozen=True)
class SupervisedFlowState:
    """One snapshot of the kernel flow."""

    t: float
    K: np.ndarray
    Sigma: np.ndarray
    Yhat: np.ndarray
    R: np.ndarray
    eff_loss: float


@dataclass(frozen=True)
class CoupledState:
    """One snapshot of the coupled feature/readout flow."""

    t: float
    Phi: np.ndarray
    W: np.ndarray
    eta_W: float
    eta_Phi: float
    objective: float

    @property
    def K(self) -> np.ndarray:
        return self.Phi.T @ self.Phi


@dataclass
class KernelFlowResult:
    """Trajectory of kernel snapshots plus per-step scalar diagnostics."""

    states: list
    converged: bool
    diverged: bool
    n_steps: int
    step_times: np.ndarray
    step_eff_loss: np.ndarray
    step_trace: np.ndarray

    def __iter__(self):
        return iter(self.states)

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    @property
    def final(self):
        return self.states[-1]


@dataclass
class CoupledFlowResult:
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


def resolvent(K, lam: float) -> np.ndarray:
    """Ridge resolvent (K + lam I)^-1 of a PSD kernel, lam > 0."""
    K = require_symmetric(K, "K")
    if not (lam > 0.0):
        raise ValueError("lam must be positive")
    n = K.shape[0]
    return sym(np.linalg.inv(K + lam * np.eye(n)))


def ridge_prediction(K, Y, lam: float) -> np.ndarray:
    """Ridge prediction K (K + lam I)^-1 Y; shrinks every label mode."""
    Y = require_finite(Y, "Y")
    K = require_symmetric(K, "K")
    if Y.shape[0] != K.shape[0]:
        raise ValueError("K and Y sample counts differ")
    return K @ _solve_reg(K, Y, lam)


def residual_mse(K, Y, lam: float) -> np.ndarray:
    """Squared-loss residual R = lam (K + lam I)^-1 Y = Y - Yhat."""
    Y = require_finite(Y, "Y")
    K = require_symmetric(K, "K")
    return lam * _solve_reg(K, Y, lam)


def _solve_reg(K, Y, lam: float) -> np.ndarray:
    if not (lam > 0.0):
        raise ValueError("lam must be positive")
    n = K.shape[0]
    return np.linalg.solve(K + lam * np.eye(n), Y)


def kernel_rhs_general(Yhat, R, K, mu: float) -> np.ndarray:
    """Loss-agnostic kernel velocity R Yhat^T + Yhat R^T - 2 mu K."""
    Yhat = require_finite(Yhat, "Yhat")
    R = require_finite(R, "R")
    K = require_symmetric(K, "K")
    drive = R @ Yhat.T
    return drive + drive.T - 2.0 * mu * K


def kernel_rhs_mse(K, Y, lam: float, mu: float) -> np.ndarray:
    """Closed-form squared-loss kernel velocity.

    Equals ``kernel_rhs_general`` composed with the ridge prediction and
    residual, but written directly in terms of the label Gram.
    """
    K = require_symmetric(K, "K")
    Y = require_finite(Y, "Y")
    m = Y @ Y.T
    return _rhs_mse_from_gram(K, m, lam, mu)


def _rhs_mse_from_gram(K, M_Y, lam, mu, sigma=None):
    if sigma is None:
        n = K.shape[0]
        sigma = np.linalg.inv(K + lam * np.eye(n))
    b = sigma @ M_Y @ sigma
    bk = b @ K
    return lam * (bk + bk.T) - 2.0 * mu * K


def effective_loss(K, Y, lam: float, mu: float) -> float:
    """Adiabatic objective Tr(Y^T (I + K/lam)^-1 Y) + mu Tr(K).

    This is the Lyapunov function of the squared-loss kernel flow; it is
    ||Y||_F^2 at K = 0 and never drops below mu Tr(K).
    """
    K = require_symmetric(K, "K")
    Y = require_finite(Y, "Y")
    if not (lam > 0.0):
        raise ValueError("lam must be positive")
    n = K.shape[0]
    x = np.linalg.solve(np.eye(n) + K / lam, Y)
    return float(np.sum(Y * x) + mu * np.trace(K))


def effective_loss_grad(K, Y, lam: float, mu: float) -> np.ndarray:
    """Euclidean gradient mu I - lam S M_Y S of the effective loss."""
    K = require_symmetric(K, "K")
    Y = require_finite(Y, "Y")
    n = K.shape[0]
    sigma = np.linalg.inv(K + lam * np.eye(n))
    sy = sigma @ Y
    return sym(mu * np.eye(n) - lam * (sy @ sy.T))


def default_dt(labels: LabelSet, reg: RegularizationConfig, extra_rate: float = 0.0) -> float:
    """Stability heuristic 0.1 / (max_eig(M_Y)/lam^2 + 2 mu + extra)."""
    sv = np.linalg.svd(labels.Y, compute_uv=False)
    top = float(sv[0] ** 2) if sv.size else 0.0
    rate = top / reg.lam**2 + 2.0 * reg.mu + extra_rate
    if rate <= 0.0:
        return 0.1
    return 0.1 / rate


def default_initial_kernel(N: int, seed: int = 0, scale: float = 0.1, jitter: float = 1e-3) -> np.ndarray:
    """Default K0 = scale * I plus a small random PSD jitter.

    The jitter gives every label mode a nonzero overlap, so the flow does
    not start exactly on the unstable K = 0 fixed point.
    """
    rng = np.random.default_rng(np.random.PCG64(seed))
    a = rng.standard_normal((N, N))
    j = a @ a.T
    top = np.linalg.eigvalsh(j)[-1]
    if top > 0.0:
        j = j / top
    return scale * np.eye(N) + jitter * j


def _psd_guard_step(K: np.ndarray) -> np.ndarray:
    # Cholesky of K + tiny I is a cheap PSD certificate; fall back to an
    # eigenvalue clip only when it fails.
    n = K.shape[0]
    shift = 1e-12 * max(1.0, float(np.trace(K)) / max(n, 1))
    try:
        np.linalg.cholesky(K + shift * np.eye(n))
        return K
    except np.linalg.LinAlgError:
        w, u = np.linalg.eigh(K)
        w = np.maximum(w, 0.0)
        return sym((u * w) @ u.T)


def integrate_kernel_flow(
    K0,
    rhs_kind: str,
    labels: LabelSet,
    reg: RegularizationConfig,
    cfg: FlowConfig,
    muon=None,
) -> KernelFlowResult:
    """Integrate the kernel ODE with fixed-step RK4.

    ``rhs_kind`` selects the velocity field: ``"mse"`` (closed form),
    ``"general"`` (residual/prediction composition; identical dynamics for
    squared loss), or ``"muon_mse"`` (polar-normalized drive; requires a
    MuonConfig via ``muon``).  Terminates when ||dK/dt||_F falls below
    ``cfg.stop_grad_norm`` or after ``cfg.max_steps``; a Frobenius norm
    above 1e12 is reported as divergence with the trajectory prefix kept.
    """
    K = require_symmetric(K0, "K0").copy()
    Y = labels.Y
    lam = reg.lam
    n = K.shape[0]
    if Y.shape[0] != n:
        raise ValueError("K0 and labels disagree on N")
    m_y = Y @ Y.T
    eye = np.eye(n)

    if rhs_kind == "mse":
        mu = reg.mu

        def rhs(Kc):
            sigma = np.linalg.inv(Kc + lam * eye)
            return _rhs_mse_from_gram(Kc, m_y, lam, mu, sigma=sigma), sigma

    elif rhs_kind == "general":
        mu = reg.mu

        def rhs(Kc):
            sigma = np.linalg.inv(Kc + lam * eye)
            yhat = Kc @ (sigma @ Y)
            r = lam * (sigma @ Y)
            return kernel_rhs_general(yhat, r, Kc, mu), sigma

    elif rhs_kind == "muon_mse":
        if muon is None:
            raise ValueError("rhs_kind 'muon_mse' needs a MuonConfig")
        from .precondition import _muon_rhs_from_gram

        mu = muon.mu

        def rhs(Kc):
            sigma = np.linalg.inv(Kc + lam * eye)
            return _muon_rhs_from_gram(Kc, m_y, lam, muon, sigma=sigma), sigma

    else:
        raise ValueError(f"unknown rhs_kind {rhs_kind!r}")

    dt = cfg.dt if cfg.dt is not None else default_dt(labels, reg)
    stride = cfg.snapshot_stride or max(1, cfg.max_steps // 200)

    states: list[SupervisedFlowState] = []
    times, losses, traces = [], [], []

    def snapshot(t, Kc, sigma):
        yhat = Kc @ (sigma @ Y)
        r = lam * (sigma @ Y)
        el = float(lam * np.sum(Y * (sigma @ Y)) + mu * np.trace(Kc))
        states.append(SupervisedFlowState(t=t, K=Kc.copy(), Sigma=sigma, Yhat=yhat, R=r, eff_loss=el))

    converged = False
    diverged = False
    t = 0.0
    step = 0
    while step < cfg.max_steps:
        f1, sigma1 = rhs(K)
        el = float(lam * np.sum(Y * (sigma1 @ Y)) + mu * np.trace(K))
        times.append(t)
        losses.append(el)
        traces.append(float(np.trace(K)))
        if step % stride == 0:
            snapshot(t, K, sigma1)
        gnorm = float(np.linalg.norm(f1))
        if gnorm <= cfg.stop_grad_norm:
            converged = True
            break
        f2, _ = rhs(K + 0.5 * dt * f1)
        f3, _ = rhs(K + 0.5 * dt * f2)
        f4, _ = rhs(K + dt * f3)
        K = K + (dt / 6.0) * (f1 + 2.0 * f2 + 2.0 * f3 + f4)
        K = sym(K)
        if cfg.psd_guard:
            K = _psd_guard_step(K)
        t += dt
        step += 1
        if np.linalg.norm(K) > DIVERGENCE_NORM or not np.all(np.isfinite(K)):
            diverged = True
            break

    if not diverged:
        _, sigma_f = rhs(K)
        if not states or states[-1].t != t:
            snapshot(t, K, sigma_f)
    return KernelFlowResult(
        states=states,
        converged=converged,
        diverged=diverged,
        n_steps=step,
        step_times=np.asarray(times),
        step_eff_loss=np.asarray(losses),
        step_trace=np.asarray(traces),
    )


def coupled_objective(Phi, W, Y, lam: float, mu: float) -> float:
    e = Phi.T @ W.T - Y
    return float(0.5 * np.sum(e * e) + 0.5 * lam * np.sum(W * W) + 0.5 * mu * np.sum(Phi * Phi))


def _coupled_grads(Phi, W, Y, lam, mu):
    e = Phi.T @ W.T - Y
    g_w = e.T @ Phi.T + lam * W
    g_phi = W.T @ e.T + mu * Phi
    return g_w, g_phi


def default_coupled_dt(Phi0, W0, Y, reg: RegularizationConfig, eta_W: float, eta_Phi: float) -> float:
    """Euler step bounded through the objective-level norm bounds.

    Along the flow ||Phi||^2 <= 2 J0 / mu and ||W||^2 <= 2 J0 / lam, so
    the local gradient Lipschitz constants stay below the rates used here.
    """
    j0 = coupled_objective(Phi0, W0, Y, reg.lam, reg.mu)
    phi2 = max(float(np.linalg.norm(Phi0, 2) ** 2), 2.0 * j0 / reg.mu if reg.mu > 0 else 0.0)
    w2 = max(float(np.linalg.norm(W0, 2) ** 2), 2.0 * j0 / reg.lam)
    rate = max(eta_W * (phi2 + reg.lam), eta_Phi * (w2 + reg.mu), 1e-12)
    return 0.2 / rate


def coupled_flow(
    Phi0,
    W0,
    labels: LabelSet,
    reg: RegularizationConfig,
    eta_W: float,
    eta_Phi: float,
    cfg: FlowConfig,
) -> CoupledFlowResult:
    """Forward-Euler integration of the coupled feature/readout flow.

    Both variables take a step ``eta * dt`` against their regularized
    gradients, mirroring two literal learning rates.  With
    ``cfg.friction > 0`` the update switches to heavy-ball dynamics with
    that friction coefficient; fixed points are unchanged.  Terminates
    when both gradient norms fall below ``cfg.stop_grad_norm``.
    """
    Phi = require_finite(Phi0, "Phi0").copy()
    W = require_finite(W0, "W0").copy()
    Y = labels.Y
    lam, mu = reg.lam, reg.mu
    if not (mu > 0.0):
        raise ValueError("coupled flow needs mu > 0")
    if not (eta_W > 0.0 and eta_Phi > 0.0):
        raise ValueError("learning rates must be positive")

    dt = cfg.dt if cfg.dt is not None else default_coupled_dt(Phi, W, Y, reg, eta_W, eta_Phi)
    stride = cfg.snapshot_stride or max(1, cfg.max_steps // 200)
    use_momentum = cfg.friction > 0.0
    v_w = np.zeros_like(W)
    v_phi = np.zeros_like(Phi)

    states: list[CoupledState] = []

    def snapshot(t, Phi_c, W_c):
        states.append(
            CoupledState(
                t=t,
                Phi=Phi_c.copy(),
                W=W_c.copy(),
                eta_W=eta_W,
                eta_Phi=eta_Phi,
                objective=coupled_objective(Phi_c, W_c, Y, lam, mu),
            )
        )

    converged = False
    diverged = False
    t = 0.0
    step = 0
    while step < cfg.max_steps:
        g_w, g_phi = _coupled_grads(Phi, W, Y, lam, mu)
        if step % stride == 0:
            snapshot(t, Phi, W)
        if max(np.linalg.norm(g_w), np.linalg.norm(g_phi)) <= cfg.stop_grad_norm:
            converged = True
            break
        if use_momentum:
            v_w = v_w + dt * (-cfg.friction * v_w - eta_W * g_w)
            v_phi = v_phi + dt * (-cfg.friction * v_phi - eta_Phi * g_phi)
            W = W + dt * v_w
            Phi = Phi + dt * v_phi
        else:
            W = W - dt * eta_W * g_w
            Phi = Phi - dt * eta_Phi * g_phi
        t += dt
        step += 1
        if np.linalg.norm(Phi) > DIVERGENCE_NORM or not np.all(np.isfinite(Phi)):
            diverged = True
            break

    if not diverged and (not states or states[-1].t != t):
        snapshot(t, Phi, W)
    return CoupledFlowResult(states=states, converged=converged, diverged=diverged, n_steps=step)


def optimal_readout(Phi, Y, lam: float) -> np.ndarray:
    """Ridge-optimal readout W* = Y^T Phi^T (Phi Phi^T + lam I)^-1."""
    Phi = require_finite(Phi, "Phi")
    Y = require_finite(Y, "Y")
    k = Phi.shape[0]
    return np.linalg.solve(Phi @ Phi.T + lam * np.eye(k), Phi @ Y).T


def scalar_growth(k, y: float, lam: float):
    """Drive term 2 lam k y^2 / (lam + k)^2 of the one-mode flow."""
    k = np.asarray(k, dtype=np.float64)
    return 2.0 * lam * k * y * y / (lam + k) ** 2


def scalar_flow(k0: float, y: float, lam: float, mu: float, cfg: FlowConfig) -> list:
    """One-mode toy flow dk/dt = 2 lam k y^2/(lam+k)^2 - 2 mu k.

    Returns a list of (t, k) pairs.  The state is clipped at zero, so the
    trajectory never leaves the nonnegative half-line.
    """
    if k0 < 0.0:
        raise ValueError("k0 must be nonnegative")
    dt = cfg.dt if cfg.dt is not None else 0.1 / (2.0 * y * y / lam + 2.0 * mu + 1e-12)

    def f(k):
        return 2.0 * lam * k * y * y / (lam + k) ** 2 - 2.0 * mu * k

    k = float(k0)
    t = 0.0
    out = [(t, k)]
    for _ in range(cfg.max_steps):
        f1 = f(k)
        if abs(f1) <= cfg.stop_grad_norm:
            break
        f2 = f(k + 0.5 * dt * f1)
        f3 = f(k + 0.5 * dt * f2)
        f4 = f(k + dt * f3)
        k = max(k + (dt / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4), 0.0)
        t += dt
        out.append((t, k))
    return out


def scalar_terminal_grid(k0, y2, mu, lam: float, dt: float, n_steps: int) -> np.ndarray:
    """Vectorized terminal values of the one-mode flow over parameter grids.

    ``y2`` and ``mu`` broadcast against each other; all cells share the
    fixed step ``dt`` and horizon ``n_steps * dt``.
    """
    y2 = np.asarray(y2, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    k = np.broadcast_arrays(np.asarray(k0, dtype=np.float64), y2, mu)[0].copy()
    y2b, mub = np.broadcast_arrays(y2, mu)

    def f(kc):
        return 2.0 * lam * kc * y2b / (lam + kc) ** 2 - 2.0 * mub * kc

    for _ in range(n_steps):
        f1 = f(k)
        f2 = f(k + 0.5 * dt * f1)
        f3 = f(k + 0.5 * dt * f2)
        f4 = f(k + dt * f3)
        k = np.maximum(k + (dt / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4), 0.0)
    return k


def reduced_feature_rhs(Phi, Y, lam: float, mu: float) -> np.ndarray:
    """Feature velocity with the readout at its ridge optimum.

    Equals lam * Phi S M_Y S - mu Phi where S is the resolvent of
    Phi^T Phi; this is the slow subsystem of the two-time-scale flow.
    """
    n = Phi.shape[1]
    sigma = np.linalg.inv(Phi.T @ Phi + lam * np.eye(n))
    sy = sigma @ Y
    return lam * (Phi @ (sy @ (Y.T @ sigma))) - mu * Phi


def adiabatic_error_sweep(
    Phi0,
    W0,
    labels: LabelSet,
    reg: RegularizationConfig,
    epsilon_list,
    horizon: float,
    n_grid: int = 11,
    coupled_steps_per_eps: float = 50.0,
    reduced_steps: int = 2000,
) -> list:
    """Sup-norm gap between the coupled and the reduced feature flow.

    For each epsilon = eta_Phi / eta_W the coupled system is integrated
    with eta_Phi = 1, eta_W = 1/epsilon, and compared on a fixed time grid
    against the reduced flow started from the same Phi0.  Returns a list
    of (epsilon, sup-norm error); a diverged inner flow reports inf.
    """
    Phi0 = require_finite(Phi0, "Phi0")
    W0 = require_finite(W0, "W0")
    Y = labels.Y
    lam, mu = reg.lam, reg.mu
    eps_arr = [float(e) for e in epsilon_list]
    for e in eps_arr:
        if not (0.0 < e < 1.0):
            raise ValueError("each epsilon must lie in (0, 1)")

    # Reference: RK4 on the reduced flow, sampled on the grid.
    n_r = int(np.ceil(reduced_steps / (n_grid - 1))) * (n_grid - 1)
    dt_r = horizon / n_r
    phi_r = Phi0.copy()
    reduced_samples = [phi_r.copy()]
    per_seg = n_r // (n_grid - 1)
    for seg in range(n_grid - 1):
        for _ in range(per_seg):
            f1 = reduced_feature_rhs(phi_r, Y, lam, mu)
            f2 = reduced_feature_rhs(phi_r + 0.5 * dt_r * f1, Y, lam, mu)
            f3 = reduced_feature_rhs(phi_r + 0.5 * dt_r * f2, Y, lam, mu)
            f4 = reduced_feature_rhs(phi_r + dt_r * f3, Y, lam, mu)
            phi_r = phi_r + (dt_r / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4)
        reduced_samples.append(phi_r.copy())

    out = []
    for eps in eps_arr:
        eta_w = 1.0 / eps
        n_c = int(np.ceil(coupled_steps_per_eps * horizon / eps / (n_grid - 1))) * (n_grid - 1)
        dt_c = horizon / n_c
        per_seg_c = n_c // (n_grid - 1)
        phi = Phi0.copy()
        w = W0.copy()
        err = 0.0
        bad = False
        for seg in range(n_grid - 1):
            for _ in range(per_seg_c):
                g_w, g_phi = _coupled_grads(phi, w, Y, lam, mu)
                w = w - dt_c * eta_w * g_w
                phi = phi - dt_c * g_phi
            if np.linalg.norm(phi) > DIVERGENCE_NORM or not np.all(np.isfinite(phi)):
                bad = True
                break
            err = max(err, float(np.linalg.norm(phi - reduced_samples[seg + 1])))
        out.append((eps, np.inf if bad else err))
    return out
