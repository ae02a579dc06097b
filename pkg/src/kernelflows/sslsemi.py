"""Self-supervised energy flow on the PSD cone and the semi-supervised
hybrid balance.

The self-supervised objective trades graph smoothness (a Laplacian trace)
against a log-det repulsion gated by epsilon; its unique minimizer is the
rectified hyperbolic spectrum in the Laplacian eigenbasis.  The
semi-supervised side couples the supervised drive with an anisotropic
Laplacian decay and is verified per mode on commuting tasks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .laws import semi_spectrum, ssl_spectrum
from .linalg import commutator_norm, require_finite, require_symmetric, sym
from .supervised import DIVERGENCE_NORM, FlowConfig, _psd_guard_step
from .tasks import AugmentationGraph, LabelSet, SemiConfig, SSLConfig, label_gram


@dataclass(frozen=True)
class SSLFlowState:
    t: float
    K: np.ndarray
    energy: float
    grad_norm: float


@dataclass
class SSLFlowResult:
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


def ssl_energy(K, graph: AugmentationGraph, ssl: SSLConfig) -> float:
    """Energy 2 Tr(LK) + mu Tr(K) - beta log det(K + eps I).

    K + eps I must be positive definite; the log-det term makes the
    functional strictly convex on that domain.  The alignment weight 2
    comes from summing pairwise feature distances over ordered pairs; an
    unordered-pair convention would halve it (and rescale beta/mu along
    with it).
    """
    K = require_symmetric(K, "K")
    sign, logdet = np.linalg.slogdet(K + ssl.epsilon * np.eye(K.shape[0]))
    if sign <= 0.0:
        raise ValueError("K + epsilon I must be positive definite")
    return float(2.0 * np.trace(graph.L @ K) + ssl.mu * np.trace(K) - ssl.beta * logdet)


def ssl_energy_grad(K, graph: AugmentationGraph, ssl: SSLConfig) -> np.ndarray:
    """Gradient 2L + mu I - beta (K + eps I)^-1 of the energy."""
    K = require_symmetric(K, "K")
    n = K.shape[0]
    shifted = K + ssl.epsilon * np.eye(n)
    w = np.linalg.eigvalsh(shifted)
    if w[0] <= 0.0:
        raise ValueError("K + epsilon I must be positive definite")
    inv = np.linalg.inv(shifted)
    return sym(2.0 * graph.L + ssl.mu * np.eye(n) - ssl.beta * inv)


def ssl_optimal_kernel(graph: AugmentationGraph, ssl: SSLConfig) -> np.ndarray:
    """Rectified closed-form minimizer in the Laplacian eigenbasis."""
    w, u = np.linalg.eigh(graph.L)
    k_eigs = ssl_spectrum(np.maximum(w, 0.0), ssl)
    return sym((u * k_eigs) @ u.T)


def default_ssl_step(graph: AugmentationGraph, ssl: SSLConfig) -> float:
    """Step heuristic 0.25 / (2 max_eig(L) + mu + beta/eps)."""
    top = float(np.linalg.eigvalsh(graph.L)[-1])
    return 0.25 / (2.0 * top + ssl.mu + ssl.beta / ssl.epsilon)


def ssl_flow(K0, graph: AugmentationGraph, ssl: SSLConfig, cfg: FlowConfig) -> SSLFlowResult:
    """Projected gradient descent on the energy over the PSD cone.

    Each step moves against the gradient and projects back onto the cone;
    convexity of the energy makes the method land on the same unique
    minimizer as any intrinsic flow.  Terminates when the projected step,
    scaled back to a gradient norm, falls below ``cfg.stop_grad_norm``.
    """
    K = require_symmetric(K0, "K0").copy()
    step = cfg.dt if cfg.dt is not None else default_ssl_step(graph, ssl)
    stride = cfg.snapshot_stride or max(1, cfg.max_steps // 200)
    states: list[SSLFlowState] = []
    converged = False
    diverged = False
    t = 0.0
    n_step = 0
    while n_step < cfg.max_steps:
        grad = ssl_energy_grad(K, graph, ssl)
        energy = ssl_energy(K, graph, ssl)
        k_next = _psd_guard_step(sym(K - step * grad))
        move = float(np.linalg.norm(k_next - K) / step)
        if n_step % stride == 0:
            states.append(SSLFlowState(t=t, K=K.copy(), energy=energy, grad_norm=move))
        if move <= cfg.stop_grad_norm:
            converged = True
            break
        K = k_next
        t += step
        n_step += 1
        if np.linalg.norm(K) > DIVERGENCE_NORM or not np.all(np.isfinite(K)):
            diverged = True
            break
    if not diverged and (not states or states[-1].t != t):
        grad = ssl_energy_grad(K, graph, ssl)
        states.append(
            SSLFlowState(t=t, K=K.copy(), energy=ssl_energy(K, graph, ssl), grad_norm=float(np.linalg.norm(grad)))
        )
    return SSLFlowResult(states=states, converged=converged, diverged=diverged, n_steps=n_step)


def dirichlet_identity_check(Phi, graph: AugmentationGraph) -> tuple[float, float, float]:
    """Pairwise Dirichlet energy versus its trace form.

    lhs sums A_ij ||phi_i - phi_j||^2 over all ordered pairs, rhs is
    2 Tr(L K) with K the feature Gram; both are the same number up to
    roundoff and the gap is returned alongside.
    """
    Phi = require_finite(Phi, "Phi")
    K = Phi.T @ Phi
    diag = np.diag(K)
    sq_dist = diag[:, None] + diag[None, :] - 2.0 * K
    lhs = float(np.sum(graph.A * sq_dist))
    rhs = float(2.0 * np.trace(graph.L @ K))
    return lhs, rhs, abs(lhs - rhs)


def joint_eigenbasis(A, B, tol: float = 1e-8) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Common eigenbasis of two commuting symmetric matrices.

    Diagonalizes A, then re-diagonalizes B inside each degenerate
    eigenspace of A.  Returns (U, eig_A, eig_B) with U orthonormal
    columns; requires [A, B] to vanish within tol.
    """
    A = require_symmetric(A, "A")
    B = require_symmetric(B, "B")
    if commutator_norm(A, B) > tol:
        raise ValueError("matrices do not commute within tolerance")
    w, u = np.linalg.eigh(A)
    scale = max(abs(w[0]), abs(w[-1]), 1.0)
    groups = []
    start = 0
    for i in range(1, w.size + 1):
        if i == w.size or abs(w[i] - w[start]) > 1e-9 * scale:
            groups.append((start, i))
            start = i
    u_out = np.zeros_like(u)
    eig_b = np.zeros_like(w)
    for lo, hi in groups:
        block = u[:, lo:hi]
        b_small = block.T @ B @ block
        wb, ub = np.linalg.eigh(sym(b_small))
        u_out[:, lo:hi] = block @ ub
        eig_b[lo:hi] = wb
    return u_out, w, eig_b


def semi_kernel_rhs(K, labels: LabelSet, graph: AugmentationGraph, semi: SemiConfig) -> np.ndarray:
    """Hybrid kernel velocity: supervised drive minus (mu I + alpha L) decay.

    dK/dt = lam (B K + K B) - {mu I + alpha L, K},  B = S M_Y S.
    """
    K = require_symmetric(K, "K")
    lam, mu, alpha = semi.reg.lam, semi.reg.mu, semi.alpha
    n = K.shape[0]
    sigma = np.linalg.inv(K + lam * np.eye(n))
    m_y = labels.Y @ labels.Y.T
    b = sigma @ m_y @ sigma
    bk = b @ K
    lk = graph.L @ K
    return lam * (bk + bk.T) - 2.0 * mu * K - alpha * (lk + lk.T)


def semi_flow(
    K0,
    labels: LabelSet,
    graph: AugmentationGraph,
    semi: SemiConfig,
    cfg: FlowConfig,
):
    """RK4 integration of the hybrid flow; see ``integrate_kernel_flow``.

    The step heuristic extends the supervised one with the Laplacian decay
    rate 2 alpha max_eig(L).
    """
    from .supervised import default_dt  # local to avoid cycles

    lap_rate = 2.0 * semi.alpha * float(np.linalg.eigvalsh(graph.L)[-1])
    dt = cfg.dt if cfg.dt is not None else default_dt(labels, semi.reg, extra_rate=lap_rate)
    cfg_used = FlowConfig(
        dt=dt,
        max_steps=cfg.max_steps,
        stop_grad_norm=cfg.stop_grad_norm,
        psd_guard=cfg.psd_guard,
        friction=cfg.friction,
        snapshot_stride=cfg.snapshot_stride,
    )
    return _integrate_semi(K0, labels, graph, semi, cfg_used)


def _integrate_semi(K0, labels, graph, semi, cfg):
    from .supervised import KernelFlowResult, SupervisedFlowState

    K = require_symmetric(K0, "K0").copy()
    Y = labels.Y
    lam, mu, alpha = semi.reg.lam, semi.reg.mu, semi.alpha
    n = K.shape[0]
    eye = np.eye(n)
    m_y = Y @ Y.T
    lap = graph.L

    def rhs(Kc):
        sigma = np.linalg.inv(Kc + lam * eye)
        b = sigma @ m_y @ sigma
        bk = b @ Kc
        lk = lap @ Kc
        return lam * (bk + bk.T) - 2.0 * mu * Kc - alpha * (lk + lk.T), sigma

    stride = cfg.snapshot_stride or max(1, cfg.max_steps // 200)
    states = []
    times, losses, traces = [], [], []

    def objective(Kc, sigma):
        # Effective hybrid objective: ridge fit + trace penalty + Dirichlet term.
        return float(lam * np.sum(Y * (sigma @ Y)) + mu * np.trace(Kc) + alpha * np.trace(lap @ Kc))

    def snapshot(t, Kc, sigma):
        yhat = Kc @ (sigma @ Y)
        r = lam * (sigma @ Y)
        states.append(
            SupervisedFlowState(t=t, K=Kc.copy(), Sigma=sigma, Yhat=yhat, R=r, eff_loss=objective(Kc, sigma))
        )

    converged = False
    diverged = False
    t = 0.0
    step = 0
    while step < cfg.max_steps:
        f1, sigma1 = rhs(K)
        times.append(t)
        losses.append(objective(K, sigma1))
        traces.append(float(np.trace(K)))
        if step % stride == 0:
            snapshot(t, K, sigma1)
        if np.linalg.norm(f1) <= cfg.stop_grad_norm:
            converged = True
            break
        f2, _ = rhs(K + 0.5 * cfg.dt * f1)
        f3, _ = rhs(K + 0.5 * cfg.dt * f2)
        f4, _ = rhs(K + cfg.dt * f3)
        K = sym(K + (cfg.dt / 6.0) * (f1 + 2 * f2 + 2 * f3 + f4))
        if cfg.psd_guard:
            K = _psd_guard_step(K)
        t += cfg.dt
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


def semi_balance_residual(
    K,
    labels: LabelSet,
    graph: AugmentationGraph,
    semi: SemiConfig,
    active_tol: float = 1e-6,
    commute_tol: float = 1e-6,
) -> float:
    """Max per-mode violation of lam sigma_i/(k_i+lam)^2 = mu + alpha nu_i.

    Only defined in the idealized commuting regime; a non-commuting label
    Gram and Laplacian are rejected with a diagnostic.  Active modes are
    kernel eigenvalues above ``active_tol`` relative to the top one; with
    no active mode the balance is evaluated at k = 0 for every mode as a
    pure diagnostic.
    """
    K = require_symmetric(K, "K")
    m_y, _ = label_gram(labels)
    if commutator_norm(m_y, graph.L) > commute_tol:
        raise ValueError(
            "label Gram and Laplacian do not commute within tolerance; "
            "the scalar balance only exists in the idealized commuting regime"
        )
    u, sigma_eigs, nu_eigs = joint_eigenbasis(m_y, graph.L, tol=commute_tol)
    k_diag = np.einsum("ij,ik,kj->j", u, K, u)
    lam, mu, alpha = semi.reg.lam, semi.reg.mu, semi.alpha
    sigma_eigs = np.maximum(sigma_eigs, 0.0)
    nu_eigs = np.maximum(nu_eigs, 0.0)
    top = float(np.max(k_diag)) if k_diag.size else 0.0
    active = k_diag > active_tol * max(top, 0.0)
    if top <= 0.0 or not np.any(active):
        viol = np.abs(lam * sigma_eigs / lam**2 - (mu + alpha * nu_eigs))
        return float(np.max(viol))
    viol = np.abs(lam * sigma_eigs[active] / (k_diag[active] + lam) ** 2 - (mu + alpha * nu_eigs[active]))
    return float(np.max(viol))


def predict_semi_kernel(labels: LabelSet, graph: AugmentationGraph, semi: SemiConfig) -> np.ndarray:
    """Closed-form hybrid steady state on a commuting task."""
    m_y, _ = label_gram(labels)
    u, sigma_eigs, nu_eigs = joint_eigenbasis(m_y, graph.L)
    k_eigs = semi_spectrum(np.maximum(sigma_eigs, 0.0), np.maximum(nu_eigs, 0.0), semi)
    return sym((u * k_eigs) @ u.T)
