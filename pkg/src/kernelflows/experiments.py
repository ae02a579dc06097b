"""Config-driven experiment harness.

Each experiment kind wires the library into one reproducible run: it
builds a seeded task, integrates the relevant flow, writes figure-ready
CSV/JSON artifacts, and checks its assertions at fixed tolerances.  A
report echoes the config, every assertion with its tolerance, measured
metrics, and the artifact list.  Identical config and seed produce
byte-identical data artifacts; wall-clock time only ever appears in the
report, never in data files.
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .laws import (
    fixed_point_residual,
    profile_from_flow,
    ssl_spectrum,
    water_filling_spectrum,
)
from .linalg import commutator_norm, effective_rank, matrix_rank_from_svd, subspace_overlap, sym_eig
from .noise import (
    collect_noise_samples,
    exhaustive_mean_noise,
    noise_covariance_stats,
    preconditioned_noise_check,
    sample_batches,
)
from .population import flow_vs_static_risk, risk_rows_to_csv
from .precondition import MuonConfig, integrate_muon_feature_flow, muon_steady_state_check
from .sslsemi import predict_semi_kernel, semi_balance_residual, semi_flow, ssl_flow, ssl_optimal_kernel
from .supervised import (
    FlowConfig,
    adiabatic_error_sweep,
    coupled_flow,
    default_dt,
    default_initial_kernel,
    effective_loss,
    integrate_kernel_flow,
    optimal_readout,
)
from .tasks import LabelSet, RegularizationConfig, SemiConfig, SSLConfig, label_gram, synth_clustered_task

#: output directory used when a config gives a relative prefix
OUTDIR_ENV = "KERNELFLOWS_OUTDIR"

KINDS = (
    "supervised",
    "ssl",
    "semi",
    "muon",
    "coupled",
    "noise",
    "risk",
    "adiabatic",
    "phase-sweep",
    "align-track",
    "truncation-curve",
)

# Tolerances shared with the acceptance suite; every report echoes the
# ones it used.
TOL = {
    "active_rel_err": 1e-2,
    "truncated_frac": 1e-6,
    "fixed_point_residual": 1e-6,
    "rank_threshold": 1e-6,
    "commutator_labels": 1e-4,
    "alignment_overlap": 0.99,
    "lyapunov_slack": 1e-8,
    "ssl_abs_err": 1e-4,
    "ssl_commutator": 1e-6,
    "semi_closed_form": 1e-8,
    "semi_flow_err": 1e-3,
    "muon_traj_gap": 1e-4,
    "muon_level_rtol": 1e-3,
    "noise_rank_tol": 1e-10,
    "adiabatic_slope": (0.8, 1.2),
    "readout_rel_err": 1e-6,
}


class ConfigError(ValueError):
    """Invalid experiment configuration (maps to CLI exit status 2)."""


@dataclass
class Assertion:
    name: str
    tolerance: object
    measured: object
    passed: bool


@dataclass
class ExperimentReport:
    kind: str
    config: dict
    seed: int
    assertions: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    wall_seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name, tolerance, measured, passed) -> None:
        self.assertions.append(Assertion(name=name, tolerance=tolerance, measured=measured, passed=bool(passed)))

    def to_json(self) -> str:
        doc = {
            "kind": self.kind,
            "config": self.config,
            "seed": self.seed,
            "passed": self.passed,
            "assertions": [
                {"name": a.name, "tolerance": a.tolerance, "measured": a.measured, "passed": a.passed}
                for a in self.assertions
            ],
            "metrics": self.metrics,
            "artifacts": self.artifacts,
            "wall_seconds": self.wall_seconds,
        }
        return json.dumps(doc, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


def _resolve_prefix(config) -> str:
    prefix = config.get("out", config["kind"])
    if not os.path.isabs(prefix):
        base = os.environ.get(OUTDIR_ENV, ".")
        prefix = os.path.join(base, prefix)
    os.makedirs(os.path.dirname(prefix) or ".", exist_ok=True)
    return prefix


# ---------------------------------------------------------------------------
# task generators shared with the test-suite
# ---------------------------------------------------------------------------


def margin_safe_gaussian_labels(
    N: int,
    C: int,
    reg: RegularizationConfig,
    seed: int,
    sigma_over_lam2: float = 4.0,
    margin: tuple = (0.6, 1.6),
    max_trials: int = 200,
) -> LabelSet:
    """Random Gaussian labels whose Gram eigenvalues avoid the threshold.

    Columns carry geometrically decaying scales; the draw is retried (with
    a seed-derived counter, so still deterministic) until every label
    eigenvalue is outside ``margin`` times the truncation threshold, which
    keeps the slowest flow mode at a usable rate.
    """
    top_sigma = sigma_over_lam2 * reg.lam**2
    scales = 0.6 ** np.arange(C)
    for trial in range(max_trials):
        rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, trial])))
        y = rng.standard_normal((N, C)) * scales
        sv = np.linalg.svd(y, compute_uv=False)
        y = y * np.sqrt(top_sigma) / sv[0]
        sig = np.linalg.svd(y, compute_uv=False) ** 2
        ratio = sig / reg.tau
        if np.all((ratio <= margin[0]) | (ratio >= margin[1])):
            return LabelSet(Y=y)
    raise ConfigError("could not draw a margin-safe task; widen the margin or move tau")


def supervised_horizon(
    labels: LabelSet,
    reg: RegularizationConfig,
    k0_scale: float = 0.1,
    rel_active: float = 1e-2,
    truncated_frac: float = 1e-6,
    safety: float = 1.2,
) -> float:
    """Integration horizon from the per-mode convergence rates.

    Truncated modes decay at 2(mu - sigma/lam); active modes contract at
    4 mu k*/(lam + k*).  The horizon covers the slowest mode down to a
    third of its target tolerance, times a safety factor.
    """
    _, dec = label_gram(labels)
    sig = np.maximum(dec.eigenvalues, 0.0)
    pred = water_filling_spectrum(sig, reg)
    lam, mu = reg.lam, reg.mu
    lam_max = float(pred.max()) if pred.max() > 0 else k0_scale
    times = [1.0]
    for s, k in zip(sig, pred):
        if k > 0.0:
            rate = 4.0 * mu * k / (lam + k)
            dist0 = abs(k0_scale - k) + 1e-12
            times.append(np.log(max(dist0 / (0.3 * rel_active * k), 3.0)) / rate)
        else:
            rate = 2.0 * (mu - s / lam)
            if rate <= 0.0:
                raise ConfigError("a truncated mode sits on the threshold; no finite horizon")
            times.append(np.log(k0_scale / (0.3 * truncated_frac * lam_max)) / rate)
    return safety * float(max(times))


def smooth_rough_label_task(
    N: int,
    sigma_smooth: float,
    sigma_rough: float,
    seed: int,
):
    """Commuting two-column task with one smooth and one rough label mode.

    The graph is two disconnected equal clusters; the labels are scaled
    Laplacian eigenvectors, one at frequency zero and one at the top
    frequency, so the hybrid law has a genuinely graph-penalized active
    mode.  The seed shuffles the cluster assignment.
    """
    _, graph = synth_clustered_task(N, 2, 1.0, 0.0, seed=seed)
    w, u = np.linalg.eigh(graph.L)
    y = np.stack([np.sqrt(sigma_smooth) * u[:, 0], np.sqrt(sigma_rough) * u[:, -1]], axis=1)
    return LabelSet(Y=y), graph


# ---------------------------------------------------------------------------
# experiment kinds
# ---------------------------------------------------------------------------


def _cfg_get(config, key, default, kind):
    value = config.get(key, default)
    if value is None:
        raise ConfigError(f"{kind}: missing required config key {key!r}")
    return value


def _supervised_run(config, report, prefix, assert_spectrum=True):
    n = int(_cfg_get(config, "N", 64, config["kind"]))
    c = int(_cfg_get(config, "C", 4, config["kind"]))
    seed = int(config.get("seed", 0))
    reg = RegularizationConfig(float(config.get("lam", 1.0)), float(config.get("mu", 0.1)))
    label_kind = config.get("labels", "gaussian")
    if label_kind == "gaussian":
        labels = margin_safe_gaussian_labels(n, c, reg, seed)
    elif label_kind == "onehot":
        labels, _ = synth_clustered_task(n, c, 1.0, 0.0, seed=seed)
    else:
        raise ConfigError(f"unknown labels kind {label_kind!r}")
    k0 = default_initial_kernel(n, seed=seed)
    horizon = supervised_horizon(labels, reg)
    dt = default_dt(labels, reg) * float(config.get("dt_scale", 1.0))
    steps = int(np.ceil(horizon / dt))
    cfg = FlowConfig(
        dt=dt,
        max_steps=steps,
        stop_grad_norm=float(config.get("stop_grad_norm", 1e-12)),
        psd_guard=bool(config.get("psd_guard", True)),
        snapshot_stride=int(config.get("snapshot_stride", max(1, steps // 50))),
    )
    res = integrate_kernel_flow(k0, config.get("rhs_kind", "mse"), labels, reg, cfg)
    m_y, _ = label_gram(labels)
    _write_supervised_trajectory(prefix + "_trajectory.csv", res, m_y, config)
    report.artifacts.append(prefix + "_trajectory.csv")

    prof = profile_from_flow(res.final.K, labels, reg)
    prof.to_csv(prefix + "_spectrum.csv")
    report.artifacts.append(prefix + "_spectrum.csv")

    active = prof.predicted > 0.0
    if active.any():
        rel = float(np.max(np.abs(prof.measured[active] - prof.predicted[active]) / prof.predicted[active]))
        trunc = float(np.max(np.abs(prof.measured[~active])) / prof.predicted.max()) if (~active).any() else 0.0
    else:
        rel, trunc = 0.0, float(np.max(np.abs(prof.measured))) if prof.measured.size else 0.0
    resid = fixed_point_residual(res.final.K, labels, reg)
    report.metrics.update(
        {
            "steps": res.n_steps,
            "active_modes": int(active.sum()),
            "terminal_trace": float(np.trace(res.final.K)),
            "terminal_rank": effective_rank(res.final.K, TOL["rank_threshold"]),
        }
    )
    if assert_spectrum:
        report.check("active_mode_rel_err", TOL["active_rel_err"], rel, rel <= TOL["active_rel_err"])
        report.check("truncated_mode_frac", TOL["truncated_frac"], trunc, trunc <= TOL["truncated_frac"])
        report.check(
            "fixed_point_residual", TOL["fixed_point_residual"], resid, resid <= TOL["fixed_point_residual"]
        )
    dl = np.diff(res.step_eff_loss)
    slack = TOL["lyapunov_slack"] * (1.0 + np.abs(res.step_eff_loss[:-1]))
    worst = float(np.max(dl - slack)) if dl.size else -1.0
    report.check("lyapunov_non_increase", TOL["lyapunov_slack"], worst, worst <= 0.0)
    bound = 2.0 * res.step_eff_loss[0] / reg.mu
    report.check("trace_bound", bound, float(res.step_trace.max()), bool(np.all(res.step_trace <= bound)))
    return res, labels, reg


def _write_supervised_trajectory(path, res, m_y, config, extra_cols=(), extra_fn=None):
    n_eigs = int(config.get("top_eigs", 6))
    header = ["t", "eff_loss", "trace_K", "rank_K", "commutator_MY"] + list(extra_cols) + [
        f"eig{i + 1}" for i in range(n_eigs)
    ]
    rows = []
    for st in res.states:
        w = np.linalg.eigvalsh(st.K)[::-1][:n_eigs]
        row = [
            st.t,
            st.eff_loss,
            float(np.trace(st.K)),
            effective_rank(st.K, TOL["rank_threshold"]),
            commutator_norm(st.K, m_y),
        ]
        if extra_fn is not None:
            row.extend(extra_fn(st))
        row.extend(w.tolist())
        rows.append(row)
    _write_csv(path, header, rows)


def run_truncation_curve(config, report, prefix):
    _supervised_run(config, report, prefix, assert_spectrum=True)


def run_supervised(config, report, prefix):
    _supervised_run(config, report, prefix, assert_spectrum=True)


def run_align_track(config, report, prefix):
    config = dict(config)
    config.setdefault("labels", "onehot")
    config.setdefault("N", 100)
    config.setdefault("C", 4)
    config.setdefault("mu", 0.2)
    config.setdefault("dt_scale", 2.5)
    res, labels, reg = _supervised_run(config, report, prefix, assert_spectrum=False)
    m_y, dec = label_gram(labels)
    c = labels.C
    k_term = res.final.K
    cn = commutator_norm(k_term, m_y)
    rank = effective_rank(k_term, TOL["rank_threshold"])
    k_dec = sym_eig(k_term)
    overlap = subspace_overlap(k_dec.eigenvectors[:, :rank], dec.eigenvectors[:, :rank]) if rank else 0.0
    report.metrics.update({"terminal_commutator": cn, "terminal_overlap": overlap, "terminal_rank": rank})
    report.check("commutator_labels", TOL["commutator_labels"], cn, cn <= TOL["commutator_labels"])
    report.check(
        "alignment_overlap", TOL["alignment_overlap"], overlap, overlap >= TOL["alignment_overlap"]
    )
    # Overlap trajectory for the figure-style artifact: always the top-C
    # eigenvectors against the label subspace, so the column starts low
    # and saturates near one as the flow aligns.
    rows = []
    for st in res.states:
        kd = sym_eig(st.K)
        ov = subspace_overlap(kd.eigenvectors[:, :c], dec.eigenvectors[:, :c])
        rows.append([st.t, ov, commutator_norm(st.K, m_y), effective_rank(st.K, TOL["rank_threshold"])])
    _write_csv(prefix + "_overlap.csv", ["t", "overlap", "commutator_MY", "rank_K"], rows)
    report.artifacts.append(prefix + "_overlap.csv")


def run_phase_sweep(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 100, kind))
    c = int(_cfg_get(config, "C", 10, kind))
    seed = int(config.get("seed", 0))
    lam = float(config.get("lam", 1.0))
    mu_min = float(config.get("mu_min", 1e-3))
    mu_max = float(config.get("mu_max", 2.0))
    n_points = int(config.get("n_points", 20))
    horizon = float(config.get("horizon", 10.0))
    labels, _ = synth_clustered_task(n, c, 1.0, 0.0, seed=seed)
    k0 = default_initial_kernel(n, seed=seed)
    mus = np.logspace(np.log10(mu_min), np.log10(mu_max), n_points)
    ranks = []
    for mu in mus:
        reg = RegularizationConfig(lam, float(mu))
        dt = default_dt(labels, reg) * float(config.get("dt_scale", 2.5))
        steps = int(np.ceil(horizon / dt))
        cfg = FlowConfig(dt=dt, max_steps=steps, stop_grad_norm=1e-14, snapshot_stride=steps)
        res = integrate_kernel_flow(k0, "mse", labels, reg, cfg)
        ranks.append(effective_rank(res.final.K, TOL["rank_threshold"]))
    ranks = np.asarray(ranks)
    _write_csv(
        prefix + "_spectrum.csv",
        ["mu", "rank_K", "class_count"],
        [[float(m), int(r), c] for m, r in zip(mus, ranks)],
    )
    report.artifacts.append(prefix + "_spectrum.csv")
    smooth = np.convolve(ranks.astype(float), np.ones(3) / 3.0, mode="valid")
    report.metrics.update({"ranks": ranks.tolist(), "mus": mus.tolist()})
    report.check("rank_at_small_mu", 5 * c, int(ranks[0]), ranks[0] >= 5 * c)
    report.check("rank_at_large_mu", c, int(ranks[-1]), ranks[-1] <= c)
    report.check("monotone_after_smoothing", 0.0, float(np.max(np.diff(smooth))), bool(np.all(np.diff(smooth) <= 1e-9)))


def run_ssl(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 40, kind))
    seed = int(config.get("seed", 0))
    ssl = SSLConfig(
        beta=float(config.get("beta", 2.0)),
        epsilon=float(config.get("epsilon", 0.25)),
        mu=float(config.get("mu", 0.5)),
    )
    _, graph = synth_clustered_task(n, 2, float(config.get("intra", 1.0)), float(config.get("inter", 0.05)), seed=seed)
    k0 = default_initial_kernel(n, seed=seed, scale=0.5)
    cfg = FlowConfig(
        dt=config.get("dt"),
        max_steps=int(config.get("max_steps", 60000)),
        stop_grad_norm=float(config.get("stop_grad_norm", 1e-7)),
        snapshot_stride=int(config.get("snapshot_stride", 10000)),
    )
    res = ssl_flow(k0, graph, ssl, cfg)
    k_star = ssl_optimal_kernel(graph, ssl)
    w_meas = np.linalg.eigvalsh(res.final.K)[::-1]
    w_pred = np.linalg.eigvalsh(k_star)[::-1]
    nu = np.maximum(np.linalg.eigvalsh(graph.L), 0.0)
    pred_law = np.sort(ssl_spectrum(nu, ssl))[::-1]
    err = float(np.max(np.abs(w_meas - w_pred)))
    cn = commutator_norm(res.final.K, graph.L)
    passband_pred = int(np.sum(pred_law > 0.0))
    passband_meas = int(np.sum(w_meas > 0.5 * (pred_law[passband_pred - 1] if passband_pred else 1.0)))
    _write_csv(
        prefix + "_spectrum.csv",
        ["index", "drive", "predicted", "measured", "abs_err", "rel_err"],
        [
            [i, float(np.sort(nu)[i]), float(pred_law[i]), float(w_meas[i]), abs(w_meas[i] - pred_law[i]),
             abs(w_meas[i] - pred_law[i]) / pred_law[i] if pred_law[i] else 0.0]
            for i in range(n)
        ],
    )
    report.artifacts.append(prefix + "_spectrum.csv")
    rows = [[st.t, st.energy, st.grad_norm, effective_rank(st.K, TOL["rank_threshold"]), commutator_norm(st.K, graph.L)] for st in res.states]
    _write_csv(prefix + "_trajectory.csv", ["t", "energy", "grad_norm", "rank_K", "commutator_L"], rows)
    report.artifacts.append(prefix + "_trajectory.csv")
    report.metrics.update({"passband_predicted": passband_pred, "passband_measured": passband_meas})
    report.check("ssl_abs_err", TOL["ssl_abs_err"], err, err <= TOL["ssl_abs_err"])
    report.check("ssl_commutator", TOL["ssl_commutator"], cn, cn <= TOL["ssl_commutator"])
    report.check("passband_count", passband_pred, passband_meas, passband_meas == passband_pred)
    energies = np.array([st.energy for st in res.states])
    report.check("energy_non_increase", 1e-9, float(np.max(np.diff(energies))) if energies.size > 1 else -1.0,
                 bool(np.all(np.diff(energies) <= 1e-9 * (1.0 + np.abs(energies[:-1])))))


def run_semi(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 24, kind))
    seed = int(config.get("seed", 0))
    semi = SemiConfig(
        alpha=float(config.get("alpha", 0.05)),
        reg=RegularizationConfig(float(config.get("lam", 1.0)), float(config.get("mu", 0.4))),
    )
    labels, graph = smooth_rough_label_task(
        n, float(config.get("sigma_smooth", 8.0)), float(config.get("sigma_rough", 6.0)), seed
    )
    k_pred = predict_semi_kernel(labels, graph, semi)
    resid = semi_balance_residual(k_pred, labels, graph, semi)
    cfg = FlowConfig(
        max_steps=int(config.get("max_steps", 40000)),
        stop_grad_norm=float(config.get("stop_grad_norm", 1e-10)),
        snapshot_stride=int(config.get("snapshot_stride", 10000)),
    )
    res = semi_flow(default_initial_kernel(n, seed=seed), labels, graph, semi, cfg)
    w_meas = np.linalg.eigvalsh(res.final.K)[::-1]
    w_pred = np.linalg.eigvalsh(k_pred)[::-1]
    err = float(np.max(np.abs(w_meas - w_pred)))
    _write_csv(
        prefix + "_spectrum.csv",
        ["index", "predicted", "measured", "abs_err"],
        [[i, float(w_pred[i]), float(w_meas[i]), float(abs(w_pred[i] - w_meas[i]))] for i in range(n)],
    )
    report.artifacts.append(prefix + "_spectrum.csv")
    report.metrics["closed_form_residual"] = resid
    report.check("semi_closed_form", TOL["semi_closed_form"], resid, resid <= TOL["semi_closed_form"])
    report.check("semi_flow_err", TOL["semi_flow_err"], err, err <= TOL["semi_flow_err"])


def run_muon(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 12, kind))
    c = int(_cfg_get(config, "C", 2, kind))
    k_dim = int(config.get("k", 16))
    seed = int(config.get("seed", 0))
    lam = float(config.get("lam", 1.0))
    muon = MuonConfig(eta=float(config.get("eta", 1.0)), mu=float(config.get("mu", 2.0)))
    rng = np.random.default_rng(np.random.PCG64(seed))
    labels = LabelSet(Y=rng.standard_normal((n, c)))
    phi0 = 0.4 * rng.standard_normal((k_dim, n))
    k0 = phi0.T @ phi0
    reg = RegularizationConfig(lam, muon.mu)
    dt = float(config.get("dt", 1e-3))
    horizon = float(config.get("horizon", 1.0))
    steps = int(np.ceil(horizon / dt))
    cfg = FlowConfig(dt=dt, max_steps=steps, stop_grad_norm=1e-14, snapshot_stride=max(1, steps // 10))
    res_phi = integrate_muon_feature_flow(phi0, labels, lam, muon, cfg)
    res_k = integrate_kernel_flow(k0, "muon_mse", labels, reg, cfg, muon=muon)
    gap = max(
        float(np.linalg.norm(sp.K - sk.K)) for sp, sk in zip(res_phi.states, res_k.states)
    )
    terminal_horizon = float(config.get("terminal_horizon", 12.0 / muon.mu))
    term_steps = int(np.ceil(terminal_horizon / dt))
    cfg_term = FlowConfig(dt=dt, max_steps=term_steps, stop_grad_norm=1e-12, snapshot_stride=max(1, term_steps // 10))
    res_term = integrate_muon_feature_flow(phi0, labels, lam, muon, cfg_term)
    check = muon_steady_state_check(res_term.final.K, c, muon, level_rtol=TOL["muon_level_rtol"])
    m_y, _ = label_gram(labels)
    rows = []
    for st in res_term.states:
        w = np.linalg.eigvalsh(st.K)[::-1][:4]
        rows.append(
            [st.t, effective_loss(st.K, labels.Y, lam, muon.mu), float(np.trace(st.K)),
             effective_rank(st.K, TOL["rank_threshold"]), commutator_norm(st.K, m_y), st.drive_rank] + w.tolist()
        )
    _write_csv(
        prefix + "_trajectory.csv",
        ["t", "eff_loss", "trace_K", "rank_K", "commutator_MY", "drive_rank", "eig1", "eig2", "eig3", "eig4"],
        rows,
    )
    report.artifacts.append(prefix + "_trajectory.csv")
    report.metrics.update(
        {"terminal_eigs": check.nonzero_eigenvalues.tolist(), "target_level": check.target_level}
    )
    report.check("muon_traj_gap", TOL["muon_traj_gap"], gap, gap <= TOL["muon_traj_gap"])
    report.check("muon_rank", c, check.effective_rank, check.rank_ok)
    report.check("muon_saturation", TOL["muon_level_rtol"], check.max_rel_level_error, check.saturation_ok)


def run_coupled(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 32, kind))
    c = int(_cfg_get(config, "C", 3, kind))
    k_dim = int(config.get("k", 48))
    seed = int(config.get("seed", 0))
    reg = RegularizationConfig(float(config.get("lam", 1.0)), float(config.get("mu", 0.25)))
    rng = np.random.default_rng(np.random.PCG64(seed))
    labels = LabelSet(Y=0.5 * rng.standard_normal((n, c)))
    phi0 = 0.3 * rng.standard_normal((k_dim, n))
    w0 = 0.3 * rng.standard_normal((c, k_dim))
    cfg = FlowConfig(
        max_steps=int(config.get("max_steps", 200000)),
        stop_grad_norm=float(config.get("stop_grad_norm", 1e-8)),
        friction=float(config.get("friction", 0.0)),
        snapshot_stride=int(config.get("snapshot_stride", 30000)),
    )
    res = coupled_flow(phi0, w0, labels, reg, float(config.get("eta_W", 1.0)), float(config.get("eta_Phi", 1.0)), cfg)
    k_term = res.final.K
    rank = effective_rank(k_term, TOL["rank_threshold"])
    w_star = optimal_readout(res.final.Phi, labels.Y, reg.lam)
    w_err = float(np.linalg.norm(res.final.W - w_star) / max(np.linalg.norm(w_star), 1e-30))
    rows = [[st.t, st.objective, float(np.trace(st.K)), effective_rank(st.K, TOL["rank_threshold"])] for st in res.states]
    _write_csv(prefix + "_trajectory.csv", ["t", "objective", "trace_K", "rank_K"], rows)
    report.artifacts.append(prefix + "_trajectory.csv")
    report.metrics.update({"terminal_rank": rank, "readout_rel_err": w_err, "steps": res.n_steps})
    report.check("coupled_rank", c, rank, rank <= c)
    report.check("readout_optimal", TOL["readout_rel_err"], w_err, w_err <= TOL["readout_rel_err"])


def run_noise(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 40, kind))
    c = int(_cfg_get(config, "C", 3, kind))
    b = int(config.get("B", 8))
    num = int(config.get("num_samples", 1000))
    seed = int(config.get("seed", 0))
    lam = float(config.get("lam", 1.0))
    rng = np.random.default_rng(np.random.PCG64(seed))
    labels = LabelSet(Y=rng.standard_normal((n, c)))
    k_mat = default_initial_kernel(n, seed=seed, scale=0.5, jitter=0.3)
    w_read = rng.standard_normal((c, int(config.get("k", 16))))
    batches = sample_batches(n, b, num, seed=seed + 1)
    samples = collect_noise_samples(k_mat, labels, lam, batches, W=w_read)
    ranks = np.array([matrix_rank_from_svd(s.zeta_K) for s in samples])
    feature_ranks = np.array([matrix_rank_from_svd(s.zeta_Phi) for s in samples])
    stats = noise_covariance_stats(samples, TOL["noise_rank_tol"], reference_2C=2 * c)
    theta_half = np.diag(rng.uniform(0.5, 2.0, size=n))
    congruence = preconditioned_noise_check(theta_half, samples[: min(num, 200)])
    small_n, small_b = int(config.get("mean_N", 6)), int(config.get("mean_B", 3))
    labels_small = LabelSet(Y=rng.standard_normal((small_n, c if c <= small_n else 2)))
    k_small = default_initial_kernel(small_n, seed=seed + 2, scale=0.4, jitter=0.2)
    mean_norm = float(np.linalg.norm(exhaustive_mean_noise(k_small, labels_small, lam, small_b)))
    with open(prefix + "_stats.json", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(stats.to_json())
    report.artifacts.append(prefix + "_stats.json")
    report.metrics.update(
        {
            "covariance_rank": stats.covariance_rank,
            "reference_2C": 2 * c,
            "exhaustive_mean_norm": mean_norm,
            "per_realization_ranks_max": int(ranks.max()),
        }
    )
    report.check("per_realization_rank", 2 * c, int(ranks.max()), bool(np.all(ranks <= 2 * c)))
    report.check("feature_rank", c, int(feature_ranks.max()), bool(np.all(feature_ranks <= c)))
    report.check("congruence_rank_preserved", True, congruence.bound_preserved, congruence.bound_preserved)


def run_risk(config, report, prefix):
    seed = int(config.get("seed", 0))
    m = int(config.get("m", 50))
    c = int(config.get("C", 3))
    n = int(config.get("N", 100))
    draws = int(config.get("draws", 20))
    sigma_eps2 = float(config.get("sigma_eps2", 1.0))
    reg = RegularizationConfig(float(config.get("lam", 1.0)), float(config.get("mu", 0.5)))
    exponent = float(config.get("static_exponent", 1.0))
    ok = True
    worst_gap = -np.inf
    rows_out = None
    for d in range(draws):
        rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence([seed, d])))
        sigma = np.zeros(m)
        sigma[:c] = np.sort(rng.uniform(4.0, 12.0, size=c))[::-1] * reg.lam**2
        sigma[c:] = rng.uniform(0.0, 0.3, size=m - c) * reg.tau / 0.5
        a = np.zeros(m)
        a[:c] = rng.normal(0.0, 1.0, size=c)
        rows = flow_vs_static_risk(a, sigma, exponent, reg, sigma_eps2, n)
        gap = rows[0].total - rows[1].total
        worst_gap = max(worst_gap, gap)
        ok = ok and (gap <= 0.0)
        if d == 0:
            rows_out = rows
    risk_rows_to_csv(rows_out, prefix + "_risk.csv")
    report.artifacts.append(prefix + "_risk.csv")
    report.metrics["worst_flow_minus_static"] = float(worst_gap)
    report.check("flow_beats_static_on_supported_targets", 0.0, float(worst_gap), ok)


def run_adiabatic(config, report, prefix):
    kind = config["kind"]
    n = int(_cfg_get(config, "N", 16, kind))
    k_dim = int(config.get("k", 24))
    c = int(config.get("C", 2))
    seed = int(config.get("seed", 0))
    reg = RegularizationConfig(float(config.get("lam", 1.0)), float(config.get("mu", 0.3)))
    rng = np.random.default_rng(np.random.PCG64(seed))
    labels = LabelSet(Y=0.5 * rng.standard_normal((n, c)))
    phi0 = 0.3 * rng.standard_normal((k_dim, n))
    w0 = optimal_readout(phi0, labels.Y, reg.lam)
    eps_list = config.get("epsilons", [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    out = adiabatic_error_sweep(phi0, w0, labels, reg, eps_list, float(config.get("horizon", 2.0)))
    errs = np.array([e for _, e in out])
    _write_csv(prefix + "_spectrum.csv", ["epsilon", "sup_error"], [[float(e), float(v)] for e, v in out])
    report.artifacts.append(prefix + "_spectrum.csv")
    if np.all(np.isfinite(errs)) and len(out) > 1:
        slope = float(np.polyfit(np.log(np.asarray(eps_list, dtype=float)), np.log(errs), 1)[0])
    else:
        slope = np.nan
    lo, hi = TOL["adiabatic_slope"]
    report.metrics.update({"errors": errs.tolist(), "slope": slope})
    if len(out) > 1:
        report.check("adiabatic_slope", [lo, hi], slope, bool(lo <= slope <= hi))
    report.check("errors_finite", True, bool(np.all(np.isfinite(errs))), bool(np.all(np.isfinite(errs))))


_RUNNERS = {
    "supervised": run_supervised,
    "truncation-curve": run_truncation_curve,
    "align-track": run_align_track,
    "phase-sweep": run_phase_sweep,
    "ssl": run_ssl,
    "semi": run_semi,
    "muon": run_muon,
    "coupled": run_coupled,
    "noise": run_noise,
    "risk": run_risk,
    "adiabatic": run_adiabatic,
}


def validate_config(config: dict) -> dict:
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    kind = config.get("kind")
    if kind not in _RUNNERS:
        raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {sorted(_RUNNERS)}")
    seed = config.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return config


def run_experiment(config: dict) -> ExperimentReport:
    """Run one experiment; returns the report after writing artifacts."""
    config = validate_config(dict(config))
    kind = config["kind"]
    prefix = _resolve_prefix(config)
    report = ExperimentReport(kind=kind, config=config, seed=int(config.get("seed", 0)))
    start = time.perf_counter()
    _RUNNERS[kind](config, report, prefix)
    report.wall_seconds = time.perf_counter() - start
    report_path = prefix + "_report.json"
    with open(report_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    report.artifacts.append(report_path)
    return report


@dataclass
class SuiteReport:
    reports: list
    passed: bool

    def to_json(self) -> str:
        doc = {
            "passed": self.passed,
            "experiments": [
                {"kind": r.kind, "seed": r.seed, "passed": r.passed, "wall_seconds": r.wall_seconds}
                for r in self.reports
            ],
        }
        return json.dumps(doc, sort_keys=True)


def run_suite(manifest: list, jobs: int = 1) -> SuiteReport:
    """Run every experiment in a manifest; failures never abort the rest.

    The aggregate verdict is order independent.  ``jobs > 1`` runs the
    experiments in a thread pool; each experiment stays single threaded
    and deterministic.
    """
    configs = [validate_config(dict(c)) for c in manifest]
    if jobs > 1 and len(configs) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_or_fail, configs))
    else:
        reports = [_run_or_fail(c) for c in configs]
    return SuiteReport(reports=reports, passed=all(r.passed for r in reports))


def _run_or_fail(config) -> ExperimentReport:
    # kind/seed validation happened up front; anything raised past that
    # point is this experiment's own failure and must not abort siblings
    try:
        return run_experiment(config)
    except Exception as exc:  # noqa: BLE001 - per-experiment isolation
        report = ExperimentReport(kind=config.get("kind", "?"), config=config, seed=int(config.get("seed", 0)))
        report.check("completed", True, f"{type(exc).__name__}: {exc}", False)
        return report
