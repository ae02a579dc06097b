import numpy as np
import pytest
from numpy.testing import assert_allclose

from kernelflows.population import (
    PopulationSpectrum,
    effective_dimension,
    flow_vs_static_risk,
    population_flow_surrogate,
    risk_decomposition,
    risk_rows_to_csv,
)
from kernelflows.supervised import FlowConfig, default_initial_kernel, integrate_kernel_flow
from kernelflows.tasks import LabelSet, RegularizationConfig


class TestRiskDecomposition:
    def test_total_collapse(self, rng):
        a = rng.standard_normal(5)
        spec = PopulationSpectrum(mu=np.zeros(5), a=a, sigma_eps2=1.0, N=10, lam=1.0)
        bias, var, total = risk_decomposition(spec)
        assert bias == pytest.approx(np.sum(a**2))
        assert var == 0.0
        assert total == pytest.approx(bias)

    def test_interpolation_limit(self, rng):
        m = 4
        spec = PopulationSpectrum(mu=1e12 * np.ones(m), a=rng.standard_normal(m), sigma_eps2=2.0, N=50, lam=1.0)
        bias, var, _ = risk_decomposition(spec)
        assert bias <= 1e-10
        assert var == pytest.approx(2.0 * m / 50, rel=1e-9)

    def test_single_mode_hand_value(self):
        spec = PopulationSpectrum(mu=[1.0], a=[1.0], sigma_eps2=0.5, N=10, lam=1.0)
        bias, var, total = risk_decomposition(spec)
        assert bias == pytest.approx(0.25)
        assert var == pytest.approx(0.5 / (4 * 10))
        assert total == pytest.approx(bias + var)

    def test_monotone_bias_variance_exchange(self):
        base = PopulationSpectrum(mu=[0.5, 0.2], a=[1.0, 1.0], sigma_eps2=1.0, N=20, lam=1.0)
        bumped = PopulationSpectrum(mu=[0.6, 0.2], a=[1.0, 1.0], sigma_eps2=1.0, N=20, lam=1.0)
        b0, v0, _ = risk_decomposition(base)
        b1, v1, _ = risk_decomposition(bumped)
        assert b1 < b0
        assert v1 > v0

    def test_rejects_bad_lambda(self):
        with pytest.raises(ValueError):
            PopulationSpectrum(mu=[1.0], a=[1.0], sigma_eps2=0.0, N=1, lam=0.0)


class TestEffectiveDimension:
    def test_all_zero(self):
        assert effective_dimension(np.zeros(7), 1.0, 1) == 0.0

    def test_saturation(self):
        assert effective_dimension(1e12 * np.ones(6), 1.0, 1) == pytest.approx(6.0, rel=1e-9)

    def test_hand_values(self):
        assert effective_dimension([1.0], 1.0, 1) == pytest.approx(0.5)
        assert effective_dimension([1.0], 1.0, 2) == pytest.approx(0.25)

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            effective_dimension([1.0], 1.0, 3)


class TestFlowVsStatic:
    def test_sub_threshold_target_bias_is_irreducible(self):
        reg = RegularizationConfig(1.0, 1.0)
        a = np.array([1.0, 2.0, 0.5])
        sigma = np.array([0.5, 0.2, 0.1])  # all below tau = 1
        rows = flow_vs_static_risk(a, sigma, 1.0, reg, 1.0, 100)
        flow = rows[0]
        assert flow.bias == pytest.approx(np.sum(a**2))
        assert flow.variance == 0.0

    def test_supported_target_favors_flow(self, rng):
        reg = RegularizationConfig(1.0, 0.5)
        m, c = 50, 3
        for seed in range(20):
            r2 = np.random.default_rng(np.random.PCG64(seed))
            sigma = np.zeros(m)
            sigma[:c] = np.sort(r2.uniform(4.0, 12.0, size=c))[::-1]
            sigma[c:] = r2.uniform(0.0, 0.3, size=m - c)
            a = np.zeros(m)
            a[:c] = r2.normal(0.0, 1.0, size=c)
            rows = flow_vs_static_risk(a, sigma, 1.0, reg, 1.0, 100)
            assert rows[0].total <= rows[1].total
            assert rows[0].neff1 < rows[1].neff1

    def test_noise_free_comparison_is_bias_only(self, rng):
        reg = RegularizationConfig(1.0, 0.5)
        a = np.array([1.0, 0.5, 0.0, 0.0])
        sigma = np.array([8.0, 6.0, 0.1, 0.0])
        rows = flow_vs_static_risk(a, sigma, 1.0, reg, 0.0, 100)
        for r in rows:
            assert r.variance == 0.0
            assert r.total == pytest.approx(r.bias)

    def test_trace_fair(self, rng):
        reg = RegularizationConfig(1.0, 0.3)
        sigma = rng.uniform(0.0, 6.0, size=12)
        a = rng.standard_normal(12)
        rows = flow_vs_static_risk(a, sigma, 1.5, reg, 1.0, 40)
        from kernelflows.laws import water_filling_spectrum

        flow_mu = water_filling_spectrum(sigma, reg)
        raw = np.arange(1, 13, dtype=float) ** -1.5
        static_mu = raw * flow_mu.sum() / raw.sum()
        assert np.sum(flow_mu) == pytest.approx(np.sum(static_mu))

    def test_csv_schema(self, rng, tmp_path):
        reg = RegularizationConfig(1.0, 0.5)
        rows = flow_vs_static_risk([1.0, 0.0], [5.0, 0.1], 1.0, reg, 1.0, 10)
        path = tmp_path / "risk.csv"
        risk_rows_to_csv(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "spectrum,bias,variance,total,neff1,neff2"
        assert len(lines) == 3


class TestPopulationSurrogate:
    def test_zero_target_isotropic_decay(self):
        t0 = np.array([0.5, 0.3, 0.1])
        cfg = FlowConfig(dt=0.01, max_steps=100, stop_grad_norm=1e-14, snapshot_stride=100)
        res = population_flow_surrogate(t0, np.zeros(3), eta=1.0, lam=1.0, mu=0.4, cfg=cfg)
        expected = t0 * np.exp(-2.0 * 0.4 * res.times[-1])
        assert_allclose(np.sort(res.spectra[-1])[::-1], np.sort(expected)[::-1], rtol=1e-6)

    def test_rank_one_target_grows_single_mode(self):
        t0 = 0.2 * np.ones(4)
        target = np.array([1.5, 0.0, 0.0, 0.0])
        cfg = FlowConfig(dt=0.005, max_steps=4000, stop_grad_norm=1e-12, snapshot_stride=1000)
        res = population_flow_surrogate(t0, target, eta=1.0, lam=1.0, mu=0.3, cfg=cfg)
        final = res.final_T
        assert final[0, 0] > 0.3
        off = final - np.diag(np.diag(final))
        assert np.max(np.abs(off)) <= 1e-8
        assert np.all(np.diag(final)[1:] < 0.2)

    def test_terminal_rank_bounded_by_target_rank(self):
        t0 = 0.2 * np.ones(5)
        target = np.array([2.0, 0.0, 0.0, 0.0, 0.0])
        cfg = FlowConfig(dt=0.01, max_steps=6000, stop_grad_norm=1e-12, snapshot_stride=2000)
        res = population_flow_surrogate(t0, target, eta=1.0, lam=1.0, mu=0.3, cfg=cfg)
        w = np.sort(res.spectra[-1])[::-1]
        assert int(np.sum(w > 1e-6 * w[0])) <= 1

    def test_matches_empirical_kernel_flow(self, rng):
        # with one mode per sample and a single output the operator flow
        # and the empirical squared-loss flow are the same equation
        n = 6
        y = rng.standard_normal((n, 1))
        labels = LabelSet(Y=y)
        reg = RegularizationConfig(1.0, 0.2)
        k0 = default_initial_kernel(n, seed=2)
        cfg = FlowConfig(dt=0.01, max_steps=100, stop_grad_norm=1e-14, snapshot_stride=25)
        res_emp = integrate_kernel_flow(k0, "mse", labels, reg, cfg)
        res_pop = population_flow_surrogate(k0, y[:, 0], eta=1.0, lam=1.0, mu=0.2, cfg=cfg)
        w_emp = np.linalg.eigvalsh(res_emp.final.K)[::-1]
        assert np.max(np.abs(w_emp - res_pop.spectra[-1])) <= 1e-6

    def test_terminal_spectrum_feeds_risk(self):
        t0 = np.array([1.0, 0.5])
        target = np.array([1.0, 0.2])
        cfg = FlowConfig(dt=0.01, max_steps=500, stop_grad_norm=1e-12, snapshot_stride=500)
        res = population_flow_surrogate(t0, target, eta=1.0, lam=0.5, mu=0.3, cfg=cfg)
        spec = PopulationSpectrum(mu=np.maximum(res.spectra[-1], 0.0), a=target, sigma_eps2=1.0, N=25, lam=0.5)
        bias, var, total = risk_decomposition(spec)
        assert np.isfinite(total) and total > 0.0
