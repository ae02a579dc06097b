import numpy as np
import pytest
from numpy.testing import assert_allclose

from kernelflows.laws import predict_K_infinity
from kernelflows.linalg import polar_direction
from kernelflows.precondition import (
    MuonConfig,
    PreconditionedModel,
    anisotropic_decay,
    integrate_muon_feature_flow,
    linear_readout_model,
    modulated_ntk,
    muon_feature_rhs,
    muon_kernel_rhs_mse,
    muon_steady_state_check,
    readout_decay_check,
    stationarity_invariance_demo,
    weight_decay_image,
)
from kernelflows.supervised import FlowConfig, integrate_kernel_flow
from kernelflows.tasks import LabelSet, RegularizationConfig, label_gram

from conftest import random_psd


class TestModulatedNtk:
    def test_free_feature_limit(self):
        model = PreconditionedModel(J=np.eye(4), M=np.eye(4), theta=np.zeros(4))
        assert_allclose(modulated_ntk(model), np.eye(4))

    def test_scalar_preconditioner(self, rng):
        j = rng.standard_normal((5, 3))
        model = PreconditionedModel(J=j, M=4.0 * np.eye(3), theta=np.zeros(3))
        assert_allclose(modulated_ntk(model), j @ j.T / 4.0)

    def test_output_psd(self, rng):
        j = rng.standard_normal((6, 4))
        m = random_psd(rng, 4) + 0.5 * np.eye(4)
        model = PreconditionedModel(J=j, M=m, theta=rng.standard_normal(4))
        w = np.linalg.eigvalsh(modulated_ntk(model))
        assert w.min() >= -1e-10

    def test_rejects_singular_preconditioner(self, rng):
        j = rng.standard_normal((4, 3))
        m = np.diag([1.0, 1.0, 0.0])
        model = PreconditionedModel(J=j, M=m, theta=np.zeros(3))
        with pytest.raises(ValueError):
            modulated_ntk(model)


class TestWeightDecayImage:
    def test_zero_parameters(self, rng):
        j = rng.standard_normal((4, 3))
        model = PreconditionedModel(J=j, M=np.eye(3), theta=np.zeros(3))
        assert_allclose(weight_decay_image(model), np.zeros(4))

    def test_free_feature_limit(self, rng):
        theta = rng.standard_normal(5)
        model = PreconditionedModel(J=np.eye(5), M=np.eye(5), theta=theta)
        assert_allclose(weight_decay_image(model), theta)

    def test_linear_readout_gram_image(self, rng):
        # under the inverse-Gram metric the decay image reshapes to G Yhat
        phi0 = rng.standard_normal((4, 7))
        w = rng.standard_normal((2, 4))
        model = linear_readout_model(phi0, w, dual_metric=True)
        v = weight_decay_image(model)
        yhat = phi0.T @ w.T
        gram = phi0.T @ phi0
        assert np.linalg.norm(v.reshape(2, 7).T - gram @ yhat) <= 1e-9 * max(1.0, np.linalg.norm(gram @ yhat))

    def test_linear_readout_identity_metric(self, rng):
        # with the identity metric the image is the prediction itself
        phi0 = rng.standard_normal((4, 7))
        w = rng.standard_normal((2, 4))
        model = linear_readout_model(phi0, w, dual_metric=False)
        v = weight_decay_image(model)
        yhat = phi0.T @ w.T
        assert np.linalg.norm(v.reshape(2, 7).T - yhat) <= 1e-10


class TestReadoutDecayCheck:
    def test_zero_ridge(self, rng):
        phi0 = rng.standard_normal((4, 6))
        w = rng.standard_normal((2, 4))
        analytic, fd, gap = readout_decay_check(phi0, w, lam=0.0)
        assert_allclose(analytic, np.zeros((6, 2)))
        assert_allclose(fd, np.zeros((6, 2)))

    def test_zero_readout(self, rng):
        phi0 = rng.standard_normal((4, 6))
        analytic, fd, gap = readout_decay_check(phi0, np.zeros((2, 4)), lam=0.7)
        assert_allclose(analytic, np.zeros((6, 2)))
        assert gap <= 1e-12

    def test_finite_difference_agreement(self, rng):
        for _ in range(10):
            phi0 = rng.standard_normal((8, 12))
            w = rng.standard_normal((3, 8))
            analytic, fd, gap = readout_decay_check(phi0, w, lam=0.6)
            assert gap <= 1e-6 * (1.0 + np.linalg.norm(analytic))

    def test_decay_is_gram_anisotropic(self, rng):
        # the drift differs mode by mode: it is not a scalar multiple of Yhat
        phi0 = rng.standard_normal((6, 9))
        w = rng.standard_normal((2, 6))
        analytic, _, _ = readout_decay_check(phi0, w, lam=1.0)
        yhat = phi0.T @ w.T
        ratio = analytic / yhat
        assert np.std(ratio) > 1e-3


class TestAnisotropicDecay:
    def test_isotropic_limit(self, rng):
        k = random_psd(rng, 5)
        assert_allclose(anisotropic_decay(k, np.eye(5)), 2.0 * k)

    def test_zero_kernel(self, rng):
        g = random_psd(rng, 4)
        assert_allclose(anisotropic_decay(np.zeros((4, 4)), g), np.zeros((4, 4)))

    def test_dissipative_on_psd_pairs(self, rng):
        for _ in range(10):
            k = random_psd(rng, 6)
            g = random_psd(rng, 6)
            assert np.sum(k * anisotropic_decay(k, g)) >= -1e-12


class TestMuonFeatureRhs:
    def test_pure_decay_without_residual(self, rng):
        phi = rng.standard_normal((4, 6))
        w = rng.standard_normal((2, 4))
        cfg = MuonConfig(eta=1.0, mu=0.5)
        assert_allclose(muon_feature_rhs(phi, w, np.zeros((6, 2)), cfg), -0.5 * phi)

    def test_algebraic_fixed_point(self, rng):
        w = rng.standard_normal((2, 4))
        r = rng.standard_normal((6, 2))
        cfg = MuonConfig(eta=1.5, mu=0.75)
        phi_star = (cfg.eta / cfg.mu) * polar_direction(w.T @ r.T)
        assert np.linalg.norm(muon_feature_rhs(phi_star, w, r, cfg)) <= 1e-12

    def test_drive_singular_values_equal_eta(self, rng):
        phi = rng.standard_normal((5, 8))
        w = rng.standard_normal((3, 5))
        r = rng.standard_normal((8, 3))
        cfg = MuonConfig(eta=0.8, mu=0.4)
        drive = muon_feature_rhs(phi, w, r, cfg) + cfg.mu * phi
        sv = np.linalg.svd(drive, compute_uv=False)
        nonzero = sv[sv > 1e-9 * sv[0]]
        assert np.max(np.abs(nonzero - cfg.eta)) <= 1e-9

    def test_zero_homogeneous_in_residual(self, rng):
        phi = rng.standard_normal((5, 7))
        w = rng.standard_normal((2, 5))
        r = rng.standard_normal((7, 2))
        cfg = MuonConfig(eta=1.0, mu=0.3)
        d1 = muon_feature_rhs(phi, w, r, cfg) + cfg.mu * phi
        d2 = muon_feature_rhs(phi, w, 7.3 * r, cfg) + cfg.mu * phi
        assert np.max(np.abs(d1 - d2)) <= 1e-10


class TestMuonKernelFlow:
    def test_zero_kernel_fixed_point(self, rng):
        labels = LabelSet(Y=rng.standard_normal((5, 2)))
        cfg = MuonConfig(eta=1.0, mu=0.5)
        out = muon_kernel_rhs_mse(np.zeros((5, 5)), labels, 1.0, cfg)
        assert_allclose(out, np.zeros((5, 5)), atol=1e-12)

    def test_no_labels_pure_decay(self, rng):
        labels = LabelSet(Y=np.zeros((5, 1)))
        k = random_psd(rng, 5)
        cfg = MuonConfig(eta=1.0, mu=0.5)
        assert_allclose(muon_kernel_rhs_mse(k, labels, 1.0, cfg), -1.0 * k, atol=1e-12)

    def test_feature_and_kernel_trajectories_agree(self, rng):
        n, kd, c = 8, 10, 2
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        phi0 = 0.4 * rng.standard_normal((kd, n))
        muon = MuonConfig(eta=1.0, mu=2.0)
        cfg = FlowConfig(dt=2e-3, max_steps=500, stop_grad_norm=1e-14, snapshot_stride=100)
        res_phi = integrate_muon_feature_flow(phi0, labels, 1.0, muon, cfg)
        res_k = integrate_kernel_flow(phi0.T @ phi0, "muon_mse", labels, RegularizationConfig(1.0, muon.mu), cfg, muon=muon)
        for sp, sk in zip(res_phi.states, res_k.states):
            assert abs(sp.t - sk.t) <= 1e-12
            assert np.linalg.norm(sp.K - sk.K) <= 1e-6

    def test_terminal_saturation_and_rank(self, rng):
        n, kd, c = 10, 12, 2
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        phi0 = 0.4 * rng.standard_normal((kd, n))
        muon = MuonConfig(eta=1.0, mu=2.0)
        cfg = FlowConfig(dt=2e-3, max_steps=4000, stop_grad_norm=1e-13, snapshot_stride=1000)
        res = integrate_muon_feature_flow(phi0, labels, 1.0, muon, cfg)
        report = muon_steady_state_check(res.final.K, c, muon)
        assert report.rank_ok and report.effective_rank == c
        assert report.saturation_ok
        assert_allclose(report.nonzero_eigenvalues, 0.25 * np.ones(c), rtol=1e-3)

    def test_trace_stays_bounded(self, rng):
        n, kd, c = 8, 10, 2
        labels = LabelSet(Y=rng.standard_normal((n, c)))
        phi0 = 0.4 * rng.standard_normal((kd, n))
        muon = MuonConfig(eta=1.0, mu=2.0)
        cfg = FlowConfig(dt=2e-3, max_steps=3000, stop_grad_norm=1e-13, snapshot_stride=300)
        res = integrate_muon_feature_flow(phi0, labels, 1.0, muon, cfg)
        bound = max(np.trace(phi0.T @ phi0), n * (muon.eta / muon.mu) ** 2 * c) + 1e-9
        for st in res.states:
            assert np.trace(st.K) <= bound

    def test_zero_kernel_passes_check_trivially(self):
        report = muon_steady_state_check(np.zeros((6, 6)), 3, MuonConfig(eta=1.0, mu=1.0))
        assert report.passed and report.effective_rank == 0

    def test_gradient_descent_terminal_fails_saturation(self, rng):
        # negative control: the water-filled spectrum has unequal levels
        y = rng.standard_normal((10, 2)) * np.array([2.0, 0.7])
        labels = LabelSet(Y=y)
        reg = RegularizationConfig(1.0, 0.05)
        k_gd = predict_K_infinity(labels, reg)
        report = muon_steady_state_check(k_gd, 2, MuonConfig(eta=1.0, mu=0.05))
        assert report.rank_ok
        assert not report.saturation_ok


class TestFreeFeatureReduction:
    def test_preconditioned_flow_reduces_to_plain_feature_flow(self, rng):
        # J = I, M = I: the modulated kernel is the identity and the decay
        # image is the feature matrix itself, so the function-space flow
        # equals the plain drive W^T R^T - mu Phi.
        kd, n, c = 4, 5, 2
        phi = rng.standard_normal((kd, n))
        w = rng.standard_normal((c, kd))
        y = rng.standard_normal((n, c))
        mu = 0.3
        model = PreconditionedModel(J=np.eye(kd * n), M=np.eye(kd * n), theta=phi.reshape(-1))
        assert_allclose(modulated_ntk(model), np.eye(kd * n))
        r = y - phi.T @ w.T
        grad_task = -w.T @ r.T
        flow = (-modulated_ntk(model) @ grad_task.reshape(-1) - mu * weight_decay_image(model)).reshape(kd, n)
        assert_allclose(flow, w.T @ r.T - mu * phi, atol=1e-12)


class TestStationarityInvariance:
    def make_fixed_point(self, rng, n=6, c=2):
        y = rng.standard_normal((n, c)) * np.array([2.0, 1.2])[:c]
        labels = LabelSet(Y=y)
        reg = RegularizationConfig(1.0, 0.1)
        return predict_K_infinity(labels, reg), labels, reg

    def test_identity_preconditioner_matches_raw(self, rng):
        k, labels, reg = self.make_fixed_point(rng)
        rep = stationarity_invariance_demo(k, labels, reg, np.eye(6))
        assert rep.preconditioned_norm == pytest.approx(rep.raw_grad_norm)
        assert rep.bound_holds

    def test_pd_bound_on_random_kernels(self, rng):
        _, labels, reg = self.make_fixed_point(rng)
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        theta = q @ np.diag(np.linspace(0.1, 1.0, 6)) @ q.T
        for _ in range(5):
            k = random_psd(rng, 6)
            rep = stationarity_invariance_demo(k, labels, reg, 0.5 * (theta + theta.T))
            assert rep.bound_holds
            assert rep.theta_condition == pytest.approx(10.0, rel=1e-9)

    def test_singular_preconditioner_stalls(self):
        # three supra-threshold label modes out of four: the raw gradient
        # at the water-filled fixed point lives on the one truncated mode,
        # and a projector that kills that mode freezes the flow there
        n, c = 4, 3
        rng = np.random.default_rng(np.random.PCG64(5))
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        sigma = np.array([9.0, 6.0, 4.0])
        y = q[:, :c] * np.sqrt(sigma)
        labels = LabelSet(Y=y)
        reg = RegularizationConfig(1.0, 0.5)
        k_star = predict_K_infinity(labels, reg)
        m_y, dec = label_gram(labels)
        q_null = dec.eigenvectors[:, -1:]
        theta = np.eye(n) - q_null @ q_null.T
        rep = stationarity_invariance_demo(k_star, labels, reg, theta)
        assert rep.stalled
        assert rep.raw_grad_norm > 1e-3
        assert rep.preconditioned_norm <= 1e-10
