import dataclasses

import numpy as np
import pytest

from dggf.baselines import (
    GaussNetConfig,
    NumericGreen,
    gauss_delta,
    gaussnet_loss,
    ngf_solve,
    symmetry_loss,
    train_gaussnet,
    train_pinn,
)
from dggf.geometry import Domain
from dggf.mlp import Mlp, param_digest
from dggf.operators import PdeOperator, ProblemInstance
from dggf.oracles import get_case, relative_l2
from dggf.quadrature import build_quadrature
from dggf.training import TrainConfig, sample_batch

from conftest import random_net

SQ = Domain("square")
POISSON = PdeOperator("poisson", 2)
TINY = TrainConfig(n_dm=32, n_bd=32, epochs=10, hidden=(8, 8))


class TestGaussDelta:
    def test_peak(self):
        assert gauss_delta([0.3, 0.3], [0.3, 0.3], 0.1, 2) == pytest.approx(15.9154943, abs=1e-7)

    def test_tail(self):
        assert gauss_delta([0.0, 0.0], [1.0, 0.0], 0.1, 2) <= 1e-12

    def test_unit_mass(self):
        rule = build_quadrature(SQ, 400)
        for eps in (0.05, 0.1):
            vals = gauss_delta(rule.nodes, np.array([0.5, 0.5]), eps)
            assert rule.integrate(vals) == pytest.approx(1.0, abs=1e-3)

    def test_unit_mass_3d(self):
        rule = build_quadrature(Domain("ellipsoid"), 120)
        assert rule.integrate(gauss_delta(rule.nodes, np.zeros(3), 0.05)) == pytest.approx(1.0, abs=1e-2)

    def test_epsilon_positive(self):
        with pytest.raises(ValueError):
            gauss_delta([0, 0], [0, 0], 0.0)


class TestGaussNet:
    def test_config(self):
        with pytest.raises(ValueError):
            GaussNetConfig(epsilon=-1)
        with pytest.raises(ValueError):
            GaussNetConfig(symmetry_loss_weight=-1)
        cfg = GaussNetConfig.from_train(TINY, epsilon=0.1)
        assert cfg.epochs == TINY.epochs and GaussNetConfig.from_dict(cfg.to_dict()).digest == cfg.digest

    def test_loss_recomputation(self):
        net = random_net((4, 6, 1), seed=2)
        batch = sample_batch(SQ, 16, 16, seed=0)
        cfg = GaussNetConfig.from_train(TINY, epsilon=0.1)
        total, res, bd = gaussnet_loss(net, POISSON, batch, cfg)
        lap = net.derivatives(batch.interior_inputs(), coords=[0, 1]).laplacian
        delta = gauss_delta(batch.interior_r, batch.interior_xi, 0.1)
        assert float(res) == pytest.approx(np.mean((lap - delta) ** 2), rel=1e-12)
        assert float(bd) == pytest.approx(cfg.lambda_bd * np.mean(net(batch.boundary_inputs()) ** 2), rel=1e-12)

    def test_symmetry_weight_zero_is_plain(self):
        net = random_net((4, 6, 1), seed=3)
        batch = sample_batch(SQ, 16, 16, seed=1)
        plain = gaussnet_loss(net, POISSON, batch, GaussNetConfig.from_train(TINY))
        zero = gaussnet_loss(net, POISSON, batch, GaussNetConfig.from_train(TINY, symmetry_loss_weight=0.0))
        with_sym = gaussnet_loss(net, POISSON, batch, GaussNetConfig.from_train(TINY, symmetry_loss_weight=2.0))
        assert float(plain[0]) == float(zero[0]) and float(with_sym[0]) > float(plain[0])

    def test_symmetry_loss_vanishes_for_symmetric_net(self):
        # G(r, xi) = tanh(r_x + xi_x) is symmetric under swapping r and xi
        net = Mlp((4, 1, 1), "tanh", [np.array([[1.0, 0.0, 1.0, 0.0]]), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
        x = np.random.default_rng(0).uniform(0, 1, (20, 4))
        swapped = np.concatenate([x[:, 2:], x[:, :2]], 1)
        assert float(symmetry_loss(net, x, swapped)) == 0.0

    def test_determinism(self):
        cfg = GaussNetConfig.from_train(TINY, epsilon=0.1, symmetry_loss_weight=1.0)
        a, ra = train_gaussnet(SQ, POISSON, cfg)
        b, _ = train_gaussnet(SQ, POISSON, cfg)
        assert param_digest(a) == param_digest(b) and ra.config_digest == cfg.digest


class TestPinn:
    def test_zero_source_gives_zero(self):
        problem = ProblemInstance(POISSON, SQ, lambda x: np.zeros(len(x)))
        cfg = dataclasses.replace(TINY, epochs=400, learning_rate=5e-3)
        net, report = train_pinn(problem, cfg)
        pts = SQ.sample_interior(200, 0)
        assert np.mean(np.abs(net(pts))) <= 1e-3
        assert report.total_loss[-1] < report.total_loss[0]

    def test_determinism(self):
        problem = ProblemInstance(POISSON, SQ, get_case("poisson_square_sinsin").f)
        a, _ = train_pinn(problem, TINY)
        b, _ = train_pinn(problem, TINY)
        assert param_digest(a) == param_digest(b)


class TestNgf:
    def _err(self, n):
        case = get_case("poisson_square_sinsin")
        g = NumericGreen(n)
        return relative_l2(g.solve(case.f), case.u(g.points))

    def test_symmetric(self):
        g = ngf_solve(POISSON, 16)
        assert np.max(np.abs(g.matrix - g.matrix.T)) <= 1e-10

    def test_accuracy_64(self):
        assert self._err(64) <= 1e-3

    def test_second_order(self):
        assert self._err(8) >= 4 * self._err(16)
        assert 3.5 <= self._err(16) / self._err(32) <= 4.5

    def test_matches_direct_fd_solve(self):
        from dggf.oracles import fdm_reference

        case = get_case("poisson_square_sinsin")
        g = ngf_solve(POISSON, 24)
        np.testing.assert_allclose(g.solve(case.f), fdm_reference(POISSON, case.f, 24).values, atol=1e-12)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            ngf_solve(POISSON, 8)
        with pytest.raises(ValueError):
            ngf_solve(PdeOperator("helmholtz", 2, 1.0), 16)
        with pytest.raises(ValueError):
            ngf_solve(POISSON, 16, Domain("circle"))
