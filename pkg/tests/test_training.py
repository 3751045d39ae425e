import dataclasses

import numpy as np
import pytest

from dggf.geometry import Domain
from dggf.mlp import init_mlp, load_model, param_digest, save_model
from dggf.operators import PdeOperator, t_singular
from dggf.training import (
    AdamState,
    SampleBatch,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    composite_t,
    loss_param_gradient,
    sample_batch,
    stage1_loss,
    stage2_loss,
    train_stage1,
    train_stage2,
    _seed,
)

from conftest import random_net

SQ = Domain("square")
POISSON = PdeOperator("poisson", 2)
TINY = TrainConfig(n_dm=32, n_bd=32, n_dm_t=32, n_bd_t=32, epochs=15, hidden=(8, 8))


def zero_net(n_in=4):
    net = init_mlp((n_in, 4, 1))
    return net.with_params([np.zeros_like(p) for p in net.params()])


def empty(n=2):
    return np.zeros((0, n))


def fd_param_grad(fn, net, eps=1e-6):
    out = []
    params = net.params()
    for i, p in enumerate(params):
        g = np.zeros_like(p)
        for j in range(p.size):
            plus = [q.copy() for q in params]
            minus = [q.copy() for q in params]
            plus[i].ravel()[j] += eps
            minus[i].ravel()[j] -= eps
            g.ravel()[j] = (float(fn(net.with_params(plus))) - float(fn(net.with_params(minus)))) / (2 * eps)
        out.append(g)
    return out


class TestStage1Loss:
    def test_zero_net_single_boundary_pair(self):
        # g = -t_s = 0.2 requires |r - xi| = exp(-0.4 pi)
        d = np.exp(-0.4 * np.pi)
        batch = SampleBatch(empty(), empty(), np.array([[0.0, 0.5]]), np.array([[d, 0.5]]))
        total, res, bd = stage1_loss(zero_net(), batch, dataclasses.replace(TINY, lambda_bd=1.0))
        assert float(total) == pytest.approx(0.04, abs=1e-14) and res == 0.0

    def test_recomputation(self):
        net = random_net((4, 6, 1), seed=1)
        batch = sample_batch(SQ, 16, 16, seed=3)
        total, res, bd = stage1_loss(net, batch, TINY)
        lap = net.derivatives(batch.interior_inputs(), coords=[0, 1]).laplacian
        g = -t_singular(batch.boundary_r, batch.boundary_xi, 2)
        expect_res = TINY.lambda_res * np.mean(lap**2)
        expect_bd = TINY.lambda_bd * np.mean((net(batch.boundary_inputs()) - g) ** 2)
        assert float(res) == pytest.approx(expect_res, rel=1e-12)
        assert float(bd) == pytest.approx(expect_bd, rel=1e-12)
        assert float(total) == pytest.approx(expect_res + expect_bd, rel=1e-12)

    def test_harmonic_exact_net_zero_loss(self):
        # an affine net is harmonic; match g with boundary data generated from it
        from dggf.mlp import Mlp

        net = Mlp((4, 1), "tanh", [np.array([[0.3, -0.2, 0.1, 0.4]])], [np.array([0.05])])
        batch = sample_batch(SQ, 8, 0, seed=0)
        total, res, _ = stage1_loss(net, batch, TINY)
        assert float(total) == pytest.approx(0.0, abs=1e-28)

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            stage1_loss(zero_net(), SampleBatch(empty(), empty(), empty(), empty()), TINY)

    def test_lambda_bd_scaling(self):
        net = random_net((4, 6, 1), seed=2)
        batch = sample_batch(SQ, 8, 8, seed=1)
        _, r1, b1 = stage1_loss(net, batch, TINY)
        _, r2, b2 = stage1_loss(net, batch, dataclasses.replace(TINY, lambda_bd=3 * TINY.lambda_bd))
        assert float(r2) == float(r1) and float(b2) == pytest.approx(3 * float(b1), rel=1e-14)


class TestStage2Loss:
    def test_zero_net_single_pair(self):
        batch = SampleBatch(np.array([[0.2, 0.3]]), np.array([[0.5, 0.5]]), empty(), empty())
        total, res, bd = stage2_loss(zero_net(), zero_net(), POISSON, batch, TINY, target=np.array([0.3]))
        assert float(total) == pytest.approx(0.09, abs=1e-15) and bd == 0.0

    def test_zero_net_boundary_part(self):
        batch = sample_batch(SQ, 0, 8, seed=0)
        _, _, bd = stage2_loss(zero_net(), zero_net(), POISSON, batch, TINY)
        assert float(bd) == 0.0

    def test_recomputation_and_target(self):
        net_g, net_tr = random_net((4, 6, 1), seed=3), random_net((4, 5, 1), seed=4)
        batch = sample_batch(SQ, 16, 16, seed=2)
        total, res, bd = stage2_loss(net_g, net_tr, POISSON, batch, TINY)
        t = composite_t(net_tr, batch.interior_r, batch.interior_xi, 2)
        lap = net_g.derivatives(batch.interior_inputs(), coords=[0, 1]).laplacian
        expect = TINY.lambda_res * np.mean((lap - t) ** 2) + TINY.lambda_bd * np.mean(net_g(batch.boundary_inputs()) ** 2)
        assert float(total) == pytest.approx(expect, rel=1e-12)
        cached = stage2_loss(net_g, net_tr, POISSON, batch, TINY, target=t)[0]
        assert float(cached) == float(total)

    def test_helmholtz_uses_value_term(self):
        net_g, net_tr = random_net((4, 6, 1), seed=3), random_net((4, 5, 1), seed=4)
        batch = sample_batch(SQ, 8, 0, seed=2)
        t = composite_t(net_tr, batch.interior_r, batch.interior_xi, 2)
        d = net_g.derivatives(batch.interior_inputs(), coords=[0, 1])
        _, res, _ = stage2_loss(net_g, net_tr, PdeOperator("helmholtz", 2, 1.5), batch, TINY, target=t)
        assert float(res) == pytest.approx(np.mean((d.laplacian + 2.25 * d.value - t) ** 2), rel=1e-12)


class TestGradients:
    def test_stage1_gradient_matches_fd(self):
        net = random_net((4, 5, 4, 1), seed=5)
        batch = sample_batch(SQ, 8, 8, seed=4)
        fn = lambda n: stage1_loss(n, batch, TINY)[0]
        _, grads = loss_param_gradient(fn, net)
        for g, f in zip(grads, fd_param_grad(fn, net)):
            np.testing.assert_allclose(g, f, rtol=1e-5, atol=1e-8)

    def test_stage2_gradient_matches_fd(self):
        net_g, net_tr = random_net((4, 5, 4, 1), seed=6), random_net((4, 5, 1), seed=7)
        batch = sample_batch(SQ, 8, 8, seed=5)
        fn = lambda n: stage2_loss(n, net_tr, PdeOperator("helmholtz", 2, 1.0), batch, TINY)[0]
        _, grads = loss_param_gradient(fn, net_g)
        for g, f in zip(grads, fd_param_grad(fn, net_g)):
            np.testing.assert_allclose(g, f, rtol=1e-5, atol=1e-8)


class TestAdam:
    def test_first_step(self):
        params, state = adam_step(AdamState.zeros_like([np.zeros(1)]), [np.zeros(1)], [np.ones(1)], 1e-3)
        assert params[0][0] == pytest.approx(-1e-3 / (1 + 1e-8), abs=1e-18)
        assert params[0][0] == pytest.approx(-9.999999e-4, abs=1e-10)
        assert state.step == 1

    def test_zero_gradient(self):
        state = AdamState([np.array([0.5])], [np.array([0.25])], step=3)
        params, new = adam_step(state, [np.array([2.0])], [np.zeros(1)], 1e-3)
        assert new.m[0][0] == pytest.approx(0.45) and new.v[0][0] == pytest.approx(0.25 * 0.999)
        # the moments have not vanished, so the parameter still moves by the bias-corrected ratio
        c1, c2 = 1 - 0.9**4, 1 - 0.999**4
        assert params[0][0] == pytest.approx(2.0 - 1e-3 * (0.45 / c1) / (np.sqrt(0.25 * 0.999 / c2) + 1e-8))
        p0, s0 = adam_step(AdamState.zeros_like([np.ones(2)]), [np.ones(2)], [np.zeros(2)], 1e-3)
        np.testing.assert_array_equal(p0[0], np.ones(2))

    def test_two_steps_reference(self):
        g, lr, p = 0.3, 1e-2, 1.0
        m = v = 0.0
        for t in (1, 2):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            p = p - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        params, state = [np.array([1.0])], AdamState.zeros_like([np.zeros(1)])
        for _ in range(2):
            params, state = adam_step(state, params, [np.array([g])], lr)
        assert abs(params[0][0] - p) <= 1e-15

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step(AdamState.zeros_like([np.zeros(2)]), [np.zeros(2)], [np.zeros(3)], 1e-3)


class TestTraining:
    def test_epochs_zero(self):
        cfg = dataclasses.replace(TINY, epochs=0)
        net, report = train_stage1(SQ, cfg)
        fresh, _ = train_stage1(SQ, cfg)
        assert report.epochs == 0 and param_digest(net) == param_digest(fresh)

    def test_determinism_and_report(self, tmp_path):
        a, ra = train_stage1(SQ, TINY)
        b, rb = train_stage1(SQ, TINY)
        assert param_digest(a) == param_digest(b) == ra.param_digest
        assert ra.epochs == len(ra.residual_loss) == len(ra.boundary_loss) == TINY.epochs
        assert ra.config_digest == TINY.digest
        c, _ = train_stage1(SQ, dataclasses.replace(TINY, seed=1))
        assert param_digest(c) != param_digest(a)
        ra.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "epoch,residual_loss,boundary_loss,total_loss" and len(lines) == TINY.epochs + 1

    def test_stage2_determinism_and_round_trip(self):
        net_tr, _ = train_stage1(SQ, TINY)
        g1, _ = train_stage2(SQ, POISSON, net_tr, TINY)
        g2, _ = train_stage2(SQ, POISSON, net_tr, TINY)
        assert param_digest(g1) == param_digest(g2)
        batch = sample_batch(SQ, 16, 16, seed=99)
        loaded, _ = load_model(save_model(g1))
        before = stage2_loss(g1, net_tr, POISSON, batch, TINY)
        after = stage2_loss(loaded, net_tr, POISSON, batch, TINY)
        assert [float(v) for v in before] == [float(v) for v in after]

    def test_output_scale(self):
        cfg = dataclasses.replace(TINY, epochs=0, output_scale=0.01)
        plain, _ = train_stage1(SQ, dataclasses.replace(TINY, epochs=0))
        scaled, _ = train_stage1(SQ, cfg)
        np.testing.assert_array_equal(scaled.weights[-1], 0.01 * plain.weights[-1])
        np.testing.assert_array_equal(scaled.weights[0], plain.weights[0])
        # the logged loss is in unscaled units: epoch 0 equals the loss of the starting net
        net, report = train_stage1(SQ, dataclasses.replace(cfg, epochs=1))
        batch = sample_batch(SQ, cfg.n_dm_t, cfg.n_bd_t, _seed(cfg.seed, 1, 0))
        assert report.total_loss[0] == pytest.approx(float(stage1_loss(scaled, batch, cfg)[0]), rel=1e-12)
        with pytest.raises(ValueError):
            TrainConfig(output_scale=0.0)

    def test_fixed_batch_mode(self):
        cfg = dataclasses.replace(TINY, resample_every_epoch=False, epochs=30)
        _, report = train_stage1(SQ, cfg)
        assert report.total_loss[-1] < report.total_loss[0]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self):
        cfg = dataclasses.replace(TINY, learning_rate=1e300, epochs=5)
        with pytest.raises(TrainingDiverged) as info:
            train_stage1(SQ, cfg)
        assert 0 <= info.value.epoch < 5

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            train_stage2(SQ, PdeOperator("poisson", 3), zero_net(), TINY)


class TestSampling:
    def test_pairs_interior_and_separated(self):
        batch = sample_batch(Domain("circle"), 500, 200, seed=0)
        d = Domain("circle")
        assert np.all(d.contains(batch.interior_r)) and np.all(d.contains(batch.interior_xi))
        assert np.all(d.contains(batch.boundary_xi))
        assert np.max(d.boundary_distance(batch.boundary_r)) <= 1e-10
        assert np.min(np.linalg.norm(batch.interior_r - batch.interior_xi, axis=1)) >= 1e-6

    def test_close_pairs_redrawn(self):
        batch = sample_batch(SQ, 50, 1, seed=1, min_sep=0.5)
        assert np.min(np.linalg.norm(batch.interior_r - batch.interior_xi, axis=1)) >= 0.5

    def test_composite_t(self):
        r, xi = np.array([0.2, 0.3]), np.array([0.6, 0.1])
        assert composite_t(zero_net(), r, xi, 2) == t_singular(r, xi, 2)
        from dggf.operators import SingularityError

        with pytest.raises(SingularityError):
            composite_t(zero_net(), r, r, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(n_dm=0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_res=0)
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"epochz": 3})
    cfg = TrainConfig.from_dict({"epochs": 3, "hidden": [4, 4]})
    assert cfg.hidden == (4, 4) and TrainConfig.from_dict(cfg.to_dict()).digest == cfg.digest
