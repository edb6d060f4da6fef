import numpy as np
import pytest

from smot import autodiff as ad
from smot import nn, sde
from smot.autodiff import Tape, Tensor
from smot.sde import (
    ControlShiftSq,
    DiffusionTarget,
    DriftNormSq,
    DriftPlusDiffNormSq,
    SimConfig,
    SimulationDiverged,
)


def constant_net(d: int, drift: np.ndarray, root: np.ndarray) -> nn.MlpParams:
    """Zero-weight single layer whose bias pins the outputs."""
    bias = np.concatenate([np.asarray(drift, dtype=float).reshape(-1),
                           np.asarray(root, dtype=float).reshape(-1)])
    return nn.MlpParams(nn.MlpConfig(d, (), d + d * d),
                        [np.zeros((d, d + d * d))], [bias])


class TestIncrements:
    def test_moments(self):
        dw = sde.sample_increments(np.random.default_rng(0), 1, 10**6, 1, 0.1)
        assert abs(dw.mean()) < 4.0 * np.sqrt(0.1 / 10**6)
        assert abs(dw.var() - 0.1) < 0.001

    def test_deterministic(self):
        a = sde.sample_increments(np.random.default_rng(3), 4, 10, 2, 0.25)
        b = sde.sample_increments(np.random.default_rng(3), 4, 10, 2, 0.25)
        np.testing.assert_array_equal(a, b)

    def test_positive_dt(self):
        with pytest.raises(ValueError):
            sde.sample_increments(np.random.default_rng(0), 1, 1, 1, 0.0)


class TestSimConfig:
    def test_dt_times_n_is_one(self):
        cfg = SimConfig(1, 8, 4, np.array([0.0]))
        assert cfg.dt * cfg.n_steps == 1.0

    def test_x0_shape_checked(self):
        with pytest.raises(ValueError):
            SimConfig(2, 4, 4, np.array([1.0]))

    def test_arch_mode_checked(self):
        with pytest.raises(ValueError):
            SimConfig(1, 4, 4, np.array([1.0]), "other")


class TestSimulate:
    def test_frozen_dynamics(self):
        cfg = SimConfig(2, 5, 7, np.array([5.0, 4.0]))
        nets = [constant_net(2, np.zeros(2), np.zeros(4))] * 5
        dw = sde.sample_increments(np.random.default_rng(1), 5, 7, 2, cfg.dt)
        batch = sde.simulate(nets, cfg, dw)
        np.testing.assert_array_equal(batch.terminal.data,
                                      np.tile([5.0, 4.0], (7, 1)))

    def test_deterministic_unit_drift(self):
        cfg = SimConfig(1, 4, 3, np.array([5.0]))
        nets = [constant_net(1, [1.0], [0.0])] * 4
        dw = sde.sample_increments(np.random.default_rng(2), 4, 3, 1, cfg.dt)
        batch = sde.simulate(nets, cfg, dw)
        np.testing.assert_allclose(batch.terminal.data, np.full((3, 1), 6.0))

    def test_zero_root_makes_paths_identical(self):
        cfg = SimConfig(1, 6, 32, np.array([2.0]))
        nets = [constant_net(1, [0.3], [0.0])] * 6
        dw = sde.sample_increments(np.random.default_rng(3), 6, 32, 1, cfg.dt)
        batch = sde.simulate(nets, cfg, dw)
        assert np.ptp(batch.terminal.data) == 0.0

    def test_constant_diffusion_variance(self):
        a = 0.7
        cfg = SimConfig(1, 16, 10**5, np.array([0.0]))
        nets = [constant_net(1, [0.0], [a])] * 16
        dw = sde.sample_increments(np.random.default_rng(4), 16, 10**5, 1, cfg.dt)
        batch = sde.simulate(nets, cfg, dw)
        var = batch.terminal.data.var(ddof=1)
        assert abs(var - a * a) < 0.05 * a * a

    def test_terminal_mean_bound(self):
        b, a, m = 0.5, 0.5, 20000
        cfg = SimConfig(1, 8, m, np.array([5.0]))
        nets = [constant_net(1, [b], [a])] * 8
        dw = sde.sample_increments(np.random.default_rng(5), 8, m, 1, cfg.dt)
        batch = sde.simulate(nets, cfg, dw)
        assert abs(batch.terminal.data.mean() - 5.5) <= 4.0 * np.sqrt(a * a / m)

    def test_merged_receives_time_column(self, monkeypatch):
        seen = []
        cfg = SimConfig(1, 4, 3, np.array([0.0]), "merged")
        net = nn.MlpParams(nn.MlpConfig(2, (), 2), [np.zeros((2, 2))], [np.zeros(2)])
        dw = sde.sample_increments(np.random.default_rng(6), 4, 3, 1, cfg.dt)
        orig_forward = nn.forward_mlp

        def spy(params, x):
            seen.append(np.unique(np.asarray(x.data)[:, -1]).tolist())
            return orig_forward(params, x)

        monkeypatch.setattr(sde, "forward_mlp", spy)
        sde.simulate(net, cfg, dw)
        assert seen == [[0.0], [0.25], [0.5], [0.75]]

    def test_net_count_checked(self):
        cfg = SimConfig(1, 4, 3, np.array([0.0]))
        with pytest.raises(ValueError):
            sde.simulate([constant_net(1, [0.0], [0.0])] * 3, cfg,
                         np.zeros((4, 3, 1)))

    def test_divergence_raises(self):
        cfg = SimConfig(1, 3, 2, np.array([1e300]))
        nets = [nn.MlpParams(nn.MlpConfig(1, (), 2),
                             [np.array([[1e10, 0.0]])], [np.zeros(2)])] * 3
        dw = np.zeros((3, 2, 1))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(SimulationDiverged):
                sde.simulate(nets, cfg, dw)


class TestRunningCost:
    def _batch(self, d, drift, root, n_steps=5, m=9, seed=0):
        cfg = SimConfig(d, n_steps, m, np.full(d, 1.0))
        nets = [constant_net(d, drift, root)] * n_steps
        dw = sde.sample_increments(np.random.default_rng(seed), n_steps, m, d, cfg.dt)
        return sde.simulate(nets, cfg, dw), cfg.dt

    def test_zero_drift_zero_cost(self):
        batch, dt = self._batch(1, [0.0], [0.4])
        assert sde.running_cost(batch, DriftNormSq(), dt).item() == 0.0

    def test_constant_drift_cost(self):
        batch, dt = self._batch(1, [2.0], [0.0], n_steps=8)
        assert sde.running_cost(batch, DriftNormSq(), dt).item() == pytest.approx(4.0)

    def test_diffusion_target_met(self):
        root = np.sqrt(0.1)
        batch, dt = self._batch(1, [0.5], [root])
        cost = sde.running_cost(batch, DiffusionTarget(0.1), dt)
        assert cost.item() == pytest.approx(0.0, abs=1e-28)

    def test_drift_plus_diffusion_norm(self):
        # root [[1,0],[1,1]] gives diffusion [[1,1],[1,2]] with |.|_F^2 = 7
        batch, dt = self._batch(2, [0.5, -0.5], [1.0, 0.0, 1.0, 1.0])
        cost = sde.running_cost(batch, DriftPlusDiffNormSq(), dt)
        assert cost.item() == pytest.approx(0.5 + 7.0)

    def test_control_cost_requires_alphas(self):
        batch, dt = self._batch(1, [0.0], [0.0])
        with pytest.raises(ValueError):
            sde.running_cost(batch, ControlShiftSq(0.5), dt)

    def test_gradient_through_simulation(self):
        rng = np.random.default_rng(7)
        cfg = SimConfig(1, 2, 4, np.array([1.0]))
        net_cfg = nn.MlpConfig(1, (3,), 2)
        params = [nn.init_mlp(net_cfg, rng) for _ in range(2)]
        dw = sde.sample_increments(rng, 2, 4, 1, cfg.dt)

        def loss_value():
            batch = sde.simulate(params, cfg, dw)
            return float(sde.running_cost(batch, DriftNormSq(), cfg.dt).item()
                         + batch.terminal.data.sum())

        with Tape() as tape:
            bound = [nn.bind_mlp(p) for p in params]
            batch = sde.simulate(bound, cfg, dw)
            loss = ad.add(sde.running_cost(batch, DriftNormSq(), cfg.dt),
                          ad.sum_all(batch.terminal))
            gmap = ad.backward(tape, loss)
            grads0 = nn.param_gradients(gmap, bound[0])

        w = params[0].weights[0]

        def f(t):
            saved = w.copy()
            w[...] = t.data.reshape(w.shape)
            v = loss_value()
            w[...] = saved
            return v

        fd = ad.finite_diff_grad(f, Tensor(w.reshape(1, -1)), 1e-6)
        rel = np.max(np.abs(grads0[0].reshape(1, -1) - fd.data) / (np.abs(fd.data) + 1e-8))
        assert rel < 1e-4
