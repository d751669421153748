import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from runtime_oracle.baseline import fit_baseline
from runtime_oracle.dataset import SyntheticConfig, generate_synthetic, make_split
from runtime_oracle.errors import ValidationError
from runtime_oracle.model import (
    NetworkConfig,
    init_model,
    interaction_forward,
    platform_embeddings,
    workload_embeddings,
)
from runtime_oracle.training import (
    Batch,
    LossConfig,
    OptimizerState,
    TrainConfig,
    TrainingLog,
    adamax_step,
    loss_and_grad,
    pinball_loss,
    squared_log_loss,
    total_loss,
    train,
)

from conftest import finite_difference_error, random_batches, random_model


class TestLosses:
    def test_squared_log_loss(self):
        assert squared_log_loss(1.0, 1.0) == 0
        assert squared_log_loss(2.0, 1.0) == 1.0
        assert squared_log_loss(0.0, 3.0) == 9.0

    def test_pinball_examples(self):
        assert pinball_loss(0.7, 0.7, 0.3) == 0
        assert pinball_loss(0.0, 1.0, 0.9) == pytest.approx(0.9)
        assert pinball_loss(1.0, 0.0, 0.9) == pytest.approx(0.1)

    def test_pinball_rejects_bad_xi(self):
        for xi in (0.0, 1.0, -0.2):
            with pytest.raises(ValidationError):
                pinball_loss(0.0, 1.0, xi)

    def test_pinball_scan_finds_quantile(self):
        sample = np.arange(1, 101, dtype=float)
        grid = np.linspace(0, 101, 10101)
        risk = [np.mean(pinball_loss(c, sample, 0.95)) for c in grid]
        assert abs(grid[int(np.argmin(risk))] - 95) <= 1

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 0.99))
    def test_pinball_nonnegative(self, pred, target, xi):
        assert pinball_loss(pred, target, xi) >= 0


class TestTotalLoss:
    def _model(self, **kw):
        return random_model(np.random.default_rng(0), interference_types=1,
                            mean_mode=True, **kw)

    def test_zero_at_targets(self):
        m = self._model()
        b = random_batches(np.random.default_rng(1), 6, 5)
        # Replace targets with the model's own residual predictions.
        W = workload_embeddings(m)
        p, vs, vg = platform_embeddings(m)
        exact = {}
        for d, bt in b.items():
            pred, _ = interaction_forward(W, p, vs, vg, bt.i, bt.j, bt.K, m.config)
            exact[d] = Batch(bt.i, bt.j, bt.K, pred[:, 0])
        loss, grads = loss_and_grad(m, exact, LossConfig())
        assert loss == 0
        for v in grads.values():
            assert np.all(v == 0)

    def test_mode_weights(self):
        m = self._model()
        rng = np.random.default_rng(2)
        b = random_batches(rng, 6, 5)
        only0 = total_loss(m, {0: b[0]}, LossConfig())
        assert total_loss(m, {0: b[0]}, LossConfig(0.5)) == only0
        # Same batch for every degree with an inert interferer set gives 1.5 L.
        m0 = random_model(np.random.default_rng(0), interference_types=0,
                          mean_mode=True)
        same = {d: b[0] for d in range(4)}
        L = total_loss(m0, {0: b[0]}, LossConfig())
        assert total_loss(m0, same, LossConfig(0.5)) == pytest.approx(1.5 * L, rel=1e-14)

    def test_beta_linearity(self):
        m = self._model()
        b = random_batches(np.random.default_rng(3), 6, 5)
        base = total_loss(m, {0: b[0]}, LossConfig())
        l1 = total_loss(m, b, LossConfig(0.4)) - base
        l2 = total_loss(m, b, LossConfig(0.8)) - base
        assert l2 == pytest.approx(2 * l1, abs=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            LossConfig(interference_weight=-1).validate()
        with pytest.raises(ValidationError):
            TrainConfig(steps=10, eval_every=20).validate()


class TestBackward:
    @pytest.mark.parametrize("mean_mode", [True, False])
    @pytest.mark.parametrize("s", [0, 1, 2])
    def test_finite_differences(self, mean_mode, s):
        rng = np.random.default_rng(10 + s)
        m = random_model(rng, interference_types=s, mean_mode=mean_mode)
        b = random_batches(rng, 6, 5)
        worst, n = finite_difference_error(m, b, LossConfig(), rng, 120)
        assert n >= 100
        assert worst <= 1e-5

    def test_proportional_objective(self):
        rng = np.random.default_rng(20)
        m = random_model(rng, interference_types=1, mean_mode=True)
        b = random_batches(rng, 6, 5)
        worst, _ = finite_difference_error(m, b, LossConfig(objective="proportional"), rng)
        assert worst <= 1e-5


class TestAdamax:
    def test_zero_gradient(self):
        p = {"a": np.array([1.0, -2.0])}
        new, state = adamax_step(p, {"a": np.zeros(2)}, OptimizerState.zeros_like(p),
                                 TrainConfig())
        assert np.array_equal(new["a"], p["a"])
        assert state.t == 1

    def test_first_step(self):
        # m = 0.1, u = 1, bias-corrected step lr / 0.1 gives -lr overall.
        p = {"a": np.array([0.0])}
        new, state = adamax_step(p, {"a": np.array([1.0])},
                                 OptimizerState.zeros_like(p), TrainConfig())
        assert state.m["a"][0] == pytest.approx(0.1)
        assert state.u["a"][0] == 1.0
        assert new["a"][0] == pytest.approx(-0.001, rel=1e-7)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_update_bound(self, seed):
        rng = np.random.default_rng(seed)
        cfg = TrainConfig()
        p = {"a": rng.normal(size=4)}
        state = OptimizerState.zeros_like(p)
        for t in range(1, 30):
            new, state = adamax_step(p, {"a": rng.normal(size=4) * 10}, state, cfg)
            bound = cfg.learning_rate / (1 - cfg.beta1 ** t)
            assert np.all(np.abs(new["a"] - p["a"]) <= bound * (1 + 1e-12))
            assert np.all(state.u["a"] >= 0)
            p = new


def noiseless_setup():
    cfg = SyntheticConfig(n_workloads=10, n_platforms=6, rank=2, noise_sigma=0.0,
                          obs_per_mode=300, modes=(0,), interference_scale=0.0)
    ds, _ = generate_synthetic(cfg, seed=0)
    split = make_split(ds, 0.8, 0)
    base = fit_baseline(ds, split.train_ids)
    net = NetworkConfig(hidden_sizes=(16,), embed_dim=4, mean_mode=True,
                        interference_types=0)
    model = init_model(net, ds.features.workload_features.shape[1],
                       ds.features.platform_features.shape[1], ds.n_workloads,
                       ds.n_platforms, base, 0, ds.features)
    return ds, split, model


class TestTrain:
    def test_zero_steps_returns_init(self):
        ds, split, model = noiseless_setup()
        best, log = train(ds, split, model, TrainConfig(steps=0), LossConfig())
        for k in model.params:
            assert np.array_equal(best.params[k], model.params[k])
        assert [r[0] for r in log.rows] == [0]

    def test_noiseless_recovery(self):
        ds, split, model = noiseless_setup()
        _, log = train(ds, split, model,
                       TrainConfig(steps=3000, eval_every=100, batch_per_mode=128),
                       LossConfig())
        start = log.rows[0][2]
        best = min(r[2] for r in log.rows)
        assert start / best >= 100

    def test_deterministic_and_log_format(self, tmp_path):
        ds, split, model = noiseless_setup()
        cfg = TrainConfig(steps=60, eval_every=20, batch_per_mode=32, seed=5)
        a, la = train(ds, split, model, cfg, LossConfig())
        b, lb = train(ds, split, model, cfg, LossConfig())
        assert la.to_csv() == lb.to_csv()
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])
        assert la.to_csv().splitlines()[0] == "step,train_loss,calval_loss,is_best"
        la.save(tmp_path / "log.csv")
        back = TrainingLog.load(tmp_path / "log.csv")
        assert back.best_step == la.best_step
        assert len(back.rows) == 4

    def test_empty_train_set(self):
        ds, split, model = noiseless_setup()
        split = dataclasses.replace(split, train_ids=np.array([], dtype=np.int64))
        with pytest.raises(ValidationError):
            train(ds, split, model, TrainConfig(steps=0), LossConfig())
