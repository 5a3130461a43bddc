import numpy as np
import pytest

from photonic_qt.errors import CapacityError, DivergenceError, InvalidParameterError
from photonic_qt.mps_mapper import index_bits
from photonic_qt.qnn_sampler import NoiseModel, ShotBudget
from photonic_qt.training import (
    TrainConfig,
    chained_gradient,
    generate_pw,
    hybrid_train,
    init_qt_params,
    learning_rate,
    qt_param_count,
    theta_gradient_fd,
)

from .conftest import rel_err, synthetic_split


def fd_at(fn, x, idx, h):
    out = []
    for k in idx:
        xp, xm = x.copy(), x.copy()
        xp[k] += h
        xm[k] -= h
        out.append((fn(xp) - fn(xm)) / (2 * h))
    return np.array(out)


@pytest.fixture(scope="module")
def batch(pool):
    return pool.images[:16], pool.labels[:16]


def jittered_params(chi, seed):
    params = init_qt_params(TrainConfig(chi=chi, seed=seed))
    x = params.mps.to_vector()
    return params, params.mps.with_vector(x + 0.05 * np.random.default_rng(seed).standard_normal(x.size))


class TestChainedGradient:
    @pytest.mark.parametrize("chi", [1, 2, 3])
    def test_mps_gradient_through_cnn(self, chi, batch):
        params, mps = jittered_params(chi, chi)
        p_w = generate_pw(params.thetas, TrainConfig(chi=chi))
        loss, g_b, _ = chained_gradient(mps, p_w, *batch)
        x0 = mps.to_vector()
        rng = np.random.default_rng(chi)
        idx = rng.choice(x0.size, 20, replace=False)
        fd = fd_at(lambda x: chained_gradient(mps.with_vector(x), p_w, *batch)[0], x0, idx, 1e-6)
        assert rel_err(g_b[idx], fd, 1e-3 * np.abs(g_b).max()) < 1e-4

    def test_probability_gradient_through_cnn(self, batch):
        params, mps = jittered_params(2, 7)
        p_w = generate_pw(params.thetas, TrainConfig(chi=2))
        _, _, g_p = chained_gradient(mps, p_w, *batch)
        assert g_p.size == 8820 and np.all(g_p[6690:] == 0)
        idx = np.random.default_rng(0).choice(6690, 20, replace=False)
        fd = fd_at(lambda p: chained_gradient(mps, p, *batch)[0], p_w, idx, 1e-6)
        assert rel_err(g_p[idx], fd, 1e-3 * np.abs(g_p).max()) < 1e-4

    def test_phase_gradient_chain(self, batch):
        config = TrainConfig(chi=2)
        params, mps = jittered_params(2, 3)
        thetas = params.thetas
        p_w = generate_pw(thetas, config)
        _, _, g_p = chained_gradient(mps, p_w, *batch)
        g_theta = theta_gradient_fd(thetas, g_p, config)

        def loss_of(flat0):
            return chained_gradient(mps, generate_pw([flat0, thetas[1]], config), *batch)[0]

        idx = [0, 5, 17, 60]
        fd = fd_at(loss_of, thetas[0], idx, 1e-5)
        # dP/dtheta is itself a finite difference, so allow a looser match here
        assert rel_err(g_theta[0][idx], fd, 1e-2 * np.abs(g_theta[0]).max()) < 1e-3


class TestSchedule:
    def test_cosine(self):
        cfg = TrainConfig(epochs=10, lr=1e-2)
        assert learning_rate(cfg, 0) == pytest.approx(1e-2)
        assert learning_rate(cfg, 5) == pytest.approx(5e-3)
        assert all(learning_rate(cfg, e) > learning_rate(cfg, e + 1) for e in range(9))

    def test_constant(self):
        cfg = TrainConfig(epochs=10, lr=1e-2, lr_schedule="constant")
        assert learning_rate(cfg, 7) == 1e-2

    @pytest.mark.parametrize(
        "kwargs",
        [{"epochs": -1}, {"lr": 0.0}, {"rhobeg": 1e-5}, {"theta_mode": "adam"}, {"lr_schedule": "step"},
         {"batch_size": 0}, {"eval_every": 0}, {"weight_scale": -1.0}],
    )
    def test_validation(self, kwargs):
        with pytest.raises(InvalidParameterError):
            TrainConfig(**kwargs)


class TestHybridTrain:
    def test_param_counts(self):
        assert qt_param_count(4) == 688
        assert init_qt_params(TrainConfig(chi=4)).n_params == 688

    def test_zero_epochs_returns_initial(self):
        cfg = TrainConfig(epochs=0, chi=2)
        split = synthetic_split(10)
        result = hybrid_train(cfg, split, split)
        assert result.history == []
        assert np.array_equal(result.params.mps.to_vector(), init_qt_params(cfg).mps.to_vector())

    def test_capacity_check(self):
        split = synthetic_split(10)
        with pytest.raises(CapacityError):
            hybrid_train(TrainConfig(qnn_shape=((5, 2), (4, 2))), split, split)

    def test_empty_train_refused(self):
        split = synthetic_split(10)
        with pytest.raises(CapacityError):
            hybrid_train(TrainConfig(epochs=1), split.take(np.arange(0)), split)

    def test_divergence_reported(self):
        split = synthetic_split(20)
        cfg = TrainConfig(epochs=1, chi=2)
        feats = np.full((6690, index_bits(6690) + 1, 2), np.nan)
        with pytest.raises(DivergenceError):
            hybrid_train(cfg, split, split, feature_source=lambda e, s: feats)

    def test_deterministic(self, tiny_split):
        train, test = tiny_split
        cfg = TrainConfig(epochs=2, chi=2, maxfun=4, cobyla_batch=32, seed=5)
        a = hybrid_train(cfg, train, test)
        b = hybrid_train(cfg, train, test)
        assert [(h.train_loss, h.test_accuracy) for h in a.history] == [
            (h.train_loss, h.test_accuracy) for h in b.history
        ]
        assert np.array_equal(a.params.thetas[0], b.params.thetas[0])

    def test_sampled_noisy_run_and_eval_every(self, tiny_split):
        train, test = tiny_split
        cfg = TrainConfig(
            epochs=3, chi=2, maxfun=3, cobyla_batch=32, eval_every=2,
            noise=NoiseModel(beta=0.5, indist=0.97, g2=0.01, transmittance=0.8),
            shots=ShotBudget("sampled", 10_000, seed=1),
        )
        seen = []
        result = hybrid_train(cfg, train, test, on_epoch=seen.append)
        assert [h.epoch for h in result.history] == [2, 3]
        assert seen == result.history
        assert all(np.isfinite(h.train_loss) for h in result.history)

    def test_learns_on_small_split(self, tiny_split):
        train, test = tiny_split
        cfg = TrainConfig(epochs=6, chi=3, maxfun=0, batch_size=32)
        result = hybrid_train(cfg, train, test)
        assert result.history[-1].train_accuracy > 30.0
