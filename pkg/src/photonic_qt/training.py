"""Hybrid training: ADAM on the MPS mapping, COBYLA on the photonic mesh phases."""

import time
from dataclasses import dataclass, field
from typing import Callable, Literal

import numpy as np

from . import cnn
from .data import DatasetSplit
from .errors import CapacityError, DivergenceError, InvalidParameterError, OptimizerAbort
from .linear_optics import MeshParams, trainable_count
from .mps_mapper import (
    WEIGHT_SCALE,
    MpsModel,
    backward_features,
    encode_batch,
    forward_features,
    index_bits,
    mps_param_count,
)
from .optim import AdamState, adam_step, cobyla_minimize
from .qnn_sampler import NoiseModel, QnnConfig, ShotBudget, run_qnn, tensor_product, validate_capacity


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 3e-3
    lr_schedule: Literal["constant", "cosine"] = "cosine"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    rhobeg: float = 0.5
    rhoend: float = 1e-4
    maxfun: int = 20
    cobyla_batch: int = 512
    theta_mode: Literal["cobyla", "finite_difference", "frozen"] = "cobyla"
    theta_lr: float = 1e-2
    seed: int = 0
    chi: int = 4
    noise: NoiseModel = field(default_factory=NoiseModel)
    shots: ShotBudget = field(default_factory=ShotBudget)
    qnn_shape: tuple = ((9, 4), (8, 4))
    n_weights: int = cnn.TARGET_PARAMS
    eval_every: int = 1
    weight_scale: float | None = WEIGHT_SCALE

    def __post_init__(self):
        if self.epochs < 0:
            raise InvalidParameterError("epochs must be >= 0")
        if self.lr <= 0:
            raise InvalidParameterError("lr must be positive")
        if not self.rhoend < self.rhobeg:
            raise InvalidParameterError("rhoend must be smaller than rhobeg")
        if self.weight_scale is not None and self.weight_scale <= 0:
            raise InvalidParameterError("weight_scale must be positive or None")
        if self.theta_mode not in ("cobyla", "finite_difference", "frozen"):
            raise InvalidParameterError(f"unknown theta_mode {self.theta_mode!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise InvalidParameterError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.batch_size < 1:
            raise InvalidParameterError("batch_size must be positive")
        if self.eval_every < 1:
            raise InvalidParameterError("eval_every must be positive")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_loss: float
    test_accuracy: float
    generalization_error: float
    wall_time: float


def learning_rate(config: TrainConfig, epoch: int) -> float:
    """Per-epoch ADAM step size; the cosine schedule decays to zero at the last epoch."""
    if config.lr_schedule == "constant" or config.epochs <= 1:
        return config.lr
    return 0.5 * config.lr * (1.0 + np.cos(np.pi * epoch / config.epochs))


def generalization_error(train_loss: float, test_loss: float) -> float:
    """Test-minus-train cross-entropy gap."""
    return test_loss - train_loss


@dataclass
class QtParams:
    thetas: list[np.ndarray]
    mps: MpsModel

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.thetas) + self.mps.n_params


def init_qt_params(config: TrainConfig) -> QtParams:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xB0]))
    thetas = [MeshParams.random(mm, rng).phases for mm, _ in config.qnn_shape]
    mps = MpsModel.init(config.chi, config.n_weights, rng)
    return QtParams(thetas, mps)


def qt_param_count(chi: int, qnn_shape=((9, 4), (8, 4)), m: int = cnn.TARGET_PARAMS) -> int:
    return sum(trainable_count(mm) for mm, _ in qnn_shape) + mps_param_count(chi, m)


def generate_pw(thetas, config: TrainConfig, epoch: int = 0) -> np.ndarray:
    """Tensor product of all QNN output distributions (full length, untruncated)."""
    p_w = None
    for k, ((mm, nn), theta) in enumerate(zip(config.qnn_shape, thetas)):
        probs = run_qnn(QnnConfig(mm, nn, MeshParams(mm, theta)), config.noise, config.shots, qnn_index=k, epoch=epoch)
        p_w = probs if p_w is None else tensor_product(p_w, probs)
    return p_w


def pw_features(p_w, m: int = cnn.TARGET_PARAMS) -> np.ndarray:
    return encode_batch(np.arange(m), np.asarray(p_w, dtype=np.float64)[:m], index_bits(m))


def chained_features_gradient(mps: MpsModel, feats, images, labels, template=None, scale=WEIGHT_SCALE):
    """Loss and gradients with respect to the MPS parameters and to the input features."""
    template = template or cnn.build_template()
    v, cache = forward_features(mps, feats, scale)
    loss, _, g_w = cnn.vector_loss_and_grad(v, images, labels, template)
    g_b, g_feats = backward_features(mps, g_w, cache, scale)
    return loss, g_b, g_feats


def chained_gradient(mps: MpsModel, p_w, images, labels, template=None, m: int = cnn.TARGET_PARAMS, scale=WEIGHT_SCALE):
    """Loss and reverse-mode gradients with respect to the MPS parameters and to ``P_w``.

    Returns ``(loss, grad_params, grad_p)``; ``grad_p`` has the length of ``p_w``.
    """
    p_w = np.asarray(p_w, dtype=np.float64)
    loss, g_b, g_feats = chained_features_gradient(mps, pw_features(p_w, m), images, labels, template, scale)
    g_p = np.zeros(p_w.size)
    g_p[:m] = g_feats[:, -1, 1] - g_feats[:, -1, 0]
    return loss, g_b, g_p


def generated_weights(mps: MpsModel, p_w, config: "TrainConfig") -> np.ndarray:
    return forward_features(mps, pw_features(p_w, config.n_weights), config.weight_scale)[0]


def theta_gradient_fd(thetas, g_p, config: TrainConfig, step: float = 1e-4, epoch: int = 0) -> list[np.ndarray]:
    """d(loss)/d(theta) = (dP_w/dtheta)^T g_p with dP_w/dtheta by central differences."""
    out = []
    for k in range(len(thetas)):
        grad = np.zeros_like(thetas[k])
        for j in range(thetas[k].size):
            plus = [t.copy() for t in thetas]
            minus = [t.copy() for t in thetas]
            plus[k][j] += step
            minus[k][j] -= step
            dp = (generate_pw(plus, config, epoch) - generate_pw(minus, config, epoch)) / (2 * step)
            grad[j] = dp @ g_p
        out.append(grad)
    return out


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))


def _cobyla_block(epoch: int, n_total: int, block: int) -> np.ndarray:
    start = (epoch * block) % n_total
    return (start + np.arange(block)) % n_total


@dataclass
class TrainResult:
    params: QtParams
    history: list[EpochMetrics]
    config: TrainConfig


def hybrid_train(
    config: TrainConfig,
    train: DatasetSplit,
    test: DatasetSplit,
    *,
    params: QtParams | None = None,
    feature_source: Callable[[int, int], np.ndarray] | None = None,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Alternate an ADAM pass over the MPS parameters with a bounded COBYLA phase on the phases.

    ``feature_source(epoch, step)`` replaces the photonic generator and its
    encoding with an arbitrary ``(m, n_sites, 2)`` feature tensor (used by the
    ablation). It is called before every minibatch step and with ``step=-1``
    before evaluation; the phases are left untouched in that mode.
    """
    (m1, n1), (m2, n2) = config.qnn_shape
    if not validate_capacity(m1, n1, m2, n2, config.n_weights):
        raise CapacityError(
            f"C({m1},{n1}) * C({m2},{n2}) < {config.n_weights}: QNN outputs cannot fill the CNN"
        )
    if len(train) == 0:
        raise CapacityError("empty training split")
    template = cnn.build_template()
    m = config.n_weights
    scale = config.weight_scale
    params = params or init_qt_params(config)
    thetas = [t.copy() for t in params.thetas]
    mps_vec = params.mps.to_vector()
    adam = AdamState.zeros_like(mps_vec)
    theta_adam = AdamState.zeros_like(np.concatenate(thetas))
    history: list[EpochMetrics] = []
    optimize_theta = feature_source is None and config.theta_mode != "frozen"

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        if feature_source is None:
            p_w = generate_pw(thetas, config, epoch)
            feats = pw_features(p_w, m)
        lr = learning_rate(config, epoch)
        order = _rng(config.seed, 0xE0, epoch).permutation(len(train))
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            idx = order[start : start + config.batch_size]
            if feature_source is not None:
                feats = feature_source(epoch, step)
            mps = params.mps.with_vector(mps_vec)
            loss, g_b, g_feats = chained_features_gradient(
                mps, feats, train.images[idx], train.labels[idx], template, scale
            )
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            mps_vec, adam = adam_step(mps_vec, g_b, adam, lr, config.beta1, config.beta2, config.adam_eps)
            if optimize_theta and config.theta_mode == "finite_difference" and step == 0:
                g_p = np.zeros(p_w.size)
                g_p[:m] = g_feats[:, -1, 1] - g_feats[:, -1, 0]
                g_theta = np.concatenate(theta_gradient_fd(thetas, g_p, config, epoch=epoch))
                flat, theta_adam = adam_step(np.concatenate(thetas), g_theta, theta_adam, config.theta_lr)
                thetas = np.split(flat, np.cumsum([t.size for t in thetas])[:-1])

        mps = params.mps.with_vector(mps_vec)
        if optimize_theta and config.theta_mode == "cobyla" and config.maxfun > 0:
            thetas = _cobyla_phase(thetas, mps, train, config, epoch, template)

        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            if feature_source is None:
                feats = pw_features(generate_pw(thetas, config, epoch), m)
            else:
                feats = feature_source(epoch, -1)
            v = forward_features(mps, feats, scale)[0]
            tr_loss, tr_acc = cnn.evaluate(v, train.images, train.labels, template)
            te_loss, te_acc = cnn.evaluate(v, test.images, test.labels, template) if len(test) else (np.nan, np.nan)
            if not np.isfinite(tr_loss):
                raise DivergenceError(epoch, tr_loss)
            metrics = EpochMetrics(
                epoch + 1, tr_loss, tr_acc, te_loss, te_acc,
                generalization_error(tr_loss, te_loss), time.perf_counter() - t0,
            )
            history.append(metrics)
            if on_epoch:
                on_epoch(metrics)

    return TrainResult(QtParams(thetas, params.mps.with_vector(mps_vec)), history, config)


def _cobyla_phase(thetas, mps, train, config: TrainConfig, epoch: int, template):
    sizes = [t.size for t in thetas]
    flat0 = np.concatenate(thetas)
    # a full simplex over all phases needs n + 1 calls; rotate through blocks that fit the budget
    block = _cobyla_block(epoch, flat0.size, max(1, min(flat0.size, config.maxfun - 2)))
    sel = _rng(config.seed, 0xC0, epoch).permutation(len(train))[: config.cobyla_batch]
    xb, yb = train.images[sel], train.labels[sel]

    def objective(sub):
        flat = flat0.copy()
        flat[block] = sub
        p_w = generate_pw(np.split(flat, np.cumsum(sizes)[:-1]), config, epoch)
        return cnn.evaluate(generated_weights(mps, p_w, config), xb, yb, template)[0]

    try:
        res = cobyla_minimize(objective, flat0[block], config.rhobeg, config.rhoend, config.maxfun)
        best = res.x
    except OptimizerAbort as exc:
        best = exc.x_best
    flat = flat0.copy()
    flat[block] = best
    return np.split(flat, np.cumsum(sizes)[:-1])
