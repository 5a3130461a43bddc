"""Classical comparison methods and the random-input ablation.

All three classical baselines train the same CNN template with ADAM. They only
differ in how a free parameter vector ``u`` expands into the 6690 network
weights, captured by ``ParamMap``:

* original: identity
* weight sharing: rows of one matrix gathered from ``K`` shared vectors
* random pruning: a fixed subset of weights, the rest pinned at zero
"""

import time
from dataclasses import dataclass
from math import comb
from typing import Callable, Literal

import numpy as np

from . import cnn
from .data import DatasetSplit
from .errors import DivergenceError, InvalidParameterError
from .mps_mapper import index_bits
from .optim import AdamState, adam_step
from .training import (
    EpochMetrics,
    TrainConfig,
    TrainResult,
    generalization_error,
    hybrid_train,
    learning_rate,
    pw_features,
)


@dataclass(frozen=True)
class ParamMap:
    """``w = where(source >= 0, u[source], 0)``; gradients pull back by summing over ties."""

    source: np.ndarray  # (n_weights,) index into u, or -1 for a pinned-zero weight
    n_free: int

    @property
    def n_weights(self) -> int:
        return self.source.size

    def expand(self, u: np.ndarray) -> np.ndarray:
        w = np.zeros(self.n_weights)
        live = self.source >= 0
        w[live] = u[self.source[live]]
        return w

    def pullback(self, g_w: np.ndarray) -> np.ndarray:
        live = self.source >= 0
        return np.bincount(self.source[live], weights=g_w[live], minlength=self.n_free)

    def restrict(self, w: np.ndarray) -> np.ndarray:
        """A free vector whose expansion agrees with ``w`` on the first weight of every tie group."""
        u = np.zeros(self.n_free)
        live = np.flatnonzero(self.source >= 0)
        # reversed so the first occurrence wins
        u[self.source[live[::-1]]] = w[live[::-1]]
        return u


def identity_map(template: cnn.CnnTemplate) -> ParamMap:
    n = template.param_count
    return ParamMap(np.arange(n), n)


@dataclass(frozen=True)
class WeightSharingConfig:
    layer: str
    k: int
    rows: int
    row_len: int

    def sigma(self) -> np.ndarray:
        """Row ``i`` of the shared matrix reads shared vector ``i mod K`` (zero-based)."""
        return np.arange(self.rows) % self.k

    @property
    def shared_params(self) -> int:
        return self.k * self.row_len


def largest_linear_layer(template: cnn.CnnTemplate) -> str:
    linear = [layer for layer in template.parameterized if layer.kind == "linear"]
    return max(linear, key=lambda layer: np.prod(layer.weight_shape)).name


def apply_weight_sharing(template: cnn.CnnTemplate, k: int, layer: str | None = None):
    """Tie the rows of one weight matrix to ``k`` shared vectors; returns ``(ParamMap, config)``."""
    layer = layer or largest_linear_layer(template)
    slices = {name: (a, b, shape) for name, a, b, shape in template.slices()}
    key = f"{layer}.weight"
    if key not in slices:
        raise InvalidParameterError(f"no weight tensor named {key!r}")
    start, stop, shape = slices[key]
    rows, row_len = shape[0], int(np.prod(shape[1:]))
    if not 1 <= k <= rows:
        raise InvalidParameterError(f"K must lie in 1..{rows} for {key}, got {k}")
    cfg = WeightSharingConfig(layer, k, rows, row_len)

    source = np.full(template.param_count, -1, dtype=np.int64)
    source[:start] = np.arange(start)
    shared = start + cfg.sigma()[:, None] * row_len + np.arange(row_len)[None, :]
    source[start:stop] = shared.ravel()
    tail = template.param_count - stop
    source[stop:] = start + cfg.shared_params + np.arange(tail)
    return ParamMap(source, start + cfg.shared_params + tail), cfg


@dataclass(frozen=True)
class PruneConfig:
    alpha: float
    seed: int
    total: int = cnn.TARGET_PARAMS

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in [0, 1), got {self.alpha}")

    @property
    def n_removed(self) -> int:
        return int(round(self.alpha * self.total))

    @property
    def retained(self) -> int:
        return self.total - self.n_removed


def alpha_for_retained(retained: int, total: int = cnn.TARGET_PARAMS) -> float:
    if not 0 < retained <= total:
        raise InvalidParameterError(f"retained must lie in 1..{total}, got {retained}")
    return (total - retained) / total


def prune_mask(cfg: PruneConfig) -> np.ndarray:
    """Boolean keep-mask with exactly ``cfg.retained`` True entries; same seed, same mask."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9E]))
    keep = np.ones(cfg.total, dtype=bool)
    keep[rng.choice(cfg.total, cfg.n_removed, replace=False)] = False
    return keep


def apply_random_pruning(template: cnn.CnnTemplate, alpha: float, seed: int):
    """Returns ``(ParamMap, PruneConfig)`` for a fixed random keep-mask over all weights."""
    cfg = PruneConfig(alpha, seed, template.param_count)
    keep = prune_mask(cfg)
    source = np.full(cfg.total, -1, dtype=np.int64)
    source[keep] = np.arange(cfg.retained)
    return ParamMap(source, cfg.retained), cfg


def train_mapped_cnn(
    pmap: ParamMap,
    config: TrainConfig,
    train: DatasetSplit,
    test: DatasetSplit,
    *,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
):
    """Train the free parameters of ``pmap`` directly with ADAM; returns ``(u, history)``."""
    template = cnn.build_template()
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC4]))
    u = pmap.restrict(cnn.init_weights(template, rng))
    adam = AdamState.zeros_like(u)
    history = []
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = learning_rate(config, epoch)
        order = np.random.default_rng(np.random.SeedSequence([config.seed, 0xE0, epoch])).permutation(len(train))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            loss, _, g_w = cnn.vector_loss_and_grad(pmap.expand(u), train.images[idx], train.labels[idx], template)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, loss)
            u, adam = adam_step(u, pmap.pullback(g_w), adam, lr, config.beta1, config.beta2, config.adam_eps)
        if (epoch + 1) % config.eval_every == 0 or epoch == config.epochs - 1:
            w = pmap.expand(u)
            tr_loss, tr_acc = cnn.evaluate(w, train.images, train.labels, template)
            te_loss, te_acc = cnn.evaluate(w, test.images, test.labels, template) if len(test) else (np.nan, np.nan)
            if not np.isfinite(tr_loss):
                raise DivergenceError(epoch, tr_loss)
            metrics = EpochMetrics(
                epoch + 1, tr_loss, tr_acc, te_loss, te_acc,
                generalization_error(tr_loss, te_loss), time.perf_counter() - t0,
            )
            history.append(metrics)
            if on_epoch:
                on_epoch(metrics)
    return u, history


def train_original_cnn(config: TrainConfig, train: DatasetSplit, test: DatasetSplit, **kwargs):
    return train_mapped_cnn(identity_map(cnn.build_template()), config, train, test, **kwargs)


# --------------------------------------------------------------------------
# ablation
# --------------------------------------------------------------------------

AblationMode = Literal["frozen_pw", "stochastic"]


def simplex_draw(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the probability simplex (normalized exponential draws)."""
    e = rng.exponential(size=n)
    return e / e.sum()


def ablation_feature_source(config: TrainConfig, trial_seed: int, mode: AblationMode = "frozen_pw"):
    """Feature provider replacing the photonic generator.

    ``frozen_pw``: one simplex-uniform vector stands in for ``P_w`` for the
    whole trial; the index bits are kept.
    ``stochastic``: every site of every index gets fresh uniform noise on every
    call, so the mapping acts as a generator driven purely by noise.
    """
    m = config.n_weights
    if mode == "frozen_pw":
        rng = np.random.default_rng(np.random.SeedSequence([trial_seed, 0xAB]))
        (m1, n1), (m2, n2) = config.qnn_shape
        feats = pw_features(simplex_draw(comb(m1, n1) * comb(m2, n2), rng), m)
        return lambda epoch, step: feats
    if mode == "stochastic":
        n_sites = index_bits(m) + 1

        def draw(epoch, step):
            rng = np.random.default_rng(np.random.SeedSequence([trial_seed, 0xAC, epoch, step + 1]))
            r = rng.random((m, n_sites))
            return np.stack([1.0 - r, r], axis=-1)

        return draw
    raise InvalidParameterError(f"unknown ablation mode {mode!r}")


def run_ablation(
    config: TrainConfig,
    train: DatasetSplit,
    test: DatasetSplit,
    *,
    mode: AblationMode = "frozen_pw",
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> TrainResult:
    """Train only the MPS on random inputs in place of the photonic output."""
    source = ablation_feature_source(config, config.seed, mode)
    return hybrid_train(config, train, test, feature_source=source, on_epoch=on_epoch)
