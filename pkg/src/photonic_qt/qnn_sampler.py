"""Photonic QNN evaluation: mesh phases to (noisy, optionally sampled) probability vectors."""

from dataclasses import dataclass
from math import comb
from typing import Literal

import numpy as np

from .errors import DimensionMismatchError, HeraldingStarvationError, InvalidParameterError
from .linear_optics import (
    MeshParams,
    clements_mesh,
    default_input_state,
    distinguishable_output_distribution,
    enumerate_fock_basis,
    output_distribution,
    trainable_count,
)

NORM_TOL = 1e-9

# Realistic ranges for current single-photon sources and integrated circuits.
HARDWARE_RANGES = {
    "beta": (0.2, 0.75),
    "indist": (0.95, 1.0),
    "g2": (1e-3, 1e-1),
    "transmittance": (0.4, 0.9),
}


@dataclass(frozen=True)
class NoiseModel:
    beta: float = 1.0
    indist: float = 1.0
    g2: float = 0.0
    transmittance: float = 1.0

    def __post_init__(self):
        for name in ("beta", "indist", "g2", "transmittance"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise InvalidParameterError(f"noise field {name}={v} outside [0, 1]")

    @property
    def is_ideal(self) -> bool:
        return self == NoiseModel()

    def multiphoton_error(self, n_modes: int) -> float:
        return min(1.0, 0.5 * n_modes * self.g2)


@dataclass(frozen=True)
class ShotBudget:
    mode: Literal["analytic", "sampled"] = "analytic"
    n_samp: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("analytic", "sampled"):
            raise InvalidParameterError(f"unknown shot mode {self.mode!r}")
        if self.mode == "sampled" and self.n_samp < 1:
            raise InvalidParameterError("n_samp must be positive in sampled mode")


@dataclass
class QnnConfig:
    n_modes: int
    n_photons: int
    params: MeshParams
    collision_free: bool = True

    def __post_init__(self):
        if not isinstance(self.params, MeshParams):
            self.params = MeshParams(self.n_modes, self.params)
        if self.params.n_modes != self.n_modes or self.params.phases.size != trainable_count(self.n_modes):
            raise DimensionMismatchError(
                f"QNN on {self.n_modes} modes needs {trainable_count(self.n_modes)} phases"
            )
        if self.n_photons > self.n_modes:
            raise InvalidParameterError("single-photon input needs n_photons <= n_modes")

    @property
    def output_len(self) -> int:
        if self.collision_free:
            return comb(self.n_modes, self.n_photons)
        return comb(self.n_modes + self.n_photons - 1, self.n_photons)


def _retain(probs: np.ndarray, n_modes: int, n_photons: int, collision_free: bool) -> np.ndarray:
    if not collision_free:
        return probs
    kept = probs[enumerate_fock_basis(n_modes, n_photons).collision_free_mask()]
    total = kept.sum()
    if total <= 0.0:
        # every photon bunched: no collision-free event can be post-selected
        return np.full(kept.size, 1.0 / kept.size)
    return kept / total


def ideal_distribution(config: QnnConfig) -> np.ndarray:
    u = clements_mesh(config.n_modes, config.params)
    probs = output_distribution(u, default_input_state(config.n_modes, config.n_photons))
    return _retain(probs, config.n_modes, config.n_photons, config.collision_free)


def distinguishable_distribution(u, input_state, collision_free: bool = True) -> np.ndarray:
    state = np.asarray(input_state, dtype=np.int64)
    probs = distinguishable_output_distribution(u, state)
    return _retain(probs, len(state), int(state.sum()), collision_free)


def noisy_distribution(p_ideal, p_dist, noise: NoiseModel, n_modes: int) -> np.ndarray:
    """Mix partial distinguishability and multiphoton leakage into an ideal distribution.

    Returns ``(1 - eps) * [I * p_ideal + (1 - I) * p_dist] + eps * uniform`` with
    ``eps = min(1, M * g2 / 2)``.
    """
    p_ideal = np.asarray(p_ideal, dtype=np.float64)
    p_dist = np.asarray(p_dist, dtype=np.float64)
    if p_ideal.shape != p_dist.shape:
        raise DimensionMismatchError(f"length mismatch: {p_ideal.shape} vs {p_dist.shape}")
    eps = noise.multiphoton_error(n_modes)
    mixed = noise.indist * p_ideal + (1.0 - noise.indist) * p_dist
    leak = np.full_like(mixed, 1.0 / mixed.size)
    return (1.0 - eps) * mixed + eps * leak


def effective_shots(n_samp: int, beta: float, transmittance: float, n_photons: int) -> int:
    """Heralded shots surviving source brightness and optical loss: floor(n (beta T)^N)."""
    # round first so that exact products like 10000 * 0.6**4 are not floored to 1295
    return int(np.floor(np.round(n_samp * (beta * transmittance) ** n_photons, 9)))


def rng_for(seed: int, qnn_index: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, qnn_index, epoch]))


def run_qnn(
    config: QnnConfig,
    noise: NoiseModel | None = None,
    shots: ShotBudget | None = None,
    *,
    qnn_index: int = 0,
    epoch: int = 0,
) -> np.ndarray:
    noise = noise or NoiseModel()
    shots = shots or ShotBudget()
    if noise.is_ideal:
        probs = ideal_distribution(config)
    else:
        u = clements_mesh(config.n_modes, config.params)
        state = default_input_state(config.n_modes, config.n_photons)
        p_ideal = _retain(output_distribution(u, state), config.n_modes, config.n_photons, config.collision_free)
        p_dist = distinguishable_distribution(u, state, config.collision_free)
        probs = noisy_distribution(p_ideal, p_dist, noise, config.n_modes)
    if shots.mode == "analytic":
        return probs
    n_eff = effective_shots(shots.n_samp, noise.beta, noise.transmittance, config.n_photons)
    if n_eff == 0:
        raise HeraldingStarvationError(shots.n_samp, noise.beta, noise.transmittance, config.n_photons)
    rng = rng_for(shots.seed, qnn_index, epoch)
    # guard multinomial against pvals summing to 1 + few ulp
    counts = rng.multinomial(n_eff, probs / probs.sum())
    return counts / n_eff


def tensor_product(p1, p2) -> np.ndarray:
    """Row-major flattened outer product: index ``i * len(p2) + j`` holds ``p1[i] * p2[j]``."""
    return np.multiply.outer(np.asarray(p1, dtype=np.float64), np.asarray(p2, dtype=np.float64)).reshape(-1)


def validate_capacity(m1: int, n1: int, m2: int, n2: int, m: int) -> bool:
    return comb(m1, n1) * comb(m2, n2) >= m


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
