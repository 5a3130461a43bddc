"""Strong simulation of single-photon inputs through passive linear optics.

Mode-transfer convention: ``U[k, j]`` is the amplitude for a photon entering
mode ``j`` to leave in mode ``k``. Output probabilities are then

    P(t | s) = |Perm(U[T, S])|^2 / (prod_j s_j! prod_k t_k!)

where ``U[T, S]`` repeats row ``k`` ``t_k`` times and column ``j`` ``s_j`` times.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb, factorial
from typing import Literal

import numpy as np

from . import kernels
from .errors import DimensionMismatchError, InvalidParameterError, NumericalIntegrityError

PERMANENT_MAX_N = 16
UNITARITY_TOL = 1e-10


def mzi_count(n_modes: int) -> int:
    return n_modes * (n_modes - 1) // 2


def trainable_count(n_modes: int, convention: Literal["per_mzi_3", "clements_minimal"] = "per_mzi_3") -> int:
    """Number of continuous phases for an ``n_modes`` interferometer.

    ``per_mzi_3`` counts an internal splitting angle plus input and output
    phases for each MZI (the layout that is actually simulated and trained);
    ``clements_minimal`` is the MZI count plus one phase per mode.
    """
    if n_modes < 1:
        raise InvalidParameterError(f"mode count must be >= 1, got {n_modes}")
    if convention == "per_mzi_3":
        return 3 * mzi_count(n_modes)
    if convention == "clements_minimal":
        return n_modes * (n_modes + 1) // 2
    raise InvalidParameterError(f"unknown convention {convention!r}")


@dataclass(frozen=True)
class MziPlacement:
    layer_index: int
    mode_pair: tuple[int, int]
    theta: float = 0.0
    phi_in: float = 0.0
    phi_out: float = 0.0


@dataclass
class MeshParams:
    """Flat phase vector, ordered (theta, phi_in, phi_out) per MZI."""

    n_modes: int
    phases: np.ndarray

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=np.float64).reshape(-1)
        expected = trainable_count(self.n_modes)
        if self.phases.size != expected:
            raise DimensionMismatchError(
                f"{self.n_modes}-mode mesh takes {expected} phases, got {self.phases.size}"
            )
        if not np.all(np.isfinite(self.phases)):
            raise InvalidParameterError("mesh phases must be finite")

    @classmethod
    def zeros(cls, n_modes: int) -> "MeshParams":
        return cls(n_modes, np.zeros(trainable_count(n_modes)))

    @classmethod
    def random(cls, n_modes: int, rng: np.random.Generator) -> "MeshParams":
        return cls(n_modes, rng.uniform(0.0, 2.0 * np.pi, trainable_count(n_modes)))


@lru_cache(maxsize=None)
def mesh_layout(n_modes: int) -> tuple[tuple[int, int, int], ...]:
    """Rectangular checkerboard: (layer, p, p + 1) for every MZI, in application order."""
    layout = []
    for layer in range(n_modes):
        for p in range(layer % 2, n_modes - 1, 2):
            layout.append((layer, p, p + 1))
    assert len(layout) == mzi_count(n_modes)
    return tuple(layout)


def mesh_placements(params: MeshParams) -> list[MziPlacement]:
    ph = params.phases.reshape(-1, 3)
    return [
        MziPlacement(layer, (p, q), *map(float, ph[i]))
        for i, (layer, p, q) in enumerate(mesh_layout(params.n_modes))
    ]


def beam_splitter_2x2(theta: float, phi: float) -> np.ndarray:
    if not (np.isfinite(theta) and np.isfinite(phi)):
        raise InvalidParameterError(f"beam splitter angles must be finite, got ({theta}, {phi})")
    c, s = np.cos(theta), np.sin(theta)
    return np.array(
        [[c, -np.exp(-1j * phi) * s], [np.exp(1j * phi) * s, c]],
        dtype=np.complex128,
    )


def mzi_block(theta: float, phi_in: float, phi_out: float) -> np.ndarray:
    """Beam splitter with its phase ``phi_in`` followed by ``exp(i phi_out)`` on the upper mode."""
    block = beam_splitter_2x2(theta, phi_in)
    block[0, :] *= np.exp(1j * phi_out)
    return block


def clements_mesh(n_modes: int, params: MeshParams | np.ndarray) -> np.ndarray:
    if not isinstance(params, MeshParams):
        params = MeshParams(n_modes, params)
    elif params.n_modes != n_modes:
        raise DimensionMismatchError(f"params built for {params.n_modes} modes, mesh has {n_modes}")
    ph = params.phases.reshape(-1, 3)
    u = np.eye(n_modes, dtype=np.complex128)
    for i, (_, p, q) in enumerate(mesh_layout(n_modes)):
        block = mzi_block(*ph[i])
        rows = u[[p, q], :]
        u[[p, q], :] = block @ rows
    return u


def check_unitary(u: np.ndarray, tol: float = UNITARITY_TOL) -> float:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {u.shape}")
    err = float(np.max(np.abs(u @ u.conj().T - np.eye(u.shape[0]))))
    if err > tol:
        raise NumericalIntegrityError(f"matrix deviates from unitarity by {err:.3e} > {tol:.0e}")
    return err


@dataclass(frozen=True)
class FockBasis:
    n_modes: int
    n_photons: int
    states: np.ndarray = field(repr=False)  # (len, n_modes) int

    def __len__(self) -> int:
        return len(self.states)

    def index(self, occupation) -> int:
        return self._lookup[tuple(int(v) for v in occupation)]

    @property
    def _lookup(self) -> dict:
        return _lookup_table(self.n_modes, self.n_photons)

    def collision_free_mask(self) -> np.ndarray:
        return np.all(self.states <= 1, axis=1)


@lru_cache(maxsize=None)
def _basis_states(n_modes: int, n_photons: int) -> np.ndarray:
    states = []
    for combo in combinations_with_replacement(range(n_modes), n_photons):
        occ = np.bincount(np.asarray(combo, dtype=np.int64), minlength=n_modes)
        states.append(occ)
    if not states:
        return np.zeros((0, n_modes), dtype=np.int64)
    arr = np.array(states, dtype=np.int64).reshape(-1, n_modes)
    # lexicographic by occupation vector, descending, so (1, 0) precedes (0, 1)
    order = np.lexsort(arr.T[::-1])[::-1]
    arr = arr[order]
    arr.setflags(write=False)
    return arr


@lru_cache(maxsize=None)
def _lookup_table(n_modes: int, n_photons: int) -> dict:
    return {tuple(int(v) for v in s): i for i, s in enumerate(_basis_states(n_modes, n_photons))}


def enumerate_fock_basis(n_modes: int, n_photons: int) -> FockBasis:
    """All occupation vectors of ``n_photons`` over ``n_modes``, C(M+N-1, N) of them.

    States are sorted in descending lexicographic order of the occupation
    vector, which places ``(1, 0)`` before ``(0, 1)`` and keeps the all-in-mode-0
    state first.
    """
    if n_modes < 1 or n_photons < 0:
        raise InvalidParameterError(f"need n_modes >= 1 and n_photons >= 0, got ({n_modes}, {n_photons})")
    return FockBasis(n_modes, n_photons, _basis_states(n_modes, n_photons))


def collision_free_count(n_modes: int, n_photons: int) -> int:
    if n_modes < 0 or n_photons < 0:
        raise InvalidParameterError("counts must be non-negative")
    return comb(n_modes, n_photons)


def default_input_state(n_modes: int, n_photons: int) -> np.ndarray:
    """One photon in each of the first ``n_photons`` modes."""
    if n_photons > n_modes:
        raise InvalidParameterError(f"cannot place {n_photons} single photons in {n_modes} modes")
    state = np.zeros(n_modes, dtype=np.int64)
    state[:n_photons] = 1
    return state


def permanent(a) -> complex:
    """Exact permanent by Ryser's formula, subsets visited in Gray-code order."""
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"permanent needs a square matrix, got shape {a.shape}")
    if a.shape[0] > PERMANENT_MAX_N:
        raise InvalidParameterError(f"permanent capped at n <= {PERMANENT_MAX_N}, got {a.shape[0]}")
    dtype = np.complex128 if np.iscomplexobj(a) else np.float64
    return kernels.permanent_batch(np.ascontiguousarray(a[None], dtype=dtype))[0]


def _expand(occupation: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(occupation)), occupation)


def _transition_submatrices(u: np.ndarray, input_state: np.ndarray, basis: FockBasis) -> np.ndarray:
    cols = _expand(input_state)
    rows = np.stack([_expand(t) for t in basis.states]) if len(basis) else np.zeros((0, len(cols)), int)
    return u[rows[:, :, None], cols[None, None, :]]


def _validate_input(u: np.ndarray, input_state) -> np.ndarray:
    u = np.asarray(u)
    check_unitary(u)
    state = np.asarray(input_state, dtype=np.int64).reshape(-1)
    if state.size != u.shape[0]:
        raise DimensionMismatchError(f"input state has {state.size} modes, unitary has {u.shape[0]}")
    if np.any(state < 0):
        raise InvalidParameterError("occupations must be non-negative")
    if state.sum() > PERMANENT_MAX_N:
        raise InvalidParameterError(f"at most {PERMANENT_MAX_N} photons supported")
    return state


def _occupation_norm(input_state: np.ndarray, basis: FockBasis) -> np.ndarray:
    fact = np.array([factorial(k) for k in range(basis.n_photons + 1)], dtype=np.float64)
    return np.prod(fact[input_state]) * np.prod(fact[basis.states], axis=1)


def output_distribution(u, input_state) -> np.ndarray:
    """Indistinguishable-photon output probabilities over the full Fock basis."""
    state = _validate_input(u, input_state)
    basis = enumerate_fock_basis(len(state), int(state.sum()))
    subs = _transition_submatrices(np.asarray(u, dtype=np.complex128), state, basis)
    amps = kernels.permanent_batch(np.ascontiguousarray(subs))
    return np.abs(amps) ** 2 / _occupation_norm(state, basis)


def distinguishable_output_distribution(u, input_state) -> np.ndarray:
    """Classical (fully distinguishable) transition probabilities over the full Fock basis."""
    state = _validate_input(u, input_state)
    basis = enumerate_fock_basis(len(state), int(state.sum()))
    weights = np.abs(np.asarray(u, dtype=np.complex128)) ** 2
    subs = _transition_submatrices(weights, state, basis)
    perms = kernels.permanent_batch(np.ascontiguousarray(subs, dtype=np.float64))
    return perms / _occupation_norm(state, basis)
