"""Matrix-product-state mapping from (weight index, probability) pairs to real weights.

Each weight index ``i < m`` is fed to a chain of ``L = ceil(log2 m)`` binary
sites carrying the big-endian bits of ``i`` plus one site carrying the
probability ``p = P_w[i]`` as the vector ``(1 - p, p)``. The chain is
contracted left to right from an all-ones boundary, giving a ``chi`` vector
``h_i``; a head made of three ``chi x chi`` matrices turns it into a scalar:

    v_i = sum_c (tanh(tanh(h_i H0) H1) H2)[c]

The outputs are centered (mean subtracted) and, by default, rescaled to a
fixed standard deviation ``WEIGHT_SCALE``. The rescaling adds no parameters;
it pins the overall weight magnitude so training cannot drift into the
all-weights-near-zero saddle of the target network.
"""

import json
from dataclasses import dataclass
from math import ceil, log2
from pathlib import Path

import numpy as np

from . import kernels
from .errors import CapacityError, DimensionMismatchError, InvalidParameterError

FORMAT_TAG = "photonic_qt.mps"
FORMAT_VERSION = 1
WEIGHT_SCALE = 0.2
_STD_FLOOR = 1e-12


def index_bits(m: int) -> int:
    """Number of binary sites needed to address ``m`` weights."""
    if m < 1:
        raise InvalidParameterError(f"m must be >= 1, got {m}")
    return max(1, ceil(log2(m)))


def mps_param_count(chi: int, m: int) -> int:
    if chi < 1:
        raise InvalidParameterError(f"bond dimension must be >= 1, got {chi}")
    return (2 * (index_bits(m) + 1) + 3) * chi * chi


def encode_input(i: int, p: float, n_bits: int) -> np.ndarray:
    """Feature sequence of shape ``(n_bits + 1, 2)``: one-hot bits of ``i``, then ``(1 - p, p)``."""
    if not (0 <= i < 2**n_bits):
        raise InvalidParameterError(f"index {i} does not fit in {n_bits} bits")
    if not (0.0 <= p <= 1.0):
        raise InvalidParameterError(f"probability {p} outside [0, 1]")
    return encode_batch(np.array([i]), np.array([p], dtype=np.float64), n_bits)[0]


def encode_batch(indices: np.ndarray, probs: np.ndarray, n_bits: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    shifts = np.arange(n_bits - 1, -1, -1)
    bits = (indices[:, None] >> shifts[None, :]) & 1
    feats = np.empty((len(indices), n_bits + 1, 2))
    feats[:, :n_bits, 1] = bits
    feats[:, :n_bits, 0] = 1 - bits
    feats[:, n_bits, 0] = 1.0 - probs
    feats[:, n_bits, 1] = probs
    return feats


@dataclass
class MpsModel:
    chi: int
    n_sites: int
    cores: np.ndarray  # (n_sites, 2, chi, chi)
    head: np.ndarray  # (3, chi, chi)

    def __post_init__(self):
        self.cores = np.asarray(self.cores, dtype=np.float64)
        self.head = np.asarray(self.head, dtype=np.float64)
        if self.cores.shape != (self.n_sites, 2, self.chi, self.chi):
            raise DimensionMismatchError(f"cores have shape {self.cores.shape}")
        if self.head.shape != (3, self.chi, self.chi):
            raise DimensionMismatchError(f"head has shape {self.head.shape}")

    @classmethod
    def init(cls, chi: int, m: int, rng: np.random.Generator, out_std: float = 0.25):
        """Random orthogonal cores, so every index starts with ``|h_i| = sqrt(chi)``.

        Near-identity cores would give almost the same ``h_i`` for every index,
        while unnormalized random ones make ``|h_i|`` spread over orders of
        magnitude across a 14-site chain.
        """
        n_sites = index_bits(m) + 1
        a = rng.standard_normal((n_sites, 2, chi, chi))
        q, r = np.linalg.qr(a)
        cores = q * np.sign(np.diagonal(r, axis1=-2, axis2=-1))[..., None, :]
        head = rng.standard_normal((3, chi, chi))
        head[0] /= np.sqrt(chi)
        head[1] /= np.sqrt(chi)
        head[2] *= out_std / chi
        return cls(chi, n_sites, cores, head)

    @property
    def n_params(self) -> int:
        return self.cores.size + self.head.size

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.cores.ravel(), self.head.ravel()])

    def with_vector(self, vec: np.ndarray) -> "MpsModel":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise DimensionMismatchError(f"expected {self.n_params} parameters, got {vec.size}")
        nc = self.cores.size
        return MpsModel(
            self.chi,
            self.n_sites,
            vec[:nc].reshape(self.cores.shape).copy(),
            vec[nc:].reshape(self.head.shape).copy(),
        )

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_TAG,
            "version": FORMAT_VERSION,
            "chi": self.chi,
            "n_sites": self.n_sites,
            "cores": self.cores.ravel().tolist(),
            "head": self.head.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, record: dict) -> "MpsModel":
        if record.get("format") != FORMAT_TAG or record.get("version") != FORMAT_VERSION:
            raise InvalidParameterError(
                f"unsupported checkpoint {record.get('format')!r} v{record.get('version')!r}"
            )
        chi, n_sites = int(record["chi"]), int(record["n_sites"])
        return cls(
            chi,
            n_sites,
            np.asarray(record["cores"], dtype=np.float64).reshape(n_sites, 2, chi, chi),
            np.asarray(record["head"], dtype=np.float64).reshape(3, chi, chi),
        )

    def save(self, path) -> None:
        # repr round-trips float64 exactly, so checkpoints restore bit-for-bit
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MpsModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class _Cache:
    feats: np.ndarray
    hs: np.ndarray
    a0: np.ndarray
    a1: np.ndarray
    z: np.ndarray  # centered (and standardized, when scaled) output before the gain
    std: float


def _check_inputs(model: MpsModel, p_w: np.ndarray, m: int) -> np.ndarray:
    p_w = np.asarray(p_w, dtype=np.float64).reshape(-1)
    if p_w.size < m:
        raise CapacityError(f"need at least {m} probabilities, got {p_w.size}")
    if model.n_sites != index_bits(m) + 1:
        raise DimensionMismatchError(
            f"model has {model.n_sites} sites but m={m} needs {index_bits(m) + 1}"
        )
    return p_w


def forward_features(model: MpsModel, feats: np.ndarray, scale: float | None = WEIGHT_SCALE):
    """Map an explicit feature tensor ``(m, n_sites, 2)`` to weights; returns ``(v, cache)``."""
    feats = np.ascontiguousarray(feats, dtype=np.float64)
    if feats.ndim != 3 or feats.shape[1:] != (model.n_sites, 2):
        raise DimensionMismatchError(f"features of shape {feats.shape} for {model.n_sites} sites")
    hs = kernels.mps_chain_forward(model.cores, feats, np.ones(model.chi))
    h = hs[:, -1, :]
    h0, h1, h2 = model.head
    a0 = np.tanh(h @ h0)
    a1 = np.tanh(a0 @ h1)
    v = a1 @ h2.sum(axis=1)
    v = v - v.mean()
    std = 1.0
    if scale is not None:
        std = float(v.std())
        if std > _STD_FLOOR:
            v = v / std
        else:
            std = 1.0
    cache = _Cache(feats, hs, a0, a1, v, std)
    return (v if scale is None else scale * v), cache


def backward_features(model: MpsModel, upstream, cache: _Cache, scale: float | None = WEIGHT_SCALE):
    """Gradients of ``upstream . v`` as ``(grad_params, grad_feats)``."""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != cache.z.size:
        raise DimensionMismatchError(f"upstream has {upstream.size} entries for {cache.z.size} outputs")
    if scale is None:
        dv = upstream - upstream.mean()
    else:
        gz = scale * upstream
        z = cache.z
        dv = gz - gz.mean()
        if np.any(z):
            dv = (dv - z * np.mean(gz * z)) / cache.std
    h0, h1, h2 = model.head
    ones = np.ones(model.chi)
    a0, a1 = cache.a0, cache.a1
    g_h2 = np.outer(a1.T @ dv, ones)
    dz1 = np.outer(dv, h2.sum(axis=1)) * (1.0 - a1 * a1)
    g_h1 = a0.T @ dz1
    dz0 = (dz1 @ h1.T) * (1.0 - a0 * a0)
    h = cache.hs[:, -1, :]
    g_h0 = h.T @ dz0
    dh = dz0 @ h0.T
    g_cores, g_feats = kernels.mps_chain_backward(model.cores, cache.feats, cache.hs, dh)
    grad_params = np.concatenate([g_cores.ravel(), np.stack([g_h0, g_h1, g_h2]).ravel()])
    return grad_params, g_feats


def mps_forward(model: MpsModel, p_w, m: int, scale: float | None = WEIGHT_SCALE) -> np.ndarray:
    """Weight vector of length ``m`` with zero mean; entries ``P_w[m:]`` are ignored.

    ``scale=None`` returns the centered outputs without rescaling.
    """
    return mps_forward_with_cache(model, p_w, m, scale)[0]


def mps_forward_with_cache(model: MpsModel, p_w, m: int, scale: float | None = WEIGHT_SCALE):
    p_w = _check_inputs(model, p_w, m)
    feats = encode_batch(np.arange(m), p_w[:m], model.n_sites - 1)
    return forward_features(model, feats, scale)


def mps_backward(model: MpsModel, p_w, upstream, cache: _Cache | None = None, scale: float | None = WEIGHT_SCALE):
    """Reverse-mode gradients of ``upstream . mps_forward(model, p_w, m)``.

    Returns ``(grad_params, grad_p)`` where ``grad_params`` is flat in
    ``MpsModel.to_vector`` order and ``grad_p`` has the length of ``p_w``
    (zero past ``m``).
    """
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    m = upstream.size
    p_w = _check_inputs(model, p_w, m)
    if cache is None:
        _, cache = mps_forward_with_cache(model, p_w, m, scale)
    grad_params, g_feats = backward_features(model, upstream, cache, scale)
    grad_p = np.zeros(p_w.size)
    grad_p[:m] = g_feats[:, -1, 1] - g_feats[:, -1, 0]
    return grad_params, grad_p
