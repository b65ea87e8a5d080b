"""Hypervector space: VSA models, deterministic random generation, similarity.

Random streams are counter-based splitmix64 (see ``docs/rng.md``) so every
draw is a pure function of ``(master_seed, stream_id, counter)`` and can be
reproduced bit-for-bit by an independent implementation.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IncompatibleOperandsError,
    InvalidDimensionError,
    SerializationError,
    UndefinedNormalizationError,
    UndefinedSimilarityError,
)

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

DEFAULT_DIM = 1024

# Sign assigned to an exact zero when quantizing MAP superpositions.
_MAP_ZERO_SIGN = 1.0
# Bit assigned when a BSC majority vote is tied.
_BSC_TIE_BIT = 1.0


class VsaModel(enum.Enum):
    MAP = "MAP"
    BSC = "BSC"
    HRR = "HRR"

    @property
    def code(self) -> int:
        return _MODEL_CODES[self]

    @classmethod
    def parse(cls, value) -> "VsaModel":
        if isinstance(value, VsaModel):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ValueError(f"unknown VSA model {value!r}; expected MAP, BSC or HRR") from None


_MODEL_CODES = {VsaModel.MAP: 0, VsaModel.BSC: 1, VsaModel.HRR: 2}
_CODE_MODELS = {v: k for k, v in _MODEL_CODES.items()}


# -- splitmix64 ---------------------------------------------------------------


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int (taken modulo 2**64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


def derive_seed(master: int, index: int) -> int:
    """Child seed: splitmix64 finalizer applied to ``master XOR index``."""
    return mix64((master & MASK64) ^ (index & MASK64))


class SeededRng:
    """Counter-based splitmix64 stream keyed by ``(master_seed, stream_id)``.

    Output ``k`` (0-based) is ``mix64(key + (k + 1) * GOLDEN_GAMMA)`` with
    ``key = derive_seed(mix64(master_seed), stream_id)``, i.e. the standard
    splitmix64 sequence started from state ``key``. Hashing the master
    first keeps (1, 0) and (0, 1) apart, which a bare XOR would not. The only mutable state is
    the draw counter; hand each consumer its own instance (``spawn``) rather
    than sharing one.
    """

    __slots__ = ("master_seed", "stream_id", "key", "counter")

    def __init__(self, master_seed: int, stream_id: int = 0, counter: int = 0):
        self.master_seed = int(master_seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.key = derive_seed(mix64(self.master_seed), self.stream_id)
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"SeededRng(master_seed={self.master_seed}, stream_id={self.stream_id}, counter={self.counter})"

    def spawn(self, index: int) -> "SeededRng":
        """Independent child stream; does not advance this stream."""
        return SeededRng(self.key, index)

    def copy(self) -> "SeededRng":
        return SeededRng(self.master_seed, self.stream_id, self.counter)

    def next_u64(self, n: int) -> np.ndarray:
        steps = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        state = np.uint64(self.key) + steps * np.uint64(GOLDEN_GAMMA)
        return _mix64_array(state)

    def uniform(self, n: int) -> np.ndarray:
        """Doubles in [0, 1): top 53 bits of each draw times 2**-53."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))

    def bits(self, n: int) -> np.ndarray:
        """Fair bits from the most significant bit of each draw."""
        return (self.next_u64(n) >> np.uint64(63)).astype(np.float64)

    def normal(self, n: int, scale: float = 1.0) -> np.ndarray:
        """Box-Muller pairs ``(r cos t, r sin t)`` interleaved, truncated to n."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
        t = 2.0 * math.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = r * np.cos(t)
        z[:, 1] = r * np.sin(t)
        return z.reshape(-1)[:n] * scale

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """``low + floor(u * (high - low))`` for uniform doubles u."""
        if high <= low:
            raise ValueError("empty integer range")
        return low + np.floor(self.uniform(n) * (high - low)).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        """Stable argsort of n uniform doubles."""
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in random order."""
        if k > n:
            raise ValueError(f"cannot choose {k} distinct items from {n}")
        return self.permutation(n)[:k]


# -- hypervectors -------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Hypervector:
    """A point of the hypervector space under one VSA model.

    ``support`` is the total superposition weight the vector carries. It is 1
    for atoms and only matters for BSC, where entries of a superposition are
    per-coordinate counts of ones and the majority threshold is support / 2.
    """

    model: VsaModel
    data: np.ndarray
    support: float = field(default=1.0)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise InvalidDimensionError(f"hypervector data must be 1-D, got shape {arr.shape}")
        if arr.size < 1:
            raise InvalidDimensionError("hypervector must have at least one entry")
        if not np.all(np.isfinite(arr)):
            raise ValueError("hypervector entries must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "model", VsaModel.parse(self.model))

    @property
    def dim(self) -> int:
        return self.data.shape[0]

    def is_binary(self) -> bool:
        return bool(np.all((self.data == 0.0) | (self.data == 1.0)))

    def __repr__(self) -> str:
        return f"Hypervector({self.model.value}, dim={self.dim})"

    def to_bytes(self) -> bytes:
        """``b"HV1"`` + model byte + u32 dim + little-endian f64 entries."""
        if self.model is VsaModel.BSC and not (self.support == 1.0 and self.is_binary()):
            raise SerializationError("only binary BSC vectors can be serialized; normalize first")
        header = b"HV1" + struct.pack("<BI", self.model.code, self.dim)
        return header + self.data.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Hypervector":
        if len(blob) < 8 or blob[:3] != b"HV1":
            raise SerializationError("not an HV1 record")
        code, dim = struct.unpack("<BI", blob[3:8])
        if code not in _CODE_MODELS:
            raise SerializationError(f"unknown model byte {code}")
        body = blob[8:]
        if len(body) != 8 * dim:
            raise SerializationError(f"expected {8 * dim} payload bytes, found {len(body)}")
        return cls(_CODE_MODELS[code], np.frombuffer(body, dtype="<f8"))


def zeros(model: VsaModel, dim: int) -> Hypervector:
    """The empty superposition (support 0)."""
    return Hypervector(VsaModel.parse(model), np.zeros(dim), support=0.0)


def random_hv(model: VsaModel, dim: int, rng: SeededRng) -> Hypervector:
    model = VsaModel.parse(model)
    if dim < 2:
        raise InvalidDimensionError(f"dimension must be >= 2, got {dim}")
    if model is VsaModel.MAP:
        data = 1.0 - 2.0 * rng.bits(dim)
    elif model is VsaModel.BSC:
        data = rng.bits(dim)
    else:
        data = rng.normal(dim, scale=1.0 / math.sqrt(dim))
    return Hypervector(model, data)


def check_compatible(a: Hypervector, b: Hypervector) -> None:
    if a.model is not b.model:
        raise IncompatibleOperandsError(f"model mismatch: {a.model.value} vs {b.model.value}")
    if a.dim != b.dim:
        raise IncompatibleOperandsError(f"dimension mismatch: {a.dim} vs {b.dim}")


def bipolar_view(v: Hypervector) -> np.ndarray:
    """Real-valued view on which similarity is a cosine.

    BSC entries map to ``support - 2 * count`` so that binary vectors become
    +-1 and counts become signed majorities.
    """
    if v.model is VsaModel.BSC:
        return v.support - 2.0 * v.data
    return v.data


def similarity(a: Hypervector, b: Hypervector) -> float:
    check_compatible(a, b)
    if a.model is VsaModel.BSC and a.support == 1.0 and b.support == 1.0 and a.is_binary() and b.is_binary():
        hamming = np.count_nonzero(a.data != b.data)
        return 1.0 - 2.0 * hamming / a.dim
    x, y = bipolar_view(a), bipolar_view(b)
    xx, yy = float(np.dot(x, x)), float(np.dot(y, y))
    if xx == 0.0 or yy == 0.0:
        raise UndefinedSimilarityError("cosine similarity with a zero vector is undefined")
    # One square root of the product keeps sim(v, v) and sim(v, -v) exact.
    return float(np.clip(np.dot(x, y) / np.sqrt(xx * yy), -1.0, 1.0))


def normalize(v: Hypervector) -> Hypervector:
    if v.model is VsaModel.HRR:
        n = np.linalg.norm(v.data)
        if n == 0.0:
            raise UndefinedNormalizationError("cannot normalize the zero HRR vector")
        return Hypervector(v.model, v.data / n)
    if v.model is VsaModel.MAP:
        data = np.where(v.data > 0, 1.0, np.where(v.data < 0, -1.0, _MAP_ZERO_SIGN))
        return Hypervector(v.model, data)
    twice = 2.0 * v.data
    data = np.where(twice > v.support, 1.0, np.where(twice < v.support, 0.0, _BSC_TIE_BIT))
    return Hypervector(v.model, data)
