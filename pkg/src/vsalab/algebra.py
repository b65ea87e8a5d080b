"""Binding, unbinding, superposition and permutation for MAP, BSC and HRR."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySuperpositionError, IncompatibleOperandsError
from .hvcore import Hypervector, SeededRng, VsaModel, check_compatible

log = logging.getLogger(__name__)

_warned_dims: set[int] = set()


# -- radix-2 FFT --------------------------------------------------------------


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Iterative decimation-in-time FFT over the last axis.

    The last axis length must be a power of two. The inverse transform
    includes the 1/n factor.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    lead = x.shape[:-1]
    x = x[..., _bit_reverse(n)].copy()
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        w = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = x.reshape(*lead, n // m, m)
        u = blocks[..., :half].copy()
        t = blocks[..., half:] * w
        blocks[..., :half] = u + t
        blocks[..., half:] = u - t
        m *= 2
    if inverse:
        x /= n
    return x


def cconv_naive(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[k] = sum_j a[j] * b[(k - j) mod D], by direct summation."""
    d = a.shape[-1]
    idx = (np.arange(d)[None, :] - np.arange(d)[:, None]) % d  # idx[j, k] = (k - j) mod d
    return np.einsum("...j,...jk->...k", a, b[..., idx])


def cconv(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Circular convolution on the last axis; FFT when the length allows it."""
    d = a.shape[-1]
    if not is_power_of_two(d):
        if d not in _warned_dims:
            _warned_dims.add(d)
            log.info("dimension %d is not a power of two; using naive circular convolution", d)
        return cconv_naive(a, b)
    return fft(fft(a) * fft(b), inverse=True).real


def involution(a: np.ndarray) -> np.ndarray:
    """a*[i] = a[(-i) mod D]: the approximate HRR inverse."""
    return np.concatenate([a[..., :1], a[..., :0:-1]], axis=-1)


def ccorr(z: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Circular correlation: convolution with the involution of r."""
    return cconv(z, involution(r))


def convolve_naive(a: Hypervector, b: Hypervector) -> Hypervector:
    _require_hrr(a, b)
    return Hypervector(a.model, cconv_naive(a.data, b.data), a.support * b.support)


def convolve_fast(a: Hypervector, b: Hypervector) -> Hypervector:
    _require_hrr(a, b)
    return Hypervector(a.model, cconv(a.data, b.data), a.support * b.support)


def _require_hrr(a: Hypervector, b: Hypervector) -> None:
    check_compatible(a, b)
    if a.model is not VsaModel.HRR:
        raise IncompatibleOperandsError("circular convolution is defined for HRR vectors only")


# -- binding ------------------------------------------------------------------


def _bsc_xor(a: Hypervector, b: Hypervector) -> np.ndarray:
    # XOR generalised to count vectors: flipping k of n ones leaves n - k ones.
    # This keeps binding distributive over superposition exactly.
    if a.support == 1.0 and a.is_binary():
        return np.where(a.data == 1.0, b.support - b.data, b.data)
    if b.support == 1.0 and b.is_binary():
        return np.where(b.data == 1.0, a.support - a.data, a.data)
    raise IncompatibleOperandsError("BSC binding needs at least one binary operand")


def bind(a: Hypervector, b: Hypervector) -> Hypervector:
    check_compatible(a, b)
    support = a.support * b.support
    if a.model is VsaModel.MAP:
        return Hypervector(a.model, a.data * b.data, support)
    if a.model is VsaModel.BSC:
        return Hypervector(a.model, _bsc_xor(a, b), support)
    return Hypervector(a.model, cconv(a.data, b.data), support)


def unbind(z: Hypervector, r: Hypervector) -> Hypervector:
    """Recover the partner of ``r`` from ``z``: exact for MAP/BSC, approximate for HRR."""
    check_compatible(z, r)
    if z.model is VsaModel.HRR:
        return Hypervector(z.model, ccorr(z.data, r.data), z.support * r.support)
    return bind(z, r)


def superpose(items: Sequence[Hypervector], weights: Sequence[float] | None = None) -> Hypervector:
    """Weighted entrywise sum, accumulated left to right. Never normalizes."""
    items = list(items)
    if not items:
        raise EmptySuperpositionError("cannot superpose an empty list")
    if weights is None:
        weights = [1.0] * len(items)
    elif len(weights) != len(items):
        raise ValueError(f"{len(weights)} weights for {len(items)} items")
    first = items[0]
    for v in items[1:]:
        check_compatible(first, v)
    acc = first.data * weights[0]
    support = first.support * weights[0]
    for v, w in zip(items[1:], weights[1:]):
        acc = acc + v.data * w
        support += v.support * w
    return Hypervector(first.model, acc, support)


# -- permutation --------------------------------------------------------------


@dataclass(frozen=True)
class Permutation:
    """Cyclic shift by ``shift`` (np.roll direction) or a seeded random permutation.

    Applying a permutation maps ``v`` to ``v[idx]``. For cyclic shifts
    ``idx[i] = (i - shift) mod D``, so shift 1 sends [1, 2, 3, 4] to
    [4, 1, 2, 3]. Random permutations are the stable argsort of D uniforms
    drawn from ``SeededRng(seed, dim)``.
    """

    kind: str
    dim: int
    shift: int = 0
    seed: int = 0

    @classmethod
    def cyclic(cls, dim: int, shift: int = 1) -> "Permutation":
        return cls("cyclic", dim, shift=shift)

    @classmethod
    def fixed_random(cls, dim: int, seed: int) -> "Permutation":
        return cls("random", dim, seed=seed)

    def __post_init__(self):
        if self.kind not in ("cyclic", "random"):
            raise ValueError(f"unknown permutation kind {self.kind!r}")

    def base_indices(self) -> np.ndarray:
        if self.kind == "cyclic":
            return (np.arange(self.dim) - self.shift) % self.dim
        return SeededRng(self.seed, self.dim).permutation(self.dim)

    def indices(self, power: int) -> np.ndarray:
        if self.kind == "cyclic":
            return (np.arange(self.dim) - self.shift * power) % self.dim
        base = self.base_indices()
        if power < 0:
            base = np.argsort(base)
        idx = np.arange(self.dim)
        for _ in range(abs(power)):
            idx = base[idx]
        return idx


def permute(v: Hypervector, p: Permutation, power: int = 1) -> Hypervector:
    if p.dim != v.dim:
        raise IncompatibleOperandsError(f"permutation of dimension {p.dim} applied to vector of dimension {v.dim}")
    if power == 0:
        return v
    return Hypervector(v.model, v.data[p.indices(power)], v.support)


def permute_array(x: np.ndarray, p: Permutation, power: int = 1) -> np.ndarray:
    return x[..., p.indices(power)]

