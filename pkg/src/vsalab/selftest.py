"""Release-gate invariant suite for the algebra and codec, runnable without pytest."""

from __future__ import annotations

import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import hvcore
from .algebra import bind, cconv, cconv_naive, permute, Permutation, superpose, unbind
from .codec import POS, Codebook, cleanup, encode_kv, encode_sequence, decode_sequence_at, kv_lookup, env_encode, env_read
from .hvcore import Hypervector, SeededRng, VsaModel, derive_seed, normalize, random_hv, similarity

FAULTS = ("map-sign",)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _rng(i: int) -> SeededRng:
    return SeededRng(0x5E1F, i)


def check_rng_determinism():
    a = SeededRng(42, 3).uniform(1000)
    b = SeededRng(42, 3).uniform(1000)
    seeds = {derive_seed(42, i) for i in range(10_000)}
    ok = np.array_equal(a, b) and len(seeds) == 10_000 and derive_seed(42, 0) != derive_seed(42, 1)
    return ok, "identical streams; 10^4 distinct derived seeds"


def check_bind_inverse():
    worst = 0
    for model in (VsaModel.MAP, VsaModel.BSC):
        for t in range(200):
            r = _rng(t)
            a, b = random_hv(model, 1024, r.spawn(0)), random_hv(model, 1024, r.spawn(1))
            worst += int(not np.array_equal(unbind(bind(a, b), a).data, b.data))
    return worst == 0, f"{worst} mismatches over 400 MAP/BSC pairs"


def check_hrr_fft():
    worst = 0.0
    for d in (8, 64, 1024):
        for t in range(10):
            r = _rng(100 + t)
            a, b = r.normal(d), r.normal(d)
            fast, slow = cconv(a, b), cconv_naive(a, b)
            worst = max(worst, float(np.linalg.norm(fast - slow) / np.linalg.norm(slow)))
    return worst < 1e-9, f"max relative error {worst:.2e}"


def check_superpose_commutes():
    r = _rng(200)
    items = [random_hv(VsaModel.MAP, 1024, r.spawn(i)) for i in range(5)]
    a = superpose(items).data
    b = superpose(items[::-1]).data
    return np.array_equal(a, b), "bipolar sums are order independent"


def check_map_tie_break():
    """Sign normalization sends exact zeros to +1."""
    zero_sum = superpose([Hypervector(VsaModel.MAP, np.ones(16)), Hypervector(VsaModel.MAP, -np.ones(16))])
    out = normalize(zero_sum).data
    ok = bool(np.all(out == 1.0))
    return ok, "MAP zero coordinates normalize to +1" if ok else f"zero coordinates normalized to {out[0]:+.0f}, expected +1"


def check_permutation_inverse():
    r = _rng(300)
    v = random_hv(VsaModel.MAP, 1024, r)
    ok = True
    for p in (Permutation.cyclic(1024, 3), Permutation.fixed_random(1024, 7)):
        ok &= np.array_equal(permute(permute(v, p, 2), p, -2).data, v.data)
    return ok, "pi^-k after pi^k is the identity"


def check_quasi_orthogonality():
    sims = [abs(similarity(random_hv(VsaModel.MAP, 1024, _rng(400 + 2 * i)), random_hv(VsaModel.MAP, 1024, _rng(401 + 2 * i)))) for i in range(1000)]
    mean = float(np.mean(sims))
    return mean <= 0.1, f"mean |similarity| {mean:.4f}"


def check_sequence_decode():
    book = Codebook(VsaModel.MAP, 1024, [f"s{i}" for i in range(64)] + [POS], 11)
    p = Permutation.cyclic(1024, 1)
    fails = 0
    for t in range(50):
        idx = _rng(500 + t).choice(64, 5)
        items = [f"s{i}" for i in idx]
        enc = encode_sequence(items, book, p)
        fails += sum(decode_sequence_at(enc, i + 1, book, p)[0] != s for i, s in enumerate(items))
    return fails == 0, f"{fails} position errors over 50 length-5 sequences"


def check_kv_and_env():
    book = Codebook(VsaModel.MAP, 1024, [f"k{i}" for i in range(8)] + [f"v{i}" for i in range(8)], 12)
    pairs = [(f"k{i}", f"v{(3 * i) % 8}") for i in range(4)]
    store = encode_kv(pairs, book)
    env = env_encode(dict(pairs), book)
    ok = all(kv_lookup(store, k, book)[0] == v for k, v in pairs) and all(env_read(env, k, book)[0] == v for k, v in pairs)
    return ok, "key-value store and environment return every bound value"


def check_cleanup_hrr():
    book = Codebook(VsaModel.HRR, 1024, [f"h{i}" for i in range(100)], 13)
    hits = 0
    for t in range(100):
        r = _rng(600 + t)
        a = random_hv(VsaModel.HRR, 1024, r.spawn(0))
        j = int(r.integers(0, 100, 1)[0])
        hits += cleanup(unbind(bind(a, book.vector(j)), a), book)[0] == f"h{j}"
    return hits >= 99, f"{hits}/100 HRR cleanups correct"


CHECKS = [
    ("rng_determinism", check_rng_determinism),
    ("bind_unbind_identity", check_bind_inverse),
    ("hrr_fft_matches_naive", check_hrr_fft),
    ("superpose_commutes", check_superpose_commutes),
    ("map_sign_tie_break", check_map_tie_break),
    ("permutation_inverse", check_permutation_inverse),
    ("quasi_orthogonality", check_quasi_orthogonality),
    ("sequence_decode", check_sequence_decode),
    ("kv_and_environment", check_kv_and_env),
    ("hrr_cleanup", check_cleanup_hrr),
]


@contextmanager
def injected_fault(name: str | None):
    """Temporarily break one rule so the suite can be shown to catch it."""
    if name is None:
        yield
        return
    if name != "map-sign":
        raise ValueError(f"unknown fault {name!r}; known: {', '.join(FAULTS)}")
    saved = hvcore._MAP_ZERO_SIGN
    hvcore._MAP_ZERO_SIGN = -1.0
    try:
        yield
    finally:
        hvcore._MAP_ZERO_SIGN = saved


def run_selftest(fault: str | None = None) -> list[CheckResult]:
    results = []
    with injected_fault(fault):
        for name, fn in CHECKS:
            t0 = time.perf_counter()
            try:
                ok, detail = fn()
            except Exception as exc:  # a crashing check is a failing check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - t0))
    return results
