import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsalab.errors import (
    IncompatibleOperandsError,
    InvalidDimensionError,
    SerializationError,
    UndefinedNormalizationError,
    UndefinedSimilarityError,
)
from vsalab.hvcore import (
    GOLDEN_GAMMA,
    Hypervector,
    SeededRng,
    VsaModel,
    derive_seed,
    mix64,
    normalize,
    random_hv,
    similarity,
    zeros,
)

MODELS = list(VsaModel)
seeds = st.integers(min_value=0, max_value=2**64 - 1)


def ref_mix(z):
    # Written out from the published splitmix64 constants, independent of the package.
    z %= 2**64
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 % 2**64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB % 2**64
    return z ^ (z >> 31)


class TestSplitmix:
    def test_reference_stream_from_zero_state(self):
        # Canonical splitmix64 outputs for state 0.
        expected = [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F, 0xF88BB8A8724C81EC]
        assert [mix64(k * GOLDEN_GAMMA) for k in (1, 2, 3, 4)] == expected

    def test_derive_seed_frozen_values(self):
        assert derive_seed(42, 0) == 0xA759EA27D4727622
        assert derive_seed(42, 1) == 0x4F0A61D9C798D8CA
        assert derive_seed(42, 0) != derive_seed(42, 1)

    @given(seeds, seeds)
    def test_derive_seed_matches_reference(self, m, i):
        assert derive_seed(m, i) == ref_mix(m ^ i)
        assert derive_seed(m, i) == derive_seed(m, i)

    def test_no_duplicates_in_ten_thousand_children(self):
        assert len({derive_seed(42, i) for i in range(10_000)}) == 10_000

    def test_stream_frozen_values(self):
        assert [int(x) for x in SeededRng(42, 3).next_u64(3)] == [0x98F6CBCFED6843E8, 0x84B3ACAAEB7731BD, 0xD1596B8ACFD0646C]

    @given(seeds, st.integers(0, 2**32), st.integers(1, 20))
    def test_stream_matches_reference(self, master, stream, n):
        key = ref_mix(ref_mix(master) ^ stream)
        want = [ref_mix(key + k * GOLDEN_GAMMA) for k in range(1, n + 1)]
        assert [int(x) for x in SeededRng(master, stream).next_u64(n)] == want

    def test_masters_do_not_alias(self):
        # A bare XOR key would make these two streams identical.
        assert not np.array_equal(SeededRng(1, 0).uniform(8), SeededRng(2, 3).uniform(8))
        assert not np.array_equal(SeededRng(1, 0).uniform(8), SeededRng(0, 1).uniform(8))


class TestSeededRng:
    @given(seeds, st.integers(0, 1000), st.integers(1, 50), st.integers(1, 50))
    def test_chunking_does_not_change_the_stream(self, m, s, a, b):
        whole = SeededRng(m, s).uniform(a + b)
        r = SeededRng(m, s)
        parts = np.concatenate([r.uniform(a), r.uniform(b)])
        assert np.array_equal(whole, parts)

    def test_uniform_range_and_moments(self):
        u = SeededRng(7, 0).uniform(100_000)
        assert u.min() >= 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / 1e5)

    def test_normal_moments(self):
        z = SeededRng(7, 1).normal(100_000)
        assert abs(z.mean()) < 4 / math.sqrt(1e5)
        assert abs(z.std() - 1.0) < 0.01

    def test_normal_odd_length_is_prefix_of_even(self):
        assert np.array_equal(SeededRng(3, 3).normal(5), SeededRng(3, 3).normal(6)[:5])

    def test_permutation_and_choice(self):
        p = SeededRng(1, 2).permutation(50)
        assert sorted(p.tolist()) == list(range(50))
        c = SeededRng(1, 2).choice(50, 10)
        assert len(set(c.tolist())) == 10
        with pytest.raises(ValueError):
            SeededRng(1, 2).choice(3, 4)

    def test_integers_bounds(self):
        x = SeededRng(5, 5).integers(-3, 4, 10_000)
        assert x.min() == -3 and x.max() == 3
        with pytest.raises(ValueError):
            SeededRng(5, 5).integers(2, 2, 1)

    def test_spawn_does_not_advance_parent(self):
        r = SeededRng(9, 0)
        r.spawn(1).uniform(10)
        assert r.counter == 0
        assert not np.array_equal(r.spawn(1).uniform(4), r.spawn(2).uniform(4))

    def test_copy_preserves_position(self):
        r = SeededRng(9, 0)
        r.uniform(3)
        assert np.array_equal(r.copy().uniform(5), r.uniform(5))


class TestRandomHv:
    @pytest.mark.parametrize("model", MODELS)
    def test_deterministic(self, model):
        a = random_hv(model, 256, SeededRng(11, 4))
        b = random_hv(model, 256, SeededRng(11, 4))
        assert np.array_equal(a.data, b.data)

    def test_entry_domains(self):
        assert set(np.unique(random_hv(VsaModel.MAP, 512, SeededRng(1)).data)) == {-1.0, 1.0}
        assert set(np.unique(random_hv(VsaModel.BSC, 512, SeededRng(1)).data)) == {0.0, 1.0}

    @pytest.mark.parametrize("dim", [256, 1024, 4096])
    def test_hrr_atoms_have_unit_norm_roughly(self, dim):
        for i in range(20):
            n = np.linalg.norm(random_hv(VsaModel.HRR, dim, SeededRng(dim, i)).data)
            assert abs(n - 1.0) < 0.2

    @pytest.mark.parametrize("model", MODELS)
    def test_dimension_floor(self, model):
        with pytest.raises(InvalidDimensionError):
            random_hv(model, 1, SeededRng(0))
        assert random_hv(model, 2, SeededRng(0)).dim == 2

    def test_mean_abs_similarity_map(self):
        sims = [abs(similarity(random_hv(VsaModel.MAP, 1024, SeededRng(100, 2 * i)), random_hv(VsaModel.MAP, 1024, SeededRng(100, 2 * i + 1)))) for i in range(1000)]
        assert np.mean(sims) <= 0.1

    def test_hrr_fresh_atoms_rarely_similar(self):
        hits = sum(abs(similarity(random_hv(VsaModel.HRR, 1024, SeededRng(200, 2 * i)), random_hv(VsaModel.HRR, 1024, SeededRng(200, 2 * i + 1)))) >= 0.15 for i in range(2000))
        assert hits <= 2

    @pytest.mark.parametrize("model", MODELS)
    @pytest.mark.parametrize("dim", [256, 1024])
    def test_near_orthogonality_spread(self, model, dim):
        sims = np.array([similarity(random_hv(model, dim, SeededRng(300 + dim, 2 * i)), random_hv(model, dim, SeededRng(300 + dim, 2 * i + 1))) for i in range(400)])
        assert abs(sims.mean()) < 4 / math.sqrt(dim * 400)
        assert sims.std() <= 2 / math.sqrt(dim)


class TestSimilarity:
    def test_self_similarity(self):
        for model in MODELS:
            v = random_hv(model, 128, SeededRng(3))
            assert similarity(v, v) == pytest.approx(1.0, abs=1e-12)
        v = random_hv(VsaModel.MAP, 128, SeededRng(3))
        assert similarity(v, v) == 1.0

    def test_bsc_complement(self):
        v = random_hv(VsaModel.BSC, 128, SeededRng(4))
        assert similarity(v, Hypervector(VsaModel.BSC, 1.0 - v.data)) == -1.0

    def test_map_antipode(self):
        v = random_hv(VsaModel.MAP, 128, SeededRng(4))
        assert similarity(v, Hypervector(VsaModel.MAP, -v.data)) == -1.0

    def test_bsc_is_hamming_affine(self):
        a, b = random_hv(VsaModel.BSC, 100, SeededRng(5, 0)), random_hv(VsaModel.BSC, 100, SeededRng(5, 1))
        ham = int(np.sum(a.data != b.data))
        assert similarity(a, b) == 1 - 2 * ham / 100

    @given(st.integers(0, 10_000))
    def test_symmetric_and_bounded(self, s):
        for model in MODELS:
            a, b = random_hv(model, 64, SeededRng(s, 0)), random_hv(model, 64, SeededRng(s, 1))
            assert similarity(a, b) == similarity(b, a)
            assert -1.0 <= similarity(a, b) <= 1.0

    def test_cross_model_rejected(self):
        a = random_hv(VsaModel.MAP, 64, SeededRng(0))
        with pytest.raises(IncompatibleOperandsError):
            similarity(a, random_hv(VsaModel.HRR, 64, SeededRng(0)))
        with pytest.raises(IncompatibleOperandsError):
            similarity(a, random_hv(VsaModel.MAP, 32, SeededRng(0)))

    def test_zero_vector(self):
        with pytest.raises(UndefinedSimilarityError):
            similarity(zeros(VsaModel.HRR, 8), random_hv(VsaModel.HRR, 8, SeededRng(0)))


class TestNormalize:
    def test_unit_hrr_unchanged(self):
        v = normalize(random_hv(VsaModel.HRR, 256, SeededRng(6)))
        assert np.allclose(normalize(v).data, v.data, atol=1e-12, rtol=0)

    def test_map_sign_and_tie(self):
        v = Hypervector(VsaModel.MAP, np.array([1.0 + 1.0 - 1.0, 0.0, -2.0, 3.0]))
        assert normalize(v).data.tolist() == [1.0, 1.0, -1.0, 1.0]

    def test_bsc_majority_and_tie(self):
        v = Hypervector(VsaModel.BSC, np.array([0.0, 1.0, 2.0, 3.0, 4.0]), support=4.0)
        assert normalize(v).data.tolist() == [0.0, 0.0, 1.0, 1.0, 1.0]

    def test_zero_hrr(self):
        with pytest.raises(UndefinedNormalizationError):
            normalize(zeros(VsaModel.HRR, 16))

    @given(st.integers(0, 10_000))
    def test_idempotent(self, s):
        for model in MODELS:
            v = normalize(random_hv(model, 32, SeededRng(s)))
            assert np.allclose(normalize(v).data, v.data, atol=1e-12)


class TestHypervector:
    def test_immutable(self):
        v = random_hv(VsaModel.MAP, 8, SeededRng(0))
        with pytest.raises(ValueError):
            v.data[0] = 5.0

    def test_rejects_non_finite_and_bad_shape(self):
        with pytest.raises(ValueError):
            Hypervector(VsaModel.HRR, np.array([1.0, np.nan]))
        with pytest.raises(InvalidDimensionError):
            Hypervector(VsaModel.HRR, np.zeros((2, 2)))

    @pytest.mark.parametrize("model", MODELS)
    def test_binary_round_trip(self, model):
        v = random_hv(model, 64, SeededRng(8))
        blob = v.to_bytes()
        assert blob[:3] == b"HV1" and len(blob) == 8 + 8 * 64
        w = Hypervector.from_bytes(blob)
        assert w.model is model and np.array_equal(w.data, v.data)

    def test_binary_layout(self):
        v = Hypervector(VsaModel.BSC, np.array([0.0, 1.0]))
        assert v.to_bytes() == b"HV1\x01\x02\x00\x00\x00" + np.array([0.0, 1.0], dtype="<f8").tobytes()

    def test_bad_records(self):
        with pytest.raises(SerializationError):
            Hypervector.from_bytes(b"XX1" + bytes(5))
        with pytest.raises(SerializationError):
            Hypervector.from_bytes(b"HV1\x07\x01\x00\x00\x00" + bytes(8))
        with pytest.raises(SerializationError):
            Hypervector.from_bytes(b"HV1\x00\x02\x00\x00\x00" + bytes(8))
        with pytest.raises(SerializationError):
            Hypervector(VsaModel.BSC, np.array([2.0, 0.0]), support=2.0).to_bytes()

    def test_model_parse(self):
        assert VsaModel.parse("map") is VsaModel.MAP
        with pytest.raises(ValueError):
            VsaModel.parse("FHRR")
