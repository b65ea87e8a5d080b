import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsalab.algebra import bind, superpose
from vsalab.attn import Model, ModelConfig, cross_entropy
from vsalab.codec import Codebook, cleanup
from vsalab.errors import ConfigError, IncompatibleOperandsError
from vsalab.hvcore import Hypervector, SeededRng, VsaModel, random_hv, similarity
from vsalab.vsaheads import (
    BindingHeadParams,
    HdMemory,
    RotaryTie,
    binding_head_forward,
    hd_read,
    hd_write,
    rotary_apply,
    softmax,
    unbinding_head_forward,
)

D_MODEL = 4


def head(dim, n_roles, seed=0, selector=None):
    r = SeededRng(seed, 3)
    sel = r.normal(D_MODEL * n_roles).reshape(D_MODEL, n_roles) if selector is None else selector
    return BindingHeadParams(sel, r.normal(D_MODEL * dim).reshape(D_MODEL, dim), r.normal(dim * D_MODEL).reshape(dim, D_MODEL))


def planted(n_roles, k):
    sel = np.zeros((D_MODEL, n_roles))
    sel[0, k] = 1.0
    return sel


@pytest.fixture(scope="module")
def roles():
    return Codebook(VsaModel.MAP, 1024, [f"r{i}" for i in range(8)], 21)


@pytest.fixture(scope="module")
def fillers():
    return Codebook(VsaModel.MAP, 1024, [f"f{i}" for i in range(64)], 22)


class TestSoftmax:
    @given(st.integers(0, 10_000))
    def test_rows_sum_to_one(self, s):
        z = SeededRng(s).normal(30).reshape(5, 6) * 50
        assert np.all(np.abs(softmax(z).sum(axis=-1) - 1) <= 1e-12)


class TestBindingHead:
    def test_single_role_is_exact_binding(self):
        book = Codebook(VsaModel.MAP, 64, ["only"], 1)
        p = head(64, 1)
        x = SeededRng(2).normal(3 * D_MODEL).reshape(3, D_MODEL)
        out = binding_head_forward(x, p, book, project=False)
        filler = x @ p.w_f
        for i in range(3):
            want = bind(book["only"], Hypervector(VsaModel.MAP, filler[i])).data
            assert np.array_equal(out[i], want)

    @pytest.mark.parametrize("model", [VsaModel.MAP, VsaModel.HRR])
    @pytest.mark.parametrize("k", [0, 3, 5])
    def test_hard_limit(self, model, k):
        book = Codebook(model, 64, [f"r{i}" for i in range(6)], 1)
        p = head(64, 6, selector=planted(6, k))
        x = np.array([[1.0, 0.3, -0.2, 0.5]])
        hard = bind(book.vector(k), Hypervector(model, x[0] @ p.w_f)).data
        assert np.max(np.abs(binding_head_forward(x, p, book, 1e-3, project=False)[0] - hard)) <= 1e-6
        assert np.max(np.abs(binding_head_forward(x, p, book, 1e-5, project=False)[0] - hard)) <= 1e-9

    def test_zero_filler(self):
        book = Codebook(VsaModel.MAP, 32, ["a", "b"], 1)
        p = head(32, 2)
        p.w_f[...] = 0.0
        assert not binding_head_forward(SeededRng(0).normal(8).reshape(2, 4), p, book).any()

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            binding_head_forward(np.ones((1, 4)), head(32, 2), Codebook(VsaModel.MAP, 64, ["a", "b"], 1))
        with pytest.raises(ConfigError):
            binding_head_forward(np.ones((1, 4)), head(32, 2), Codebook(VsaModel.BSC, 32, ["a", "b"], 1))


class TestUnbindingHead:
    def test_exact_single_binding(self, roles, fillers):
        mem = hd_write(HdMemory.empty(VsaModel.MAP, 1024), [(roles["r2"], fillers["f9"])])
        out = unbinding_head_forward(np.array([[1.0, 0, 0, 0]]), planted(8, 2) * 1e4, roles, mem)
        assert np.allclose(out[0], fillers["f9"].data, atol=1e-12)
        hard = unbinding_head_forward(np.array([[1.0, 0, 0, 0]]), planted(8, 2), roles, mem, temperature=1e-4)
        assert np.array_equal(hard[0], fillers["f9"].data)

    def test_three_bindings_with_cleanup(self, roles, fillers):
        good = 0
        x = np.array([[1.0, 0, 0, 0]])
        for t in range(1000):
            r = SeededRng(31, t)
            rs, fs = r.choice(8, 3), r.choice(64, 3)
            mem = hd_write(HdMemory.empty(VsaModel.MAP, 1024), [(roles.vector(i), fillers.vector(j)) for i, j in zip(rs, fs)])
            sym, _ = unbinding_head_forward(x, planted(8, int(rs[1])), roles, mem, 1e-4, fillers)[0]
            good += sym == f"f{fs[1]}"
        assert good / 1000 >= 0.99

    def test_absent_cue(self, roles, fillers):
        x = np.array([[1.0, 0, 0, 0]])
        for t in range(200):
            r = SeededRng(32, t)
            rs, fs = r.choice(8, 4), r.choice(64, 3)
            mem = hd_write(HdMemory.empty(VsaModel.MAP, 1024), [(roles.vector(i), fillers.vector(j)) for i, j in zip(rs[:3], fs)])
            _, sim = unbinding_head_forward(x, planted(8, int(rs[3])), roles, mem, 1e-4, fillers)[0]
            assert sim < 0.3

    def test_missing_memory(self, roles):
        with pytest.raises(ConfigError):
            unbinding_head_forward(np.ones((1, 4)), planted(8, 0), roles, None)
        with pytest.raises(IncompatibleOperandsError):
            unbinding_head_forward(np.ones((1, 4)), planted(8, 0), roles, HdMemory.empty(VsaModel.MAP, 64))


class TestHdMemory:
    def test_write_then_read(self, roles, fillers):
        mem = hd_write(HdMemory.empty(VsaModel.MAP, 1024), [(roles["r1"], fillers["f1"])])
        assert hd_read(mem, roles["r1"], fillers, clean=True) == ("f1", 1.0)
        raw, none = hd_read(mem, roles["r1"])
        assert none is None and np.array_equal(raw.data, fillers["f1"].data)

    @pytest.mark.parametrize("model", [VsaModel.MAP, VsaModel.BSC])
    def test_oracle_shadow_after_hundred_writes(self, model):
        rb = Codebook(model, 256, [f"r{i}" for i in range(8)], 1)
        fb = Codebook(model, 256, [f"f{i}" for i in range(16)], 2)
        mem = HdMemory.empty(model, 256, oracle=True)
        r = SeededRng(5)
        for t in range(100):
            i, j = r.integers(0, 8, 1)[0], r.integers(0, 16, 1)[0]
            mem = hd_write(mem, [(rb.vector(i), fb.vector(j))])
            assert np.array_equal(mem.m.data, mem.reconstruct().data)
        assert mem.write_count == 100 and len(mem.saturation_log) == 100

    def test_capacity_up_to_ten(self, roles, fillers):
        # Distinct roles need more than the 8 in the shared book.
        rb = Codebook(VsaModel.MAP, 1024, [f"q{i}" for i in range(64)], 23)
        for k in range(1, 11):
            good = 0
            for t in range(200):
                r = SeededRng(40 + k, t)
                rs, fs = r.choice(64, k), r.integers(0, 64, k)
                mem = HdMemory.empty(VsaModel.MAP, 1024)
                for i, j in zip(rs, fs):
                    mem = hd_write(mem, [(rb.vector(i), fillers.vector(j))])
                good += all(hd_read(mem, rb.vector(i), fillers, True)[0] == f"f{j}" for i, j in zip(rs, fs))
            assert good / 200 >= 0.95, k

    def test_zero_memory_read(self, roles, fillers):
        mem = HdMemory.empty(VsaModel.MAP, 1024)
        _, sim = hd_read(mem, roles["r0"], fillers, True)
        assert abs(sim) < 0.15
        hrr = HdMemory.empty(VsaModel.HRR, 1024)
        cue = random_hv(VsaModel.HRR, 1024, SeededRng(1))
        fb = Codebook(VsaModel.HRR, 1024, ["a", "b"], 3)
        assert abs(hd_read(hrr, cue, fb, True)[1]) < 0.15

    def test_read_does_not_mutate(self, roles, fillers):
        mem = hd_write(HdMemory.empty(VsaModel.MAP, 1024), [(roles["r1"], fillers["f1"])])
        before = mem.m.data.copy()
        hd_read(mem, roles["r2"], fillers, True)
        assert np.array_equal(mem.m.data, before) and mem.write_count == 1

    def test_writes_commute_for_distinct_roles(self, roles, fillers):
        pairs = [(roles.vector(i), fillers.vector(3 * i)) for i in range(5)]
        a = HdMemory.empty(VsaModel.MAP, 1024)
        b = HdMemory.empty(VsaModel.MAP, 1024)
        for p in pairs:
            a = hd_write(a, [p])
        for p in reversed(pairs):
            b = hd_write(b, [p])
        assert np.array_equal(a.m.data, b.m.data)

    def test_input_memory_untouched(self, roles, fillers):
        empty = HdMemory.empty(VsaModel.MAP, 1024, oracle=True)
        hd_write(empty, [(roles["r1"], fillers["f1"])])
        assert empty.write_count == 0 and empty.shadow == [] and not empty.m.data.any()

    def test_cleanup_needs_book(self, roles):
        with pytest.raises(ConfigError):
            hd_read(HdMemory.empty(VsaModel.MAP, 1024), roles["r0"], None, True)
        with pytest.raises(ConfigError):
            HdMemory.empty(VsaModel.MAP, 8).reconstruct()


class TestRotary:
    def test_position_zero_identity(self):
        tie = RotaryTie.standard(8)
        rows = SeededRng(1).normal(8).reshape(1, 8)
        assert np.array_equal(rotary_apply(rows, [0], tie), rows)

    @given(st.integers(0, 10_000))
    def test_norm_preserved_and_invertible(self, s):
        tie = RotaryTie.standard(16)
        rows = SeededRng(s).normal(5 * 16).reshape(5, 16)
        pos = np.arange(5) * 3 + 1
        out = rotary_apply(rows, pos, tie)
        assert np.all(np.abs(np.linalg.norm(out, axis=1) - np.linalg.norm(rows, axis=1)) <= 1e-12)
        assert np.allclose(rotary_apply(out, pos, tie, inverse=True), rows, atol=1e-12)

    @given(st.integers(0, 10_000))
    def test_relative_position(self, s):
        tie = RotaryTie.standard(16)
        q, k = SeededRng(s, 0).normal(16)[None], SeededRng(s, 1).normal(16)[None]

        def score(i, j):
            return float(rotary_apply(q, [i], tie)[0] @ rotary_apply(k, [j], tie)[0])

        assert score(3, 1) == pytest.approx(score(7, 5), abs=1e-9)

    def test_odd_dimension(self):
        with pytest.raises(ConfigError):
            RotaryTie.standard(7)
        with pytest.raises(ConfigError):
            rotary_apply(np.ones((1, 6)), [0], RotaryTie.standard(8))


class TestInNetworkGradients:
    @pytest.mark.parametrize("extra", [{"binding_heads": True, "binding_op": "HRR"}, {"hd_memory": True, "binding_op": "HRR", "role_trainable": True}])
    def test_hrr_variants_match_finite_differences(self, extra):
        m = Model(ModelConfig(vocab_size=6, n_classes=3, max_len=6, d_model=8, n_heads=2, n_layers=1, d_ff=8, hd_dim=8, n_roles=3, seed=2, **extra))
        r = SeededRng(9)
        tokens, targets = r.integers(1, 6, 8).reshape(2, 4), r.integers(0, 3, 2)
        _, grads, _ = m.loss_and_grads(tokens, targets)
        eps = 1e-6
        for name, arr in m.named_params().items():
            flat = arr.reshape(-1)
            for j in range(0, flat.size, max(1, flat.size // 12)):
                old = flat[j]
                vals = []
                for v in (old + eps, old - eps):
                    flat[j] = v
                    m.touch()
                    vals.append(cross_entropy(m.forward(tokens, keep_tape=False)[0], targets)[0])
                flat[j] = old
                num = (vals[0] - vals[1]) / (2 * eps)
                a = grads[name].reshape(-1)[j]
                assert abs(a - num) <= 1e-4 * max(abs(a) + abs(num), 1e-6), name
            m.touch()

    def test_similarity_helpers_agree(self, roles):
        assert similarity(roles["r0"], roles["r0"]) == 1.0
        assert superpose([roles["r0"]]).dim == 1024
