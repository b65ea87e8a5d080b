"""Release acceptance suite: one test per criterion, each logging a PASS/FAIL line."""

import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from vsalab.algebra import bind, cconv, cconv_naive, superpose, unbind
from vsalab.attn import Model, ModelConfig
from vsalab.cli import main
from vsalab.codec import Codebook, env_encode
from vsalab.experiments import baseline_config, build_tasks, load_config, run_training
from vsalab.hvcore import SeededRng, VsaModel, random_hv, similarity
from vsalab.metrics import (
    HdMemoryTarget,
    UntrainedModelTarget,
    binomial_band,
    interference_curve,
    operator_alignment,
    role_filler_recoverability,
)
from vsalab.tasks import encode_task_tokens, task_codebook
from vsalab.trainer import LossSpec, grad_check

ROOT = Path(__file__).resolve().parents[1]
MANIFEST = json.loads((Path(__file__).parent / "acceptance_manifest.json").read_text())


@pytest.fixture
def verdict(acceptance_log):
    def record(n: int, title: str, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'}  [{n:>2}] {title}: {detail}"
        acceptance_log.append(line)
        print(line)
        assert ok, line

    return record


def test_1_algebra_exactness(verdict):
    t0 = time.perf_counter()
    bad = 0
    for model in (VsaModel.MAP, VsaModel.BSC):
        for d in (64, 1024):
            rng = SeededRng(1, d)
            for i in range(10_000):
                a, b = random_hv(model, d, rng.spawn(2 * i)), random_hv(model, d, rng.spawn(2 * i + 1))
                bad += not np.array_equal(unbind(bind(a, b), a).data, b.data)
    dt = time.perf_counter() - t0
    verdict(1, "algebra exactness", bad == 0 and dt < 10, f"{bad} mismatches over 4x10^4 pairs in {dt:.1f}s (limit 10s)")


def test_2_hrr_fft_oracle(verdict):
    worst = 0.0
    for d in (8, 64, 1024):
        for i in range(100):
            r = SeededRng(2, 1000 * d + i)
            a, b = r.normal(d, 1 / math.sqrt(d)), r.normal(d, 1 / math.sqrt(d))
            slow = cconv_naive(a, b)
            worst = max(worst, float(np.linalg.norm(cconv(a, b) - slow) / np.linalg.norm(slow)))
    verdict(2, "HRR FFT vs naive convolution", worst < 1e-9, f"max relative error {worst:.2e} (limit 1e-9)")


def test_3_capacity_calibration(verdict):
    t0 = time.perf_counter()
    ks = (1, 2, 3, 4, 5, 32)
    curve = interference_curve(VsaModel.MAP, 1024, ks, (0.0,), 1000, SeededRng(3), 64)
    dt = time.perf_counter() - t0
    low = min(curve.cell(k).accuracy for k in ks[:5])
    c5, c32 = curve.cell(5), curve.cell(32)
    sigma = math.hypot(c5.sigma, c32.sigma)
    gap = c5.accuracy - c32.accuracy
    ok = low >= 0.99 and gap > 3 * sigma and dt < 120
    verdict(3, "capacity calibration", ok, f"min acc K<=5 {low:.4f}; K=5 {c5.accuracy:.5f} vs K=32 {c32.accuracy:.5f}, gap {gap / sigma:.1f} sigma; {dt:.0f}s (limit 120s)")


def test_4_superposition_similarity(verdict):
    rows = []
    ok = True
    for n in (2, 3, 4, 8):
        sims = []
        for t in range(1000):
            r = SeededRng(4, 100 * n + t)
            items = [random_hv(VsaModel.MAP, 1024, r.spawn(i)) for i in range(n)]
            s = superpose(items)
            unit = replace(s, data=s.data / np.linalg.norm(s.data))
            sims += [similarity(unit, x) for x in items]
        mean = float(np.mean(sims))
        ok &= abs(mean - 1 / math.sqrt(n)) <= 0.05
        rows.append(f"n={n}: {mean:.4f} vs {1 / math.sqrt(n):.4f}")
    verdict(4, "normalized bundle similarity 1/sqrt(n)", ok, "; ".join(rows))


def test_5_gradient_correctness(verdict):
    t0 = time.perf_counter()
    variants = {
        "plain": {},
        "binding": {"binding_heads": True, "role_trainable": True},
        "memory": {"hd_memory": True, "hd_dim": 16},
        "rotary": {"positional": "rotary"},
    }
    rng = SeededRng(5)
    tokens = rng.integers(1, 12, 2 * 5).reshape(2, 5)
    targets = rng.integers(0, 4, 2)
    errs, coords = {}, 0
    for name, extra in variants.items():
        m = Model(ModelConfig(vocab_size=12, n_classes=4, max_len=5, d_model=16, n_heads=2, n_layers=2, seed=5, **extra))
        spec = LossSpec(0.01, 0.1, 0.5) if name == "binding" else LossSpec()
        rep = grad_check(m, tokens, targets, 1e-4, n_coords=1024, rng=SeededRng(5, 1), loss=spec, raise_on_fail=False)
        errs[name] = rep.max_rel_error
        coords += rep.n_coords
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 1e-4 and dt < 60
    verdict(5, "finite-difference gradients", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()) + f" ({coords} sampled coordinates; {dt:.0f}s, limit 60s)")


def test_6_metric_calibration(verdict):
    roles = Codebook(VsaModel.MAP, 1024, [f"R{i}" for i in range(8)], 61)
    fillers = Codebook(VsaModel.MAP, 1024, [f"F{i}" for i in range(64)], 62)
    oracle = role_filler_recoverability(HdMemoryTarget(VsaModel.MAP, 1024), roles, fillers, 200, SeededRng(6, 1), 1)

    r64 = Codebook(VsaModel.MAP, 64, [f"R{i}" for i in range(8)], 63)
    f64 = Codebook(VsaModel.MAP, 64, [f"F{i}" for i in range(16)], 64)
    cfg = ModelConfig(vocab_size=20, n_classes=16, d_model=64, seed=6)
    null = role_filler_recoverability(UntrainedModelTarget(cfg, 0, 6), r64, f64, 1000, SeededRng(6, 2), 1)
    lo, hi = binomial_band(1 / 16, null.n_readouts)

    xs = [random_hv(VsaModel.HRR, 256, SeededRng(6, 100 + i)).data for i in range(300)]
    shift = operator_alignment([(x, np.roll(x, 5)) for x in xs])
    w = SeededRng(6, 3).normal(256 * 256).reshape(256, 256) / 16.0
    rand = operator_alignment([(x, w @ x) for x in xs])

    ok = oracle.accuracy == 1.0 and lo <= null.accuracy <= hi and shift.best_family == "cyclic_shift" and shift.operator["shift"] == 5 and shift.r2 >= 1 - 1e-9 and rand.r2 < 0.3
    verdict(
        6,
        "metric calibration",
        ok,
        f"oracle {oracle.accuracy:.3f}; untrained {null.accuracy:.3f} in [{lo:.3f}, {hi:.3f}]; planted shift {shift.operator['shift']} R2 {shift.r2:.12f}; random map R2 {rand.r2:.3f}",
    )


def test_7_token_trajectory_matches_environment(verdict):
    cfg = load_config(ROOT / "configs" / "default.yaml", env={})
    sets = build_tasks(cfg)
    book = task_codebook(sets["train"].vocab, VsaModel.MAP, 1024, cfg.seed)
    n = bad = 0
    for ts in sets.values():
        for inst in ts.instances:
            final = encode_task_tokens(inst, book)[-1]
            bad += not np.array_equal(final.data, env_encode(dict(inst.structure), book).vector.data)
            n += 1
    verdict(7, "token-level states equal environment encoding", bad == 0, f"{bad} mismatches over {n} instances of the default task set")


@pytest.mark.slow
def test_8_end_to_end_learning(verdict):
    base = MANIFEST["baseline"]
    pin = MANIFEST["binding_variant"]
    t0 = time.perf_counter()
    sets = build_tasks(baseline_config(base["task_seed"]))
    reached, details = 0, []
    for seed in base["seeds"]:
        res = run_training(baseline_config(seed, steps=base["max_steps"], stop_train_acc=base["train_accuracy_target"]), sets)
        acc = res.curves[-1]["train_acc"]
        reached += acc >= base["train_accuracy_target"]
        details.append(f"seed {seed}: {acc:.4f}@{res.steps_run}")
    res = run_training(baseline_config(pin["seed"], "binding", steps=base["max_steps"], stop_train_acc=base["train_accuracy_target"]), sets)
    test_acc = res.curves[-1]["test_acc"]
    dt = time.perf_counter() - t0
    ok = reached >= base["min_seeds_passing"] and test_acc >= pin["test_accuracy"] - pin["max_regression"] and dt < base["time_budget_seconds"]
    verdict(
        8,
        "end-to-end learning",
        ok,
        f"{reached}/5 seeds >= 0.99 train ({', '.join(details)}); binding test acc {test_acc:.4f} vs pinned {pin['test_accuracy']:.4f}; {dt:.0f}s (limit {base['time_budget_seconds']}s)",
    )


def test_9_regularizer_effect(verdict):
    spec = MANIFEST["regularizer"]
    sets = build_tasks(baseline_config(0))
    rows, ok = [], True
    for seed in spec["seeds"]:
        finals = []
        for weight in (0.0, spec["ortho_weight"]):
            cfg = replace(baseline_config(seed, steps=spec["steps"], stop_train_acc=None, eval_every=50), model=dict(spec["model"]), loss=LossSpec(ortho_weight=weight))
            finals.append(run_training(cfg, sets).curves[-1]["coherence"])
        ok &= finals[1] < finals[0]
        rows.append(f"seed {seed}: {finals[0]:.4f} -> {finals[1]:.4f}")
    verdict(9, "orthogonality lowers key/role coherence", ok, "; ".join(rows))


def _csv_bytes(run_dir: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(run_dir.glob("*.csv"))}


def test_10_reproducibility(verdict, tmp_path, capsys):
    smoke = ROOT / "configs" / "smoke.yaml"
    first = tmp_path / "first"
    for argv in (["capacity", "-c", smoke], ["tasks", "-c", smoke], ["train", "-c", smoke]):
        assert main([str(a) for a in argv] + ["-o", str(first)]) == 0
    (ckpt,) = first.glob("*-train-*/model.ckpt")
    assert main(["probe", "-m", str(ckpt), "-c", str(smoke), "-o", str(first)]) == 0
    capsys.readouterr()
    compared, mismatched = 0, []
    for run in sorted(p for p in first.iterdir() if p.is_dir()):
        command = run.name.split("-")[1]
        again_root = tmp_path / "again" / run.name
        argv = [command, "-c", str(run / "config.yaml"), "-o", str(again_root)]
        if command == "probe":
            argv[1:1] = ["-m", str(ckpt)]
        assert main(argv) == 0
        (again,) = again_root.iterdir()
        a, b = _csv_bytes(run), _csv_bytes(again)
        compared += len(a)
        if a != b:
            mismatched.append(run.name)
    capsys.readouterr()
    verdict(10, "rerun from persisted config", not mismatched and compared >= 5, f"{compared} CSV files across 4 commands, {len(mismatched)} differ")
