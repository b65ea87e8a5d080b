"""Command-line entry point: ``vsalab selftest | capacity | tasks | train | probe | report``.

Exit codes: 0 success, 1 metric or assertion failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import logging
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attn import Model, load_checkpoint, read_checkpoint_header, save_checkpoint
from .codec import Codebook
from .errors import ConfigError, SerializationError, TrainingDivergedError, VsaError
from .experiments import RunConfig, build_model, build_tasks, load_config
from .hvcore import SeededRng, VsaModel, random_hv
from .algebra import unbind
from .metrics import (
    FAMILIES,
    HdMemoryTarget,
    ModelLayerTarget,
    UntrainedModelTarget,
    diagnose_model,
    interference_curve,
    operator_alignment,
    role_filler_recoverability,
    vsa_likeness_summary,
)
from .selftest import FAULTS, run_selftest
from .svgplot import line_chart
from .trainer import CURVE_COLUMNS, accuracy, train

log = logging.getLogger("vsalab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
RUN_SCHEMA = "vsalab.run/1"
ORACLE_PREFIX = "oracle:"


class UsageError(Exception):
    pass


# -- run directories ----------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def _json_safe(v):
    """NaN and infinities become null so every JSON artifact is strict JSON."""
    if isinstance(v, dict):
        return {k: _json_safe(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_json_safe(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunDir:
    """One directory per run, named ``<UTC timestamp>-<command>-<config hash>``."""

    def __init__(self, parent, command: str, cfg: RunConfig, force: bool = False, extra_key: str = ""):
        self.parent = Path(parent)
        self.command = command
        self.cfg = cfg
        self.key = hashlib.sha256((command + cfg.config_hash() + extra_key).encode()).hexdigest()[:12]
        self.parent.mkdir(parents=True, exist_ok=True)
        done = [p for p in self.parent.glob(f"*-{command}-{self.key}") if (p / "manifest.json").exists()]
        if done and not force:
            raise UsageError(f"a completed {command} run with this config already exists: {done[0]} (use --force)")
        stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%SZ")
        path = self.parent / f"{stamp}-{command}-{self.key}"
        n = 1
        while path.exists():
            path = self.parent / f"{stamp}.{n}-{command}-{self.key}"
            n += 1
        path.mkdir()
        self.path = path
        self.started = _dt.datetime.now(_dt.timezone.utc).isoformat()
        self.write_text("config.yaml", cfg.to_yaml())
        self.write_text("seed.txt", f"{cfg.seed}\n")

    def write_text(self, name: str, text: str) -> Path:
        p = self.path / name
        p.write_text(text)
        return p

    def write_csv(self, name: str, columns, rows) -> Path:
        p = self.path / name
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row.get(c)) for c in columns])
        return p

    def write_jsonl(self, name: str, objs) -> Path:
        p = self.path / name
        with open(p, "w") as fh:
            for o in objs:
                fh.write(json.dumps(_json_safe(o), sort_keys=True, allow_nan=False) + "\n")
        return p

    def finish(self, metrics: dict, argv) -> Path:
        files = {p.name: _sha256(p) for p in sorted(self.path.iterdir()) if p.is_file() and p.name != "manifest.json"}
        manifest = {
            "schema": RUN_SCHEMA,
            "command": self.command,
            "config_hash": self.cfg.config_hash(),
            "seed": self.cfg.seed,
            "git_describe": git_describe(),
            "started": self.started,
            "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
            "argv": list(argv),
            "metrics": _json_safe(metrics),
            "files": files,
            "complete": True,
        }
        p = self.path / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True, allow_nan=False) + "\n")
        return p


def read_manifest(run_dir) -> dict:
    p = Path(run_dir) / "manifest.json"
    if not p.exists():
        raise UsageError(f"{run_dir} has no manifest.json (missing or incomplete run)")
    data = json.loads(p.read_text())
    if data.get("schema") != RUN_SCHEMA:
        raise UsageError(f"{p}: run schema {data.get('schema')!r} is not {RUN_SCHEMA!r}")
    return data


# -- commands -----------------------------------------------------------------


def cmd_selftest(args) -> int:
    results = run_selftest(args.inject_fault)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} {r.seconds:6.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"selftest: {len(failed)} failed: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"selftest: all {len(results)} checks passed")
    return EXIT_OK


def _capacity_cell(args):
    model_value, dim, k, c, trials, n_fillers, seed = args
    curve = interference_curve(VsaModel(model_value), dim, (k,), (c,), trials, SeededRng(seed, 0xCA), n_fillers)
    return curve.cells[0]


def cmd_capacity(args) -> int:
    cfg = load_config(args.config)
    cap = cfg.capacity
    model = cap.vsa_model()
    run = RunDir(args.output, "capacity", cfg, args.force)
    jobs = [(model.value, cap.dim, k, c, cap.trials, cap.n_fillers, cfg.seed) for c in cap.coherence_range for k in cap.k_range]
    if cap.workers > 1:
        with ProcessPoolExecutor(max_workers=cap.workers) as pool:
            cells = list(pool.map(_capacity_cell, jobs))
    else:
        cells = [_capacity_cell(j) for j in jobs]
    rows = [dict(k=c.k, coherence=c.coherence, role_coherence=c.role_coherence, accuracy=c.accuracy, mean_similarity=c.mean_similarity, n_readouts=c.n_readouts, sigma=c.sigma) for c in cells]
    columns = ["k", "coherence", "role_coherence", "accuracy", "mean_similarity", "n_readouts", "sigma"]
    run.write_csv("capacity.csv", columns, rows)
    run.write_jsonl("capacity.jsonl", rows)
    series = []
    monotone = True
    for c in cap.coherence_range:
        sel = [r for r in rows if r["coherence"] == c]
        series.append((f"coherence {c:g}", [r["k"] for r in sel], [r["accuracy"] for r in sel]))
        for a, b in zip(sel, sel[1:]):
            band = 2.0 * math.hypot(a["sigma"], b["sigma"])
            monotone &= b["accuracy"] <= a["accuracy"] + band
    run.write_text("capacity.svg", line_chart(series, f"Capacity ({model.value}, D={cap.dim})", "K (bindings)", "cleanup accuracy", log_x=True))
    run.finish({"monotone_in_k": bool(monotone), "cells": len(rows)}, sys.argv)
    print(run.path)
    return EXIT_OK


def cmd_tasks(args) -> int:
    cfg = load_config(args.config)
    sets = build_tasks(cfg)
    run = RunDir(args.output, "tasks", cfg, args.force)
    vocab = sets["train"].vocab
    run.write_text("vocab.txt", vocab.manifest())
    for name, ts in sets.items():
        ts.write(run.path / f"{name}.jsonl", run.path / f"{name}.vocab.txt")
    run.finish({name: len(ts) for name, ts in sets.items()}, sys.argv)
    print(run.path)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    sets = build_tasks(cfg)
    model = build_model(cfg, sets["train"])
    run = RunDir(args.output, "train", cfg, args.force)
    rows = []
    try:
        result = train(model, sets["train"], sets["test"], cfg.loss, cfg.optimizer, cfg.schedule_obj(), SeededRng(cfg.seed, 0x7A), rows.append)
    except TrainingDivergedError as exc:
        run.write_csv("curves.csv", CURVE_COLUMNS, rows)
        save_checkpoint(exc.last_good, run.path / "last_good.ckpt", {"diverged_at": exc.step})
        print(f"training diverged at step {exc.step}; last good parameters in {run.path / 'last_good.ckpt'}", file=sys.stderr)
        return EXIT_FAIL
    run.write_csv("curves.csv", CURVE_COLUMNS, result.curves)
    steps = [r["step"] for r in result.curves]
    run.write_text(
        "curves.svg",
        line_chart([("train_acc", steps, [r["train_acc"] for r in result.curves]), ("test_acc", steps, [r["test_acc"] for r in result.curves])], "Learning curves", "step", "accuracy"),
    )
    save_checkpoint(result.model, run.path / "model.ckpt", {"steps": result.steps_run, "config_hash": cfg.config_hash()})
    diag = diagnose_model(result.model, sets["test"])
    diag_row = {"variable_confusion": diag.variable_confusion, "role_swap": diag.role_swap, "interference_inconsistency": diag.interference_inconsistency, "other": diag.other, "n_failures": diag.n_failures}
    run.write_csv("diagnostics.csv", list(diag_row), [diag_row])
    final = result.curves[-1]
    metrics = {k: final[k] for k in CURVE_COLUMNS}
    metrics["stop_reason"] = result.stop_reason
    if "test_renamed" in sets:
        metrics["test_renamed_acc"] = accuracy(result.model, sets["test_renamed"])
    run.finish(metrics, sys.argv)
    print(run.path)
    return EXIT_OK


def _alignment_samples_model(model: Model, test_set, layer: int, head: int, n_samples: int):
    tokens, _ = test_set.to_arrays(model.cfg.max_len)
    xs, ys = [], []
    for start in range(0, tokens.shape[0], 64):
        batch = tokens[start : start + 64]
        _, tape = model.forward(batch)
        c = tape.layers[layer]
        write = c["o"][:, head] @ model.params.blocks[layer].wo[head]
        mask = tape.mask
        xs.append(c["h"][mask])
        ys.append(write[mask])
        if sum(len(x) for x in xs) >= n_samples:
            break
    x, y = np.concatenate(xs)[:n_samples], np.concatenate(ys)[:n_samples]
    return list(zip(x, y))


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    pc = cfg.probe
    if args.model.startswith(ORACLE_PREFIX):
        try:
            name = VsaModel.parse(args.model[len(ORACLE_PREFIX) :]).value
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        header = {"kind": "oracle", "config": {"model": name, "dim": pc.dim}}
        key = args.model
    else:
        header, _ = read_checkpoint_header(args.model)
        key = hashlib.sha256(Path(args.model).read_bytes()).hexdigest()
    rng = SeededRng(cfg.seed, 0x9B)
    run = RunDir(args.output, "probe", cfg, args.force, extra_key=key)
    rec_rows, align_rows = [], []
    diag_row = None
    if header.get("kind") == "oracle":
        vmodel = VsaModel.parse(header["config"]["model"])
        dim = int(header["config"]["dim"])
        roles = Codebook(vmodel, dim, [f"R{i}" for i in range(pc.n_roles)], cfg.seed ^ 0x11)
        fillers = Codebook(vmodel, dim, [f"F{i}" for i in range(pc.n_fillers)], cfg.seed ^ 0x22)
        target = HdMemoryTarget(vmodel, dim)
        for k in sorted({1, pc.n_bindings}):
            rep = role_filler_recoverability(target, roles, fillers, pc.trials, rng.spawn(k), k, pc.probe)
            rec_rows.append({"layer": "oracle", "n_bindings": k, "probe": pc.probe, "accuracy": rep.accuracy, "mean_margin": rep.mean_margin, "n_readouts": rep.n_readouts, "null_accuracy": None, "chance": 1.0 / pc.n_fillers})
        cue = roles.vector(0)
        n = pc.alignment_samples
        xs = [random_hv(vmodel, dim, rng.spawn(1000 + i)) for i in range(n)]
        fams = [f for f in FAMILIES if f != "permutation" or n >= dim]
        rep = operator_alignment([(x, unbind(x, cue)) for x in xs], fams)
        align_rows.append({"layer": "oracle", "head": "unbind", "best_family": rep.best_family, "r2": rep.r2, **{f"r2_{f}": rep.per_family.get(f) for f in FAMILIES}})
    elif header.get("kind") == "transformer":
        model, _ = load_checkpoint(args.model)
        sets = build_tasks(cfg)
        if len(sets["test"].vocab) != model.cfg.vocab_size:
            raise UsageError("probe config task does not match the checkpoint's vocabulary")
        d = model.cfg.d_model
        roles = Codebook(VsaModel.MAP, d, [f"R{i}" for i in range(pc.n_roles)], cfg.seed ^ 0x11)
        fillers = Codebook(VsaModel.MAP, d, [f"F{i}" for i in range(pc.n_fillers)], cfg.seed ^ 0x22)
        for layer in range(model.cfg.n_layers):
            for k in sorted({1, pc.n_bindings}):
                sub = rng.spawn(100 * layer + k)
                rep = role_filler_recoverability(ModelLayerTarget(model, layer), roles, fillers, pc.trials, sub, k, pc.probe)
                null = role_filler_recoverability(UntrainedModelTarget(model.cfg, layer, model.cfg.seed + 1), roles, fillers, pc.trials, sub, k, pc.probe)
                rec_rows.append({"layer": layer, "n_bindings": k, "probe": pc.probe, "accuracy": rep.accuracy, "mean_margin": rep.mean_margin, "n_readouts": rep.n_readouts, "null_accuracy": null.accuracy, "chance": 1.0 / pc.n_fillers})
            for head in range(model.cfg.n_heads):
                samples = _alignment_samples_model(model, sets["test"], layer, head, max(pc.alignment_samples, d))
                fams = [f for f in FAMILIES if f != "permutation" or len(samples) >= d]
                rep = operator_alignment(samples, fams)
                align_rows.append({"layer": layer, "head": head, "best_family": rep.best_family, "r2": rep.r2, **{f"r2_{f}": rep.per_family.get(f) for f in FAMILIES}})
        diag = diagnose_model(model, sets["test"])
        diag_row = {"variable_confusion": diag.variable_confusion, "role_swap": diag.role_swap, "interference_inconsistency": diag.interference_inconsistency, "other": diag.other, "n_failures": diag.n_failures}
    else:
        raise SerializationError(f"unknown checkpoint kind {header.get('kind')!r}")
    rec_cols = ["layer", "n_bindings", "probe", "accuracy", "mean_margin", "n_readouts", "null_accuracy", "chance"]
    align_cols = ["layer", "head", "best_family", "r2"] + [f"r2_{f}" for f in FAMILIES]
    run.write_csv("recoverability.csv", rec_cols, rec_rows)
    run.write_csv("alignment.csv", align_cols, align_rows)
    run.write_jsonl("recoverability.jsonl", rec_rows)
    run.write_jsonl("alignment.jsonl", align_rows)
    if diag_row is not None:
        run.write_csv("diagnostics.csv", list(diag_row), [diag_row])
    single = [r["accuracy"] for r in rec_rows if r["n_bindings"] == 1]
    multi = [r["accuracy"] for r in rec_rows if r["n_bindings"] == pc.n_bindings]
    summary = vsa_likeness_summary(max(single), max(multi), max(r["r2"] for r in align_rows))
    run.write_text("summary.json", json.dumps(_json_safe(summary), indent=2, sort_keys=True, allow_nan=False) + "\n")
    run.finish(summary, sys.argv)
    print(run.path)
    return EXIT_OK


REPORT_BASE = ["run", "command", "config_hash", "seed", "git_describe"]


def cmd_report(args) -> int:
    manifests = [(Path(d), read_manifest(d)) for d in args.runs]
    keys = sorted({k for _, m in manifests for k in m.get("metrics", {})})
    columns = REPORT_BASE + keys
    rows = []
    series = []
    for path, m in manifests:
        row = {"run": path.name, "command": m["command"], "config_hash": m["config_hash"], "seed": m["seed"], "git_describe": m["git_describe"]}
        row.update(m.get("metrics", {}))
        rows.append(row)
        curves = path / "curves.csv"
        capacity = path / "capacity.csv"
        if curves.exists():
            with open(curves) as fh:
                data = list(csv.DictReader(fh))
            series.append((f"{path.name[-12:]} test", [float(r["step"]) for r in data], [float(r["test_acc"]) for r in data]))
        elif capacity.exists():
            with open(capacity) as fh:
                data = list(csv.DictReader(fh))
            lowest = min(float(r["coherence"]) for r in data)
            data = [r for r in data if float(r["coherence"]) == lowest]
            series.append((f"{path.name[-12:]} K", [float(r["k"]) for r in data], [float(r["accuracy"]) for r in data]))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])
    out.with_suffix(".svg").write_text(line_chart(series, "Run comparison", "step or K", "accuracy"))
    print(out)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vsalab", description="Vector-symbolic algebra and transformer binding experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("selftest", help="run the algebra/codec invariant suite")
    s.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    s.set_defaults(func=cmd_selftest)

    for name, func, helptext in (
        ("capacity", cmd_capacity, "interference/capacity sweep"),
        ("tasks", cmd_tasks, "generate task sets"),
        ("train", cmd_train, "train a model on the configured task"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("-c", "--config", required=True)
        if name == "capacity":
            s.add_argument("-o", "--output", default="runs", help="parent directory for the run directory (default: runs)")
        else:
            s.add_argument("-o", "--output", required=True, help="parent directory for the run directory")
        s.add_argument("--force", action="store_true", help="run even if a completed identical run exists")
        s.set_defaults(func=func)

    s = sub.add_parser("probe", help="VSA-likeness metrics on a checkpoint")
    s.add_argument("-m", "--model", required=True, help="checkpoint file, or oracle:MAP|BSC|HRR for the exact VSA memory at probe.dim")
    s.add_argument("-c", "--config", required=True)
    s.add_argument("-o", "--output", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("report", help="merge run directories into one CSV and plot")
    s.add_argument("runs", nargs="+")
    s.add_argument("-o", "--output", required=True, help="CSV path; the plot goes next to it as .svg")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, SerializationError) as exc:
        print(f"vsalab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VsaError as exc:
        print(f"vsalab {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
