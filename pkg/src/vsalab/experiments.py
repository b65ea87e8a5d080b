"""Run configuration and the builders shared by the CLI and the acceptance suite."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

from .attn import Model, ModelConfig
from .errors import ConfigError
from .hvcore import SeededRng, VsaModel
from .tasks import TaskSet, gen_binding_task, gen_renaming_split, gen_sequence_task, make_split
from .trainer import AdamConfig, LossSpec, Schedule, TrainResult, train

SCHEMA = "vsalab.config/1"
SEED_ENV = "VSALAB_SEED"

# Pinned reference for the end-to-end learning check.
BASELINE_SEEDS = (0, 1, 2, 3, 4)
BASELINE_TASK_SEED = 0


def _build(cls, data, where: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class TaskSection:
    kind: str = "binding"  # binding | copy | reverse | index_query
    n_roles: int = 8
    n_fillers: int = 16
    instance_len: tuple = (2, 6)
    n_train: int = 4096
    n_test: int = 1024
    holdout_fraction: float = 0.25
    lengths: tuple = (1, 2, 3, 4, 5, 6)
    n_items: int = 16
    renaming_seed: int | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.kind not in ("binding", "copy", "reverse", "index_query"):
            raise ConfigError(f"task.kind {self.kind!r} is not one of binding, copy, reverse, index_query")
        object.__setattr__(self, "instance_len", tuple(self.instance_len) if not isinstance(self.instance_len, int) else (self.instance_len, self.instance_len))
        object.__setattr__(self, "lengths", tuple(self.lengths))


@dataclass(frozen=True)
class CapacitySection:
    model: str | None = None  # mandatory for the capacity command
    dim: int = 1024
    k_range: tuple = (1, 2, 3, 4, 5, 8, 16, 32)
    coherence_range: tuple = (0.0, 0.4, 0.8)
    trials: int = 1000
    n_fillers: int = 64
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "k_range", tuple(int(k) for k in self.k_range))
        object.__setattr__(self, "coherence_range", tuple(float(c) for c in self.coherence_range))
        if not self.k_range or min(self.k_range) < 1:
            raise ConfigError("capacity.k_range must be non-empty with K >= 1")
        if any(not 0.0 <= c < 1.0 for c in self.coherence_range):
            raise ConfigError("capacity.coherence_range entries must lie in [0, 1)")
        if self.trials < 1 or self.workers < 1 or self.dim < 2:
            raise ConfigError("capacity.trials, workers must be >= 1 and dim >= 2")

    def vsa_model(self) -> VsaModel:
        if self.model is None:
            raise ConfigError("capacity.model is required (MAP, BSC or HRR)")
        try:
            return VsaModel.parse(self.model)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class ProbeSection:
    trials: int = 200
    n_bindings: int = 2
    n_roles: int = 8
    n_fillers: int = 16
    probe: str = "similarity"
    alignment_samples: int = 256
    dim: int = 1024  # oracle checkpoints only

    def __post_init__(self):
        if self.probe not in ("similarity", "linear"):
            raise ConfigError("probe.probe must be similarity or linear")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    task: TaskSection = field(default_factory=TaskSection)
    model: dict = field(default_factory=lambda: {"d_ff": 128})
    loss: LossSpec = field(default_factory=LossSpec)
    optimizer: AdamConfig = field(default_factory=AdamConfig)
    schedule: dict = field(default_factory=dict)
    capacity: CapacitySection = field(default_factory=CapacitySection)
    probe: ProbeSection = field(default_factory=ProbeSection)
    schema: str = SCHEMA

    @property
    def task_seed(self) -> int:
        return self.seed if self.task.seed is None else self.task.seed

    def schedule_obj(self) -> Schedule:
        return _build(Schedule, dict(self.schedule, seed=self.seed), "schedule")

    def to_dict(self) -> dict:
        out = {
            "schema": self.schema,
            "seed": self.seed,
            "task": _plain(asdict(self.task)),
            "model": dict(self.model),
            "loss": asdict(self.loss),
            "optimizer": asdict(self.optimizer),
            "schedule": dict(self.schedule),
            "capacity": _plain(asdict(self.capacity)),
            "probe": asdict(self.probe),
        }
        return out

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _plain(d: dict) -> dict:
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def config_from_dict(data: dict, env: dict | None = None) -> RunConfig:
    """Validate a parsed config tree. ``VSALAB_SEED`` in ``env`` overrides ``seed``."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    schema = data.get("schema")
    if schema != SCHEMA:
        raise ConfigError(f"config schema {schema!r} is not supported (expected {SCHEMA!r})")
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    seed = data.get("seed", 0)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV], 0)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    model = dict(data.get("model") or {"d_ff": 128})
    bad = {"vocab_size", "n_classes", "seed"} & set(model)
    if bad:
        raise ConfigError(f"model.{sorted(bad)[0]} is derived from the task and seed; remove it")
    model_fields = {f.name for f in fields(ModelConfig)}
    if set(model) - model_fields:
        raise ConfigError(f"model: unknown keys {sorted(set(model) - model_fields)}")
    schedule = dict(data.get("schedule") or {})
    if "seed" in schedule:
        raise ConfigError("schedule.seed is derived from the master seed; remove it")
    cfg = RunConfig(
        seed=seed,
        task=_build(TaskSection, data.get("task"), "task"),
        model=model,
        loss=_build(LossSpec, data.get("loss"), "loss"),
        optimizer=_build(AdamConfig, data.get("optimizer"), "optimizer"),
        schedule=schedule,
        capacity=_build(CapacitySection, data.get("capacity"), "capacity"),
        probe=_build(ProbeSection, data.get("probe"), "probe"),
    )
    cfg.schedule_obj()
    return cfg


def load_config(path, env: dict | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    return config_from_dict(data, env)


def default_config(**overrides) -> RunConfig:
    return replace(RunConfig(), **overrides)


# -- builders -----------------------------------------------------------------

_SEQUENCE_KINDS = {"copy": "Copy", "reverse": "Reverse", "index_query": "IndexQuery"}


def build_tasks(cfg: RunConfig) -> dict[str, TaskSet]:
    """Named task sets: ``train``, ``test`` and, with a renaming seed, ``test_renamed``."""
    t = cfg.task
    seed = cfg.task_seed
    if t.kind == "binding":
        split = make_split(t.n_roles, t.n_fillers, t.holdout_fraction, seed)
        train_set, test_set = gen_binding_task(t.n_roles, t.n_fillers, t.instance_len, split, SeededRng(seed, 7), t.n_train, t.n_test)
    else:
        kind = _SEQUENCE_KINDS[t.kind]
        _, train_set = gen_sequence_task(kind, t.lengths, SeededRng(seed, 8), t.n_train, t.n_items)
        _, test_set = gen_sequence_task(kind, t.lengths, SeededRng(seed, 9), t.n_test, t.n_items)
    sets = {"train": train_set, "test": test_set}
    if t.renaming_seed is not None:
        sets["test_renamed"] = gen_renaming_split(test_set, int(t.renaming_seed))
    return sets


def build_model(cfg: RunConfig, train_set: TaskSet) -> Model:
    try:
        mcfg = ModelConfig(vocab_size=len(train_set.vocab), n_classes=len(train_set.answer_symbols), seed=cfg.seed, **cfg.model)
    except TypeError as exc:
        raise ConfigError(f"model: {exc}") from None
    return Model(mcfg)


def run_training(cfg: RunConfig, sets: dict | None = None, on_eval=None) -> TrainResult:
    sets = sets or build_tasks(cfg)
    model = build_model(cfg, sets["train"])
    return train(model, sets["train"], sets["test"], cfg.loss, cfg.optimizer, cfg.schedule_obj(), SeededRng(cfg.seed, 0x7A), on_eval)


def baseline_config(seed: int, variant: str = "plain", **schedule) -> RunConfig:
    """The pinned 2-layer, 4-head, d_model=64 model on the default binding task.

    ``variant="binding"`` adds a binding head per block. The task is fixed
    across seeds; the seed drives initialization and batching.
    """
    if variant not in ("plain", "binding"):
        raise ConfigError(f"unknown baseline variant {variant!r}")
    model = {"n_layers": 2, "n_heads": 4, "d_model": 64, "d_ff": 128, "binding_heads": variant == "binding"}
    sched = {"steps": 2000, "batch_size": 64, "eval_every": 100, "stop_test_acc": None, "stop_train_acc": 0.99}
    sched.update(schedule)
    return RunConfig(seed=seed, task=TaskSection(seed=BASELINE_TASK_SEED), model=model, schedule=sched)
