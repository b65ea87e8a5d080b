from pathlib import Path

import pytest
import yaml

from vsalab.errors import ConfigError
from vsalab.experiments import (
    BASELINE_SEEDS,
    RunConfig,
    TaskSection,
    baseline_config,
    build_model,
    build_tasks,
    config_from_dict,
    load_config,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["default.yaml", "binding_heads.yaml", "smoke.yaml"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name, env={})
    assert isinstance(cfg, RunConfig)
    assert config_from_dict(yaml.safe_load(cfg.to_yaml()), env={}) == cfg


def test_hash_stable_and_sensitive():
    a = load_config(CONFIGS / "smoke.yaml", env={})
    b = load_config(CONFIGS / "smoke.yaml", env={})
    assert a.config_hash() == b.config_hash()
    c = config_from_dict(dict(yaml.safe_load(a.to_yaml()), seed=4), env={})
    assert c.config_hash() != a.config_hash()


def test_seed_env_override():
    data = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    assert config_from_dict(data, env={"VSALAB_SEED": "0x10"}).seed == 16
    with pytest.raises(ConfigError):
        config_from_dict(data, env={"VSALAB_SEED": "ten"})


@pytest.mark.parametrize(
    "patch",
    [
        {"schema": None},
        {"extra": 1},
        {"seed": -1},
        {"model": {"vocab_size": 5}},
        {"model": {"widgets": 2}},
        {"task": {"kind": "sort"}},
        {"task": {"colour": 1}},
        {"capacity": {"k_range": []}},
        {"capacity": {"coherence_range": [1.0]}},
        {"probe": {"probe": "mlp"}},
        {"schedule": {"batch_size": 0}},
        {"loss": {"ortho_weight": -0.1}},
    ],
)
def test_invalid_configs(patch):
    data = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(data.get(k), dict):
            data[k] = dict(data[k], **v)
        else:
            data[k] = v
    with pytest.raises(ConfigError):
        config_from_dict(data, env={})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_capacity_model_required():
    with pytest.raises(ConfigError):
        RunConfig().capacity.vsa_model()


def test_builders_on_smoke_config():
    cfg = load_config(CONFIGS / "smoke.yaml", env={})
    sets = build_tasks(cfg)
    assert len(sets["train"]) == 256 and len(sets["test"]) == 64
    m = build_model(cfg, sets["train"])
    assert m.cfg.vocab_size == len(sets["train"].vocab) and m.cfg.seed == 3


@pytest.mark.parametrize("kind,name", [("copy", "Copy"), ("reverse", "Reverse"), ("index_query", "IndexQuery")])
def test_sequence_task_builders(kind, name):
    cfg = RunConfig(task=TaskSection(kind=kind, n_train=20, n_test=10, lengths=(2, 3)))
    sets = build_tasks(cfg)
    assert sets["train"].meta["kind"] == name and sets["test"].meta["kind"] == name


def test_renaming_split_built():
    data = yaml.safe_load((CONFIGS / "smoke.yaml").read_text())
    data["task"]["renaming_seed"] = 5
    sets = build_tasks(config_from_dict(data, env={}))
    assert len(sets["test_renamed"]) == len(sets["test"])


def test_baseline_config_shape():
    assert BASELINE_SEEDS == (0, 1, 2, 3, 4)
    cfg = baseline_config(2, "binding", steps=10)
    assert cfg.model["binding_heads"] is True and cfg.model["n_layers"] == 2 and cfg.model["n_heads"] == 4 and cfg.model["d_model"] == 64
    assert cfg.schedule["steps"] == 10
    assert cfg.task_seed == 0
    with pytest.raises(ConfigError):
        baseline_config(0, "huge")
