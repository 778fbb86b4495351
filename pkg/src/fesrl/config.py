"""Run configuration files (YAML, schema version 1).

Every key is optional except ``schema_version``; omitted keys take the
defaults of :class:`~fesrl.control.TrainConfig`. Example::

    schema_version: 1
    plant: vertical_arm        # vertical_arm | horizontal_arm | cycling
    episodes: 30
    seed: 0
    episode_steps: 1800
    hold_steps: 50
    trace_store: 100
    quantize_actions: false
    params: null               # optional plant parameter file
    staterep: {hidden_size: 20, lr: 0.001, epochs_per_episode: 1}
    sac: {updates_per_episode: 400, batch_size: 256, gamma: 0.99}

Errors carry the file name and the 1-based line of the offending node.
"""
from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

import yaml

from .control.episodes import StateRepConfig, TrainConfig
from .sacagent import SacConfig

SCHEMA_VERSION = 1
PLANT_IDS = ("vertical_arm", "horizontal_arm", "cycling")


class ConfigError(ValueError):
    pass


def _where(path, node) -> str:
    return f"{path}:{node.start_mark.line + 1}"


def _scalar(path, key: str, node, kind):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"{_where(path, node)}: {key} must be a scalar")
    value = yaml.safe_load(yaml.serialize(node))
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is float and value is None:
        return None
    ok = isinstance(value, kind) and not (kind is int and isinstance(value, bool))
    if kind is str and value is None:
        return None
    if not ok:
        raise ConfigError(f"{_where(path, node)}: {key} must be {kind.__name__}, got {value!r}")
    return value


def _section(path, name: str, node, cls):
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(path, node)}: {name} must be a mapping")
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = {}
    for k_node, v_node in node.value:
        key = k_node.value
        if key not in types:
            raise ConfigError(f"{_where(path, k_node)}: unknown key {name}.{key}; "
                              f"expected one of {sorted(types)}")
        kind = {"int": int, "float": float, "bool": bool, "float | None": float}[types[key]]
        out[key] = _scalar(path, f"{name}.{key}", v_node, kind)
    return cls(**out)


_TOP = {"plant": str, "episodes": int, "seed": int, "episode_steps": int, "hold_steps": int,
        "trace_store": int, "quantize_actions": bool, "params": str}


def parse_config(text: str, path: str = "<config>") -> TrainConfig:
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{path}:1: top level must be a mapping")
    fields: dict = {}
    version = None
    for k_node, v_node in root.value:
        key = k_node.value
        if key == "schema_version":
            version = _scalar(path, key, v_node, int)
            if version != SCHEMA_VERSION:
                raise ConfigError(f"{_where(path, v_node)}: unsupported schema_version {version}; "
                                  f"expected {SCHEMA_VERSION}")
        elif key == "staterep":
            fields["staterep"] = _section(path, key, v_node, StateRepConfig)
        elif key == "sac":
            fields["sac"] = _section(path, key, v_node, SacConfig)
        elif key in _TOP:
            value = _scalar(path, key, v_node, _TOP[key])
            if key == "plant" and value not in PLANT_IDS:
                raise ConfigError(f"{_where(path, v_node)}: unknown plant {value!r}; "
                                  f"expected one of {list(PLANT_IDS)}")
            if key in ("episodes", "trace_store") and value < 0:
                raise ConfigError(f"{_where(path, v_node)}: {key} must be >= 0")
            if key in ("episode_steps", "hold_steps") and value < 2:
                raise ConfigError(f"{_where(path, v_node)}: {key} must be >= 2")
            fields["params_path" if key == "params" else key] = value
        else:
            raise ConfigError(f"{_where(path, k_node)}: unknown key {key!r}")
    if version is None:
        raise ConfigError(f"{path}:1: missing schema_version")
    return TrainConfig(**fields)


def load_config(path) -> TrainConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["params"] = d.pop("params_path")
    return {"schema_version": SCHEMA_VERSION, **d}


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def default_config_path(plant: str) -> Path:
    return Path(str(resources.files("fesrl") / "data" / "configs" / f"{plant}.yaml"))
