"""JSON run configs: schema validation, dotted overrides, defaults.

A run config is one JSON document with the sections ``model``, ``train``,
``loss``, ``data``, ``eval``, ``ablation``, ``grad_check`` and the key
``output_dir``.  Unknown keys anywhere are rejected.  Relative data paths
resolve against the directory holding the config file.
"""

from __future__ import annotations

import copy
import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema

from .losses import LossConfig
from .model import PRESETS, ModelConfig
from .skeleton import get_topology
from .synth import SyntheticSpec
from .training import TrainConfig

DEFAULTS = {
    "model": {"preset": "desk"},
    "train": {},
    "loss": {},
    "data": {},
    "eval": {"levels": [0, 1, 3, 5, 10], "repeats": 10, "seed": 0},
    "ablation": {"arms": ["ce", "total"], "train_levels": [5], "test_levels": [0, 10],
                 "repeats": 10, "seeds": [0]},
    "grad_check": {"batch_size": 4, "eps": 1e-5, "threshold": 1e-4},
    "output_dir": "runs",
}


class ConfigError(ValueError):
    def __init__(self, message: str, where: str = ""):
        super().__init__(message)
        self.where = where


@lru_cache(maxsize=None)
def run_schema() -> dict:
    text = resources.files("pegcn").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def synth_schema() -> dict:
    full = run_schema()
    return {"$defs": full["$defs"], "$ref": "#/$defs/synth"}


def _validate(doc, schema, source: str) -> None:
    err = jsonschema.exceptions.best_match(jsonschema.Draft202012Validator(schema).iter_errors(doc))
    if err is not None:
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {err.message}", where)


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}", str(path)) from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}", str(path)) from exc


def parse_override(item: str) -> tuple[list[str], object]:
    """``"train.epochs=5"`` -> ``(["train", "epochs"], 5)``; the value is JSON or a bare string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value", item)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(doc: dict, overrides) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        keys, value = parse_override(item) if isinstance(item, str) else item
        node = doc
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {'.'.join(keys)}: {k} is not a section", ".".join(keys))
        node[keys[-1]] = value
    return doc


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in top.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_run_config(path=None, overrides=()) -> dict:
    """Read, override, validate and default-fill a run config.

    ``path=None`` starts from an empty document.  The result carries the
    config directory under ``"_base"`` for resolving relative paths.
    """
    doc = _read_json(path) if path is not None else {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object", "<root>")
    doc = apply_overrides(doc, overrides)
    _validate(doc, run_schema(), str(path or "<overrides>"))
    cfg = _merge(DEFAULTS, doc)
    cfg["_base"] = str(Path(path).resolve().parent) if path is not None else str(Path.cwd())
    return cfg


def resolve(cfg: dict, p: str) -> Path:
    p = Path(p)
    return p if p.is_absolute() else Path(cfg["_base"]) / p


def load_synth_spec(path, overrides=()) -> SyntheticSpec:
    doc = apply_overrides(_read_json(path), overrides)
    _validate(doc, synth_schema(), str(path))
    return synth_from_dict(doc)


def synth_from_dict(doc: dict) -> SyntheticSpec:
    try:
        spec = SyntheticSpec(**doc)
        spec.motions()
        get_topology(spec.topology)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"synthetic spec: {exc}", "synth") from exc
    return spec


def model_config(cfg: dict, topology: str | None = None, num_classes: int | None = None) -> ModelConfig:
    m = dict(cfg["model"])
    preset = m.pop("preset", "desk")
    if topology is not None:
        if m.setdefault("topology", topology) != topology:
            raise ConfigError(f"model topology {m['topology']!r} does not match data topology {topology!r}",
                              "model.topology")
    if num_classes is not None:
        m.setdefault("num_classes", num_classes)
    try:
        get_topology(m.get("topology", "chain9"))
        return ModelConfig(**{**PRESETS[preset], **m})
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"model: {exc}", "model") from exc


def train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**cfg["train"], loss=LossConfig(**cfg["loss"]))
    except ValueError as exc:
        raise ConfigError(f"train: {exc}", "train") from exc
