"""Experiment configuration: a JSON object with flat dotted keys.

Nested objects are accepted and flattened (``{"hp": {"lr": 0.1}}`` is the
same as ``{"hp.lr": 0.1}``). Unknown keys and wrongly typed values are
rejected before anything is computed. See ``SCHEMA`` for every key.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import (
    LabeledDataset,
    TaskSequence,
    gen_permuted_tasks,
    gen_split_tasks,
    gen_synthetic,
    gen_synthetic_tasks,
    load_idx,
)
from .errors import ConfigError
from .losses import MarginConfig
from .trainer import HyperParams, LossMode

_HP = HyperParams()

# key -> (type, default); a default of ... means required
SCHEMA: dict[str, tuple[type, object]] = {
    "run_label": (str, "run"),
    "out_dir": (str, "runs/run"),
    "data.kind": (str, ...),
    "data.source": (str, "synthetic"),
    "data.tasks": (int, 1),
    "data.num_classes": (int, 10),
    "data.dim": (int, 64),
    "data.train_per_class": (int, 20),
    "data.test_per_class": (int, 10),
    "data.spread": (float, 0.1),
    "data.seed": (int, 0),
    "data.classes_per_task": (int, 5),
    "data.sequential_split": (bool, False),
    "data.train_images": (str, None),
    "data.train_labels": (str, None),
    "data.test_images": (str, None),
    "data.test_labels": (str, None),
    "data.max_train": (int, None),
    "data.max_test": (int, None),
    "model.hidden": (list, [256, 256]),
    "hp.m_c": (float, 0.01),
    "hp.m_t": (float, 0.1),
    "hp.s": (float, 32.0),
    "hp.lr": (float, _HP.lr),
    "hp.batch_size": (int, _HP.batch_size),
    "hp.ref_batch_size": (int, None),
    "hp.quota": (int, _HP.quota),
    "hp.epochs_per_task": (int, _HP.epochs_per_task),
    "hp.use_ed": (bool, _HP.use_ed),
    "hp.loss_mode": (str, _HP.loss_mode.value),
    "hp.seed": (int, _HP.seed),
    "hp.lca_beta": (int, _HP.lca_beta),
}

DATA_KINDS = ("synthetic", "permuted", "split")
DATA_SOURCES = ("synthetic", "idx")


@dataclass
class DataSpec:
    kind: str
    source: str = "synthetic"
    tasks: int = 1
    num_classes: int = 10
    dim: int = 64
    train_per_class: int = 20
    test_per_class: int = 10
    spread: float = 0.1
    seed: int = 0
    classes_per_task: int = 5
    sequential_split: bool = False
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    max_train: int | None = None
    max_test: int | None = None


@dataclass
class ExperimentConfig:
    data: DataSpec
    hp: HyperParams
    hidden: list[int] = field(default_factory=lambda: [256, 256])
    out_dir: str = "runs/run"
    run_label: str = "run"
    flat: dict = field(default_factory=dict)  # validated key/value view, for manifests


def flatten(obj: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key: str, value, typ):
    if value is None:
        return None
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, typ):
        raise ConfigError(f"{key}: expected {typ.__name__}, got {value!r}")
    return value


def from_dict(raw: dict) -> ExperimentConfig:
    flat = flatten(raw)
    unknown = sorted(set(flat) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {}
    for key, (typ, default) in SCHEMA.items():
        if key in flat:
            values[key] = _coerce(key, flat[key], typ)
        elif default is ...:
            raise ConfigError(f"{key}: required")
        else:
            values[key] = default

    if values["data.kind"] not in DATA_KINDS:
        raise ConfigError(f"data.kind: must be one of {DATA_KINDS}, got {values['data.kind']!r}")
    if values["data.source"] not in DATA_SOURCES:
        raise ConfigError(f"data.source: must be one of {DATA_SOURCES}")
    if values["data.source"] == "idx":
        for key in ("data.train_images", "data.train_labels", "data.test_images", "data.test_labels"):
            if not values[key]:
                raise ConfigError(f"{key}: required when data.source is idx")
    for key in ("data.tasks", "data.num_classes", "data.dim", "data.train_per_class",
                "data.test_per_class", "data.classes_per_task"):
        if values[key] < 1:
            raise ConfigError(f"{key}: must be >= 1")
    if values["data.spread"] < 0:
        raise ConfigError("data.spread: must be >= 0")
    hidden = values["model.hidden"]
    if not hidden or not all(isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in hidden):
        raise ConfigError("model.hidden: must be a non-empty list of positive integers")
    if values["hp.loss_mode"] not in {m.value for m in LossMode}:
        raise ConfigError(f"hp.loss_mode: must be one of {[m.value for m in LossMode]}")

    try:
        margin = MarginConfig(values["hp.m_c"], values["hp.m_t"], values["hp.s"])
    except ConfigError as exc:
        raise ConfigError(f"hp.m_c/hp.m_t/hp.s: {exc}") from None
    try:
        hp = HyperParams(
            margin=margin,
            lr=values["hp.lr"],
            batch_size=values["hp.batch_size"],
            ref_batch_size=values["hp.ref_batch_size"],
            quota=values["hp.quota"],
            epochs_per_task=values["hp.epochs_per_task"],
            use_ed=values["hp.use_ed"],
            loss_mode=values["hp.loss_mode"],
            seed=values["hp.seed"],
            lca_beta=values["hp.lca_beta"],
        )
    except ConfigError as exc:
        raise ConfigError(f"hp: {exc}") from None
    data = DataSpec(**{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("data.")})
    return ExperimentConfig(data, hp, list(hidden), values["out_dir"], values["run_label"], values)


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(raw)


def _subsample(ds: LabeledDataset, limit: int | None, seed) -> LabeledDataset:
    if limit is None or limit >= len(ds):
        return ds
    idx = np.sort(np.random.default_rng(seed).choice(len(ds), size=limit, replace=False))
    return LabeledDataset(ds.inputs[idx], ds.labels[idx], ds.num_classes, ds.split)


def base_datasets(spec: DataSpec) -> tuple[LabeledDataset, LabeledDataset]:
    if spec.source == "idx":
        train = load_idx(spec.train_images, spec.train_labels, spec.num_classes, "train")
        test = load_idx(spec.test_images, spec.test_labels, spec.num_classes, "test")
        return (_subsample(train, spec.max_train, [spec.seed, 0]),
                _subsample(test, spec.max_test, [spec.seed, 1]))
    return gen_synthetic(spec.num_classes, spec.dim, spec.train_per_class, spec.spread,
                         spec.seed, spec.test_per_class)


def build_tasks(spec: DataSpec) -> TaskSequence:
    if spec.kind == "synthetic":
        if spec.source != "synthetic":
            raise ConfigError("data.kind synthetic needs data.source synthetic")
        return gen_synthetic_tasks(spec.tasks, spec.num_classes, spec.dim, spec.train_per_class,
                                   spec.spread, spec.seed, spec.test_per_class)
    base = base_datasets(spec)
    if spec.kind == "permuted":
        return gen_permuted_tasks(base, spec.tasks, spec.seed)
    return gen_split_tasks(base, spec.classes_per_task, spec.seed, spec.sequential_split)
