"""Experiment files: INI-style ``key = value`` pairs grouped in sections.

::

    [run]
    name = moons45
    seeds = 0,1,2

    [dataset]
    generator = two_moons        ; two_moons | blobs | csv
    rotation_deg = 45

    [config]
    budget_percent = 5
    gamma = 20

    [sweep]
    axis = gamma
    values = 2,10,20,30
    budget_values = 0,1,2,3,4,5
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .data import Dataset, gen_blobs_shift, gen_two_moons_shift, load_csv, split_domains
from .engine import RunConfig, Strategy
from .errors import ConfigError

SWEEP_AXES = ("batch_size", "xi", "predictor_dim", "gamma", "budget")

_DATASET_PARAMS = {
    "two_moons": {
        "n_per_domain": int, "rotation_deg": float, "translation": "floats", "noise_sd": float,
    },
    "blobs": {
        "num_classes": int, "n_per_class": int, "class_spacing": float, "shift_vector": "floats",
        "imbalance": "floats", "cluster_sd": float, "rotation_deg": float,
    },
    "csv": {"path": str, "num_features": int},
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("none", "off", "") else float(text)


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class DatasetSpec:
    generator: str = "two_moons"
    params: dict[str, Any] = field(default_factory=dict)

    def build(self, seed: int, base_dir: Path | None = None) -> tuple[Dataset, Dataset]:
        if self.generator == "two_moons":
            return gen_two_moons_shift(seed=seed, **self.params)
        if self.generator == "blobs":
            return gen_blobs_shift(seed=seed, **self.params)
        if self.generator == "csv":
            path = Path(self.params["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return split_domains(load_csv(path, self.params["num_features"]))
        raise ConfigError(f"unknown generator {self.generator!r}", field="dataset.generator")


@dataclass
class SweepSpec:
    axis: str
    values: tuple
    budget_values: tuple[float, ...] = ()


@dataclass
class ExperimentSpec:
    name: str
    config: RunConfig
    dataset: DatasetSpec
    seeds: tuple[int, ...] = (0,)
    sweep: SweepSpec | None = None
    base_dir: Path | None = None

    def build_data(self, seed: int) -> tuple[Dataset, Dataset]:
        return self.dataset.build(seed, self.base_dir)


def _convert(section: str, key: str, raw: str, kind):
    try:
        if kind == "floats":
            return _floats(raw)
        if kind is bool:
            return _bool(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}", field=f"{section}.{key}") from None


def _config_kinds() -> dict[str, Any]:
    kinds = {}
    for f in dataclasses.fields(RunConfig):
        if f.name == "per_round_quota":
            kinds[f.name] = _ints
        elif f.name == "strategy":
            kinds[f.name] = Strategy
        elif f.type == "float | None":
            kinds[f.name] = _optional_float
        else:
            kinds[f.name] = {"float": float, "int": int, "bool": bool}[f.type]
    return kinds


def parse_run_config(items: dict[str, str], section: str = "config") -> RunConfig:
    kinds = _config_kinds()
    values = {}
    for key, raw in items.items():
        if key not in kinds:
            raise ConfigError(f"[{section}] unknown key {key!r}", field=f"{section}.{key}")
        values[key] = _convert(section, key, raw, kinds[key])
    try:
        cfg = RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {exc}", field=section) from None
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {exc}", field=f"{section}.{exc.field}") from None
    return cfg


def loads(text: str, base_dir: Path | None = None) -> ExperimentSpec:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from None
    unknown = set(parser.sections()) - {"run", "dataset", "config", "sweep"}
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}", field=sorted(unknown)[0])

    run = dict(parser["run"]) if parser.has_section("run") else {}
    name = run.pop("name", "experiment")
    seeds = _convert("run", "seeds", run.pop("seeds", "0"), _ints)
    if not seeds:
        raise ConfigError("[run] seeds must list at least one seed", field="run.seeds")
    if run:
        raise ConfigError(f"[run] unknown key {sorted(run)[0]!r}", field=f"run.{sorted(run)[0]}")

    ds = dict(parser["dataset"]) if parser.has_section("dataset") else {}
    generator = ds.pop("generator", "two_moons")
    if generator not in _DATASET_PARAMS:
        raise ConfigError(f"[dataset] unknown generator {generator!r}", field="dataset.generator")
    kinds = _DATASET_PARAMS[generator]
    params = {}
    for key, raw in ds.items():
        if key not in kinds:
            raise ConfigError(f"[dataset] unknown key {key!r} for {generator}", field=f"dataset.{key}")
        params[key] = _convert("dataset", key, raw, kinds[key])
    if generator == "csv":
        for key in ("path", "num_features"):
            if key not in params:
                raise ConfigError(f"[dataset] csv needs {key}", field=f"dataset.{key}")

    config = parse_run_config(dict(parser["config"]) if parser.has_section("config") else {})

    sweep = None
    if parser.has_section("sweep"):
        sw = dict(parser["sweep"])
        axis = sw.pop("axis", None)
        if axis not in SWEEP_AXES:
            raise ConfigError(f"[sweep] axis must be one of {SWEEP_AXES}, got {axis!r}", field="sweep.axis")
        kind = {"batch_size": _ints, "predictor_dim": _ints, "gamma": _ints}.get(axis, _floats)
        values = _convert("sweep", "values", sw.pop("values", ""), kind)
        budget_values = _convert("sweep", "budget_values", sw.pop("budget_values", ""), _floats)
        if sw:
            raise ConfigError(f"[sweep] unknown key {sorted(sw)[0]!r}", field=f"sweep.{sorted(sw)[0]}")
        sweep = SweepSpec(axis, values, budget_values)

    return ExperimentSpec(name, config, DatasetSpec(generator, params), seeds, sweep, base_dir)


def load(path) -> ExperimentSpec:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return loads(path.read_text(encoding="utf-8"), base_dir=path.parent)
