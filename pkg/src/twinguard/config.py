"""Run configuration: YAML file, environment overrides, defaults.

Any key can be overridden from the environment as
``TWINGUARD_<SECTION>__<KEY>=value``; the value is parsed as YAML, so
``TWINGUARD_REPLAY__RATE=2`` sets an integer and
``TWINGUARD_REPLAY__SCHEDULE_MINUTES='[[10, 20]]'`` a list.
"""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .brain import ThresholdConfig
from .errors import ConfigError
from .mlp import TrainConfig
from .selection import AutoFsConfig, FsMethod

ENV_PREFIX = "TWINGUARD_"

DEFAULTS = {
    "seed": 0,
    "data": {
        "d1": {"path": "mini_d1.csv", "label_column": "Label",
               "label_mapping": {"BENIGN": "NotDDoS", "*": "DDoS"}, "drop_columns": ["Flow ID"]},
        "d2": {"path": "mini_d2.csv", "label_column": "label",
               "label_mapping": {"0": "NotDDoS", "1": "DDoS"}, "drop_columns": []},
        "row_cap": None,
        "keep_fraction": 0.2,
        "ddos_share": 0.6,
        # prepared dataset consumed by `run`; defaults to <out>/prepared.csv
        "prepared": None,
        # optional regime switch: {path: CSV, at_minute: M}
        "drift": None,
    },
    "manifest": {"spec": None, "modules": []},
    "replay": {
        "twins": ["core-1"],
        "schedule_minutes": [[60, 290]],
        "duration_minutes": 330,
        "ticks_per_minute": 60,
        "rate": 1,
    },
    "brain": {
        "thresholds": {"accuracy": 0.9, "precision": 0.9, "recall": 0.9, "f_measure": 0.9},
        "window": 2000,
        "min_window": 200,
        "cooldown": 1000,
        "alarm_length": 5,
        "eval_every": 2000,
        "label_chunk": 1000,
        "ground_truth_metrics": False,
    },
    "autofs": {
        "sample_size": 1000,
        "epsilon_recall": 0.01,
        "methods": [m.value for m in FsMethod],
        "nominal_macs_per_second": 1.0e9,
    },
    "mlp": {"epochs": 300, "batch_size": 32, "learning_rate": 0.01, "dropout_rate": 0.2,
            "early_stop_patience": 20, "validation_fraction": 0.1},
    "bench": {"seeds": 3, "window_rows": 2000},
    "telemetry": {"ndjson": False},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not parts:
            continue
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{key}: cannot parse value {raw!r}: {exc}") from None
    return out


def load_config(path=None, environ=None, **overrides) -> "RunConfig":
    doc = {}
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        base_dir = path.resolve().parent
    merged = _merge(_merge(DEFAULTS, doc), env_overrides(environ))
    merged = _merge(merged, {k: v for k, v in overrides.items() if v is not None})
    unknown = set(merged) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(merged, base_dir)


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path

    def __post_init__(self):
        # validate eagerly so errors surface before any work starts
        self.thresholds()
        self.autofs()
        if self.raw["replay"]["rate"] < 1 or self.raw["replay"]["ticks_per_minute"] < 1:
            raise ConfigError("replay rate and ticks_per_minute must be >= 1")
        if not self.raw["replay"]["twins"]:
            raise ConfigError("replay.twins must name at least one router")

    def __getitem__(self, key):
        return self.raw[key]

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    def path(self, value) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def thresholds(self) -> ThresholdConfig:
        b = self.raw["brain"]
        try:
            return ThresholdConfig(**b["thresholds"], window=b["window"], min_window=b["min_window"],
                                   cooldown=b["cooldown"], alarm_length=b["alarm_length"],
                                   eval_every=b["eval_every"], label_chunk=b["label_chunk"])
        except TypeError as exc:
            raise ConfigError(f"brain thresholds: {exc}") from None

    def autofs(self) -> AutoFsConfig:
        a, m = self.raw["autofs"], self.raw["mlp"]
        try:
            train = TrainConfig(**m)
            methods = tuple(FsMethod(v) for v in a["methods"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"autofs/mlp settings: {exc}") from None
        if a["sample_size"] < 2 or not methods:
            raise ConfigError("autofs needs sample_size >= 2 and at least one method")
        return AutoFsConfig(sample_size=int(a["sample_size"]), epsilon_recall=float(a["epsilon_recall"]),
                            train=train, methods=methods,
                            nominal_macs_per_second=float(a["nominal_macs_per_second"]))

    def as_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def write_config(path, doc) -> None:
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
