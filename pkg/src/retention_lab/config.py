"""Run configuration: flat ``key = value`` files merged under command-line flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from retention_lab.errors import ConfigError
from retention_lab.gbdt import FIXED_PARAMS, TrainConfig
from retention_lab.records import SynthConfig

EXPLAIN_SPLITS = ("test", "train", "all")


@dataclass(frozen=True)
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    cohort: Path | None = None
    model: Path | None = None
    out_dir: Path = Path("report")
    threshold: float = 0.5
    explain_split: str = "test"

    def validate(self) -> None:
        self.synth.validate()
        self.train.validate()
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]")
        if self.explain_split not in EXPLAIN_SPLITS:
            raise ConfigError(f"explain_split must be one of {EXPLAIN_SPLITS}")


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _field_types(cls) -> dict[str, type]:
    # annotations are strings under ``from __future__ import annotations``
    kinds = {"int": int, "float": float, "bool": bool, "str": str, "int | None": int}
    return {f.name: kinds[f.type] for f in fields(cls)}


_TRAIN_KEYS = _field_types(TrainConfig)
# the generic name ``seed`` belongs to training; the generator's seed is ``synth_seed``
_SYNTH_KEYS = {
    "n_students": ("n_students", int),
    "synth_seed": ("seed", int),
    "dropout_base_rate": ("dropout_base_rate", float),
    "noise_scale": ("noise_scale", float),
}
_RUN_KEYS = {
    "cohort": Path,
    "model": Path,
    "out_dir": Path,
    "threshold": float,
    "explain_split": str,
}


def _convert(key: str, raw: str, kind: type, where: str):
    if kind is str:
        text = raw.strip().strip('"').strip("'")
        return text
    try:
        if kind is bool:
            return _parse_bool(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: bad value for {key}: {raw!r}") from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse ``key = value`` lines. ``#`` starts a comment; unknown keys are errors."""
    values: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        where = f"{source}:{lineno}"
        if key in _TRAIN_KEYS:
            kind = _TRAIN_KEYS[key]
            if key == "early_stopping_rounds" and raw.lower() in ("none", ""):
                values[key] = None
                continue
        elif key in _SYNTH_KEYS:
            kind = _SYNTH_KEYS[key][1]
        elif key in _RUN_KEYS:
            kind = _RUN_KEYS[key]
        else:
            raise ConfigError(f"{where}: unknown key {key!r}")
        value = _convert(key, raw, kind, where)
        if key in FIXED_PARAMS and value != FIXED_PARAMS[key]:
            raise ConfigError(f"{where}: {key} only supports {FIXED_PARAMS[key]!r}")
        values[key] = value
    return values


def load_config_file(path: str | os.PathLike) -> dict[str, object]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, str(path))


def build_run_config(values: dict[str, object], base: RunConfig | None = None) -> RunConfig:
    """Overlay parsed ``values`` (config file, then flags) on ``base`` and validate."""
    base = base or RunConfig()
    train_kw = {k: v for k, v in values.items() if k in _TRAIN_KEYS}
    synth_kw = {_SYNTH_KEYS[k][0]: v for k, v in values.items() if k in _SYNTH_KEYS}
    run_kw = {k: v for k, v in values.items() if k in _RUN_KEYS}
    unknown = set(values) - set(_TRAIN_KEYS) - set(_SYNTH_KEYS) - set(_RUN_KEYS)
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    try:
        cfg = replace(
            base,
            train=replace(base.train, **train_kw),
            synth=replace(base.synth, **synth_kw),
            **run_kw,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg
