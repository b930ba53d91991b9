"""Flat dotted-key run configuration and manifest rendering.

A run file is plain text, one ``key = value`` per line with ``#`` comments.
Every run directory receives a manifest in the same format with all
defaults materialized, so a run can be reproduced by pointing ``train
--config`` at the manifest it wrote.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

from .data import CommentSchema, sample_dataset_path
from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig
from .data import SplitSpec

__all__ = ["RunSpec", "parse_config_text", "load_run_spec", "resolve_run_spec"]


def _parse_bool(s: str) -> bool:
    norm = s.strip().lower()
    if norm in ("true", "yes", "1"):
        return True
    if norm in ("false", "no", "0"):
        return False
    raise ValueError(f"not a boolean: '{s}'")


def _parse_elements(s: str) -> tuple[str, ...]:
    items = tuple(tok.strip() for tok in s.split(",") if tok.strip())
    if not items:
        raise ValueError("empty element list")
    return items


# key -> (parser, default in canonical string form)
_KEYS: dict[str, tuple[Callable[[str], Any], str]] = {
    "dataset.path": (str, ""),
    "dataset.format": (str, "auto"),
    "dataset.schema": (str, ""),
    "dataset.elements": (_parse_elements, "H,C,N,O,F,S,Cl"),
    "target": (str, ""),
    "split.train": (float, "0.8"),
    "split.val": (float, "0.1"),
    "split.test": (float, "0.1"),
    "split.seed": (int, "0"),
    "model.atom_dim": (int, "50"),
    "model.count_dim": (int, "50"),
    "model.hidden_dim": (int, "100"),
    "model.mlp_dim": (int, "100"),
    "model.steps": (int, "5"),
    "model.use_atom_embedding": (_parse_bool, "true"),
    "model.use_count_feature": (_parse_bool, "true"),
    "model.use_distance_feature": (_parse_bool, "true"),
    "model.distance_epsilon": (float, "1e-06"),
    "train.lr0": (float, "0.03"),
    "train.decay": (float, "0.01"),
    "train.epochs": (int, "500"),
    "train.batch_size": (int, "10"),
    "train.clip_norm": (float, "10.0"),
    "train.seed": (int, "0"),
    "run.runs": (int, "1"),
    "run.threads": (int, "1"),
    "run.resplit": (_parse_bool, "false"),
}

_VALID_FORMATS = ("auto", "xyz", "tabular")


def parse_config_text(text: str) -> dict[str, str]:
    """Raw ``key -> value-string`` pairs from config text; later lines win."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got '{line.strip()}'")
        key, value = (part.strip() for part in body.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"config line {lineno}: unknown key '{key}' "
                              f"(known keys: {', '.join(sorted(_KEYS))})")
        raw[key] = value
    return raw


def _canonical(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(value)
    return str(value)


@dataclass(frozen=True)
class RunSpec:
    """Fully resolved run configuration with typed accessors."""

    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def model_config(self) -> ModelConfig:
        v = self.values
        return ModelConfig(atom_dim=v["model.atom_dim"], count_dim=v["model.count_dim"],
                           hidden_dim=v["model.hidden_dim"], mlp_dim=v["model.mlp_dim"],
                           steps=v["model.steps"],
                           use_atom_embedding=v["model.use_atom_embedding"],
                           use_count_feature=v["model.use_count_feature"],
                           use_distance_feature=v["model.use_distance_feature"],
                           distance_epsilon=v["model.distance_epsilon"])

    def train_config(self, seed_offset: int = 0) -> TrainConfig:
        v = self.values
        return TrainConfig(target_property=v["target"], lr0=v["train.lr0"],
                           decay=v["train.decay"], epochs=v["train.epochs"],
                           batch_size=v["train.batch_size"], clip_norm=v["train.clip_norm"],
                           seed=v["train.seed"] + seed_offset, model=self.model_config())

    def split_spec(self, seed_offset: int = 0) -> SplitSpec:
        v = self.values
        return SplitSpec(train=v["split.train"], val=v["split.val"], test=v["split.test"],
                         seed=v["split.seed"] + seed_offset)

    def schema(self) -> CommentSchema | None:
        spec = self.values["dataset.schema"]
        if not spec:
            return None
        if spec.startswith("builtin:"):
            try:
                return CommentSchema.builtin(spec.split(":", 1)[1])
            except Exception as err:
                raise ConfigError(f"dataset.schema: {err}") from err
        path = Path(spec)
        if not path.is_file():
            raise ConfigError(f"dataset.schema: no such file: {spec}")
        return CommentSchema.from_file(path)

    def dataset_path(self) -> Path:
        spec = self.values["dataset.path"]
        if not spec:
            raise ConfigError("dataset.path is required")
        if spec == "builtin:sample10":
            return sample_dataset_path()
        return Path(spec)

    def manifest_text(self) -> str:
        lines = [f"{key} = {_canonical(self.values[key])}" for key in sorted(self.values)]
        return "\n".join(lines) + "\n"


def resolve_run_spec(raw: dict[str, str], overrides: Sequence[str] = ()) -> RunSpec:
    """Defaults overlaid with file values and then ``key=value`` overrides."""
    merged = {key: default for key, (_, default) in _KEYS.items()}
    merged.update(raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"unknown config key '{key}' "
                              f"(known keys: {', '.join(sorted(_KEYS))})")
        merged[key] = value

    typed: dict[str, Any] = {}
    for key, raw_value in merged.items():
        parser, _ = _KEYS[key]
        if isinstance(raw_value, str):
            try:
                typed[key] = parser(raw_value)
            except ValueError as err:
                raise ConfigError(f"config key '{key}': {err}") from err
        else:
            typed[key] = raw_value
    if typed["dataset.format"] not in _VALID_FORMATS:
        raise ConfigError(f"dataset.format must be one of {_VALID_FORMATS}, "
                          f"got '{typed['dataset.format']}'")
    # keep stored paths absolute so a manifest reproduces the run from anywhere
    path = typed["dataset.path"]
    if path and not path.startswith("builtin:"):
        typed["dataset.path"] = str(Path(path).absolute())
    return RunSpec(values=typed)


def load_run_spec(path, overrides: Sequence[str] = ()) -> RunSpec:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return resolve_run_spec(parse_config_text(path.read_text(encoding="utf-8")), overrides)
