"""Pipeline configuration with layered precedence.

Command-line flags override environment variables, which override the JSON
config file, which overrides built-in defaults. Relative paths in a config
file resolve against the file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .embed import EMBED_URL_ENV
from .judge import JUDGE_URL_ENV, JudgeThresholds
from .retrieve import BeamConfig, RewardWeights
from .train import TrainHyper

PATH_KEYS = ("corpus", "rules", "classifications", "graph", "policy", "queries", "qrels", "run", "paths")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    paths: dict[str, Path] = field(default_factory=dict)
    beam: BeamConfig = BeamConfig()
    weights: RewardWeights = RewardWeights()
    train: TrainHyper = TrainHyper()
    judge: JudgeThresholds = JudgeThresholds()
    seed: int = 0
    embed_url: str | None = None
    judge_url: str | None = None

    @property
    def hyper(self) -> TrainHyper:
        return replace(self.train, seed=self.seed)

    def path(self, key: str) -> Path | None:
        return self.paths.get(key)


def _section(cls, data, name):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from None


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = path.resolve().parent
    for key in PATH_KEYS:
        if key in data and data[key] is not None:
            p = Path(data[key])
            data[key] = p if p.is_absolute() else base / p
    return data


def resolve_config(
    flags: dict,
    config_path: str | Path | None = None,
    environ: dict | None = None,
) -> PipelineConfig:
    """Merge ``flags`` (None means unset), environment and config file."""
    environ = os.environ if environ is None else environ
    file_data = load_config_file(config_path) if config_path else {}

    allowed = set(PATH_KEYS) | {"beam", "weights", "train", "judge", "seed", "embed_url", "judge_url"}
    unknown = set(file_data) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s): {sorted(unknown)}")

    def pick(key, env_name=None):
        if flags.get(key) is not None:
            return flags[key]
        if env_name and environ.get(env_name):
            return environ[env_name]
        return file_data.get(key)

    paths = {}
    for key in PATH_KEYS:
        value = pick(key)
        if value is not None:
            paths[key] = Path(value)

    sections = {}
    for name, cls in (("beam", BeamConfig), ("weights", RewardWeights), ("train", TrainHyper), ("judge", JudgeThresholds)):
        merged = dict(file_data.get(name) or {})
        merged.update({k: v for k, v in (flags.get(name) or {}).items() if v is not None})
        sections[name] = _section(cls, merged, name)

    seed = pick("seed")
    try:
        seed = int(seed) if seed is not None else 0
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {seed!r}") from None

    return PipelineConfig(
        paths=paths,
        seed=seed,
        embed_url=pick("embed_url", EMBED_URL_ENV),
        judge_url=pick("judge_url", JUDGE_URL_ENV),
        **sections,
    )
