"""Runtime configuration: TOML file + environment overrides.

Defaults mirror the reference training recipe where it states values
(lr 1e-4, weight decay 1e-5, 50 epochs, blend-region count 3, lambda 1.0,
32-frame video sampling); everything else is a local decision documented
next to the field.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import tomli

from .kfd import KfdConfig

ENV_CONFIG = "FORGELAB_CONFIG"
ENV_LLM_ENDPOINT = "FORGELAB_LLM_ENDPOINT"


class ConfigError(Exception):
    pass


@dataclass
class PathsConfig:
    data: str = "data"                 # decision: relative workspace layout
    checkpoints: str = "checkpoints"   # decision
    cache: str = "cache"               # decision


@dataclass
class FplDims:
    n1: int = 4        # decision: E_base rows at desk scale
    n2: int = 4        # decision: E_loc rows
    n3: int = 4        # decision: E_cons rows
    n_v: int = 4       # decision: visual rows
    c_emb: int = 64    # decision: toy LM width


@dataclass
class TrainConfig:
    lr: float = 1e-4           # reference recipe
    weight_decay: float = 1e-5 # reference recipe
    epochs: int = 50           # reference recipe
    kfd_batch: int = 16        # reference recipe (KFD batch size)
    llm_batch: int = 1         # reference recipe (tuning batch size)
    lam: float = 1.0           # reference recipe (localization loss weight)
    n_regions: int = 3         # reference recipe (max blended regions)
    kfd_overfit_lr: float = 2e-3   # decision: lr for the desk-scale overfit run
    llm_tune_lr: float = 5e-3      # decision: lr for desk-scale prompt tuning


@dataclass
class LlmConfigSection:
    endpoint: str = ""         # decision: empty = use the built-in toy LM
    timeout: float = 10.0      # decision
    model: str = "forgelab-mock"  # decision


@dataclass
class ServeConfig:
    host: str = "127.0.0.1"    # decision
    port: int = 8763           # decision


@dataclass
class EvalConfig:
    frames_per_video: int = 32  # reference protocol


@dataclass
class Config:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    kfd: KfdConfig = field(default_factory=KfdConfig)
    fpl: FplDims = field(default_factory=FplDims)
    train: TrainConfig = field(default_factory=TrainConfig)
    llm: LlmConfigSection = field(default_factory=LlmConfigSection)
    serve: ServeConfig = field(default_factory=ServeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _apply_section(obj, doc: dict, path: str) -> None:
    known = {f.name: f for f in fields(obj)}
    for key, value in doc.items():
        if key not in known:
            raise ConfigError(f"unknown config key: {path}{key}")
        current = getattr(obj, key)
        if is_dataclass(current):
            if not isinstance(value, dict):
                raise ConfigError(f"{path}{key} must be a table")
            _apply_section(current, value, f"{path}{key}.")
        else:
            if isinstance(current, tuple) and isinstance(value, list):
                value = tuple(value)
            if isinstance(current, float) and isinstance(value, int):
                value = float(value)
            if type(value) is not type(current):
                raise ConfigError(
                    f"{path}{key}: expected {type(current).__name__}, "
                    f"got {type(value).__name__}")
            setattr(obj, key, value)


def load_config(path: str | os.PathLike | None = None) -> Config:
    """Build a Config from defaults, an optional TOML file, and env vars.

    Precedence: defaults < TOML file (explicit path, else $FORGELAB_CONFIG)
    < $FORGELAB_LLM_ENDPOINT.
    """
    cfg = Config()
    if path is None:
        path = os.environ.get(ENV_CONFIG) or None
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = tomli.loads(p.read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as err:
            raise ConfigError(f"invalid TOML in {p}: {err}") from err
        _apply_section(cfg, doc, "")
    env_endpoint = os.environ.get(ENV_LLM_ENDPOINT)
    if env_endpoint:
        cfg.llm.endpoint = env_endpoint
    return cfg


def config_to_dict(cfg: Config) -> dict:
    return asdict(cfg)
