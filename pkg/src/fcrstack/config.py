"""Experiment configuration: one TOML file, validated as a whole before any run."""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .agent import TrainConfig
from .bidding import MonteCarloPlan
from .core import BatteryParams, FcrConfig
from .data import OUParams, PriceProfile
from .env import EnvConfig, RewardConfig
from .heuristic import HeuristicConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataPaths:
    dir: str = "data"
    frequency: str = "frequency.csv"
    settlement: str = "imbalance_settlement.csv"
    indicator: str = "imbalance_indicator.csv"
    fcr: str = "fcr_prices.csv"

    def resolve(self, base: Path, override_dir=None) -> dict[str, Path]:
        root = Path(override_dir) if override_dir else base / self.dir
        out = {}
        for key in ("frequency", "settlement", "indicator", "fcr"):
            p = Path(getattr(self, key))
            out[key] = p if p.is_absolute() else root / p
        return out


@dataclass(frozen=True)
class SynthSpec:
    start: str = "2022-01-01"
    days: int = 2

    def __post_init__(self):
        if self.days < 1:
            raise ValueError("synth.days must be at least 1")


@dataclass(frozen=True)
class Stage1Options:
    workers: int = 1

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("stage1.workers must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs"
    battery: BatteryParams = BatteryParams()
    fcr: FcrConfig = FcrConfig()
    heuristic: HeuristicConfig = HeuristicConfig()
    monte_carlo: MonteCarloPlan = MonteCarloPlan()
    reward: RewardConfig = RewardConfig()
    train: TrainConfig = TrainConfig()
    env: EnvConfig = EnvConfig()
    data: DataPaths = DataPaths()
    synth: SynthSpec = SynthSpec()
    ou: OUParams = OUParams()
    prices: PriceProfile = PriceProfile()
    stage1: Stage1Options = Stage1Options()
    base_dir: Path = field(default=Path("."), compare=False)

    def data_paths(self, override_dir=None) -> dict[str, Path]:
        return self.data.resolve(self.base_dir, override_dir)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Replace the global seed and every per-section seed derived from it."""
        return dataclasses.replace(
            self,
            seed=seed,
            monte_carlo=dataclasses.replace(self.monte_carlo, seed=seed),
            train=dataclasses.replace(self.train, seed=seed),
        )


SECTIONS = {
    "battery": BatteryParams,
    "fcr": FcrConfig,
    "heuristic": HeuristicConfig,
    "monte_carlo": MonteCarloPlan,
    "reward": RewardConfig,
    "train": TrainConfig,
    "env": EnvConfig,
    "data": DataPaths,
    "synth": SynthSpec,
    "ou": OUParams,
    "prices": PriceProfile,
    "stage1": Stage1Options,
}
TOP_LEVEL = {"seed": int, "output_dir": str}


def _coerce(value: Any, default: Any, where: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{where}: unsupported setting")


def _build(cls, raw: dict, section: str, inherited_seed: int | None):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    defaults = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {', '.join(unknown)}; allowed: {', '.join(sorted(names))}")
    kwargs = {k: _coerce(v, getattr(defaults, k), f"{section}.{k}") for k, v in raw.items()}
    if "seed" in names and "seed" not in kwargs and inherited_seed is not None:
        kwargs["seed"] = inherited_seed
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def config_from_dict(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(SECTIONS) - set(TOP_LEVEL))
    if unknown:
        raise ConfigError(
            f"unknown top-level key(s) {', '.join(unknown)}; "
            f"allowed: {', '.join(sorted([*TOP_LEVEL, *SECTIONS]))}"
        )
    top = {}
    for key, typ in TOP_LEVEL.items():
        if key in raw:
            top[key] = _coerce(raw[key], typ(), key)
    seed = top.get("seed", 0)
    sections = {name: _build(cls, raw.get(name, {}), name, seed) for name, cls in SECTIONS.items()}
    cfg = ExperimentConfig(**top, **sections, base_dir=base_dir)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ExperimentConfig) -> None:
    top_bid = int(cfg.battery.p_nom) - 1 if cfg.battery.p_nom == int(cfg.battery.p_nom) else int(cfg.battery.p_nom)
    reserve = top_bid * cfg.fcr.t_res_h
    if reserve > cfg.battery.e_cap / 2:
        raise ConfigError(
            f"largest candidate bid {top_bid} MW needs {reserve:.3g} MWh of reserve each way, "
            f"more than half of e_cap={cfg.battery.e_cap:g} MWh"
        )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        raw = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, path.parent)
