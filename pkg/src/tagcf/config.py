"""TOML run configuration.

Sections mirror the dataclass field names::

    [model]      # ModelConfig
    [train]      # TrainConfig
    [fusion]     # tau_min, tau_max, oracle ("jaccard" | "exact" | "nli"), threshold, nli_url
    [extraction] # ChatClientConfig fields plus "domain"
    [data]       # kcore, split ratios, input paths
    [sweep]      # seeds
"""

from __future__ import annotations

import dataclasses
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .argc import ModelConfig
from .exceptions import ConfigError
from .training import TrainConfig


@dataclass
class FusionConfig:
    tau_min: float = 25
    tau_max: float = 5000
    oracle: str = "jaccard"
    threshold: float = 0.5
    nli_url: str | None = None

    def __post_init__(self):
        if self.oracle not in ("jaccard", "exact", "nli"):
            raise ConfigError(f"unknown fusion oracle {self.oracle!r}")
        if self.oracle == "nli" and not self.nli_url:
            raise ConfigError("fusion.oracle = 'nli' needs fusion.nli_url")

    def make_oracle(self):
        from .attributes import ExactMatchOracle, RemoteNLIOracle, TokenJaccardOracle

        if self.oracle == "exact":
            return ExactMatchOracle()
        if self.oracle == "nli":
            return RemoteNLIOracle(self.nli_url, threshold=self.threshold)
        return TokenJaccardOracle(self.threshold)


@dataclass
class DataConfig:
    interactions: str | None = None
    reviews: str | None = None
    items: str | None = None
    kcore: int = 0
    split: tuple = (3, 1, 1)


@dataclass
class ExtractionSettings:
    base_url: str | None = None
    model_name: str | None = None
    max_concurrent_requests: int = 8
    max_attempts: int = 3
    backoff_base: float = 1.0
    timeout: float = 60.0
    temperature: float = 0.0
    domain: str = "office products"


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    extraction: ExtractionSettings = field(default_factory=ExtractionSettings)
    data: DataConfig = field(default_factory=DataConfig)
    seeds: tuple = (0, 1, 2)

    def to_dict(self) -> dict:
        return {
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "fusion": dataclasses.asdict(self.fusion),
            "extraction": dataclasses.asdict(self.extraction),
            "data": {k: list(v) if isinstance(v, tuple) else v
                     for k, v in dataclasses.asdict(self.data).items()},
            "sweep": {"seeds": list(self.seeds)},
        }


def _build(cls, section, values):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"[{section}] has unknown keys: {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "fusion": FusionConfig,
             "extraction": ExtractionSettings, "data": DataConfig}


def config_from_dict(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - set(_SECTIONS) - {"sweep"})
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    parts = {name: _build(cls, name, dict(raw.get(name, {}))) for name, cls in _SECTIONS.items()}
    if "split" in raw.get("data", {}):
        parts["data"].split = tuple(parts["data"].split)
    seeds = tuple(int(s) for s in raw.get("sweep", {}).get("seeds", (0, 1, 2)))
    if not seeds:
        raise ConfigError("[sweep] seeds must not be empty")
    return RunConfig(seeds=seeds, **parts)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a TOML file (or defaults when ``path`` is None) and apply overrides.

    ``overrides`` maps ``"section.key"`` to a value and wins over the file.
    """
    raw: dict = {}
    if path is not None:
        try:
            with open(Path(path), "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        raw.setdefault(section, {})[name] = value
    return config_from_dict(raw)
