"""Pipeline configuration: schema, defaults and YAML/JSON loading.

Every section is optional in the file; missing keys take the defaults
below. JSON files are accepted as well since YAML is a superset.

Example
-------
::

    inputs: [data/*.bin]
    f0: null              # Hz; null estimates it from the spectrum
    orders: [2, 30, 2]
    decomposer: {method: rsvd, seed: 0}
    lags: {mode: 3d, beta: 1.5, grid_count: 10}
    clustering: {cutoff: 0.10}
    output: out
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Optional, Tuple

import re

import yaml

from .stab import HardCriteria, SoftCriteria

__all__ = [
    "ConfigError",
    "Preprocess",
    "Decomposer",
    "Lags",
    "Clustering",
    "Tracking",
    "SynthSettings",
    "BenchSettings",
    "RankScanSettings",
    "PipelineConfig",
    "load_config",
    "config_from_dict",
    "config_hash",
    "SOFT_2D",
    "SOFT_3D",
]

# soft-criteria defaults for order-only and order/lag stability checks
SOFT_2D = SoftCriteria(0.02, 0.02, 0.05)
SOFT_3D = SoftCriteria(0.01, 0.03, 0.02)


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-6" as a string; accept exponents without a dot
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.?[0-9_]*(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class Preprocess:
    detrend: bool = True
    target_fs: Optional[float] = None


@dataclass(frozen=True)
class Decomposer:
    method: str = "rsvd"
    seed: int = 0
    rank_percent: Optional[float] = None
    rank: Optional[int] = None


@dataclass(frozen=True)
class Lags:
    mode: str = "3d"  # "fixed" or "3d"
    j_b: Optional[int] = None  # fixed mode only; None follows the f0 rule
    beta: float = 1.5
    grid_count: int = 10


@dataclass(frozen=True)
class Clustering:
    cutoff: float = 0.10
    min_size: Optional[int] = None
    min_size_fraction: float = 0.2
    fuzzifier: float = 2.0
    tol: float = 1e-6
    max_iter: int = 300
    seed: int = 0


@dataclass(frozen=True)
class Tracking:
    df_max: float = 0.05
    macd_max: float = 0.15
    reference: Optional[str] = None  # cluster JSON; None uses the first session


@dataclass(frozen=True)
class SynthSettings:
    snr_db: Tuple[float, ...] = (10.0, 15.0, 20.0, 25.0)
    seeds: Tuple[int, ...] = (0,)
    duration: float = 300.0
    fs: float = 200.0
    n: int = 10
    format: str = "bin"


@dataclass(frozen=True)
class BenchSettings:
    sizes: Tuple[int, ...] = (1000, 2000, 4000)
    rank_percent: Optional[float] = None
    repeats: int = 1
    memory: bool = True


@dataclass(frozen=True)
class RankScanSettings:
    orders: Tuple[int, int, int] = (10, 100, 2)
    j_b: Tuple[int, ...] = (100, 150, 200, 250)
    percents: Tuple[float, ...] = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0)
    fractions: Tuple[float, ...] = (0.6,)  # multiples of the advisory percentage
    df_max: float = 0.01
    dxi_max: float = 0.01
    macd_max: float = 0.02


@dataclass(frozen=True)
class PipelineConfig:
    inputs: Tuple[str, ...] = ()
    preprocess: Preprocess = Preprocess()
    f0: Optional[float] = None
    orders: Tuple[int, int, int] = (2, 30, 2)
    decomposer: Decomposer = Decomposer()
    lags: Lags = Lags()
    hard: HardCriteria = HardCriteria()
    soft: Optional[SoftCriteria] = None  # None picks SOFT_2D or SOFT_3D by lag mode
    clustering: Clustering = Clustering()
    tracking: Tracking = Tracking()
    synth: SynthSettings = SynthSettings()
    bench: BenchSettings = BenchSettings()
    rankscan: RankScanSettings = RankScanSettings()
    output: str = "out"

    def __post_init__(self):
        lo, hi, step = self.orders
        if not (2 <= lo <= hi and step >= 2 and lo % 2 == 0 and step % 2 == 0):
            raise ConfigError(f"orders must be [N_min, N_max, step] with even values, got {list(self.orders)}")
        d = self.decomposer
        if d.method not in ("svd", "rsvd"):
            raise ConfigError(f"decomposer.method must be svd or rsvd, got {d.method!r}")
        if d.rank is not None and d.rank < hi:
            raise ConfigError(f"decomposer.rank {d.rank} is below the largest order {hi}")
        if d.rank_percent is not None and not 0 < d.rank_percent <= 100:
            raise ConfigError("decomposer.rank_percent must lie in (0, 100]")
        if self.lags.mode not in ("fixed", "3d"):
            raise ConfigError(f"lags.mode must be fixed or 3d, got {self.lags.mode!r}")
        if self.lags.beta < 1 or self.lags.grid_count < 1:
            raise ConfigError("lags.beta must be >= 1 and lags.grid_count >= 1")
        if self.lags.j_b is not None and self.lags.j_b < 1:
            raise ConfigError("lags.j_b must be positive")
        if self.f0 is not None and self.f0 <= 0:
            raise ConfigError("f0 must be positive")
        c = self.clustering
        if c.cutoff <= 0 or c.fuzzifier <= 1 or c.tol <= 0 or c.max_iter < 1:
            raise ConfigError("clustering needs cutoff > 0, fuzzifier > 1, tol > 0, max_iter >= 1")
        if not 0 < self.tracking.df_max < 1 or not 0 < self.tracking.macd_max < 1:
            raise ConfigError("tracking thresholds must lie in (0, 1)")
        if self.synth.duration <= 0:
            raise ConfigError("synth.duration must be positive")

    @property
    def soft_criteria(self) -> SoftCriteria:
        if self.soft is not None:
            return self.soft
        return SOFT_3D if self.lags.mode == "3d" else SOFT_2D

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **kw)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, doc, path: str):
    if doc is None:
        return cls()
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = set(doc) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path or 'config'}: {', '.join(sorted(unknown))}")
    kw = {}
    for name, value in doc.items():
        default = getattr(cls(), name) if name != "soft" else SoftCriteria()
        sub = f"{path}.{name}" if path else name
        if is_dataclass(default) and value is not None:
            kw[name] = _build(type(default), value, sub)
        elif isinstance(default, tuple) and value is not None:
            if isinstance(value, str):
                value = [value]
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{sub} must be a list")
            kw[name] = tuple(value)
        else:
            kw[name] = value
    try:
        return cls(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_from_dict(doc: Optional[dict]) -> PipelineConfig:
    """Validated config from a parsed document (``None`` gives the defaults)."""
    return _build(PipelineConfig, doc or {}, "")


def load_config(path) -> PipelineConfig:
    """Read a YAML or JSON config file, or the config inside a run manifest."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if isinstance(doc, dict) and "config_hash" in doc and "config" in doc:
        doc = doc["config"]  # a run manifest replays its embedded config
    return config_from_dict(doc)


def config_hash(cfg: PipelineConfig) -> str:
    """SHA-256 of the canonical JSON form."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
