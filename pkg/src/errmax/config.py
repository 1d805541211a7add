"""Run configuration: a strict JSON schema covering every pipeline stage.

Unknown keys anywhere in the file are rejected so typos cannot silently fall
back to defaults. All randomness flows from the four named seeds here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .loop import RoundConfig
from .mining import AscentConfig
from .mlp import TrainConfig
from .oracles import BARRIER_DOMAIN, FdConfig, OracleSpec, make_barrier_oracle, make_synthetic_oracle

_SYNTHETIC_KINDS = ("quadratic-bowl", "multimodal-sine", "constant")
BARRIER_KIND = "barrier-up-out-call"


@dataclass
class OracleSection:
    kind: str = BARRIER_KIND
    domain: list | None = None
    params: dict = field(default_factory=dict)
    spot: float = 100.0
    fd: FdConfig = field(default_factory=FdConfig)


@dataclass
class DataSection:
    n_train: int = 20000
    n_test: int = 2000
    seed_train: int = 1
    seed_test: int = 2


@dataclass
class ModelSection:
    layer_dims: list[int] = field(default_factory=lambda: [5, 128, 128, 128, 1])
    init_seed: int = 7


@dataclass
class RunConfig:
    oracle: OracleSection = field(default_factory=OracleSection)
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_seed: int = 11
    mine: AscentConfig = field(default_factory=AscentConfig)
    loop: RoundConfig = field(default_factory=RoundConfig)
    alphas: list[float] = field(default_factory=lambda: [1.0, 0.99, 0.95, 0.9])
    output_dir: str = "out"
    threads: int = 0  # 0 = hardware parallelism

    def make_oracle(self) -> OracleSpec:
        if self.oracle.kind == BARRIER_KIND:
            dom = None if self.oracle.domain is None else np.asarray(self.oracle.domain)
            return make_barrier_oracle(domain=dom, spot=self.oracle.spot)
        if self.oracle.kind in _SYNTHETIC_KINDS:
            return make_synthetic_oracle(self.oracle.kind, **self.oracle.params)
        raise ConfigError(f"unknown oracle kind: {self.oracle.kind!r}")

    def validate(self) -> None:
        try:
            spec = self.make_oracle()
            self.train.validate()
            self.mine.validate()
            self.loop.validate()
            self.oracle.fd.validate()
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(str(exc)) from exc
        if self.data.n_train < 1 or self.data.n_test < 1:
            raise ConfigError("data sizes must be >= 1")
        for name in ("seed_train", "seed_test"):
            if getattr(self.data, name) < 0:
                raise ConfigError(f"data.{name} must be non-negative")
        if self.model.init_seed < 0 or self.train_seed < 0:
            raise ConfigError("seeds must be non-negative")
        dims = self.model.layer_dims
        if len(dims) < 2 or dims[-1] != 1 or any(d < 1 for d in dims):
            raise ConfigError(f"model.layer_dims malformed: {dims}")
        if dims[0] != spec.dim:
            raise ConfigError(
                f"model input dimension {dims[0]} does not match oracle dimension {spec.dim}"
            )
        for a in self.alphas:
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"alpha {a} outside [0, 1]")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")

    def to_dict(self) -> dict:
        return {
            "oracle": {
                "kind": self.oracle.kind,
                "domain": self.oracle.domain,
                "params": self.oracle.params,
                "spot": self.oracle.spot,
                "fd": {"h": self.oracle.fd.h, "scheme": self.oracle.fd.scheme},
            },
            "data": _dataclass_dict(self.data),
            "model": _dataclass_dict(self.model),
            "train": {**_dataclass_dict(self.train), "seed": self.train_seed},
            "mine": _dataclass_dict(self.mine),
            "loop": {**_dataclass_dict(self.loop), "alphas": self.alphas},
            "output_dir": self.output_dir,
            "threads": self.threads,
        }

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def apply_seed_override(self, offset: int) -> None:
        """Shift every named seed by a constant, for replicate runs."""
        self.data.seed_train += offset
        self.data.seed_test += offset
        self.model.init_seed += offset
        self.train_seed += offset


def _dataclass_dict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


def _build(cls, d: dict, path: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    """Build and validate a RunConfig from a parsed JSON object."""
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")
    allowed = {"oracle", "data", "model", "train", "mine", "loop", "output_dir", "threads"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"top level: unknown keys {sorted(unknown)}")

    cfg = RunConfig()
    if "oracle" in raw:
        osec = dict(raw["oracle"])
        fd_raw = osec.pop("fd", {})
        fd = _build(FdConfig, fd_raw, "oracle.fd")
        cfg.oracle = _build(OracleSection, osec, "oracle")
        cfg.oracle.fd = fd
    if "data" in raw:
        cfg.data = _build(DataSection, raw["data"], "data")
    if "model" in raw:
        cfg.model = _build(ModelSection, raw["model"], "model")
    if "train" in raw:
        tsec = dict(raw["train"])
        cfg.train_seed = int(tsec.pop("seed", cfg.train_seed))
        cfg.train = _build(TrainConfig, tsec, "train")
    if "mine" in raw:
        cfg.mine = _build(AscentConfig, raw["mine"], "mine")
    if "loop" in raw:
        lsec = dict(raw["loop"])
        alphas = lsec.pop("alphas", None)
        cfg.loop = _build(RoundConfig, lsec, "loop")
        if alphas is not None:
            if not isinstance(alphas, list) or not alphas:
                raise ConfigError("loop.alphas must be a non-empty list")
            cfg.alphas = [float(a) for a in alphas]
    if "output_dir" in raw:
        cfg.output_dir = str(raw["output_dir"])
    if "threads" in raw:
        cfg.threads = int(raw["threads"])
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a JSON run configuration file."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)
