"""Experiment configuration: one JSON document, validated and fingerprinted."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .conditions import CheckSettings


class ConfigError(ValueError):
    """Malformed or invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class SolverSettings:
    tol: float = 1e-8
    newton_tol: float = 1e-12
    base: float = 3.0
    delta_stop: float = 3.0
    max_iter: int = 200
    max_schedule: int = 60
    eta: float = 0.1
    rate_window: tuple[float, float] = (0.005, 0.05)


@dataclass(frozen=True)
class ExperimentConfig:
    phi: dict = field(default_factory=lambda: {"family": "stable", "params": {"alpha": 1.0}})
    f: dict = field(default_factory=lambda: {"family": "power", "p": 2.5})
    domain: dict = field(default_factory=lambda: {"d": 2, "R": 1.0})
    grid: dict = field(default_factory=lambda: {"N": 1024, "gamma": 3.0})
    solver: SolverSettings = field(default_factory=SolverSettings)
    checks: CheckSettings = field(default_factory=CheckSettings)
    sweep: dict = field(default_factory=lambda: {
        "alphas": [0.4, 0.8, 1.0, 1.2, 1.6], "ps": [1.2, 1.6, 2.0, 2.4, 2.8, 3.2, 4.0]})
    out_dir: str = "out"
    cache: bool = True

    def __post_init__(self):
        _validate(self)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["solver"]["rate_window"] = list(self.solver.rate_window)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def content(self) -> dict:
        """The part of the configuration that determines computed results."""
        out = self.to_dict()
        del out["out_dir"], out["cache"]
        return out

    def fingerprint(self) -> str:
        canonical = json.dumps(self.content(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def operator_key(self) -> str:
        """Hash of the inputs to operator assembly only."""
        part = {"phi": self.phi, "domain": self.domain, "grid": self.grid}
        canonical = json.dumps(part, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:24]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: Any) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("top level: expected a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(unknown)}")
        kwargs = dict(data)
        if "solver" in kwargs:
            kwargs["solver"] = _sub(SolverSettings, kwargs["solver"], "solver")
        if "checks" in kwargs:
            kwargs["checks"] = _sub(CheckSettings, kwargs["checks"], "checks")
        try:
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        return cls.from_json(text)


def _sub(kind, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s): {', '.join(unknown)}")
    data = dict(data)
    if "rate_window" in data:
        data["rate_window"] = tuple(data["rate_window"])
    try:
        return kind(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _positive(value, where, integer=False):
    ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value) and value > 0
    if integer:
        ok = ok and float(value).is_integer()
    if not ok:
        kind = "positive integer" if integer else "positive number"
        raise ConfigError(f"{where}: expected a {kind}, got {value!r}")


def _record(rec, where):
    if not isinstance(rec, dict) or "family" not in rec:
        raise ConfigError(f"{where}: expected an object with a 'family' field")
    if not isinstance(rec.get("params", {}), dict):
        raise ConfigError(f"{where}.params: expected an object")


def _validate(cfg: ExperimentConfig) -> None:
    _record(cfg.phi, "phi")
    _record(cfg.f, "f")
    for key in ("d", "R"):
        if key not in cfg.domain:
            raise ConfigError(f"domain.{key}: missing")
    _positive(cfg.domain["d"], "domain.d", integer=True)
    _positive(cfg.domain["R"], "domain.R")
    for key in ("N", "gamma"):
        if key not in cfg.grid:
            raise ConfigError(f"grid.{key}: missing")
    _positive(cfg.grid["N"], "grid.N", integer=True)
    _positive(cfg.grid["gamma"], "grid.gamma")
    N = int(cfg.grid["N"])
    if N & (N - 1):
        warnings.warn(f"grid.N = {N} is not a power of two", stacklevel=3)
    s = cfg.solver
    for name in ("tol", "newton_tol", "base", "delta_stop", "eta"):
        _positive(getattr(s, name), f"solver.{name}")
    for name in ("max_iter", "max_schedule"):
        _positive(getattr(s, name), f"solver.{name}", integer=True)
    if s.base <= 1:
        raise ConfigError("solver.base: must exceed 1")
    if len(s.rate_window) != 2:
        raise ConfigError("solver.rate_window: expected [low, high]")
    for v in s.rate_window:
        _positive(v, "solver.rate_window")
    if not s.rate_window[0] < s.rate_window[1]:
        raise ConfigError("solver.rate_window: low must be below high")
    for name, value in dataclasses.asdict(cfg.checks).items():
        _positive(value, f"checks.{name}")
    for key in ("alphas", "ps"):
        values = cfg.sweep.get(key)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"sweep.{key}: expected a non-empty list")
        for v in values:
            _positive(v, f"sweep.{key}")
    if not isinstance(cfg.out_dir, str) or not cfg.out_dir:
        raise ConfigError("out_dir: expected a non-empty string")
    if not isinstance(cfg.cache, bool):
        raise ConfigError("cache: expected true or false")
