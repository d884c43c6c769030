"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments.  Lists are comma separated.  Unknown keys
are rejected.  Precedence, lowest first: built-in defaults, the config file,
``--set key=value`` flags, dedicated flags such as ``--seed``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Mapping

import numpy as np

from .core import LearningSchedule, ModelConfig
from .features import BandSpec


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 1)."""


@dataclass
class RunConfig:
    # model; F = 0 and D = 0 mean "take from the training data"
    K: int = 3
    F: int = 0
    alpha: float = 0.0          # 0 -> 1/K
    m: tuple = ()               # empty -> zeros
    omega: tuple = ()           # empty -> identity; one value -> scaled identity; F*F values row-major
    s: float = 1.0
    v: float = 0.0              # 0 -> F + 2
    D: int = 0
    # learning schedule and loop
    kappa: float = 0.9
    tau0: float = 1024.0
    BS: int = 4
    T: int = 100
    tol: float = 1e-4
    max_iter: int = 100
    init: str = "data"
    seed: int = 0
    # windowing and features
    R: float = 1.0
    n: int = 50
    rate: float = 1000.0
    bands: tuple = ()           # empty -> 8 octave bands up to Nyquist
    standardize: bool = True
    power_column: str = "real_power"
    # simulation
    sim_mode: str = "corpus"
    sim_D: int = 200
    sim_heldout_D: int = 50
    sim_s: float = 0.01
    sim_seconds: float = 600.0
    # sweep grid; budget > 0 fixes the number of windows processed per run
    sweep_kappa: tuple = (0.9,)
    sweep_tau0: tuple = (1024.0,)
    sweep_BS: tuple = (1, 4)
    budget: int = 0
    # paths
    data: str = ""
    heldout: str = ""
    model: str = ""
    out: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")

        need(self.K >= 1, "K", "must be a positive integer")
        need(self.F >= 0, "F", "must be >= 0")
        need(self.alpha >= 0, "alpha", "must be > 0 (or 0 for 1/K)")
        need(self.s > 0, "s", "must be > 0")
        need(self.v >= 0, "v", "must be > F-1 (or 0 for F+2)")
        need(self.D >= 0, "D", "must be >= 0")
        need(0.5 < self.kappa <= 1.0, "kappa", "must lie in (0.5, 1]")
        need(self.tau0 >= 0, "tau0", "must be >= 0")
        need(self.BS >= 1, "BS", "must be >= 1")
        need(self.T >= 0, "T", "must be >= 0")
        need(self.tol > 0, "tol", "must be > 0")
        need(self.max_iter >= 1, "max_iter", "must be >= 1")
        need(self.init in ("data", "prior"), "init", "must be 'data' or 'prior'")
        need(self.R > 0, "R", "must be > 0")
        need(self.n >= 1, "n", "must be >= 1")
        need(self.rate > 0, "rate", "must be > 0")
        need(self.sim_mode in ("corpus", "raw"), "sim_mode", "must be 'corpus' or 'raw'")
        need(self.sim_D >= 1, "sim_D", "must be >= 1")
        need(self.sim_heldout_D >= 1, "sim_heldout_D", "must be >= 1")
        need(self.sim_s > 0, "sim_s", "must be > 0")
        need(self.sim_seconds > 0, "sim_seconds", "must be > 0")
        need(self.budget >= 0, "budget", "must be >= 0")
        need(all(0.5 < k <= 1.0 for k in self.sweep_kappa), "sweep_kappa", "entries must lie in (0.5, 1]")
        need(all(t >= 0 for t in self.sweep_tau0), "sweep_tau0", "entries must be >= 0")
        need(all(b >= 1 for b in self.sweep_BS), "sweep_BS", "entries must be >= 1")
        if self.bands:
            try:
                BandSpec(self.bands).check(self.rate)
            except ValueError as exc:
                raise ConfigError(f"bands: {exc}") from None

    def band_spec(self) -> BandSpec:
        return BandSpec(self.bands) if self.bands else BandSpec.default(self.rate)

    def schedule(self) -> LearningSchedule:
        return LearningSchedule(self.kappa, self.tau0)

    def model_config(self, F: int, D: int) -> ModelConfig:
        """Build the model hyper-parameters for data of dimension ``F`` and ``D`` windows."""
        if self.F and self.F != F:
            raise ConfigError(f"F: config says F={self.F} but the data has F={F} feature columns")
        if self.m and len(self.m) != F:
            raise ConfigError(f"m: need {F} values, got {len(self.m)}")
        if len(self.omega) not in (0, 1, F * F):
            raise ConfigError(f"omega: need 1 or {F * F} values, got {len(self.omega)}")
        m = np.array(self.m, dtype=float) if self.m else np.zeros(F)
        if not self.omega:
            omega = np.eye(F)
        elif len(self.omega) == 1:
            omega = self.omega[0] * np.eye(F)
        else:
            omega = np.array(self.omega, dtype=float).reshape(F, F)
        try:
            return ModelConfig(K=self.K, F=F, alpha=self.alpha or 1.0 / self.K, prior_m=m,
                               prior_omega=omega, prior_s=self.s, prior_v=self.v or F + 2.0,
                               corpus_size_D=self.D or D)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}
_LIST_ITEM = {"m": float, "omega": float, "bands": float, "sweep_kappa": float,
              "sweep_tau0": float, "sweep_BS": int}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(key: str, text: str):
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is tuple:
            if not text:
                return ()
            return tuple(_LIST_ITEM[key](x) for x in text.split(","))
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind.__name__}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse config text into a ``{key: value}`` mapping of typed values."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (p.strip() for p in item.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"unknown key {key!r}")
        out[key] = _parse_value(key, value)
    return out


def build(file_values: Mapping | None = None, overrides: Mapping | None = None) -> RunConfig:
    values = {}
    values.update(file_values or {})
    values.update(overrides or {})
    return RunConfig(**values)


def load(path=None, overrides: Mapping | None = None) -> RunConfig:
    file_values = {}
    if path:
        with open(path) as fh:
            file_values = parse_text(fh.read(), str(path))
    return build(file_values, overrides)
