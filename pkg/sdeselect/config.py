"""
Experiment configuration.

A configuration is a TOML file of fixed sections. Every section is a frozen
dataclass; unknown sections and keys are rejected, each value is type- and
range-checked, and referenced data files must exist. ``dump_config`` writes
the canonical form (schema order, full-precision floats) whose SHA-256 is
the config digest stamped on every output.
"""

import hashlib
import logging
import math
import os
import tomllib
from dataclasses import dataclass, field, fields, replace
from typing import Any

from sdeselect.errors import ConfigError

logger = logging.getLogger(__name__)


def _opt(default, *, lo=None, hi=None, choices=None, item=None, lo_open=False):
    """A config field; lo/hi bound numbers (or every list item), choices bound strings"""
    meta = {"lo": lo, "hi": hi, "choices": choices, "item": item, "lo_open": lo_open}
    return field(default=default, metadata=meta)


@dataclass(frozen=True)
class GridSection:
    t0: float = _opt(0.0)
    t_end: float = _opt(5.0)
    n_steps: int = _opt(500, lo=1, hi=10_000_000)


@dataclass(frozen=True)
class ModelSection:
    sigma: float = _opt(20.0, lo=0.0, lo_open=True)
    x0: float = _opt(0.0)
    covariates: int = _opt(3, lo=0, hi=20)
    true_mask: tuple = _opt((1, 1, 1), item=int, lo=0, hi=1)
    links: tuple = _opt((), item=str)
    truth_mean_sd: float = _opt(1.0, lo=0.0)
    truth_sd: float = _opt(0.001, lo=0.0)
    covariate_sd: float = _opt(0.01, lo=0.0)
    standardize: bool = _opt(True)


@dataclass(frozen=True)
class PriorSection:
    kind: str = _opt("mle-normal", choices=("mle-normal", "truth-point"))
    sd: float = _opt(0.8, lo=0.0, lo_open=True)


@dataclass(frozen=True)
class MCSection:
    prior_draws: int = _opt(500, lo=1, hi=10_000_000)
    replications: int = _opt(100, lo=1, hi=1_000_000)
    workers: int = _opt(1, lo=-1, hi=1024)


@dataclass(frozen=True)
class StudySection:
    kind: str = _opt("ratio", choices=("ratio", "marginal"))
    individuals: int = _opt(1, lo=1, hi=10_000)
    sigma_step: float = _opt(5.0, lo=0.0)
    wrong_combinations: int = _opt(20, lo=0, hi=100_000)


@dataclass(frozen=True)
class AnnealingSection:
    t_initial: float = _opt(1.0, lo=0.0, lo_open=True)
    cooling: float = _opt(0.95, lo=0.0, hi=1.0, lo_open=True)
    steps_per_temp: int = _opt(50, lo=1)
    t_min: float = _opt(1e-4, lo=0.0, lo_open=True)
    proposal_scale: float = _opt(0.05, lo=0.0, hi=1.0, lo_open=True)
    restarts: int = _opt(4, lo=1, hi=1000)
    bound: float = _opt(10.0, lo=0.0, lo_open=True)


@dataclass(frozen=True)
class SweepSection:
    horizons: tuple = _opt((5.0, 20.0, 80.0), item=float, lo=0.0, lo_open=True)
    dt: float = _opt(0.05, lo=0.0, lo_open=True)
    eta0: float = _opt(1.0)
    eta0_spread: float = _opt(0.0, lo=0.0)
    prior_low: float = _opt(3.0)
    prior_high: float = _opt(4.0)
    variance_floor: float = _opt(0.5, lo=0.0)


@dataclass(frozen=True)
class CKLSSection:
    theta: tuple = _opt((0.1, -0.2, 0.5, 0.7), item=float)
    x0: float = _opt(0.5)
    lower: tuple = _opt((-2.0, -2.0, 0.01, 0.0), item=float)
    upper: tuple = _opt((2.0, 2.0, 2.0, 1.5), item=float)


@dataclass(frozen=True)
class DataSection:
    path: str = _opt("")
    covariates: str = _opt("")


@dataclass(frozen=True)
class SeedsSection:
    master: int = _opt(12345, lo=-(2 ** 63), hi=2 ** 64 - 1)


@dataclass(frozen=True)
class OutputSection:
    directory: str = _opt("results")


SECTIONS = {
    "grid": GridSection,
    "model": ModelSection,
    "prior": PriorSection,
    "mc": MCSection,
    "study": StudySection,
    "annealing": AnnealingSection,
    "sweep": SweepSection,
    "ckls": CKLSSection,
    "data": DataSection,
    "seeds": SeedsSection,
    "output": OutputSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSection = field(default_factory=GridSection)
    model: ModelSection = field(default_factory=ModelSection)
    prior: PriorSection = field(default_factory=PriorSection)
    mc: MCSection = field(default_factory=MCSection)
    study: StudySection = field(default_factory=StudySection)
    annealing: AnnealingSection = field(default_factory=AnnealingSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    ckls: CKLSSection = field(default_factory=CKLSSection)
    data: DataSection = field(default_factory=DataSection)
    seeds: SeedsSection = field(default_factory=SeedsSection)
    output: OutputSection = field(default_factory=OutputSection)
    base_dir: str = field(default=".", compare=False)

    def resolve(self, path: str) -> str:
        """A data path as seen from the config file's directory"""
        return path if os.path.isabs(path) else os.path.join(self.base_dir, path)

    @property
    def digest(self) -> str:
        return config_digest(self)


# Parsing

def _coerce(value: Any, kind: type, where: str, issues: list) -> Any:
    if kind is bool:
        if not isinstance(value, bool):
            issues.append(f"{where}: expected true/false, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            issues.append(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            issues.append(f"{where}: expected a number, got {value!r}")
            return value
        if not math.isfinite(value):
            issues.append(f"{where}: must be finite, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        issues.append(f"{where}: expected a string, got {value!r}")
    return value


def _check_range(value, meta: dict, where: str, issues: list) -> None:
    if meta["choices"] is not None and value not in meta["choices"]:
        issues.append(f"{where}: must be one of {', '.join(meta['choices'])}, got {value!r}")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return
    lo, hi = meta["lo"], meta["hi"]
    if lo is not None and (value < lo or (meta["lo_open"] and value == lo)):
        issues.append(f"{where}: must be {'>' if meta['lo_open'] else '>='} {lo}, got {value!r}")
    if hi is not None and value > hi:
        issues.append(f"{where}: must be <= {hi}, got {value!r}")


def _parse_section(name: str, cls, raw: Any, issues: list):
    if not isinstance(raw, dict):
        issues.append(f"[{name}] must be a table")
        return cls()
    known = {f.name: f for f in fields(cls)}
    for key in raw:
        if key not in known:
            issues.append(f"[{name}] unknown key '{key}'")
    values = {}
    for key, f in known.items():
        if key not in raw:
            continue
        where = f"{name}.{key}"
        value = raw[key]
        item = f.metadata["item"]
        if item is not None:
            if not isinstance(value, list):
                issues.append(f"{where}: expected a list, got {value!r}")
                continue
            value = tuple(_coerce(v, item, f"{where}[{i}]", issues) for i, v in enumerate(value))
            for i, v in enumerate(value):
                _check_range(v, f.metadata, f"{where}[{i}]", issues)
        else:
            value = _coerce(value, f.type, where, issues)
            _check_range(value, f.metadata, where, issues)
        values[key] = value
    try:
        return cls(**values)
    except TypeError as exc:
        issues.append(f"[{name}] {exc}")
        return cls()


def validate_config(cfg: ExperimentConfig) -> list:
    """Cross-field checks; returns a list of issues (empty when valid)"""
    issues = []
    if cfg.grid.t_end <= cfg.grid.t0:
        issues.append(f"grid.t_end ({cfg.grid.t_end}) must exceed grid.t0 ({cfg.grid.t0})")
    if len(cfg.model.true_mask) != cfg.model.covariates:
        issues.append(f"model.true_mask has {len(cfg.model.true_mask)} entries for "
                      f"{cfg.model.covariates} covariates")
    if cfg.model.links and len(cfg.model.links) != cfg.model.covariates:
        issues.append(f"model.links has {len(cfg.model.links)} entries for {cfg.model.covariates} covariates")
    if cfg.annealing.t_min > cfg.annealing.t_initial:
        issues.append("annealing.t_min must not exceed annealing.t_initial")
    if cfg.sweep.prior_high < cfg.sweep.prior_low:
        issues.append("sweep.prior_high must not be below sweep.prior_low")
    if not cfg.sweep.horizons:
        issues.append("sweep.horizons must not be empty")
    for name in ("theta", "lower", "upper"):
        if len(getattr(cfg.ckls, name)) != 4:
            issues.append(f"ckls.{name} needs 4 entries")
    if any(lo > hi for lo, hi in zip(cfg.ckls.lower, cfg.ckls.upper)):
        issues.append("ckls.lower must not exceed ckls.upper")
    if len(cfg.ckls.lower) == 4 and cfg.ckls.lower[2] < 0:
        issues.append(f"ckls.lower[2] (scale theta3) must be >= 0, got {cfg.ckls.lower[2]}")
    if len(cfg.ckls.theta) == 4 and cfg.ckls.theta[2] <= 0:
        issues.append(f"ckls.theta[2] (scale theta3) must be > 0, got {cfg.ckls.theta[2]}")
    for key in ("path", "covariates"):
        path = getattr(cfg.data, key)
        if path and not os.path.exists(cfg.resolve(path)):
            issues.append(f"data.{key}: file not found: {cfg.resolve(path)}")
    return issues


def parse_config(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    issues = []
    for name in raw:
        if name not in SECTIONS:
            issues.append(f"unknown section [{name}]")
    sections = {name: _parse_section(name, cls, raw[name], issues)
                for name, cls in SECTIONS.items() if name in raw}
    cfg = ExperimentConfig(**sections, base_dir=base_dir)
    issues.extend(validate_config(cfg) if not issues else [])
    if issues:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(issues))
    return cfg


def loads_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from exc
    return parse_config(raw, base_dir)


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a TOML configuration file"""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    logger.debug("loaded configuration from %s", path)
    return loads_config(text, os.path.dirname(os.path.abspath(path)))


# Canonical writer

def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    escaped = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: every section in schema order, every key written"""
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(section):
            lines.append(f"{f.name} = {_format_value(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_config(cfg))


def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode("utf-8")).hexdigest()


def apply_overrides(cfg: ExperimentConfig, seed: int | None = None, replications: int | None = None,
                    prior_draws: int | None = None, out: str | None = None) -> ExperimentConfig:
    """Command-line overrides, validated like file values"""
    if seed is not None:
        cfg = replace(cfg, seeds=replace(cfg.seeds, master=seed))
    if replications is not None:
        if replications < 1:
            raise ConfigError(f"--replications must be >= 1, got {replications}")
        cfg = replace(cfg, mc=replace(cfg.mc, replications=replications))
    if prior_draws is not None:
        if prior_draws < 1:
            raise ConfigError(f"--prior-draws must be >= 1, got {prior_draws}")
        cfg = replace(cfg, mc=replace(cfg.mc, prior_draws=prior_draws))
    if out is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=out))
    return cfg
