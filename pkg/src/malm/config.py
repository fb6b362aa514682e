"""Run configuration: ``key = value`` files with [problem], [solver], [run] sections."""

from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field, fields

from .exceptions import FormatError

__all__ = ["ProblemSpec", "SolverSpec", "RunSpec", "RunConfig", "parse_config",
           "serialize_config", "load_config", "default_seed", "AUTO"]

AUTO = "auto"


def default_seed():
    """Seed from ``MALM_SEED`` when set, else 0."""
    raw = os.environ.get("MALM_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise FormatError(f"MALM_SEED must be an integer, got {raw!r}") from None


@dataclass
class ProblemSpec:
    family: str = "regression"
    d: int = 200
    N: int = 1000
    m: int = 20
    sparsity: float = 0.05
    label_noise_std: float = 0.1
    condition: float = 10.0
    sigma: float = 0.5
    seed: int = 0


@dataclass
class SolverSpec:
    solver: str = "malm"
    c_alpha: float = 0.5
    # "auto": just above the schedule's lower bound for the loaded problem
    c_eta: float | str = AUTO
    # "auto": keeps (beta/eta) ||A||^2 at penalty_ratio
    c_beta: float | str = AUTO
    c_theta: float = 0.01
    penalty_ratio: float = 0.25
    eta_margin: float = 1.05
    tau: float | None = None
    rho: float | None = None


@dataclass
class RunSpec:
    K: int = 1000
    trials: int = 20
    seed: int = 0
    record_every: int = 10
    output_mode: str = "uniform_random"
    timing: bool = True
    workers: int = 1
    problem_path: str | None = None
    out: str | None = None


@dataclass
class RunConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    run: RunSpec = field(default_factory=RunSpec)

    def validate(self):
        p, s, r = self.problem, self.solver, self.run
        if min(p.d, p.m, r.K, r.trials, r.record_every, r.workers) < 1 or p.N < 1:
            raise FormatError("counts must be positive")
        if p.family not in ("regression", "quadratic"):
            raise FormatError(f"unknown family {p.family!r}")
        if s.solver not in ("malm", "storm_alm", "spd"):
            raise FormatError(f"unknown solver {s.solver!r}")
        if r.output_mode not in ("uniform_random", "best_combined", "last"):
            raise FormatError(f"unknown output mode {r.output_mode!r}")
        return self


_SECTIONS = {"problem": ProblemSpec, "solver": SolverSpec, "run": RunSpec}


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(f, raw):
    raw = raw.strip()
    kind = f.type
    if raw.lower() == "none" and "None" in str(kind):
        return None
    if raw.lower() == AUTO and "str" in str(kind):
        return AUTO
    try:
        if kind in (bool, "bool"):
            if raw.lower() in ("true", "yes", "1", "on"):
                return True
            if raw.lower() in ("false", "no", "0", "off"):
                return False
            raise ValueError(raw)
        if kind in (int, "int"):
            return int(raw)
        if str(kind).startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise FormatError(f"bad value for {f.name}: {raw!r}") from None


def parse_config(text):
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise FormatError(str(exc)) from None
    parts = {}
    for section, cls in _SECTIONS.items():
        known = {f.name: f for f in fields(cls)}
        values = {}
        if cp.has_section(section):
            for key, raw in cp.items(section):
                if key not in known:
                    raise FormatError(f"[{section}] unknown key {key!r}")
                values[key] = _coerce(known[key], raw)
        parts[section] = cls(**values)
    extra = set(cp.sections()) - set(_SECTIONS)
    if extra:
        raise FormatError(f"unknown sections {sorted(extra)}")
    return RunConfig(**parts).validate()


def serialize_config(cfg):
    buf = io.StringIO()
    for section in _SECTIONS:
        buf.write(f"[{section}]\n")
        for f in fields(getattr(cfg, section)):
            buf.write(f"{f.name} = {_fmt(getattr(getattr(cfg, section), f.name))}\n")
        buf.write("\n")
    return buf.getvalue()


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def override(cfg, section, **values):
    """Copy of `cfg` with non-None `values` replacing fields of `section`."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    sub = dataclasses.replace(getattr(cfg, section), **values)
    return dataclasses.replace(cfg, **{section: sub})
