"""Flat ``key=value`` run configuration.

One pair per line, ``#`` starts a comment, blank lines are ignored. Every
key is optional; missing keys take the defaults below, which reproduce the
classical figure parameters and the paper-scale quantum parameters. The
quantum walls always use the rest-then-linear trajectories.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from .model import (CONVENTIONS, HALF_SIGMA_SQUARED, ConfigError, SchemeConfig, Units,
                    linear_scheme, sqrt_scheme, validate_config)
from .quantum import (APPLY_OPERATOR, EFFECTIVE, RENORMALIZE_ONLY, STANDARD, PAPER_LITERAL,
                      THREE_LEVEL, Packet, QuantumRunConfig, SpatialGrid, grid_for,
                      quantum_scheme)

# key -> (type, default); None means "derived from other keys"
DEFAULTS: Dict[str, Tuple[type, object]] = {
    "scheme": (str, "linear"),
    "v_d": (float, 0.9),
    "v_m": (float, 1.0),
    "alpha_d": (float, None),
    "alpha_m": (float, None),
    "T": (float, 1.0),
    "x0": (float, -0.8),
    "dx": (float, 0.1),
    "v0": (float, 10.0),
    "dv": (float, 5.0),
    "n_samples": (int, 100_000),
    "mass": (float, 1000.0),
    "V0_d": (float, 5e6),
    "V0_m": (float, 5e6),
    "V0_c": (float, 4e4),
    "sigma_d": (float, 1e-4),
    "sigma_m": (float, 1e-4),
    "sigma_c": (float, 6e-4),
    "v_c": (float, 0.98),
    "t_rest": (float, 0.1),
    "grid_n": (int, None),
    "x_min": (float, None),
    "x_max": (float, None),
    "dt": (float, 1e-7),
    "n_traj": (int, 200),
    "jump_mode": (str, APPLY_OPERATOR),
    "unraveling": (str, EFFECTIVE),
    "init_mode": (str, STANDARD),
    "seed": (int, 0),
    # beyond the basic key set
    "gamma": (float, None),
    "sigma_convention": (str, HALF_SIGMA_SQUARED),
    "boundary_tol": (float, 1e-6),
    "v_max": (float, None),
}

CHOICES = {
    "scheme": ("linear", "sqrt"),
    "jump_mode": (APPLY_OPERATOR, RENORMALIZE_ONLY),
    "unraveling": (EFFECTIVE, THREE_LEVEL),
    "init_mode": (STANDARD, PAPER_LITERAL),
    "sigma_convention": CONVENTIONS,
}


class ParseError(ConfigError):
    """Syntax error in a config file, with 1-based line and column."""

    def __init__(self, line: int, column: int, message: str):
        self.line, self.column = line, column
        super().__init__([(f"line {line}, column {column}", message)])


@dataclass(frozen=True)
class RunSettings:
    """Everything a CLI command needs, in natural units."""

    values: Dict[str, object]
    scheme: SchemeConfig
    packet: Packet
    n_samples: int
    seed: int

    def quantum(self) -> QuantumRunConfig:
        """The quantum run config; built lazily because the default
        paper-scale grid is large."""
        return quantum_config(self.values)

    def comparison_scheme(self) -> SchemeConfig:
        """The other classical scheme with the same wall end points."""
        v = self.values
        if self.scheme.scheme == "linear":
            return sqrt_scheme(v["v_d"] * math.sqrt(v["T"]), v["v_m"] * math.sqrt(v["T"]), v["T"],
                               units=self.scheme.units)
        return linear_scheme(v["v_d"], v["v_m"], v["T"], units=self.scheme.units)


def _convert(key, raw, line, col):
    kind = DEFAULTS[key][0]
    if kind is str:
        if key in CHOICES and raw not in CHOICES[key]:
            raise ParseError(line, col, f"{key} must be one of {', '.join(CHOICES[key])}, got {raw!r}")
        return raw
    try:
        if kind is int:
            val = float(raw)
            if not val.is_integer():
                raise ValueError
            return int(val)
        return float(raw)
    except ValueError:
        raise ParseError(line, col, f"{key}: cannot read {raw!r} as {kind.__name__}") from None


def parse_values(text: str) -> Dict[str, object]:
    """Raw key/value pairs with defaults filled in (derived keys may stay None)."""
    values = {k: d for k, (_, d) in DEFAULTS.items()}
    seen = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0]
        if not body.strip():
            continue
        if "=" not in body:
            col = len(body) - len(body.lstrip()) + 1
            raise ParseError(n, col, "expected key=value")
        key_part, raw = body.split("=", 1)
        key = key_part.strip()
        key_col = len(key_part) - len(key_part.lstrip()) + 1
        if key not in DEFAULTS:
            raise ParseError(n, key_col, f"unknown key {key!r}")
        if key in seen:
            raise ParseError(n, key_col, f"{key} already set on line {seen[key]}")
        seen[key] = n
        val_col = len(key_part) + 2 + (len(raw) - len(raw.lstrip()))
        raw = raw.strip()
        if not raw:
            raise ParseError(n, val_col, f"{key} has no value")
        values[key] = _convert(key, raw, n, val_col)
    for a, v in (("alpha_d", "v_d"), ("alpha_m", "v_m")):
        if values[a] is None:
            values[a] = values[v] * math.sqrt(values["T"])
    return values


def classical_scheme(values) -> SchemeConfig:
    units = Units(mass=values["mass"])
    if values["scheme"] == "sqrt":
        cfg = sqrt_scheme(values["alpha_d"], values["alpha_m"], values["T"], units=units)
    else:
        cfg = linear_scheme(values["v_d"], values["v_m"], values["T"], units=units)
    return validate_config(cfg)


def quantum_config(values) -> QuantumRunConfig:
    scheme = quantum_scheme(
        v_d=values["v_d"], v_m=values["v_m"], v_c=values["v_c"], t_rest=values["t_rest"],
        V0_d=values["V0_d"], V0_m=values["V0_m"], V0_c=values["V0_c"],
        sigma_d=values["sigma_d"], sigma_m=values["sigma_m"], sigma_c=values["sigma_c"],
        mass=values["mass"], total_time=values["T"], convention=values["sigma_convention"])
    packet = Packet(values["x0"], values["dx"], values["v0"], values["dv"])
    auto = None
    if None in (values["grid_n"], values["x_min"], values["x_max"]):
        auto = grid_for(packet, scheme, values["mass"])
    grid = SpatialGrid(
        values["x_min"] if values["x_min"] is not None else auto.x_min,
        values["x_max"] if values["x_max"] is not None else auto.x_max,
        values["grid_n"] if values["grid_n"] is not None else auto.n)
    return QuantumRunConfig(
        scheme=scheme, grid=grid, dt=values["dt"], n_traj=values["n_traj"], packet=packet,
        jump_mode=values["jump_mode"], unraveling=values["unraveling"], gamma=values["gamma"],
        init_mode=values["init_mode"], seed=values["seed"], v_max=values["v_max"],
        boundary_tol=values["boundary_tol"])


def parse_config(text: str) -> RunSettings:
    """Parse and validate. Raises ParseError for syntax problems and
    ConfigError listing every invalid field otherwise."""
    values = parse_values(text)
    problems: List[Tuple[str, str]] = []
    for key in ("dx", "dv"):
        if not values[key] > 0:
            problems.append((key, "must be > 0"))
    if values["n_samples"] < 1:
        problems.append(("n_samples", "must be >= 1"))
    if values["n_traj"] < 1:
        problems.append(("n_traj", "must be >= 1"))
    for key in ("sigma_d", "sigma_m", "sigma_c"):
        if not values[key] > 0:
            problems.append((key, "must be > 0"))
    for key in ("V0_d", "V0_m", "V0_c"):
        if not values[key] >= 0:
            problems.append((key, "must be >= 0"))
    if not values["t_rest"] >= 0:
        problems.append(("t_rest", "must be >= 0"))
    try:
        scheme = classical_scheme(values)
    except ConfigError as exc:
        problems += exc.problems
        scheme = None
    if problems:
        raise ConfigError(problems)
    packet = Packet(values["x0"], values["dx"], values["v0"], values["dv"])
    return RunSettings(values, scheme, packet, values["n_samples"], values["seed"])


def format_values(values: Dict[str, object]) -> str:
    """Config text that parses back to ``values``."""
    lines = []
    for key in DEFAULTS:
        val = values.get(key)
        if val is None:
            continue
        lines.append(f"{key}={val!r}" if isinstance(val, float) else f"{key}={val}")
    return "\n".join(lines) + "\n"


def load_config(path: Optional[str]) -> RunSettings:
    if path is None:
        return parse_config("")
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
