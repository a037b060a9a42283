"""Units, wall trajectories, Gaussian potential profiles and the scheme config.

Everything is stored in natural units: lengths in d (final mirror position),
times in T (total time), hbar = 1, so velocities are in d/T, energies in
hbar/T and masses in hbar*T/d**2. Physical scales only matter at I/O.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

HBAR_SI = 1.054571817e-34  # J s
RB87_MASS_KG = 1.443160648e-25

# number of time samples for the ordering check x_m(t) > x_d(t)
_ORDER_SAMPLES = 257


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists (field, message) pairs."""

    def __init__(self, problems):
        self.problems = list(problems)
        msg = "; ".join(f"{name}: {text}" for name, text in self.problems)
        super().__init__(msg)


@dataclass(frozen=True)
class Units:
    """Natural-unit bookkeeping.

    ``mass`` is the particle mass in hbar*T/d**2. ``d_si`` and ``T_si`` are
    optional physical values of the length and time scales, recorded in run
    manifests only.
    """

    mass: float = 1000.0
    d_si: Optional[float] = None
    T_si: Optional[float] = None
    hbar: float = 1.0

    @classmethod
    def for_particle(cls, mass: float, mass_kg: float, d_si: float) -> "Units":
        # m = mass * hbar T / d^2  =>  T = m_kg d^2 / (mass hbar)
        T_si = mass_kg * d_si**2 / (mass * HBAR_SI)
        return cls(mass=mass, d_si=d_si, T_si=T_si)

    def velocity_si(self, v: float) -> float:
        if self.d_si is None or self.T_si is None:
            raise ValueError("physical scales not set")
        return v * self.d_si / self.T_si

    def as_dict(self) -> dict:
        return {"d": 1.0, "T": 1.0, "hbar": self.hbar, "mass": self.mass,
                "d_si_m": self.d_si, "T_si_s": self.T_si}


def _check_time(t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("wall trajectories are defined for t >= 0 only")


@dataclass(frozen=True)
class Linear:
    """x(t) = v t."""

    v: float

    def position(self, t):
        _check_time(t)
        return self.v * t

    def velocity(self, t):
        _check_time(t)
        return self.v * np.ones_like(t) if isinstance(t, np.ndarray) else self.v

    def crossings(self, x, v, t):
        """Times t' at which the free flight x + v (t' - t) meets the wall."""
        x, v, t = np.broadcast_arrays(*map(np.asarray, (x, v, t)))
        rel = self.v - v
        with np.errstate(divide="ignore", invalid="ignore"):
            tc = np.where(rel != 0.0, (x - v * t) / rel, np.nan)
        return tc[np.newaxis]


@dataclass(frozen=True)
class Sqrt:
    """x(t) = alpha sqrt(t); the trajectory that stops any particle launched
    from the origin at t = 0."""

    alpha: float

    def position(self, t):
        _check_time(t)
        return self.alpha * np.sqrt(t)

    def velocity(self, t):
        if np.any(np.asarray(t) <= 0):
            raise ValueError("square-root wall velocity is singular at t = 0")
        return self.alpha / (2.0 * np.sqrt(t))

    def crossings(self, x, v, t):
        # with u = sqrt(t'):  v u^2 - alpha u + (x - v t) = 0
        x, v, t = np.broadcast_arrays(*map(np.asarray, (x, v, t)))
        c = x - v * t
        disc = self.alpha**2 - 4.0 * v * c
        ok = disc >= 0.0
        q = 0.5 * (self.alpha + np.sqrt(np.where(ok, disc, 0.0)))
        with np.errstate(divide="ignore", invalid="ignore"):
            u1 = np.where(ok & (v != 0.0), q / v, np.nan)
            u2 = np.where(ok & (q != 0.0), c / q, np.nan)
        u = np.stack([u1, u2])
        return np.where(u >= 0.0, u * u, np.nan)


@dataclass(frozen=True)
class RestThenLinear:
    """At rest at v t_rest until t_rest, then x(t) = v t."""

    v: float
    t_rest: float

    def position(self, t):
        _check_time(t)
        return self.v * np.maximum(t, self.t_rest)

    def velocity(self, t):
        _check_time(t)
        return np.where(np.asarray(t) > self.t_rest, self.v, 0.0)[()]

    def crossings(self, x, v, t):
        x, v, t = np.broadcast_arrays(*map(np.asarray, (x, v, t)))
        p = self.v * self.t_rest
        with np.errstate(divide="ignore", invalid="ignore"):
            t_rest_piece = np.where(v != 0.0, t + (p - x) / v, np.nan)
            rel = self.v - v
            t_lin = np.where(rel != 0.0, (x - v * t) / rel, np.nan)
        t_rest_piece = np.where(t_rest_piece <= self.t_rest, t_rest_piece, np.nan)
        t_lin = np.where(t_lin > self.t_rest, t_lin, np.nan)
        return np.stack([t_rest_piece, t_lin])


WallTrajectory = Union[Linear, Sqrt, RestThenLinear]


def wall_position(traj: WallTrajectory, t):
    return traj.position(t)


def wall_velocity(traj: WallTrajectory, t):
    return traj.velocity(t)


HALF_SIGMA_SQUARED = "half_sigma_squared"
PAPER_LITERAL = "paper_literal"
CONVENTIONS = (HALF_SIGMA_SQUARED, PAPER_LITERAL)


@dataclass(frozen=True)
class GaussianPotential:
    """Gaussian barrier profile V0 exp(-x^2 / w).

    For real walls w = 2 sigma^2, for the imaginary quench term w = sigma^2.
    Under the ``paper_literal`` convention sigma enters unsquared, as in the
    printed formula, and then carries units of length squared.
    """

    V0: float
    sigma: float
    convention: str = HALF_SIGMA_SQUARED
    imaginary: bool = False

    def width(self) -> float:
        s = self.sigma if self.convention == PAPER_LITERAL else self.sigma**2
        return s if self.imaginary else 2.0 * s

    def __call__(self, displacement):
        x = np.asarray(displacement, dtype=float)
        return (self.V0 * np.exp(-(x * x) / self.width()))[()]


def potential_value(spec: GaussianPotential, displacement):
    return spec(displacement)


@dataclass(frozen=True)
class Potentials:
    diode: GaussianPotential
    mirror: GaussianPotential
    quench: GaussianPotential


@dataclass(frozen=True)
class SchemeConfig:
    """Walls, potentials and horizon of one run.

    ``total_time`` may be ``math.inf`` for the classical engine: particles
    then run until no further collision can happen.
    """

    diode: WallTrajectory
    mirror: WallTrajectory
    total_time: float = 1.0
    units: Units = field(default_factory=Units)
    quench: Optional[WallTrajectory] = None
    potentials: Optional[Potentials] = None

    @property
    def scheme(self) -> str:
        if isinstance(self.mirror, Sqrt):
            return "sqrt"
        if isinstance(self.mirror, RestThenLinear):
            return "rest_linear"
        return "linear"

    def with_(self, **changes) -> "SchemeConfig":
        return replace(self, **changes)


def linear_scheme(v_d: float = 0.9, v_m: float = 1.0, total_time: float = 1.0, **kw) -> SchemeConfig:
    return SchemeConfig(diode=Linear(v_d), mirror=Linear(v_m), total_time=total_time, **kw)


def sqrt_scheme(alpha_d: float = 0.9, alpha_m: float = 1.0, total_time: float = 1.0, **kw) -> SchemeConfig:
    return SchemeConfig(diode=Sqrt(alpha_d), mirror=Sqrt(alpha_m), total_time=total_time, **kw)


def _traj_problems(name, traj):
    out = []
    for attr in ("v", "alpha", "t_rest"):
        val = getattr(traj, attr, None)
        if val is not None and not math.isfinite(val):
            out.append((f"{name}.{attr}", "must be finite"))
    if isinstance(traj, Sqrt) and not traj.alpha > 0:
        out.append((f"{name}.alpha", "must be > 0"))
    if isinstance(traj, RestThenLinear) and traj.t_rest < 0:
        out.append((f"{name}.t_rest", "must be >= 0"))
    return out


def validate_config(cfg: SchemeConfig) -> SchemeConfig:
    """Check every invariant of ``cfg``; raise ConfigError listing all failures."""
    problems = []
    u = cfg.units
    if not u.mass > 0:
        problems.append(("units.mass", "must be > 0"))
    if not u.hbar > 0:
        problems.append(("units.hbar", "must be > 0"))
    if not cfg.total_time > 0:
        problems.append(("total_time", "must be > 0"))
    problems += _traj_problems("diode", cfg.diode)
    problems += _traj_problems("mirror", cfg.mirror)
    if cfg.quench is not None:
        problems += _traj_problems("quench", cfg.quench)

    d, m = cfg.diode, cfg.mirror
    if type(d) is not type(m):
        problems.append(("mirror", "diode and mirror must share a trajectory kind"))
    elif isinstance(m, Sqrt):
        if not m.alpha > d.alpha:
            problems.append(("alpha_m", f"alpha_m={m.alpha} must exceed alpha_d={d.alpha}"))
    elif not m.v > d.v:
        problems.append(("v_m", f"v_m={m.v} must exceed v_d={d.v} (no cooling otherwise)"))

    if cfg.potentials is not None:
        for name in ("diode", "mirror", "quench"):
            p = getattr(cfg.potentials, name)
            if not (p.sigma > 0 and math.isfinite(p.sigma)):
                problems.append((f"sigma_{name[0]}", "must be > 0"))
            if not (p.V0 >= 0 and math.isfinite(p.V0)):
                problems.append((f"V0_{name[0]}", "must be >= 0"))
            if p.convention not in CONVENTIONS:
                problems.append((f"{name}.convention", f"unknown convention {p.convention!r}"))

    if not problems:
        # an unlimited horizon is checked over the first unit of time past any rest phase
        horizon = cfg.total_time if math.isfinite(cfg.total_time) else 1.0 + getattr(m, "t_rest", 0.0)
        ts = np.linspace(0.0, horizon, _ORDER_SAMPLES)[1:]
        gap = np.asarray(m.position(ts)) - np.asarray(d.position(ts))
        if np.any(gap <= 0):
            bad = ts[np.argmax(gap <= 0)]
            problems.append(("mirror", f"mirror not ahead of diode at t={bad:.6g}"))
    if problems:
        raise ConfigError(problems)
    return replace(cfg, total_time=float(cfg.total_time))
