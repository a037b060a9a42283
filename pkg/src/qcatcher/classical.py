"""Exact event-driven motion of classical point particles between an ideal
moving diode and an ideal moving mirror.

Walls are infinitely thin and infinitely high. A particle crossing the diode
from the left passes unchanged; from the right it is reflected. Between
events the motion is free, so every event time is the root of a closed-form
equation (one division for linear walls, a quadratic in sqrt(t) for
square-root walls).

The closed-form recursions for the linear scheme (velocity and time of the
n-th collision, maximal collision count) live here too; they are used as
independent oracles for the event engine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .model import Linear, SchemeConfig, Sqrt

DIODE = "diode"
MIRROR = "mirror"

# minimal approach speed (in d/T) for a collision to be admitted
APPROACH_EPS = 1e-12
DEFAULT_EVENT_CAP = 1_000_000

LEFT, INSIDE, OUTSIDE = 0, 1, 2
_NONE, _PASS, _HIT_MIRROR, _HIT_DIODE = 0, 1, 2, 3


class EventCapExceeded(RuntimeError):
    """More collisions than the configured cap: the configuration is degenerate."""

    def __init__(self, cap, index=None):
        self.cap = cap
        self.index = index
        where = "" if index is None else f" (sample {index})"
        super().__init__(f"collision count exceeded cap of {cap}{where}")


@dataclass(frozen=True)
class ClassicalState:
    t: float
    x: float
    v: float
    n_collisions: int = 0
    inside_trap: bool = False
    last_wall: Optional[str] = None


@dataclass(frozen=True)
class CollisionEvent:
    n: int
    t: float
    x: float
    wall: str
    v_before: float
    v_after: float


def reflect(v_p, v_wall):
    """Elastic reflection off a wall moving at ``v_wall``."""
    return 2.0 * v_wall - v_p


def initial_side(x, cfg: SchemeConfig, t=0.0):
    """LEFT of the diode, INSIDE the trap, or OUTSIDE beyond the mirror."""
    x = np.asarray(x, dtype=float)
    xd = cfg.diode.position(t)
    xm = cfg.mirror.position(t)
    return np.where(x < xd, LEFT, np.where(x <= xm, INSIDE, OUTSIDE))


def _earliest(traj, x, v, t, t_end, direction):
    """Earliest admissible crossing of ``traj`` in [t, t_end].

    direction=+1 admits crossings with v > wall velocity (particle coming
    from the left), -1 the opposite.
    """
    tc = traj.crossings(x, v, t)
    ok = np.isfinite(tc) & (tc >= t) & (tc <= t_end)
    if isinstance(traj, Sqrt):
        ok &= tc > 0.0
    w = traj.velocity(np.where(ok, tc, max(t_end, 1e-300)))
    ok &= direction * (v - w) > APPROACH_EPS
    tc = np.where(ok, tc, np.inf)
    return tc.min(axis=0)


def _next_event(x, v, t, side, cfg: SchemeConfig):
    """Vectorised: (time, code) of the next event for each particle."""
    T = cfg.total_time
    x, v, t, side = np.broadcast_arrays(*map(np.asarray, (x, v, t, side)))
    t_pass = _earliest(cfg.diode, x, v, t, T, +1)
    t_mirror = _earliest(cfg.mirror, x, v, t, T, +1)
    t_diode = _earliest(cfg.diode, x, v, t, T, -1)

    inside = side == INSIDE
    t_in = np.minimum(t_mirror, t_diode)
    code_in = np.where(t_mirror <= t_diode, _HIT_MIRROR, _HIT_DIODE)
    t_next = np.where(inside, t_in, np.where(side == LEFT, t_pass, np.inf))
    code = np.where(inside, code_in, _PASS)
    code = np.where(np.isfinite(t_next), code, _NONE)
    return t_next, code


def next_collision(state: ClassicalState, cfg: SchemeConfig) -> Optional[CollisionEvent]:
    """The next wall reflection after ``state``, or None before total_time.

    A passage through the diode from the left is not a collision; it is
    stepped over transparently.
    """
    side = INSIDE if state.inside_trap else int(initial_side(state.x, cfg, state.t))
    x, v, t = state.x, state.v, state.t
    while True:
        tn, code = _next_event(x, v, t, side, cfg)
        tn, code = float(tn), int(code)
        if code == _NONE:
            return None
        if code == _PASS:
            x, t, side = float(cfg.diode.position(tn)), tn, INSIDE
            continue
        wall = cfg.mirror if code == _HIT_MIRROR else cfg.diode
        w = float(wall.velocity(tn))
        return CollisionEvent(
            n=state.n_collisions + 1, t=tn, x=float(wall.position(tn)),
            wall=MIRROR if code == _HIT_MIRROR else DIODE,
            v_before=v, v_after=reflect(v, w),
        )


def simulate(initial: ClassicalState, cfg: SchemeConfig,
             event_cap: int = DEFAULT_EVENT_CAP) -> Tuple[List[CollisionEvent], ClassicalState]:
    """Run one particle until no further collision happens before total_time.

    Returns the ordered collision record and the state at t = total_time,
    or right after the last event when the horizon is unlimited.
    """
    if initial.t != 0.0:
        raise ValueError("simulate() starts at t = 0")
    T = cfg.total_time
    side = INSIDE if initial.inside_trap else int(initial_side(initial.x, cfg))
    x, v, t = float(initial.x), float(initial.v), 0.0
    events: List[CollisionEvent] = []
    last = None
    while True:
        tn, code = _next_event(x, v, t, side, cfg)
        tn, code = float(tn), int(code)
        if code == _NONE:
            break
        if code == _PASS:
            x, t, side = float(cfg.diode.position(tn)), tn, INSIDE
            continue
        if len(events) >= event_cap:
            raise EventCapExceeded(event_cap)
        wall = cfg.mirror if code == _HIT_MIRROR else cfg.diode
        last = MIRROR if code == _HIT_MIRROR else DIODE
        x, t = float(wall.position(tn)), tn
        v_new = reflect(v, float(wall.velocity(tn)))
        events.append(CollisionEvent(len(events) + 1, t, x, last, v, v_new))
        v = v_new
    if math.isfinite(T):
        x, t = x + v * (T - t), T
    final = ClassicalState(
        t=t, x=x, v=v, n_collisions=len(events),
        inside_trap=side == INSIDE, last_wall=last,
    )
    return events, final


@dataclass
class BatchResult:
    """Final phase-space points of many independent particles at total_time
    (after their last event for an unlimited horizon)."""

    x: np.ndarray
    v: np.ndarray
    inside: np.ndarray
    n_collisions: np.ndarray
    # velocity right after the last mirror / diode reflection (nan if none)
    v_last_mirror: np.ndarray
    v_last_diode: np.ndarray


def simulate_many(x0, v0, cfg: SchemeConfig, event_cap: int = DEFAULT_EVENT_CAP) -> BatchResult:
    """Vectorised simulate() for arrays of initial positions and velocities.

    Particles advance one event per sweep; the per-particle arithmetic is
    identical to the scalar engine.
    """
    x = np.array(x0, dtype=float).ravel()
    v = np.array(v0, dtype=float).ravel()
    x, v = np.broadcast_arrays(x, v)
    x, v = x.copy(), v.copy()
    n = x.size
    t = np.zeros(n)
    side = initial_side(x, cfg).astype(np.int8)
    ncoll = np.zeros(n, dtype=np.int64)
    v_lm = np.full(n, np.nan)
    v_ld = np.full(n, np.nan)
    active = np.flatnonzero(side != OUTSIDE)
    while active.size:
        tn, code = _next_event(x[active], v[active], t[active], side[active], cfg)
        moving = code != _NONE
        active, tn, code = active[moving], tn[moving], code[moving]
        if not active.size:
            break
        p = code == _PASS
        if p.any():
            ip = active[p]
            x[ip] = cfg.diode.position(tn[p])
            t[ip] = tn[p]
            side[ip] = INSIDE
        for hit, wall, store in ((_HIT_MIRROR, cfg.mirror, v_lm), (_HIT_DIODE, cfg.diode, v_ld)):
            h = code == hit
            if not h.any():
                continue
            ih = active[h]
            x[ih] = wall.position(tn[h])
            t[ih] = tn[h]
            v[ih] = reflect(v[ih], wall.velocity(tn[h]))
            store[ih] = v[ih]
            ncoll[ih] += 1
        over = ncoll[active] > event_cap
        if over.any():
            raise EventCapExceeded(event_cap, int(active[np.argmax(over)]))
    T = cfg.total_time
    if math.isfinite(T):
        x = x + v * (T - t)
    return BatchResult(x, v, side == INSIDE, ncoll, v_lm, v_ld)


# closed forms for the linear scheme -----------------------------------------

def velocity_after_n(n: int, v_i: float, v_d: float, v_m: float) -> float:
    """Velocity after the n-th collision (even n: diode, odd n: mirror)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n % 2 == 0:
        return n * (v_d - v_m) + v_i
    return (n - 1) * (v_m - v_d) + 2.0 * v_m - v_i


def time_of_nth(n: int, x_i: float, v_i: float, cfg: SchemeConfig) -> float:
    """Time of the n-th collision for a particle starting left of both walls.

    The product over diode reflections runs over even k = 2, 4, ... < n and
    the product over mirror reflections over odd l = 1, 3, ... < n.
    """
    if not (isinstance(cfg.diode, Linear) and isinstance(cfg.mirror, Linear)):
        raise ValueError("closed forms hold for the linear scheme only")
    if n < 1:
        raise ValueError("n must be >= 1")
    v_d, v_m = cfg.diode.v, cfg.mirror.v
    if v_i == v_m:
        raise ValueError("particle co-moving with the mirror never reaches it")
    t = x_i / (v_m - v_i)
    for k in range(1, n):
        vk = velocity_after_n(k, v_i, v_d, v_m)
        if k % 2 == 0:
            t *= (vk - v_d) / (vk - v_m)
        else:
            t *= (vk - v_m) / (vk - v_d)
    return t


def max_collisions(v_i: float, v_d: float, v_m: float) -> Tuple[float, Tuple[float, float]]:
    """r = (v_i - v_d) / (v_m - v_d) with r - 1 <= n_max <= r."""
    if not v_m > v_d:
        raise ValueError("requires v_m > v_d")
    r = (v_i - v_d) / (v_m - v_d)
    return r, (r - 1.0, r)


def final_velocity_surface(x0s, v0s, cfg: SchemeConfig):
    """|v_f|/v0 on the (x0, v0) grid, after the last mirror and last diode
    collision. Particles without such a collision keep v_f = v0.

    Returns two arrays of shape (len(x0s), len(v0s)).
    """
    X, V = np.meshgrid(np.asarray(x0s, float), np.asarray(v0s, float), indexing="ij")
    res = simulate_many(X.ravel(), V.ravel(), cfg)
    vm = np.where(np.isnan(res.v_last_mirror), V.ravel(), res.v_last_mirror)
    vd = np.where(np.isnan(res.v_last_diode), V.ravel(), res.v_last_diode)
    return (np.abs(vm) / V.ravel()).reshape(X.shape), (np.abs(vd) / V.ravel()).reshape(X.shape)


def state_from(x: float, v: float, cfg: SchemeConfig) -> ClassicalState:
    """Initial state at t = 0, flagged inside when it starts between the walls."""
    return ClassicalState(t=0.0, x=x, v=v, inside_trap=bool(initial_side(x, cfg) == INSIDE))
