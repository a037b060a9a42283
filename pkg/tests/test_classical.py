import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcatcher.classical import (DIODE, MIRROR, ClassicalState, EventCapExceeded, max_collisions,
                                next_collision, reflect, simulate, simulate_many, state_from,
                                time_of_nth, velocity_after_n)
from qcatcher.model import RestThenLinear, SchemeConfig, Sqrt, linear_scheme, sqrt_scheme

PAPER = linear_scheme(0.9, 1.0)
UNLIMITED = linear_scheme(0.9, 1.0, total_time=math.inf)

# hand-solved free-flight intersections for x_i = -0.8, v_i = 10:
# mirror at t = 0.8/9, diode at 0.8/8.9, mirror again at 0.8/8.8
T1, T2, T3 = 0.8 / 9.0, 0.8 / 8.9, 0.8 / 8.8


def test_reflect_examples():
    assert reflect(10.0, 1.0) == -8.0
    assert reflect(0.7, 0.7) == 0.7
    assert reflect(-8.0, 0.9) == pytest.approx(9.8)


def test_next_collision_first_two_bounces():
    ev = next_collision(state_from(-0.8, 10.0, PAPER), PAPER)
    assert ev.wall == MIRROR and ev.n == 1
    assert ev.t == pytest.approx(T1, rel=1e-14) and ev.x == pytest.approx(T1, rel=1e-14)
    after = ClassicalState(ev.t, ev.x, ev.v_after, 1, True, MIRROR)
    ev2 = next_collision(after, PAPER)
    assert ev2.wall == DIODE and ev2.t == pytest.approx(T2, rel=1e-14)


def test_dense_time_stepping_agrees_with_first_collision():
    # brute force: walk the free flight on a fine lattice until it passes the mirror
    ts = np.linspace(0.0, 0.2, 2_000_001)
    gap = (-0.8 + 10.0 * ts) - ts
    t_cross = ts[np.argmax(gap >= 0)]
    assert abs(t_cross - T1) <= 1e-7


@given(st.floats(min_value=0.1, max_value=50.0), st.floats(min_value=0.1, max_value=5.0))
def test_sqrt_launch_from_origin(v, alpha):
    cfg = SchemeConfig(Sqrt(0.5 * alpha), Sqrt(alpha))
    ev = next_collision(ClassicalState(0.0, 0.0, v, 0, True), cfg)
    if alpha**2 / v**2 > 1.0:
        assert ev is None
        return
    assert ev.t == pytest.approx(alpha**2 / v**2, rel=1e-12)
    assert abs(ev.v_after) <= 1e-12 * max(1.0, v)


def test_paper_particle_collision_count():
    events, final = simulate(state_from(-0.8, 10.0, UNLIMITED), UNLIMITED)
    assert len(events) == 90
    r, (lo, hi) = max_collisions(10.0, 0.9, 1.0)
    assert r == pytest.approx(91.0) and lo - 1e-9 <= len(events) <= hi + 1e-9
    assert 0.9 <= final.v <= 1.0 + 1e-12
    assert final.inside_trap and final.last_wall == DIODE


def test_closed_forms_match_every_event():
    events, _ = simulate(state_from(-0.8, 10.0, UNLIMITED), UNLIMITED)
    for e in events:
        v = velocity_after_n(e.n, 10.0, 0.9, 1.0)
        t = time_of_nth(e.n, -0.8, 10.0, PAPER)
        assert abs(e.v_after - v) <= 1e-10 * abs(v)
        assert abs(e.t - t) <= 1e-10 * t


def test_time_of_nth_examples():
    assert time_of_nth(1, -0.8, 10.0, PAPER) == pytest.approx(T1, rel=1e-14)
    assert time_of_nth(2, -0.8, 10.0, PAPER) == pytest.approx(T2, rel=1e-14)
    assert time_of_nth(3, -0.8, 10.0, PAPER) == pytest.approx(T3, rel=1e-14)
    with pytest.raises(ValueError):
        time_of_nth(1, -0.8, 1.0, PAPER)


def test_velocity_after_n_examples():
    assert velocity_after_n(0, 10.0, 0.9, 1.0) == 10.0
    assert velocity_after_n(1, 10.0, 0.9, 1.0) == -8.0
    assert velocity_after_n(2, 10.0, 0.9, 1.0) == pytest.approx(9.8)


def test_max_collisions_examples():
    assert max_collisions(2.0, 0.9, 1.0)[0] == pytest.approx(11.0)
    assert max_collisions(1.0, 0.9, 1.0)[0] == pytest.approx(1.0)


def test_slow_particle_never_collides():
    events, final = simulate(state_from(-0.8, 0.5, PAPER), PAPER)
    assert events == [] and final.v == 0.5
    assert final.x == pytest.approx(-0.3)


def test_sqrt_scheme_collides_less_by_T():
    lin, _ = simulate(state_from(-0.8, 10.0, PAPER), PAPER)
    sq, _ = simulate(state_from(-0.8, 10.0, sqrt_scheme()), sqrt_scheme())
    assert len(sq) < len(lin)


def test_event_cap():
    with pytest.raises(EventCapExceeded):
        simulate(state_from(-0.8, 10.0, UNLIMITED), UNLIMITED, event_cap=10)


initial = st.tuples(st.floats(min_value=-1.5, max_value=-0.01), st.floats(min_value=1.05, max_value=40.0))


@settings(max_examples=60)
@given(initial)
def test_event_invariants(xv):
    x0, v0 = xv
    events, final = simulate(state_from(x0, v0, UNLIMITED), UNLIMITED)
    r, _ = max_collisions(v0, 0.9, 1.0)
    assert len(events) <= math.ceil(r)
    for e in events:
        w = 1.0 if e.wall == MIRROR else 0.9
        assert e.v_after == 2 * w - e.v_before
        assert abs(abs(e.v_after - w) - abs(e.v_before - w)) <= 1e-12 * abs(e.v_before)
        assert (e.n % 2 == 1) == (e.wall == MIRROR)
        assert 0.9 * e.t - 1e-9 <= e.x <= e.t + 1e-9
    assert all(a.t < b.t for a, b in zip(events, events[1:]))
    v = [v0] + [e.v_after for e in events]
    for n in range(2, len(v)):
        step = v[n] - v[n - 2]
        assert step == pytest.approx(-0.2 if n % 2 == 0 else 0.2, abs=1e-9)
        if n % 2 == 0:
            assert v[n] >= v[n - 1] - 1e-12
    even = [v[n] for n in range(2, len(v), 2)]
    odd = [v[n] for n in range(1, len(v), 2)]
    if even and odd:
        assert min(even) >= max(odd) - 1e-12


@settings(max_examples=40)
@given(initial)
def test_confined_at_T(xv):
    events, final = simulate(state_from(*xv, PAPER), PAPER)
    if final.inside_trap:
        assert 0.9 - 1e-9 <= final.x <= 1.0 + 1e-9


def test_batch_matches_scalar_engine():
    rng = np.random.default_rng(3)
    x0 = rng.uniform(-1.5, 0.3, 300)
    v0 = rng.normal(8.0, 6.0, 300)
    for cfg in (PAPER, sqrt_scheme(), SchemeConfig(RestThenLinear(0.9, 0.4), RestThenLinear(1.0, 0.4))):
        res = simulate_many(x0, v0, cfg)
        for i in range(0, 300, 7):
            events, final = simulate(state_from(x0[i], v0[i], cfg), cfg)
            assert res.n_collisions[i] == len(events)
            assert res.v[i] == final.v and res.x[i] == final.x
            assert res.inside[i] == final.inside_trap


def test_particle_right_of_mirror_never_interacts():
    events, final = simulate(ClassicalState(0.0, 0.5, 3.0), linear_scheme(0.0, 0.1))
    assert events == [] and not final.inside_trap
