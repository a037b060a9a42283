import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qcatcher import output
from qcatcher.classical import CollisionEvent
from qcatcher.config import (DEFAULTS, ParseError, format_values, load_config, parse_config,
                             parse_values)
from qcatcher.ensemble import Histogram1D, histogram, sample_initial
from qcatcher.model import ConfigError
from qcatcher.quantum import THREE_LEVEL, toy_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


# parsing ---------------------------------------------------------------------

def test_linear_example_parses():
    s = parse_config("scheme=linear\nv_m=1.0\nv_d=0.9")
    assert s.scheme.scheme == "linear"
    assert s.scheme.diode.v == 0.9 and s.scheme.mirror.v == 1.0


def test_empty_file_gives_defaults():
    s = parse_config("")
    assert s.values["v_d"] == 0.9 * s.values["v_m"]
    assert (s.packet.x0, s.packet.v0, s.packet.dx, s.packet.dv) == (-0.8, 10.0, 0.1, 5.0)
    assert s.n_samples == 100_000 and s.seed == 0
    assert s.values["alpha_d"] == 0.9 and s.values["alpha_m"] == 1.0
    q = s.values
    assert (q["mass"], q["V0_d"], q["V0_c"], q["sigma_d"], q["sigma_c"]) == (1000.0, 5e6, 4e4, 1e-4, 6e-4)


def test_bad_number_reports_line_and_column():
    with pytest.raises(ParseError) as err:
        parse_config("# header\nv_m=1\n  v_d = abc\n")
    assert (err.value.line, err.value.column) == (3, 9)
    with pytest.raises(ParseError) as err:
        parse_config("v_d=abc")
    assert (err.value.line, err.value.column) == (1, 5)


@pytest.mark.parametrize("text, line, col", [
    ("foo=1", 1, 1),
    ("v_m=1\n   bar=2", 2, 4),
    ("v_m", 1, 1),
    ("v_m=", 1, 5),
    ("v_m=1\nv_m=2", 2, 1),
    ("scheme=parabolic", 1, 8),
    ("n_traj=2.5", 1, 8),
])
def test_syntax_errors(text, line, col):
    with pytest.raises(ParseError) as err:
        parse_config(text)
    assert (err.value.line, err.value.column) == (line, col)


def test_comments_and_blank_lines():
    s = parse_config("\n# all defaults but one\n\nv0 = 15  # faster\n")
    assert s.packet.v0 == 15.0


def test_validation_lists_every_problem():
    with pytest.raises(ConfigError) as err:
        parse_config("v_d=1.0\ndx=0\nn_traj=0")
    fields = {f for f, _ in err.value.problems}
    assert {"dx", "n_traj"} <= fields and len(fields) >= 3


def test_sqrt_scheme_uses_alphas():
    s = parse_config("scheme=sqrt\nalpha_d=0.8\nalpha_m=1.0")
    assert s.scheme.scheme == "sqrt" and s.scheme.diode.alpha == 0.8
    assert s.comparison_scheme().scheme == "linear"


def test_format_values_round_trips():
    s = load_config(str(CONFIGS / "toy.cfg"))
    again = parse_values(format_values(s.values))
    assert again == s.values


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=0.01, max_value=0.99), st.floats(min_value=-5, max_value=5),
       st.integers(min_value=1, max_value=10 ** 6))
def test_value_round_trip(ratio, x0, n):
    vals = parse_values(f"v_d={ratio!r}\nx0={x0!r}\nn_samples={n}")
    assert parse_values(format_values(vals)) == vals


def test_toy_config_file_matches_preset():
    q = load_config(str(CONFIGS / "toy.cfg")).quantum()
    t = toy_config(gamma=100.0, unraveling=THREE_LEVEL)
    assert (q.scheme, q.grid, q.packet, q.dt, q.n_traj, q.gamma, q.unraveling, q.boundary_tol) == \
        (t.scheme, t.grid, t.packet, t.dt, t.n_traj, t.gamma, t.unraveling, t.boundary_tol)


def test_every_default_key_is_documented_type():
    for key, (kind, default) in DEFAULTS.items():
        assert kind in (str, int, float)
        assert default is None or isinstance(default, kind)


# files -----------------------------------------------------------------------

def test_fmt_is_shortest_round_trip():
    for x in (0.1, 1 / 3, 1e-300, 2.0 ** 0.5, -0.0):
        assert float(output.fmt(x)) == x and output.fmt(x) == repr(x)
    assert output.fmt(np.float64(0.1)) == "0.1"
    assert output.fmt(np.int64(7)) == "7" and output.fmt(True) == "true"


def test_events_round_trip(tmp_path):
    events = [CollisionEvent(1, 0.1, 0.09, "diode", 10.0, -8.2),
              CollisionEvent(2, 1 / 3, 1 / 7, "mirror", -8.2, 10.2)]
    output.write_events(tmp_path / "e.csv", events)
    assert output.read_events(tmp_path / "e.csv") == events
    header = (tmp_path / "e.csv").read_text().splitlines()[0]
    assert header == "n,t,x,wall,v_before,v_after"


def test_histogram_round_trip_is_exact(tmp_path):
    ens = sample_initial(5000, -0.8, 0.1, 10.0, 5.0, seed=4)
    h = histogram(ens, "v", np.linspace(-5.0, 20.0, 51))
    output.write_histogram(tmp_path / "h.csv", h)
    back = output.read_histogram(tmp_path / "h.csv")
    assert np.array_equal(back.edges, h.edges) and np.array_equal(back.mass, h.mass)
    assert (back.underflow, back.overflow) == (h.underflow, h.overflow)
    rows = output.read_rows(tmp_path / "h.csv")
    assert rows[0]["lower_edge"] == "-inf" and rows[-1]["upper_edge"] == "inf"


def test_read_histogram_rejects_other_files(tmp_path):
    output.write_events(tmp_path / "e.csv", [CollisionEvent(1, 0.1, 0.1, "diode", 1.0, 0.8)] * 3)
    with pytest.raises(ValueError):
        output.read_histogram(tmp_path / "e.csv")


def test_json_is_sorted_and_plain(tmp_path):
    output.write_json(tmp_path / "a.json", {"b": np.float64(1.5), "a": [np.int32(2), math.inf]})
    text = (tmp_path / "a.json").read_text()
    assert text.index('"a"') < text.index('"b"') and '"inf"' in text


def test_manifest_lists_digests(tmp_path):
    f = tmp_path / "x.csv"
    f.write_text("a\n1\n")
    m = output.RunManifest(command=["test"], config={"seed": 1}, seed=1, units={})
    m.add(f, tmp_path)
    m.write(tmp_path)
    data = output.load_manifest(tmp_path / "manifest.json")
    assert data["outputs"] == [{"path": "x.csv", "bytes": 4, "sha256": output.sha256_file(f)}]
    assert data["finished_unix"] >= data["started_unix"]
    assert set(data["engines"]) >= {"numpy", "scipy", "python", "qcatcher"}


def test_units_block_rb87_example():
    from qcatcher.model import Units
    u = output.units_block(Units(mass=1000.0))["example_rb87"]
    assert u["d_m"] == 1e-5
    # m d^2 / (hbar T) = 1000 fixes T
    assert u["mass_kg"] * u["d_m"] ** 2 / (u["hbar_J_s"] * u["T_s"]) == pytest.approx(1000.0)


# plot scripts ------------------------------------------------------------------

def test_plot_script_uses_relative_paths(tmp_path):
    from qcatcher.plots import emit_plot_script
    for name in ("branches_linear.csv", "branches_sqrt.csv"):
        output.write_events(tmp_path / name, [CollisionEvent(1, 0.1, 0.1, "diode", 1.0, 0.8)])
    gp = emit_plot_script(tmp_path, "branches", {"linear": "branches_linear.csv",
                                                 "sqrt": "branches_sqrt.csv"})
    text = gp.read_text()
    assert "'branches_linear.csv'" in text and "'branches_sqrt.csv'" in text
    assert str(tmp_path) not in text


def test_histogram_script_overlays_three_series(tmp_path):
    from qcatcher.plots import emit_plot_script
    h = Histogram1D(np.linspace(0, 1, 5), np.full(4, 0.25))
    files = {}
    for label in ("initial", "final linear", "final sqrt"):
        name = label.replace(" ", "_") + ".csv"
        output.write_histogram(tmp_path / name, h)
        files[label] = name
    text = emit_plot_script(tmp_path, "histograms", files, "velocity").read_text()
    assert text.count("every ::1::4") == 3


def test_plot_script_errors(tmp_path):
    from qcatcher.plots import emit_plot_script
    with pytest.raises(ValueError):
        emit_plot_script(tmp_path, "branches", {})
    with pytest.raises(FileNotFoundError):
        emit_plot_script(tmp_path, "branches", {"linear": "missing.csv"})


def test_reduced_config_file_matches_preset():
    from qcatcher.quantum import reduced_config
    q = load_config(str(CONFIGS / "reduced.cfg")).quantum()
    r = reduced_config()
    assert (q.scheme, q.grid, q.packet, q.dt, q.n_traj, q.boundary_tol) == \
        (r.scheme, r.grid, r.packet, r.dt, r.n_traj, r.boundary_tol)
