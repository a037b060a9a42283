"""Command-line front end.

    qcatcher classical-single   [--horizon unlimited|T]
    qcatcher classical-ensemble [--samples N]
    qcatcher quantum-ensemble   [--traj N]
    qcatcher oracle             [--compare]
    qcatcher compare A.csv B.csv

Every command accepts --config PATH, --out DIR, --seed N and --quiet, and
writes a manifest.json listing its outputs with SHA-256 digests. Exit codes:
0 success, 1 usage, 2 invalid configuration, 3 engine abort; failures print
a JSON error object on stderr and, when possible, save it as error.json.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import output, plots
from .classical import EventCapExceeded, final_velocity_surface, simulate, state_from
from .config import RunSettings, format_values, load_config
from .ensemble import (DEFAULT_VELOCITY_EDGES, ensemble_summary, evolve_ensemble, histogram,
                       ks_distance, l1_distance, sample_initial, sample_wigner)
from .lindblad import (MasterEquationError, ThreeLevelOperators, compare_with_unraveling,
                       evolve_master, initial_density, level_densities)
from .model import ConfigError, validate_config
from .quantum import (THREE_LEVEL, QuantumRunError, confined_fraction, run_quantum_ensemble,
                      validate_quantum)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SURFACE_X0 = (-1.5, -0.1)
SURFACE_V0 = (2.0, 25.0)
POSITION_EDGES = np.linspace(-2.0, 2.0, 401)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key=value config file (defaults when omitted)")
    common.add_argument("--out", default="qcatcher-out", help="output directory")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")

    p = _Parser(prog="qcatcher", description="Atom diode / mirror catcher simulations.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("classical-single", parents=[common],
                       help="one particle: collision events and velocity branches")
    s.add_argument("--horizon", choices=("unlimited", "T"), default="unlimited",
                   help="run events.csv until no collision is possible (default) or stop at T")

    s = sub.add_parser("classical-ensemble", parents=[common],
                       help="Monte Carlo ensemble: histograms, summary, |v_f|/v0 surfaces")
    s.add_argument("--samples", type=int, help="ensemble size (overrides n_samples)")
    s.add_argument("--surface-n", type=int, default=50, help="surface grid points per axis")

    s = sub.add_parser("quantum-ensemble", parents=[common],
                       help="quantum-jump trajectories: averaged final densities")
    s.add_argument("--traj", type=int, help="trajectory count (overrides n_traj)")
    s.add_argument("--samples", type=int, help="classical reference ensemble size")

    s = sub.add_parser("oracle", parents=[common],
                       help="three-level master equation on a small grid")
    s.add_argument("--traj", type=int, help="trajectory count for --compare")
    s.add_argument("--compare", action="store_true",
                   help="also average three-level jump trajectories and compare")

    s = sub.add_parser("compare", parents=[common], help="L1 and KS distance of two histogram CSVs")
    s.add_argument("first")
    s.add_argument("second")
    return p


class Run:
    """Output directory bookkeeping for one command."""

    def __init__(self, args, settings: Optional[RunSettings]):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        values = settings.values if settings else {}
        units = settings.scheme.units if settings else None
        self.manifest = output.RunManifest(
            command=[args.command] + _argv_tail(args), config=dict(values),
            seed=values.get("seed", 0), units=output.units_block(units) if units else {})
        self.files: List[Path] = []

    def path(self, name) -> Path:
        p = self.out / name
        self.files.append(p)
        return p

    def say(self, text):
        if not self.args.quiet:
            print(text)

    def finish(self):
        if self.manifest.config:
            output.write_json(self.path("config_resolved.json"), self.manifest.config)
            self.path("config_resolved.txt").write_text(format_values(self.manifest.config))
        for f in self.files:
            if f.exists():
                self.manifest.add(f, self.out)
        self.manifest.write(self.out)


def _argv_tail(args) -> List[str]:
    out = []
    for key, val in sorted(vars(args).items()):
        if key == "command" or val is None or val is False:
            continue
        out.append(f"--{key.replace('_', '-')}" + ("" if val is True else f"={val}"))
    return out


def _settings(args) -> RunSettings:
    settings = load_config(args.config)
    values = dict(settings.values)
    if args.seed is not None:
        values["seed"] = args.seed
    if getattr(args, "samples", None) is not None:
        values["n_samples"] = args.samples
    if getattr(args, "traj", None) is not None:
        values["n_traj"] = args.traj
    return replace(settings, values=values, seed=values["seed"], n_samples=values["n_samples"])


# commands --------------------------------------------------------------------

def cmd_classical_single(args) -> int:
    st = _settings(args)
    run = Run(args, st)
    cfg = st.scheme
    if args.horizon == "unlimited":
        cfg = validate_config(cfg.with_(total_time=math.inf))
    p = st.packet
    events, final = simulate(state_from(p.x0, p.v0, cfg), cfg)
    output.write_events(run.path("events.csv"), events)

    series = {}
    for scheme in (st.scheme, st.comparison_scheme()):
        ev, _ = simulate(state_from(p.x0, p.v0, scheme), scheme)
        name = f"branches_{scheme.scheme}.csv"
        output.write_events(run.path(name), ev)
        series[scheme.scheme] = (name, ev)
    plots.plot_branches(run.path("branches.png"), {k: v[1] for k, v in series.items()})
    run.files.append(plots.emit_plot_script(run.out, "branches", {k: v[0] for k, v in series.items()}))
    output.write_json(run.path("summary.json"), {
        "scheme": cfg.scheme, "horizon": args.horizon, "n_collisions": len(events),
        "final": {"t": final.t, "x": final.x, "v": final.v, "inside_trap": final.inside_trap,
                  "last_wall": final.last_wall},
        "branches_to_T": {k: len(v[1]) for k, v in series.items()},
    })
    run.finish()
    run.say(f"{len(events)} collisions, final v = {final.v!r}; outputs in {run.out}")
    return EXIT_OK


def cmd_classical_ensemble(args) -> int:
    st = _settings(args)
    run = Run(args, st)
    p = st.packet
    e0 = sample_initial(st.n_samples, p.x0, p.dx, p.v0, p.dv, st.seed)
    vh = {"initial": histogram(e0, "v", DEFAULT_VELOCITY_EDGES)}
    output.write_histogram(run.path("initial_v.csv"), vh["initial"])
    output.write_histogram(run.path("initial_x.csv"), histogram(e0, "x", POSITION_EDGES))
    summary = {"initial": ensemble_summary(e0), "n_samples": st.n_samples, "seed": st.seed}
    surfaces, files = {}, {"initial": "initial_v.csv"}
    x0s = np.linspace(*SURFACE_X0, args.surface_n)
    v0s = np.linspace(*SURFACE_V0, args.surface_n)
    for cfg in (st.scheme, st.comparison_scheme()):
        name = cfg.scheme
        ef = evolve_ensemble(e0, cfg)
        vh[name] = histogram(ef, "v", DEFAULT_VELOCITY_EDGES)
        output.write_histogram(run.path(f"final_v_{name}.csv"), vh[name])
        output.write_histogram(run.path(f"final_x_{name}.csv"), histogram(ef, "x", POSITION_EDGES))
        files[f"final {name}"] = f"final_v_{name}.csv"
        summary[name] = ensemble_summary(ef)
        mirror, diode = final_velocity_surface(x0s, v0s, cfg)
        output.write_surface(run.path(f"surface_{name}.csv"), x0s, v0s, mirror, diode)
        surfaces[f"{name}, last mirror collision"] = mirror
        surfaces[f"{name}, last diode collision"] = diode
    summary["l1_final_linear_vs_sqrt"] = l1_distance(vh["linear"], vh["sqrt"])
    output.write_json(run.path("summary.json"), summary)
    plots.plot_histograms(run.path("velocity.png"), vh, "v [d/T]")
    plots.plot_surface(run.path("surface.png"), x0s, v0s, surfaces)
    run.files.append(plots.emit_plot_script(run.out, "histograms", files, "velocity"))
    run.files.append(plots.emit_plot_script(run.out, "surface",
                                            {st.scheme.scheme: f"surface_{st.scheme.scheme}.csv"}))
    run.finish()
    s = summary[st.scheme.scheme]
    run.say(f"trapped fraction {s['trapped_fraction']:.4f}; outputs in {run.out}")
    return EXIT_OK


def cmd_quantum_ensemble(args) -> int:
    st = _settings(args)
    qcfg = validate_quantum(st.quantum())
    run = Run(args, st)
    progress = None if args.quiet else _progress
    res = run_quantum_ensemble(qcfg, progress)
    output.write_histogram(run.path("velocity.csv"), res.velocity)
    output.write_histogram(run.path("position.csv"), res.position)
    output.write_json(run.path("trajectories.json"), res.records)

    p = qcfg.packet
    ref = sample_wigner(st.n_samples, p.x0, p.dx, p.v0, p.dv, qcfg.mass, st.seed, qcfg.hbar)
    ref_cfg = replace(qcfg.scheme, potentials=None, quench=None)
    ref_final = evolve_ensemble(ref, ref_cfg)
    ref_v = histogram(ref_final, "v", qcfg.velocity_edges)
    output.write_histogram(run.path("classical_velocity.csv"), ref_v)
    mean, std = res.velocity.moments()
    summary = {
        "n_traj": qcfg.n_traj, "jumped_fraction": res.jumped_fraction,
        "populations": res.populations, "velocity_mean": mean, "velocity_std": std,
        "confined_fraction": confined_fraction(qcfg, res.grid_density),
        "boundary_leak": res.boundary_leak,
        "l1_vs_classical": l1_distance(res.velocity, ref_v),
        "classical_reference": ensemble_summary(ref_final),
    }
    output.write_json(run.path("summary.json"), summary)
    plots.plot_histograms(run.path("velocity.png"),
                          {"quantum": res.velocity, "classical": ref_v}, "v [d/T]")
    plots.plot_histograms(run.path("position.png"), {"quantum": res.position}, "x [d]")
    run.files.append(plots.emit_plot_script(
        run.out, "histograms", {"quantum": "velocity.csv", "classical": "classical_velocity.csv"},
        "velocity"))
    run.finish()
    run.say(f"velocity std {std:.4g}, confined {summary['confined_fraction']:.4f}; outputs in {run.out}")
    return EXIT_OK


def _progress(step, total, active):
    print(f"  step {step}/{total}, {active} post-jump rows", file=sys.stderr)


def master_dt(ops: ThreeLevelOperators, total_time: float, target: float = 2.0) -> float:
    """Largest dt dividing total_time with dt * |L| <= target at the run ends."""
    bound = max(ops.rate_bound(0.0), ops.rate_bound(total_time))
    return total_time / math.ceil(total_time * bound / target)


def cmd_oracle(args) -> int:
    st = _settings(args)
    qcfg = st.quantum()
    if qcfg.gamma is None:
        raise ConfigError([("gamma", "the master equation needs a decay rate gamma")])
    qcfg = validate_quantum(qcfg.with_(unraveling=THREE_LEVEL))
    run = Run(args, st)
    ops = ThreeLevelOperators(qcfg, qcfg.gamma)
    T = qcfg.scheme.total_time
    res = evolve_master(initial_density(qcfg), ops, T, master_dt(ops, T))
    output.write_rows(run.path("populations.csv"), output.POPULATION_COLUMNS,
                      zip(res.times, *res.populations))
    pops, dens = level_densities(res.rho)
    output.write_rows(run.path("density.csv"), output.DENSITY_COLUMNS,
                      zip(qcfg.grid.x, dens[0], dens[1], dens[2], dens.sum(axis=0)))
    summary = {"P1": pops[0], "P2": pops[1], "P3": pops[2], "gamma": qcfg.gamma,
               "trace": res.rho.trace(), "hermiticity_error": res.rho.hermiticity_error(),
               "min_eigenvalue": res.rho.min_eigenvalue()}
    if args.compare:
        traj = run_quantum_ensemble(qcfg)
        summary["unraveling"] = {"n_traj": qcfg.n_traj, "populations": traj.populations,
                                 **compare_with_unraveling(res.rho, qcfg.grid, traj.grid_density,
                                                           traj.populations)}
    output.write_json(run.path("summary.json"), summary)
    plots.plot_populations(run.path("populations.png"), res.times, res.populations)
    run.files.append(plots.emit_plot_script(run.out, "populations", {"populations": "populations.csv"}))
    run.finish()
    run.say(f"P1={pops[0]:.4f} P2={pops[1]:.4f} P3={pops[2]:.4g}; outputs in {run.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    run = Run(args, None)
    a = output.read_histogram(args.first)
    b = output.read_histogram(args.second)
    metrics = {"first": args.first, "second": args.second,
               "l1": l1_distance(a, b), "ks": ks_distance(a, b)}
    output.write_json(run.path("metrics.json"), metrics)
    run.finish()
    if not args.quiet:
        print(json.dumps(output._plain(metrics), sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "classical-single": cmd_classical_single,
    "classical-ensemble": cmd_classical_ensemble,
    "quantum-ensemble": cmd_quantum_ensemble,
    "oracle": cmd_oracle,
    "compare": cmd_compare,
}


def _fail(code, kind, message, out=None, problems=None) -> int:
    err = {"exit_code": code, "error": kind, "message": message}
    if problems:
        err["problems"] = [{"field": f, "message": m} for f, m in problems]
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "validation", str(exc), args.out, exc.problems)
    except (OSError, ValueError) as exc:
        # unreadable files and malformed inputs are the caller's problem
        return _fail(EXIT_USAGE if isinstance(exc, OSError) else EXIT_CONFIG,
                     type(exc).__name__, str(exc), args.out)
    except (EventCapExceeded, QuantumRunError, MasterEquationError) as exc:
        return _fail(EXIT_RUNTIME, type(exc).__name__, str(exc), args.out)


if __name__ == "__main__":
    sys.exit(main())
