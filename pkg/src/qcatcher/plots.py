"""Figures for CLI runs: PNGs through matplotlib and standalone gnuplot
scripts that redraw them from the emitted CSV files.

Scripts and figures refer to data files by path relative to the output
directory, so a run directory can be moved as a whole.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .classical import CollisionEvent
from .ensemble import Histogram1D

_RC = {"figure.figsize": (6.0, 4.0), "axes.grid": True, "grid.alpha": 0.3,
       "legend.fontsize": 8, "savefig.dpi": 120}


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _save(fig, path) -> Path:
    path = Path(path)
    # no timestamp or version in the PNG so reruns give identical bytes
    fig.savefig(path, metadata={"Software": None})
    _pyplot().close(fig)
    return path


def plot_branches(path, series: Dict[str, Sequence[CollisionEvent]]) -> Path:
    """Post-collision velocity against time, one marker series per scheme."""
    plt = _pyplot()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for (label, events), marker in zip(series.items(), ("o", "^", "s")):
            ax.plot([e.t for e in events], [e.v_after for e in events], marker, ms=3, label=label)
        ax.set_xlabel("t [T]")
        ax.set_ylabel("v after collision [d/T]")
        ax.legend()
        return _save(fig, path)


def plot_histograms(path, hists: Dict[str, Histogram1D], xlabel: str) -> Path:
    plt = _pyplot()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, h in hists.items():
            ax.stairs(h.density(), h.edges, label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("probability density")
        ax.legend()
        return _save(fig, path)


def plot_surface(path, x0s, v0s, surfaces: Dict[str, np.ndarray], title: Optional[str] = None) -> Path:
    """|v_f|/v0 maps side by side, one panel per scheme."""
    plt = _pyplot()
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(surfaces), figsize=(4.0 * len(surfaces), 3.5),
                                 squeeze=False)
        vmax = max(float(np.nanmax(s)) for s in surfaces.values())
        for ax, (label, s) in zip(axes[0], surfaces.items()):
            im = ax.pcolormesh(v0s, x0s, s, shading="auto", vmin=0.0, vmax=vmax)
            ax.set_title(label)
            ax.set_xlabel("v0 [d/T]")
            ax.set_ylabel("x0 [d]")
        fig.colorbar(im, ax=axes[0].tolist(), label="|v_f| / v0")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_populations(path, t, pops) -> Path:
    plt = _pyplot()
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for row, label in zip(pops, ("P1", "P2", "P3")):
            ax.plot(t, row, label=label)
        ax.set_xlabel("t [T]")
        ax.set_ylabel("population")
        ax.legend()
        return _save(fig, path)


# gnuplot scripts -------------------------------------------------------------

def _check(out_dir: Path, files):
    missing = [f for f in files if not (out_dir / f).is_file()]
    if missing:
        raise FileNotFoundError(f"plot script references missing files: {', '.join(missing)}")


def _header(png: str) -> list:
    return ["set datafile separator ','",
            "set key autotitle columnhead",
            "set terminal pngcairo size 900,600",
            f"set output '{png}'"]


def emit_plot_script(out_dir, kind: str, files: Dict[str, str], name: Optional[str] = None) -> Path:
    """Write a gnuplot script drawing ``files`` (label -> CSV path relative
    to ``out_dir``).

    kind is ``branches`` (event CSVs), ``histograms`` (histogram CSVs),
    ``surface`` (one surface CSV) or ``populations`` (one population CSV).
    """
    out_dir = Path(out_dir)
    if not files:
        raise ValueError("no output files to plot")
    _check(out_dir, files.values())
    name = name or kind
    lines = _header(f"{name}_gnuplot.png")
    if kind == "branches":
        lines += ["set xlabel 't [T]'", "set ylabel 'v after collision [d/T]'"]
        plots = [f"'{f}' using 2:6 with points title '{label}'" for label, f in files.items()]
    elif kind == "histograms":
        lines += ["set xlabel 'v [d/T]'", "set ylabel 'probability per bin'", "set style data steps"]
        plots = []
        for label, f in files.items():
            # first and last data rows hold under- and overflow
            last = len((out_dir / f).read_text().splitlines()) - 3
            plots.append(f"'{f}' every ::1::{last} using 1:3 title '{label}'")
    elif kind == "surface":
        (label, f), = files.items()
        lines += ["set xlabel 'v0 [d/T]'", "set ylabel 'x0 [d]'", f"set title '{label}'"]
        plots = [f"'{f}' using 2:1:3 with image title '|v_f|/v0 after last mirror collision'"]
    elif kind == "populations":
        (label, f), = files.items()
        lines += ["set xlabel 't [T]'", "set ylabel 'population'"]
        plots = [f"'{f}' using 1:{c} with lines" for c in (2, 3, 4)]
    else:
        raise ValueError(f"unknown plot kind {kind!r}")
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    path = out_dir / f"{name}.gp"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
