"""CSV/JSON emission and the run manifest.

Floats are written as the shortest decimal string that round-trips to the
same 64-bit value (``repr``), so files are bit-stable and re-reading them
gives back the in-memory numbers exactly.

File schemas (column order is fixed):

* events:      n, t, x, wall, v_before, v_after
* histogram:   lower_edge, upper_edge, mass; the first row (-inf, e_0) holds
               the underflow and the last row (e_N, inf) the overflow
* surface:     x0, v0, ratio_mirror, ratio_diode
* populations: t, P1, P2, P3
* density:     x, level1, level2, level3, total
* wavefunction: x, re, im
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from . import __version__
from .classical import CollisionEvent
from .ensemble import Histogram1D
from .model import HBAR_SI, RB87_MASS_KG, Units

EVENT_COLUMNS = ("n", "t", "x", "wall", "v_before", "v_after")
HISTOGRAM_COLUMNS = ("lower_edge", "upper_edge", "mass")
SURFACE_COLUMNS = ("x0", "v0", "ratio_mirror", "ratio_diode")
POPULATION_COLUMNS = ("t", "P1", "P2", "P3")
DENSITY_COLUMNS = ("x", "level1", "level2", "level3", "total")
WAVEFUNCTION_COLUMNS = ("x", "re", "im")


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_rows(path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_rows(path) -> List[Dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_events(path, events: Sequence[CollisionEvent]) -> Path:
    return write_rows(path, EVENT_COLUMNS,
                      ((e.n, e.t, e.x, e.wall, e.v_before, e.v_after) for e in events))


def read_events(path) -> List[CollisionEvent]:
    return [CollisionEvent(int(r["n"]), float(r["t"]), float(r["x"]), r["wall"],
                           float(r["v_before"]), float(r["v_after"])) for r in read_rows(path)]


def write_histogram(path, h: Histogram1D) -> Path:
    rows = [(-math.inf, h.edges[0], h.underflow)]
    rows += list(zip(h.edges[:-1], h.edges[1:], h.mass))
    rows.append((h.edges[-1], math.inf, h.overflow))
    return write_rows(path, HISTOGRAM_COLUMNS, rows)


def read_histogram(path) -> Histogram1D:
    rows = read_rows(path)
    if len(rows) < 3 or list(rows[0]) != list(HISTOGRAM_COLUMNS):
        raise ValueError(f"{path}: not a histogram file")
    lo = np.array([float(r["lower_edge"]) for r in rows])
    hi = np.array([float(r["upper_edge"]) for r in rows])
    mass = np.array([float(r["mass"]) for r in rows])
    if not (lo[0] == -math.inf and hi[-1] == math.inf and np.array_equal(hi[:-1], lo[1:])):
        raise ValueError(f"{path}: histogram rows are not contiguous")
    return Histogram1D(lo[1:], mass[1:-1], float(mass[0]), float(mass[-1]))


def write_surface(path, x0s, v0s, mirror, diode) -> Path:
    rows = ((x, v, mirror[i, j], diode[i, j])
            for i, x in enumerate(x0s) for j, v in enumerate(v0s))
    return write_rows(path, SURFACE_COLUMNS, rows)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def units_block(units: Units) -> dict:
    """Natural-unit mapping plus the 87Rb conversion example (d = 10 um)."""
    rb = Units.for_particle(units.mass, RB87_MASS_KG, 10e-6)
    return {
        "natural": {"d": 1.0, "T": 1.0, "hbar": units.hbar, "mass_hbar_T_per_d2": units.mass},
        "example_rb87": {
            "mass_kg": RB87_MASS_KG, "hbar_J_s": HBAR_SI, "d_m": rb.d_si, "T_s": rb.T_si,
            "velocity_unit_m_per_s": rb.velocity_si(1.0),
        },
    }


@dataclass
class RunManifest:
    command: List[str]
    config: dict
    seed: int
    units: dict
    started: float = field(default_factory=time.time)
    finished: float = 0.0
    outputs: List[dict] = field(default_factory=list)

    def engines(self) -> dict:
        import scipy
        return {"qcatcher": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                "python": platform.python_version()}

    def add(self, path, root) -> None:
        path, root = Path(path), Path(root)
        self.outputs.append({"path": path.relative_to(root).as_posix(),
                             "sha256": sha256_file(path), "bytes": path.stat().st_size})

    def write(self, out_dir) -> Path:
        self.finished = time.time()
        self.outputs.sort(key=lambda o: o["path"])
        data = {
            "command": self.command, "config": self.config, "seed": self.seed,
            "engines": self.engines(), "units": self.units,
            "started_unix": self.started, "finished_unix": self.finished,
            "outputs": self.outputs,
        }
        return write_json(Path(out_dir) / "manifest.json", data)


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
