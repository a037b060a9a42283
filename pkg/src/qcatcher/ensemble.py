"""Monte Carlo propagation of a classical phase-space density.

Samples of rho(0, x, v) are drawn once, pushed through the event engine
independently and binned into normalised one-dimensional marginals.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .classical import DEFAULT_EVENT_CAP, EventCapExceeded, simulate_many
from .model import SchemeConfig

DEFAULT_SAMPLES = 100_000
DEFAULT_VELOCITY_EDGES = np.linspace(-5.0, 20.0, 201)


@dataclass
class PhaseEnsemble:
    x: np.ndarray
    v: np.ndarray
    t: float = 0.0
    seed: Optional[int] = None
    inside: Optional[np.ndarray] = None
    n_collisions: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.x.shape != self.v.shape or self.x.ndim != 1 or self.x.size < 1:
            raise ValueError("need matching 1D arrays with at least one sample")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("samples must be finite")

    @property
    def n(self) -> int:
        return self.x.size


@dataclass
class Histogram1D:
    edges: np.ndarray
    mass: np.ndarray
    underflow: float = 0.0
    overflow: float = 0.0

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=float)
        self.mass = np.asarray(self.mass, dtype=float)
        _check_edges(self.edges)
        if self.mass.shape != (self.edges.size - 1,):
            raise ValueError("need one mass value per bin")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def total(self) -> float:
        return float(self.mass.sum() + self.underflow + self.overflow)

    def density(self) -> np.ndarray:
        return self.mass / np.diff(self.edges)

    def moments(self):
        """Mean and standard deviation using bin centres (in-range mass only)."""
        w = self.mass / self.mass.sum()
        mean = float(np.dot(w, self.centers))
        return mean, float(np.sqrt(np.dot(w, (self.centers - mean) ** 2)))


def _check_edges(edges):
    if edges.ndim != 1 or edges.size < 2:
        raise ValueError("need at least two bin edges")
    if not np.all(np.diff(edges) > 0):
        raise ValueError("bin edges must be strictly increasing")


def sample_initial(n: int, x0: float, dx: float, v0: float, dv: float, seed: int) -> PhaseEnsemble:
    """Draw from rho(0,x,v) ~ exp(-[((x-x0)/(2 dx))^2 + ((v-v0)/(2 dv))^2]).

    That exponent means standard deviations sqrt(2) dx and sqrt(2) dv.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not (dx > 0 and dv > 0):
        raise ValueError("widths must be positive")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, n))
    x = x0 + np.sqrt(2.0) * dx * z[0]
    v = v0 + np.sqrt(2.0) * dv * z[1]
    return PhaseEnsemble(x, v, 0.0, seed)


def sample_wigner(n: int, x0: float, dx: float, v0: float, dv: float, mass: float,
                  seed: int, hbar: float = 1.0) -> PhaseEnsemble:
    """Classical ensemble with the Wigner distribution of the chirped
    Gaussian wavepacket: std dx and dv, covariance c hbar / m."""
    c2 = (dx * mass * dv / hbar) ** 2 - 0.25
    if c2 < 0:
        raise ValueError("widths violate the uncertainty relation")
    cov = np.array([[dx * dx, np.sqrt(c2) * hbar / mass], [np.sqrt(c2) * hbar / mass, dv * dv]])
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, n))
    # 2x2 Cholesky, robust when the correlation is close to one
    a = dx
    b = cov[0, 1] / a
    d = np.sqrt(max(dv * dv - b * b, 0.0))
    return PhaseEnsemble(x0 + a * z[0], v0 + b * z[0] + d * z[1], 0.0, seed)


def evolve_ensemble(e: PhaseEnsemble, cfg: SchemeConfig, workers: int = 1,
                    chunk: int = 20_000, event_cap: int = DEFAULT_EVENT_CAP) -> PhaseEnsemble:
    """Propagate every sample to t = total_time. Result does not depend on
    ``workers`` or ``chunk``."""
    if e.t != 0.0:
        raise ValueError("ensemble must start at t = 0")
    bounds = [(i, min(i + chunk, e.n)) for i in range(0, e.n, chunk)]

    def run(b):
        lo, hi = b
        try:
            return simulate_many(e.x[lo:hi], e.v[lo:hi], cfg, event_cap)
        except EventCapExceeded as exc:
            raise EventCapExceeded(exc.cap, lo + (exc.index or 0)) from None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
    return PhaseEnsemble(cat("x"), cat("v"), cfg.total_time, e.seed,
                         inside=cat("inside"), n_collisions=cat("n_collisions"))


def histogram(e: PhaseEnsemble, axis: str, edges, weights=None) -> Histogram1D:
    """Normalised histogram of the x or v marginal."""
    edges = np.asarray(edges, dtype=float)
    _check_edges(edges)
    if axis not in ("x", "v"):
        raise ValueError("axis must be 'x' or 'v'")
    vals = e.x if axis == "x" else e.v
    w = np.ones(vals.size) if weights is None else np.asarray(weights, float)
    total = w.sum()
    counts, _ = np.histogram(vals, bins=edges, weights=w)
    # np.histogram closes the last bin on the right; keep [lo, hi) throughout
    on_last = vals == edges[-1]
    counts[-1] -= w[on_last].sum()
    under = w[vals < edges[0]].sum()
    over = w[vals >= edges[-1]].sum()
    return Histogram1D(edges, counts / total, under / total, over / total)


def _same_edges(a: Histogram1D, b: Histogram1D):
    if a.edges.shape != b.edges.shape or not np.array_equal(a.edges, b.edges):
        raise ValueError("histograms have different bin edges")


def l1_distance(a: Histogram1D, b: Histogram1D) -> float:
    _same_edges(a, b)
    return float(np.abs(a.mass - b.mass).sum() + abs(a.underflow - b.underflow)
                 + abs(a.overflow - b.overflow))


def ks_distance(a: Histogram1D, b: Histogram1D) -> float:
    """Largest CDF difference evaluated on the shared bin edges."""
    _same_edges(a, b)
    ca = a.underflow + np.concatenate([[0.0], np.cumsum(a.mass)])
    cb = b.underflow + np.concatenate([[0.0], np.cumsum(b.mass)])
    return float(np.max(np.abs(ca - cb)))


def ensemble_summary(e: PhaseEnsemble) -> dict:
    inside = e.inside if e.inside is not None else np.zeros(e.n, bool)
    out = {
        "n": e.n, "t": e.t,
        "mean_x": float(e.x.mean()), "std_x": float(e.x.std()),
        "mean_v": float(e.v.mean()), "std_v": float(e.v.std()),
        "trapped_fraction": float(inside.mean()),
    }
    if inside.any():
        out.update({
            "trapped_mean_x": float(e.x[inside].mean()), "trapped_std_x": float(e.x[inside].std()),
            "trapped_mean_v": float(e.v[inside].mean()), "trapped_std_v": float(e.v[inside].std()),
            "trapped_x_range": float(e.x[inside].max() - e.x[inside].min()),
        })
    return out


def histogram_peaks(h: Histogram1D, count: int = 2, min_separation: int = 3):
    """Centres of the ``count`` highest local maxima, at least
    ``min_separation`` bins apart, in order of height."""
    m = h.mass
    padded = np.concatenate([[-np.inf], m, [-np.inf]])
    is_max = (padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:]) & (m > 0)
    picked = []
    for i in np.argsort(-m, kind="stable"):
        if not is_max[i]:
            continue
        if all(abs(i - j) >= min_separation for j in picked):
            picked.append(i)
        if len(picked) == count:
            break
    return h.centers[picked]
