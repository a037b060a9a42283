"""Direct integration of the three-level diode master equation on a small grid.

The density matrix lives in the product basis (internal level) x (grid
point), levels ordered 1, 2, 3. The kinetic energy is a dense spectral
differentiation matrix, so the only discretisation error in space is the
grid itself; time stepping is classic fourth-order Runge-Kutta with the
moving potentials frozen at the step midpoint.

This is the ground truth the jump unraveling is checked against; it is far
too expensive for production grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .quantum import Propagator, QuantumRunConfig, SpatialGrid, init_wavepacket, rabi_profile

MAX_N = 128


class MasterEquationError(RuntimeError):
    pass


@dataclass
class DensityMatrix3L:
    grid: SpatialGrid
    matrix: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if self.grid.n > MAX_N:
            raise ValueError(f"density-matrix grid capped at N = {MAX_N}")
        if self.matrix.shape != (3 * self.grid.n,) * 2:
            raise ValueError("matrix must be (3N, 3N)")

    def block(self, a: int, b: int) -> np.ndarray:
        """Block <a|rho|b> for levels a, b in {1, 2, 3}."""
        n = self.grid.n
        return self.matrix[(a - 1) * n:a * n, (b - 1) * n:b * n]

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))[0])

    def purity(self) -> float:
        return float(np.vdot(self.matrix, self.matrix).real)


def pure_state(psi_levels, grid: SpatialGrid, t: float = 0.0) -> DensityMatrix3L:
    """|psi><psi| from a (3, N) array of amplitudes normalised with the grid
    spacing; the matrix holds probabilities per grid point."""
    v = np.asarray(psi_levels, complex).reshape(3 * grid.n) * math.sqrt(grid.spacing)
    return DensityMatrix3L(grid, np.outer(v, v.conj()), t)


def initial_density(cfg: QuantumRunConfig) -> DensityMatrix3L:
    """The run's initial packet, all population in level 1."""
    p = cfg.packet
    wf = init_wavepacket(cfg.grid, p.x0, p.dx, p.v0, p.dv, cfg.mass, cfg.init_mode, cfg.hbar)
    z = np.zeros_like(wf.psi)
    return pure_state([wf.psi, z, z], cfg.grid)


def kinetic_matrix(grid: SpatialGrid, mass: float, hbar: float = 1.0) -> np.ndarray:
    """Dense -hbar^2/(2m) d^2/dx^2, exact on the periodic grid's Fourier modes."""
    e = hbar * hbar * grid.k ** 2 / (2.0 * mass)
    eye = np.eye(grid.n)
    k = np.fft.ifft(np.fft.fft(eye, axis=0) * e[:, None], axis=0)
    k = 0.5 * (k + k.conj().T)
    return k.real if np.allclose(k.imag, 0.0, atol=1e-12 * max(e.max(), 1.0)) else k


@dataclass
class ThreeLevelOperators:
    """Hamiltonian pieces of the diode master equation for one run config.

    ``kinetic=False`` drops the kinetic term (used for pure internal-state
    dynamics such as Rabi flopping). ``rabi`` and ``potentials`` may be
    overridden with callables of t returning arrays on the grid.
    """

    cfg: QuantumRunConfig
    gamma: float
    kinetic: bool = True
    rabi: Optional[object] = None
    v_mirror: Optional[object] = None
    v_diode: Optional[object] = None
    _k: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        g = self.cfg.grid
        if g.n > MAX_N:
            raise ValueError(f"density-matrix grid capped at N = {MAX_N}")
        self._prop = Propagator(self.cfg)
        self._k = kinetic_matrix(g, self.cfg.mass, self.cfg.hbar) if self.kinetic else np.zeros((g.n, g.n))

    @property
    def n(self) -> int:
        return self.cfg.grid.n

    def profiles(self, t):
        p = self._prop
        vm = self.v_mirror(t) if self.v_mirror else p.v_mirror(t)
        vd = self.v_diode(t) if self.v_diode else p.v_diode(t)
        om = self.rabi(t) if self.rabi else rabi_profile(p, t, self.gamma)
        return vm, vd, om

    def hamiltonian(self, t) -> np.ndarray:
        n, hbar = self.n, self.cfg.hbar
        vm, vd, om = self.profiles(t)
        h = np.zeros((3 * n, 3 * n), dtype=complex)
        for lvl in range(3):
            h[lvl * n:(lvl + 1) * n, lvl * n:(lvl + 1) * n] = self._k
        idx = np.arange(n)
        h[idx, idx] += vm
        h[n + idx, n + idx] += vd + vm
        h[idx, 2 * n + idx] = 0.5 * hbar * om
        h[2 * n + idx, idx] = 0.5 * hbar * om
        return h

    def effective(self, t) -> np.ndarray:
        """H - i hbar gamma/2 |3><3|."""
        h = self.hamiltonian(t)
        idx = 2 * self.n + np.arange(self.n)
        h[idx, idx] -= 0.5j * self.cfg.hbar * self.gamma
        return h

    def rate_bound(self, t) -> float:
        """Upper bound on the Liouvillian's spectral radius at t."""
        h = self.hamiltonian(t)
        return 2.0 * np.abs(h).sum(axis=1).max() / self.cfg.hbar + self.gamma


def _apply(rho: np.ndarray, h_eff: np.ndarray, gamma: float, n: int, hbar: float) -> np.ndarray:
    a = h_eff @ rho
    out = (-1j / hbar) * (a - a.conj().T)
    out[n:2 * n, n:2 * n] += gamma * rho[2 * n:, 2 * n:]
    return out


def liouvillian_apply(rho: DensityMatrix3L, ops: ThreeLevelOperators, t: float) -> np.ndarray:
    """d rho/dt = -i/hbar [H, rho] - gamma/2 {|3><3|, rho} + gamma |2><3| rho |3><2|."""
    return _apply(rho.matrix, ops.effective(t), ops.gamma, ops.n, ops.cfg.hbar)


@dataclass
class MasterRun:
    rho: DensityMatrix3L
    times: np.ndarray
    populations: np.ndarray  # rows (P1, P2, P3)
    purity: np.ndarray


def evolve_master(rho0: DensityMatrix3L, ops: ThreeLevelOperators, total_time: float, dt: float,
                  check_every: int = 100, stability: float = 2.5, record_every: int = 0) -> MasterRun:
    """Fourth-order Runge-Kutta integration from rho0.t to total_time."""
    n_steps = int(round((total_time - rho0.t) / dt))
    if n_steps < 0 or abs(rho0.t + n_steps * dt - total_time) > 1e-9 * max(total_time, 1.0):
        raise ValueError("dt must divide the integration interval")
    bound = max(ops.rate_bound(rho0.t), ops.rate_bound(total_time))
    if dt * bound > stability:
        raise ValueError(f"dt = {dt:g} too large for RK4: dt*|L| = {dt * bound:.3g} > {stability}; "
                         f"use dt <= {stability / bound:.3g}")
    n, hbar, gamma = ops.n, ops.cfg.hbar, ops.gamma
    rho = rho0.matrix.copy()
    tr0 = np.trace(rho).real
    record_every = record_every or check_every
    times, pops, pur = [], [], []

    def record(i):
        d = np.diag(rho).real
        times.append(rho0.t + i * dt)
        pops.append([d[:n].sum(), d[n:2 * n].sum(), d[2 * n:].sum()])
        pur.append(np.vdot(rho, rho).real)

    record(0)
    for i in range(n_steps):
        h = ops.effective(rho0.t + (i + 0.5) * dt)
        k1 = _apply(rho, h, gamma, n, hbar)
        k2 = _apply(rho + 0.5 * dt * k1, h, gamma, n, hbar)
        k3 = _apply(rho + 0.5 * dt * k2, h, gamma, n, hbar)
        k4 = _apply(rho + dt * k3, h, gamma, n, hbar)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        step = i + 1
        if step % check_every == 0 or step == n_steps:
            drift = abs(np.trace(rho).real - tr0)
            herm = np.max(np.abs(rho - rho.conj().T))
            if drift > 1e-6 or herm > 1e-10:
                raise MasterEquationError(
                    f"t={rho0.t + step * dt:.6g}: trace drift {drift:.3g}, hermiticity error {herm:.3g}")
        if step % record_every == 0 or step == n_steps:
            record(step)
    out = DensityMatrix3L(rho0.grid, rho, rho0.t + n_steps * dt)
    return MasterRun(out, np.array(times), np.array(pops).T, np.array(pur))


def level_densities(rho: DensityMatrix3L):
    """Populations (P1, P2, P3) and the position density of each level."""
    d = np.diag(rho.matrix).real.reshape(3, rho.grid.n)
    pops = d.sum(axis=1)
    return tuple(float(p) for p in pops), d


def compare_with_unraveling(rho: DensityMatrix3L, grid: SpatialGrid, position_density,
                            populations: dict) -> dict:
    """L1 distance of the total position densities (probability per grid
    point) and absolute population errors."""
    if grid != rho.grid:
        raise ValueError("oracle and unraveling use different grids")
    pops, dens = level_densities(rho)
    p = np.asarray(position_density, float)
    if p.shape != (grid.n,):
        raise ValueError("position density must have one value per grid point")
    out = {"position_l1": float(np.abs(dens.sum(axis=0) - p).sum())}
    for i, name in enumerate(("P1", "P2", "P3")):
        out[f"{name}_error"] = abs(pops[i] - populations.get(name, 0.0))
    return out
