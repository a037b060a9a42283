import math

import numpy as np
import pytest

from qcatcher.lindblad import (MAX_N, DensityMatrix3L, MasterEquationError, ThreeLevelOperators,
                               compare_with_unraveling, evolve_master, initial_density,
                               kinetic_matrix, level_densities, liouvillian_apply, pure_state)
from qcatcher.quantum import SpatialGrid, init_wavepacket, propagate, toy_config

GRID = SpatialGrid(-2.0, 2.0, 32)


def zeros(t):
    return np.zeros(GRID.n)


def small_cfg(**kw):
    return toy_config(n=32, **kw)


def localized(level, j=10):
    amp = np.zeros((3, GRID.n), complex)
    amp[level - 1, j] = 1.0 / math.sqrt(GRID.spacing)
    return pure_state(amp, GRID)


def random_rho(rng, n):
    a = rng.normal(size=(3 * n, 3 * n)) + 1j * rng.normal(size=(3 * n, 3 * n))
    rho = a @ a.conj().T
    return DensityMatrix3L(SpatialGrid(-2.0, 2.0, n), rho / np.trace(rho).real)


def test_pure_state_trace_and_purity():
    rho = initial_density(small_cfg())
    assert rho.trace() == pytest.approx(1.0, abs=1e-12)
    assert rho.purity() == pytest.approx(1.0, abs=1e-12)
    assert rho.hermiticity_error() <= 1e-15


def test_kinetic_matrix_matches_fft():
    g = SpatialGrid(-1.0, 1.0, 16)
    k = kinetic_matrix(g, mass=2.0)
    psi = np.exp(-((g.x - 0.1) / 0.2) ** 2) * np.exp(3j * g.x)
    ref = np.fft.ifft(g.k ** 2 / 4.0 * np.fft.fft(psi))
    assert np.allclose(k @ psi, ref, atol=1e-12)
    assert np.allclose(k, k.conj().T)


def test_level_two_is_stationary_without_kinetic():
    ops = ThreeLevelOperators(small_cfg(), gamma=50.0, kinetic=False)
    assert np.max(np.abs(liouvillian_apply(localized(2), ops, 0.3))) == 0.0


def test_pure_decay_feeds_level_two():
    gamma = 7.0
    ops = ThreeLevelOperators(small_cfg(), gamma, kinetic=False, rabi=zeros)
    rho = localized(3)
    d = liouvillian_apply(rho, ops, 0.2)
    n = GRID.n
    assert np.allclose(d[2 * n:, 2 * n:], -gamma * rho.matrix[2 * n:, 2 * n:])
    assert np.allclose(d[n:2 * n, n:2 * n], gamma * rho.matrix[2 * n:, 2 * n:])
    run = evolve_master(rho, ops, 0.1, 1e-3)
    p1, p2, p3 = run.populations[:, -1]
    assert p3 == pytest.approx(math.exp(-gamma * 0.1), abs=1e-9)
    assert p2 == pytest.approx(1 - math.exp(-gamma * 0.1), abs=1e-9)


def test_liouvillian_is_traceless_and_hermitian():
    rng = np.random.default_rng(3)
    ops = ThreeLevelOperators(small_cfg(gamma=100.0), 100.0)
    for t in (0.0, 0.4, 0.9):
        d = liouvillian_apply(random_rho(rng, GRID.n), ops, t)
        assert abs(np.trace(d)) <= 1e-9 * np.abs(d).max()
        assert np.allclose(d, d.conj().T, atol=1e-9 * np.abs(d).max())


def test_rabi_flopping():
    om = 40.0
    ops = ThreeLevelOperators(small_cfg(), gamma=0.0, kinetic=False, rabi=lambda t: np.full(GRID.n, om),
                              v_mirror=zeros, v_diode=zeros)
    run = evolve_master(localized(1), ops, 0.2, 1e-4, record_every=50)
    assert np.allclose(run.populations[2], np.sin(om * run.times / 2) ** 2, atol=1e-8)
    assert np.allclose(run.populations[1], 0.0)


def test_unitary_evolution_keeps_purity():
    cfg = small_cfg()
    ops = ThreeLevelOperators(cfg, gamma=0.0)
    run = evolve_master(initial_density(cfg), ops, 0.3, 2e-4)
    assert np.allclose(run.purity, 1.0, atol=1e-8)


def test_toy_run_conserves_trace_and_positivity():
    cfg = small_cfg(gamma=100.0)
    ops = ThreeLevelOperators(cfg, 100.0)
    run = evolve_master(initial_density(cfg), ops, 0.6, 1e-4)
    assert np.allclose(run.populations.sum(axis=0), 1.0, atol=1e-9)
    assert run.rho.min_eigenvalue() >= -1e-8
    assert run.populations[1, -1] > 0.05
    pops, dens = level_densities(run.rho)
    assert np.allclose(dens.sum(axis=1), pops)


def test_matches_split_step_without_coupling():
    """Level 1 alone under kinetic + mirror must agree with the Fourier
    split-step propagator."""
    cfg = small_cfg(V0_c=0.0)
    ops = ThreeLevelOperators(cfg, gamma=0.0, rabi=zeros, v_diode=zeros)
    run = evolve_master(initial_density(cfg), ops, 0.5, 1e-4)
    p = cfg.packet
    wf = init_wavepacket(cfg.grid, p.x0, p.dx, p.v0, p.dv, cfg.mass)
    fine = cfg.with_(dt=1e-5)
    out = propagate(wf, fine, 50_000)
    _, dens = level_densities(run.rho)
    ref = np.abs(out.psi) ** 2 * cfg.grid.spacing
    assert np.abs(dens[0] - ref).sum() <= 1e-6


def test_compare_identical_is_zero():
    cfg = small_cfg(gamma=100.0)
    rho = initial_density(cfg)
    pops, dens = level_densities(rho)
    out = compare_with_unraveling(rho, cfg.grid, dens.sum(axis=0), dict(zip(("P1", "P2", "P3"), pops)))
    assert out == {"position_l1": 0.0, "P1_error": 0.0, "P2_error": 0.0, "P3_error": 0.0}


def test_compare_rejects_grid_mismatch():
    rho = initial_density(small_cfg())
    with pytest.raises(ValueError):
        compare_with_unraveling(rho, SpatialGrid(-2.0, 2.0, 64), np.zeros(64), {})
    with pytest.raises(ValueError):
        compare_with_unraveling(rho, rho.grid, np.zeros(5), {})


def test_grid_cap_and_step_size():
    with pytest.raises(ValueError):
        DensityMatrix3L(SpatialGrid(-1.0, 1.0, MAX_N * 2), np.zeros((6 * MAX_N,) * 2))
    cfg = small_cfg(gamma=100.0)
    with pytest.raises(ValueError, match="too large"):
        evolve_master(initial_density(cfg), ThreeLevelOperators(cfg, 100.0), 0.5, 0.05)
    with pytest.raises(ValueError, match="divide"):
        evolve_master(initial_density(cfg), ThreeLevelOperators(cfg, 100.0), 0.5, 0.3)


def test_non_hermitian_drift_is_caught():
    cfg = small_cfg()
    rho = initial_density(cfg)
    rho.matrix[0, 1] += 1e-3
    with pytest.raises(MasterEquationError):
        evolve_master(rho, ThreeLevelOperators(cfg, 0.0), 0.01, 1e-4, check_every=10)
