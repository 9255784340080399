import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from superrad import exact
from superrad.harness import run_ensemble
from superrad.model import DisorderRealization, SystemConfig, sample_disorder
from superrad.observables import decay_rate_estimate

from _cache import memo
from conftest import zscore


def _qj_mean_rate(cfg, realization, trajectories):
    run = run_ensemble(cfg, "qj", realization=realization, n_trajectories=trajectories, with_g2=False, workers=1)
    return decay_rate_estimate(run.good)


# ----------------------------------------------------------- quantum jumps

def test_qj_dimension_guard():
    cfg = SystemConfig(n_atoms=exact.QJ_MAX_ATOMS + 1)
    with pytest.raises(ValueError):
        exact.quantum_jump_run(cfg, sample_disorder(cfg, 0), 0)


def test_qj_single_atom_decays_exponentially():
    cfg = SystemConfig(n_atoms=1, n_samples=41, t_end=3.0)
    real = DisorderRealization.from_phases([0.3])
    r, se = memo("qj_n1", _qj_mean_rate, cfg, real, 4000)
    assert np.max(zscore(r[1:], np.exp(-cfg.grid[1:]), se[1:])) < 3.5
    assert r[0] == pytest.approx(1.0)


@pytest.mark.parametrize("theta", [0.0, math.pi])
def test_qj_two_atoms_match_dense_master_equation(theta):
    cfg = SystemConfig(n_atoms=2, theta=theta, n_samples=31, t_end=2.0, master_seed=3)
    real = sample_disorder(cfg, 0)
    r, se = memo("qj_n2", _qj_mean_rate, cfg, real, 4000)
    ref = exact.dense_lindblad_evolve(real, cfg.gamma, cfg.grid)["rate"]
    z = zscore(r[1:], ref[1:], se[1:])
    assert np.max(z) < 4.0   # 30 correlated points
    assert np.mean(z) < 1.5


def test_qj_three_disordered_atoms_match_dense_master_equation():
    cfg = SystemConfig(n_atoms=3, theta=2 * math.pi, n_samples=21, t_end=1.5, master_seed=11)
    real = sample_disorder(cfg, 0)
    r, se = memo("qj_n3", _qj_mean_rate, cfg, real, 3000)
    ref = exact.dense_lindblad_evolve(real, cfg.gamma, cfg.grid)["rate"]
    assert np.max(zscore(r[1:], ref[1:], se[1:])) < 4.0


def test_qj_state_stays_normalized_and_deterministic():
    cfg = SystemConfig(n_atoms=6, theta=math.pi, n_samples=41, master_seed=5)
    real = sample_disorder(cfg, 0)
    a = exact.quantum_jump_run(cfg, real, 7)
    b = exact.quantum_jump_run(cfg, real, 7)
    assert np.array_equal(a.rate, b.rate)
    # excitation number is an integer that only steps down by one
    k = 0.5 * (a.sum_sz + cfg.n_atoms)
    assert np.allclose(k, np.round(k))
    assert np.all(np.diff(k) <= 0) and np.all(np.diff(k) >= -cfg.n_atoms)
    assert np.all(a.rate >= -1e-12)


# ------------------------------------------------------------ Dicke ladder

def test_ladder_rate_examples():
    assert np.allclose(exact.dicke_ladder_rates(1), [1.0])
    assert exact.dicke_ladder_rates(2)[0] == 2.0
    rates = exact.dicke_ladder_rates(100)
    assert rates.max() == 51 * 50
    assert rates.size == 100


def test_ladder_single_atom_is_exponential():
    grid = np.linspace(0, 5, 501)
    stats = exact.dicke_rate_equation_evolve(1, 1.0, grid)
    assert np.max(np.abs(stats.r_of_t - np.exp(-grid))) < 1e-6


def test_ladder_populations_are_normalized():
    n = 60
    grid = np.linspace(0, 5 * math.log(n) / n, 400)
    pops, rates = exact._ladder_integrate(n, 1.0, grid, 8)
    assert np.max(np.abs(pops.sum(axis=1) - 1)) < 1e-8
    assert pops.min() > -1e-10
    assert np.all(pops @ rates >= -1e-10)


def test_ladder_peak_at_hundred_atoms():
    n = 100
    grid = SystemConfig(n_atoms=n).grid
    t0 = time.perf_counter()
    stats = exact.dicke_rate_equation_evolve(n, 1.0, grid)
    assert time.perf_counter() - t0 < 1.0
    assert 0.18 <= stats.scaled_peak(n) <= 0.20
    ratio = stats.t_star / (math.log(n) / n)
    assert 1 / 1.5 <= ratio <= 1.5


def test_ladder_matches_dense_master_equation_for_ordered_atoms():
    real = DisorderRealization.from_phases(np.zeros(4))
    grid = np.linspace(0, 2.0, 41)
    ladder = exact.dicke_rate_equation_evolve(4, 1.0, grid)
    dense = exact.dense_lindblad_evolve(real, 1.0, grid)["rate"]
    assert np.max(np.abs(ladder.r_of_t - dense)) < 1e-5


# ------------------------------------------------- collective spin + cavity

def test_cavity_dimension_guard():
    with pytest.raises(ValueError):
        exact.ed_collective_cavity_evolve(exact.ED_MAX_ATOMS + 1, 1.0, 10.0, np.linspace(0, 1, 5))


def test_uncoupled_cavity_leaves_atoms_and_empties_at_kappa():
    grid = np.linspace(0, 2.0, 21)
    stats = exact.ed_collective_cavity_evolve(3, 1.0, 4.0, grid, coupling_g=0.0)
    assert np.allclose(stats.p_e, 1.0) and np.allclose(stats.r_of_t, 0.0)
    n, kappa = 2, 3.0
    liou, dim, ops = exact.collective_cavity_generator(n, 1.0, kappa, coupling_g=0.0, n_max=2)
    psi = np.zeros(dim, complex)
    psi[n * 3 + 2] = 1.0      # m = +J, two photons
    sol = solve_ivp(lambda _, y: liou @ y, (0, 1.0), np.outer(psi, psi).ravel(), t_eval=[0.5, 1.0],
                    rtol=1e-10, atol=1e-12)
    num = (ops["a"].conj().T @ ops["a"]).toarray()
    for t, y in zip(sol.t, sol.y.T):
        assert np.trace(num @ y.reshape(dim, dim)).real == pytest.approx(2 * math.exp(-kappa * t), rel=1e-7)


def test_cavity_markov_limit_matches_ladder():
    n = 10
    cfg = SystemConfig(n_atoms=n, n_samples=400)
    ed = exact.ed_collective_cavity_evolve(n, 1.0, 50.0 * n, cfg.grid)
    ladder = exact.dicke_rate_equation_evolve(n, 1.0, cfg.grid)
    assert ed.r_star == pytest.approx(ladder.r_star, rel=0.02)


def _random_density(rng, dim):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def test_cavity_generator_is_contractive(rng):
    liou, dim, _ = exact.collective_cavity_generator(3, 1.0, 6.0, n_max=3)
    grid = np.linspace(0, 2.0, 21)
    rho1, rho2 = _random_density(rng, dim), _random_density(rng, dim)
    sols = [solve_ivp(lambda _, y: liou @ y, (0, 2.0), r.ravel(), t_eval=grid, rtol=1e-10, atol=1e-12).y
            for r in (rho1, rho2)]
    dist = [0.5 * np.abs(np.linalg.eigvalsh((a - b).reshape(dim, dim))).sum() for a, b in zip(sols[0].T, sols[1].T)]
    assert np.all(np.diff(dist) <= 1e-9)
    # the generator as a matrix has no growing modes
    ev = np.linalg.eigvals(liou.toarray())
    assert ev.real.max() < 1e-9
