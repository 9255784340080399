import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superrad import _kernels, qsdmf
from superrad.exact import dense_lindblad_evolve
from superrad.harness import run_ensemble
from superrad.model import DisorderRealization, SystemConfig, interaction_kernels, sample_disorder
from superrad.observables import decay_rate_estimate, excited_population, find_peak

from _cache import memo
from test_dtwa import ReplayStream, _buffers


def test_initial_state_fully_excited():
    st0 = qsdmf.BlochTrajectoryState.excited(5)
    assert np.array_equal(st0.bloch, np.tile([0.0, 0.0, 1.0], (5, 1)))


@given(st.integers(1, 10), st.integers(0, 1000), st.booleans())
def test_compiled_step_matches_reference(n, seed, hamiltonian):
    cfg = SystemConfig(n_atoms=n, theta=2.5, include_hamiltonian=hamiltonian)
    real = sample_disorder(cfg.replace(master_seed=seed), 0)
    kern = interaction_kernels(real)
    rng = np.random.default_rng(seed)
    dt, steps = 1e-3, 25
    noise = math.sqrt(dt / 2) * (rng.normal(size=(steps, 2)) + 1j * rng.normal(size=(steps, 2)))
    x = np.zeros(n, complex)
    sz = np.ones(n)
    buf = _buffers(steps + 1, n)
    ir = np.zeros(steps + 1, complex)
    il = np.zeros(steps + 1, complex)
    status = _kernels.run_qsd(kern.order, kern.ep, kern.em, np.empty(0), x, sz, noise, dt, 1, 1.0, hamiltonian,
                              np.arange(steps + 1), rec_ir=ir, rec_il=il, **buf)
    assert status == -1
    s = math.sqrt(dt / 2)
    chunks = []
    for k in range(steps):
        chunks += [noise[k].real / s, noise[k].imag / s]
    stream = ReplayStream(chunks)
    state = qsdmf.BlochTrajectoryState.excited(n)
    for _ in range(steps):
        state = qsdmf.qsd_step(state, real, cfg, stream, dt)
    assert np.allclose(buf["snaps"][-1], state.bloch, atol=1e-12)
    assert ir[-1] == pytest.approx(state.homodyne_r, abs=1e-12)
    assert il[-1] == pytest.approx(state.homodyne_l, abs=1e-12)


def test_bloch_vectors_stay_on_the_sphere():
    cfg = SystemConfig(n_atoms=40, theta=2 * math.pi, n_samples=51)
    rec = qsdmf.run_trajectory(cfg, sample_disorder(cfg, 0), 0, snapshot_times=cfg.grid)
    assert np.max(np.abs(np.linalg.norm(rec.snapshots, axis=2) - 1)) < 1e-6


def test_shared_noise_keeps_identical_atoms_identical():
    cfg = SystemConfig(n_atoms=8, theta=0.0, n_samples=21)
    rec = qsdmf.run_trajectory(cfg, sample_disorder(cfg, 0), 0, snapshot_times=cfg.grid)
    assert np.allclose(rec.snapshots, rec.snapshots[:, :1, :], atol=1e-12)
    assert np.max(np.abs(rec.snapshots[-1, :, 2] - 1)) > 1e-2     # the atoms did decay


def test_deterministic():
    cfg = SystemConfig(n_atoms=20, theta=2.0, n_samples=30)
    real = sample_disorder(cfg, 5)
    a = qsdmf.run_trajectory(cfg, real, 5)
    b = qsdmf.run_trajectory(cfg, real, 5)
    assert np.array_equal(a.jr, b.jr) and np.array_equal(a.homodyne, b.homodyne)
    assert np.array_equal(a.g2_num, b.g2_num)


def test_single_atom_is_exact():
    def run():
        cfg = SystemConfig(n_atoms=1, t_end=3.0, n_samples=7, n_trajectories=10_000)
        p, se = excited_population(run_ensemble(cfg, "qsdmf", with_g2=False, workers=1).records)
        return cfg.grid, p, se
    t, p, se = memo("qsd_single_atom", run)
    assert np.all(np.abs(p[1:] - np.exp(-t[1:])) < 3 * se[1:])


def _two_atom_sz():
    cfg = SystemConfig(n_atoms=2, theta=0.0, t_end=1.0, n_samples=11, n_trajectories=10_000)
    times = np.array([0.2, 0.5, 1.0])
    ens = run_ensemble(cfg, "qsdmf", snapshot_times=times, with_g2=False, workers=1)
    sz1 = np.array([r.snapshots[:, 0, 2] for r in ens.records])
    oracle = dense_lindblad_evolve(DisorderRealization.from_phases([0.0, 0.0]), 1.0, np.r_[0.0, times])
    return sz1.mean(0), sz1.std(0, ddof=1) / math.sqrt(sz1.shape[0]), oracle["sz0"][1:]


@pytest.mark.parametrize("k,t", [(0, 0.2), (1, 0.5)])
def test_two_atom_dense_oracle(k, t):
    mean, se, exact = memo("qsd_two_atoms", _two_atom_sz)
    assert abs(mean[k] - exact[k]) < 3 * se[k]


@pytest.mark.xfail(strict=True, reason="product-state closure error at γt = 1; see the decisions ledger")
def test_two_atom_dense_oracle_late():
    mean, se, exact = memo("qsd_two_atoms", _two_atom_sz)
    assert abs(mean[2] - exact[2]) < 3 * se[2]


def _peak(engine, n, theta, m):
    cfg = SystemConfig(n_atoms=n, theta=theta, n_samples=400, n_trajectories=m)
    r, _ = decay_rate_estimate(run_ensemble(cfg, engine, with_g2=False, workers=1).records)
    return find_peak(r, cfg.grid).r_star / n ** 2


def test_peak_agrees_with_eliminated_dtwa_at_large_n():
    q = memo("peak", _peak, "qsdmf", 400, math.pi, 200)
    d = memo("peak", _peak, "dtwa-eliminated", 400, math.pi, 200)
    assert abs(q - d) < 0.01
