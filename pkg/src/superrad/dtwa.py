"""Discrete truncated Wigner trajectories.

Two variants share the sampling and recording code:

* ``"eliminated"``: the spin-only Itô SDE left after adiabatic elimination
  of the waveguide modes, driven by two complex Wiener processes (one per
  direction) common to all atoms.
* ``"full"``: spins coupled to explicit damped bosonic modes, either the
  two directional cavities of the disordered model or a single cavity
  coupled homogeneously to all atoms.

Spins are stored as s⁻ = (sˣ − i sʸ)/2 and s_z.  The initial state is
sampled from the discrete Wigner function of the fully excited state:
sˣ, sʸ = ±1 with equal probability and s_z = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import CavityCount, DisorderRealization, SystemConfig, interaction_kernels
from .records import TrajectoryRecord
from .streams import Purpose, seed_stream

MAX_RETRIES = 3


@dataclass
class SpinPhaseState:
    """Phase-space point of one trajectory (lab frame)."""

    s_minus: np.ndarray
    s_z: np.ndarray
    t: float = 0.0
    alpha0: np.ndarray | None = None
    alpha1: np.ndarray | None = None

    def spin_length_sq(self) -> np.ndarray:
        return 4.0 * np.abs(self.s_minus) ** 2 + self.s_z ** 2


def sample_initial_spins(n_atoms: int, stream: np.random.Generator):
    """Return (sˣ, sʸ, s_z) for the fully excited state."""
    signs = stream.integers(0, 2, size=(2, n_atoms)) * 2 - 1
    return signs[0].astype(float), signs[1].astype(float), np.ones(n_atoms)


def sample_initial_cavity(stream: np.random.Generator, size=None):
    """Vacuum Wigner draw: real and imaginary parts normal with variance 1/4."""
    re = stream.normal(0.0, 0.5, size=size)
    im = stream.normal(0.0, 0.5, size=size)
    return re + 1j * im


def complex_wiener(stream: np.random.Generator, shape, dt: float) -> np.ndarray:
    """Complex increments with independent parts of variance dt/2 each."""
    s = math.sqrt(dt / 2.0)
    return s * stream.standard_normal(shape) + 1j * s * stream.standard_normal(shape)


def initial_state(config: SystemConfig, index: int) -> SpinPhaseState:
    sx, sy, sz = sample_initial_spins(config.n_atoms, seed_stream(config.master_seed, index, Purpose.SPINS))
    return SpinPhaseState(0.5 * (sx - 1j * sy), sz)


def cavity_weights(realization: DisorderRealization, cavity_count: CavityCount) -> np.ndarray:
    """Rows u_c with J_c = Σ_j u_cj σ_j⁻ for each cavity."""
    xi = np.asarray(realization.xi)
    if cavity_count is CavityCount.ONE_HOMOGENEOUS:
        return np.ones((1, xi.size), dtype=np.complex128)
    return np.vstack([np.exp(-1j * xi), np.exp(1j * xi)])


def cavity_coupling(config: SystemConfig) -> float:
    """Per-mode coupling; the two directional modes share g between them."""
    if config.cavity_count is CavityCount.ONE_HOMOGENEOUS:
        return config.g
    return config.g / math.sqrt(2.0)


def step_eliminated(state: SpinPhaseState, realization: DisorderRealization, config: SystemConfig,
                    stream: np.random.Generator, dt: float) -> SpinPhaseState:
    """One Euler–Maruyama step of the eliminated SDE (lab frame, no detuning)."""
    kern = interaction_kernels(realization)
    x, sz = state.s_minus, state.s_z
    f = kern.full(x) if config.include_hamiltonian else kern.cos_sum(x)
    dwr, dwl = complex_wiener(stream, 2, dt)
    dwj = (kern.ep * dwr + kern.em * dwl) / math.sqrt(2.0)
    g = config.gamma
    dx = (-0.5 * g * x + 0.5 * g * sz * f) * dt + math.sqrt(g / 2) * sz * dwj
    dz = (-g * sz - 2 * g * np.real(np.conj(x) * f)) * dt \
        - 2 * math.sqrt(2 * g) * np.real(np.conj(x) * dwj)
    return SpinPhaseState(x + dx, sz + dz, state.t + dt)


def _drift_full(x, sz, alpha, a1, kern, u, coupling, config):
    drive = coupling * (np.conj(u).T @ alpha)
    dx = sz * drive
    dz = -4.0 * np.real(np.conj(x) * drive)
    if config.include_hamiltonian:
        fh = kern.sin_sum(x)
        dx = dx + 0.5j * config.gamma * sz * fh
        dz = dz + 2.0 * config.gamma * np.imag(np.conj(x) * fh)
    da = -0.5 * config.kappa * a1 + coupling * (u @ x)
    return dx, dz, da


def step_full(state: SpinPhaseState, realization: DisorderRealization, config: SystemConfig,
              stream: np.random.Generator, dt: float) -> SpinPhaseState:
    """One split step of the explicit-cavity model (lab frame, no detuning).

    The vacuum part of the field takes two exact half-step OU updates;
    the rest takes an RK4 step that sees α⁰ at t, t + dt/2 and t + dt.
    """
    if config.kappa is None:
        raise ValueError("kappa is required for the explicit-cavity model")
    kern = interaction_kernels(realization)
    u = cavity_weights(realization, config.cavity_count)
    coupling = cavity_coupling(config)
    n_cav = u.shape[0]
    a0 = state.alpha0 if state.alpha0 is not None else np.zeros(n_cav, complex)
    a1 = state.alpha1 if state.alpha1 is not None else np.zeros(n_cav, complex)
    decay = math.exp(-0.25 * config.kappa * dt)
    spread = math.sqrt((1 - math.exp(-0.5 * config.kappa * dt)) / 4)
    z = stream.standard_normal((2, 2, n_cav))
    a0_half = decay * a0 + spread * (z[0, 0] + 1j * z[0, 1])
    a0_next = decay * a0_half + spread * (z[1, 0] + 1j * z[1, 1])
    x, sz = state.s_minus, state.s_z
    k1 = _drift_full(x, sz, a0 + a1, a1, kern, u, coupling, config)
    y2 = (x + 0.5 * dt * k1[0], sz + 0.5 * dt * k1[1], a1 + 0.5 * dt * k1[2])
    k2 = _drift_full(y2[0], y2[1], a0_half + y2[2], y2[2], kern, u, coupling, config)
    y3 = (x + 0.5 * dt * k2[0], sz + 0.5 * dt * k2[1], a1 + 0.5 * dt * k2[2])
    k3 = _drift_full(y3[0], y3[1], a0_half + y3[2], y3[2], kern, u, coupling, config)
    y4 = (x + dt * k3[0], sz + dt * k3[1], a1 + dt * k3[2])
    k4 = _drift_full(y4[0], y4[1], a0_next + y4[2], y4[2], kern, u, coupling, config)
    new = [y + dt / 6 * (a + 2 * b + 2 * c + d) for y, a, b, c, d in zip((x, sz, a1), k1, k2, k3, k4)]
    return SpinPhaseState(new[0], new[1], state.t + dt, a0_next, new[2])


def _snapshot_indices(config: SystemConfig, snapshot_times) -> np.ndarray:
    if snapshot_times is None or len(snapshot_times) == 0:
        return np.empty(0, dtype=np.int64)
    grid = config.grid
    return np.array([int(np.argmin(np.abs(grid - t))) for t in snapshot_times], dtype=np.int64)


def _buffers(config: SystemConfig, n_snap: int, with_g2: bool):
    ns = config.n_samples
    return dict(
        rec_sz=np.zeros(ns), rec_jr=np.zeros(ns, complex), rec_jl=np.zeros(ns, complex),
        rec_q=np.zeros(ns), rec_g2=np.zeros((ns if with_g2 else 0, 3)),
        snaps=np.zeros((n_snap, config.n_atoms, 3)),
    )


def run_trajectory(config: SystemConfig, realization: DisorderRealization, trajectory_index: int,
                   variant: str = "eliminated", snapshot_times=None,
                   with_g2: bool = True) -> TrajectoryRecord:
    """Integrate one trajectory from the fully excited state to ``t_end``.

    The result is a pure function of the arguments: initial spins, cavity
    vacuum and noise come from streams keyed by ``(master_seed, index)``.
    If the state blows up the step is halved (the whole path is redrawn on
    the finer grid) up to ``MAX_RETRIES`` times before the trajectory is
    reported as failed.
    """
    if variant not in ("eliminated", "full"):
        raise ValueError(f"unknown DTWA variant {variant!r}")
    if variant == "eliminated" and config.cavity_count is CavityCount.ONE_HOMOGENEOUS:
        raise ValueError("the eliminated variant covers the two-channel waveguide only")
    kern = interaction_kernels(realization)
    snap_idx = _snapshot_indices(config, snapshot_times)
    dw = np.asarray(realization.delta_omega_j, dtype=float)
    if not np.any(dw):
        dw = np.empty(0)
    dt_cap = None
    if variant == "full":
        if config.kappa is None:
            raise ValueError("kappa is required for the explicit-cavity model")
        dt_cap = 0.1 / config.kappa
    n_sub, dt = config.substeps(dt_cap)
    message = ""
    for attempt in range(MAX_RETRIES + 1):
        state = initial_state(config, trajectory_index)
        x = state.s_minus.astype(np.complex128)
        sz = state.s_z.astype(float)
        buf = _buffers(config, snap_idx.size, with_g2)
        n_steps = (config.n_samples - 1) * n_sub
        noise_stream = seed_stream(config.master_seed, trajectory_index, Purpose.NOISE)
        extra = {}
        if variant == "eliminated":
            noise = complex_wiener(noise_stream, (n_steps, 2), dt)
            status = _kernels.run_eliminated(kern.order, kern.ep, kern.em, dw, x, sz, noise, dt, n_sub,
                                             config.gamma, config.include_hamiltonian, snap_idx, **buf)
        else:
            u = cavity_weights(realization, config.cavity_count)
            cav_stream = seed_stream(config.master_seed, trajectory_index, Purpose.CAVITY)
            a0 = np.asarray(sample_initial_cavity(cav_stream, size=u.shape[0]), dtype=np.complex128)
            noise = (noise_stream.standard_normal((n_steps, 2, u.shape[0]))
                     + 1j * noise_stream.standard_normal((n_steps, 2, u.shape[0])))
            power = np.zeros(config.n_samples)
            status = _kernels.run_cavity(kern.order, kern.ep, kern.em, dw, u, x, sz, a0, noise, dt, n_sub,
                                         config.gamma, config.kappa, cavity_coupling(config),
                                         config.include_hamiltonian, snap_idx, rec_power=power, **buf)
            extra["power"] = power
        if status < 0:
            break
        message = f"non-finite state at step {status} with dt={dt:.3e}"
        n_sub *= 2
        dt /= 2
    failed = status >= 0
    return TrajectoryRecord(
        engine=f"dtwa-{variant}", index=trajectory_index, t=config.grid, n_atoms=config.n_atoms,
        gamma=config.gamma, sum_sz=buf["rec_sz"], jr=buf["rec_jr"], jl=buf["rec_jl"], sum_q=buf["rec_q"],
        g2_num=buf["rec_g2"] if with_g2 else None,
        rate=extra.get("power"),
        snapshots=buf["snaps"] if snap_idx.size else None,
        snapshot_times=config.grid[snap_idx] if snap_idx.size else None,
        xi=np.asarray(realization.xi), failed=failed, message=message if failed else "",
        retries=attempt,
    )
