"""Quantum state diffusion restricted to product states.

Each trajectory is a product of single-atom pure states, stored as Bloch
vectors.  The heterodyne unravelling of the master equation is projected
onto that manifold site by site: atom j sees its own jump operator
e^{∓iξ_j}σ_j⁻ exactly and the rest of the collective operator through its
expectation value.  Two complex Wiener processes, one per direction, drive
every site.

For a single atom the projection is exact, so the ensemble reproduces the
master equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dtwa import _buffers, _snapshot_indices, complex_wiener
from .model import DisorderRealization, SystemConfig, interaction_kernels
from .records import TrajectoryRecord
from .streams import Purpose, seed_stream

MAX_RETRIES = 3


@dataclass
class BlochTrajectoryState:
    """Bloch vectors (N, 3) plus accumulated homodyne currents."""

    bloch: np.ndarray
    t: float = 0.0
    homodyne_r: complex = 0j
    homodyne_l: complex = 0j

    @classmethod
    def excited(cls, n_atoms: int) -> "BlochTrajectoryState":
        b = np.zeros((n_atoms, 3))
        b[:, 2] = 1.0
        return cls(b)

    @property
    def s_minus(self) -> np.ndarray:
        return 0.5 * (self.bloch[:, 0] - 1j * self.bloch[:, 1])


def _bloch(x, sz):
    return np.column_stack([2 * x.real, -2 * x.imag, sz])


def qsd_step(state: BlochTrajectoryState, realization: DisorderRealization, config: SystemConfig,
             stream: np.random.Generator, dt: float) -> BlochTrajectoryState:
    """One Euler–Maruyama step followed by projection onto the unit sphere."""
    kern = interaction_kernels(realization)
    x = state.s_minus
    sz = state.bloch[:, 2]
    f = (kern.full(x) if config.include_hamiltonian else kern.cos_sum(x)) - x
    dwr, dwl = complex_wiener(stream, 2, dt)
    g = config.gamma
    amp = math.sqrt(g / 2)
    n = 0.5 * (1 + sz)
    q = np.abs(x) ** 2
    w = kern.em * dwr + kern.ep * dwl
    dx = (-0.5 * g * x + 0.5 * g * sz * f) * dt \
        + amp * (-(x * x) * w + (n - q) * (kern.ep * np.conj(dwr) + kern.em * np.conj(dwl)))
    dz = (-g * (sz + 1) - 2 * g * np.real(np.conj(x) * f)) * dt - amp * (1 + sz) * 2 * np.real(x * w)
    jr = np.sum(kern.em * x)
    jl = np.sum(kern.ep * x)
    b = _bloch(x + dx, sz + dz)
    b /= np.linalg.norm(b, axis=1, keepdims=True)
    return BlochTrajectoryState(b, state.t + dt,
                                state.homodyne_r + g * jr.real * dt + amp * dwr,
                                state.homodyne_l + g * jl.real * dt + amp * dwl)


def run_trajectory(config: SystemConfig, realization: DisorderRealization, index: int,
                   snapshot_times=None, with_g2: bool = True) -> TrajectoryRecord:
    """Integrate one product-state trajectory from the fully excited state.

    Besides the collective sums the record carries the two homodyne
    currents (columns R, L of ``homodyne``) and, if requested, Bloch
    vectors at the sample times closest to ``snapshot_times``.
    """
    kern = interaction_kernels(realization)
    snap_idx = _snapshot_indices(config, snapshot_times)
    dw = np.asarray(realization.delta_omega_j, dtype=float)
    if not np.any(dw):
        dw = np.empty(0)
    n_sub, dt = config.substeps()
    message = ""
    for attempt in range(MAX_RETRIES + 1):
        x = np.zeros(config.n_atoms, dtype=np.complex128)
        sz = np.ones(config.n_atoms)
        buf = _buffers(config, snap_idx.size, with_g2)
        ir = np.zeros(config.n_samples, complex)
        il = np.zeros(config.n_samples, complex)
        n_steps = (config.n_samples - 1) * n_sub
        noise = complex_wiener(seed_stream(config.master_seed, index, Purpose.NOISE), (n_steps, 2), dt)
        status = _kernels.run_qsd(kern.order, kern.ep, kern.em, dw, x, sz, noise, dt, n_sub, config.gamma,
                                  config.include_hamiltonian, snap_idx, rec_ir=ir, rec_il=il, **buf)
        if status < 0:
            break
        message = f"non-finite state at step {status} with dt={dt:.3e}"
        n_sub *= 2
        dt /= 2
    failed = status >= 0
    return TrajectoryRecord(
        engine="qsdmf", index=index, t=config.grid, n_atoms=config.n_atoms, gamma=config.gamma,
        sum_sz=buf["rec_sz"], jr=buf["rec_jr"], jl=buf["rec_jl"], sum_q=buf["rec_q"],
        g2_num=buf["rec_g2"] if with_g2 else None,
        homodyne=np.column_stack([ir, il]),
        snapshots=buf["snaps"] if snap_idx.size else None,
        snapshot_times=config.grid[snap_idx] if snap_idx.size else None,
        xi=np.asarray(realization.xi), failed=failed, message=message if failed else "",
        retries=attempt,
    )
