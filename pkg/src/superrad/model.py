"""Physical system: disorder, geometry kernels and the two-channel dissipator.

Atoms sit near the sites of a lattice with spacing λ₀, so the propagation
phase of atom j is k₀z_j = 2πj + ξ_j.  Only ξ_j mod 2π enters the physics,
but the physical order along the waveguide decides which way round the
phase difference k₀|z_i − z_j| is taken, so both are kept.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .streams import Purpose, seed_stream


class DisorderKind(enum.Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"
    LATTICE = "lattice"


class CavityCount(enum.Enum):
    TWO = "two"
    ONE_HOMOGENEOUS = "one"


def wrap_phase(x):
    """Reduce phases to (−π, π]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


@dataclass(frozen=True)
class SystemConfig:
    """All physical and numerical parameters of one experiment.

    ``t_end``, ``dt`` and ``coupling_g`` may be left as ``None``; the
    resolved values are available as properties.  ``kappa`` is only
    needed by the explicit-cavity engine.
    """

    n_atoms: int
    gamma: float = 1.0
    theta: float = 0.0
    disorder_kind: DisorderKind = DisorderKind.UNIFORM
    k0d: float = 2.0 * math.pi
    delta_omega: float = 0.0
    kappa: float | None = None
    coupling_g: float | None = None
    include_hamiltonian: bool = True
    cavity_count: CavityCount = CavityCount.TWO
    t_end: float | None = None
    n_samples: int = 2000
    dt: float | None = None
    n_trajectories: int = 1000
    master_seed: int = 0
    frozen_disorder: bool = False

    def __post_init__(self):
        if isinstance(self.disorder_kind, str):
            object.__setattr__(self, "disorder_kind", DisorderKind(self.disorder_kind))
        if isinstance(self.cavity_count, str):
            object.__setattr__(self, "cavity_count", CavityCount(self.cavity_count))
        if int(self.n_atoms) != self.n_atoms or self.n_atoms < 1:
            raise ValueError(f"n_atoms must be a positive integer, got {self.n_atoms}")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if not self.theta >= 0:
            raise ValueError("theta must be nonnegative")
        if not self.delta_omega >= 0:
            raise ValueError("delta_omega must be nonnegative")
        if self.kappa is not None and not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be at least 1")
        if self.t_end is not None and not self.t_end > 0:
            raise ValueError("t_end must be positive")
        if self.dt is not None:
            if not self.dt > 0:
                raise ValueError("dt must be positive")
            if self.dt > self.t_final / self.n_samples * (1 + 1e-12):
                raise ValueError("dt must not exceed t_end / n_samples")
        if self.cavity_count is CavityCount.ONE_HOMOGENEOUS:
            if self.theta != 0 or self.delta_omega != 0:
                raise ValueError("the single-cavity benchmark requires theta = 0 and delta_omega = 0")
        if self.coupling_g is not None and self.coupling_g < 0:
            raise ValueError("coupling_g must be nonnegative")

    @property
    def g(self) -> float:
        """Atom-cavity coupling; sqrt(γκ)/2 unless overridden."""
        if self.coupling_g is not None:
            return float(self.coupling_g)
        if self.kappa is None:
            raise ValueError("kappa is required to derive the cavity coupling")
        return math.sqrt(self.gamma * self.kappa) / 2.0

    @property
    def t_final(self) -> float:
        if self.t_end is not None:
            return float(self.t_end)
        n = self.n_atoms
        if n >= 2:
            return 5.0 * math.log(n) / (self.gamma * n)
        return 5.0 / self.gamma

    @property
    def grid(self) -> np.ndarray:
        """Observable sample times, both ends included."""
        return np.linspace(0.0, self.t_final, self.n_samples)

    def default_dt(self) -> float:
        return 1e-3 / (self.gamma * max(self.n_atoms, 1))

    def substeps(self, dt_max: float | None = None) -> tuple[int, float]:
        """Integer number of steps per sample interval and the step itself."""
        spacing = self.t_final / (self.n_samples - 1)
        dt = self.dt if self.dt is not None else self.default_dt()
        if dt_max is not None:
            dt = min(dt, dt_max)
        n_sub = max(1, int(math.ceil(spacing / dt - 1e-9)))
        return n_sub, spacing / n_sub

    def replace(self, **changes) -> "SystemConfig":
        from dataclasses import replace
        return replace(self, **changes)


@dataclass(frozen=True)
class DisorderRealization:
    """One draw of propagation phases and frequency offsets.

    ``xi`` is reduced to (−π, π]; ``z_order`` sorts atoms by their physical
    position along the waveguide.
    """

    xi: np.ndarray
    z_order: np.ndarray
    delta_omega_j: np.ndarray
    gamma: float = 1.0
    cached_c: complex = field(init=False)
    cached_gamma_pm: tuple[float, float] = field(init=False)

    def __post_init__(self):
        c = complex(np.mean(np.exp(-2j * self.xi))) if len(self.xi) else 1.0 + 0j
        if abs(c) > 1.0:
            c = c / abs(c)
        n = len(self.xi)
        object.__setattr__(self, "cached_c", c)
        a = abs(c)
        object.__setattr__(self, "cached_gamma_pm",
                           (self.gamma * n * (1 + a) / 2, self.gamma * n * (1 - a) / 2))

    @property
    def n_atoms(self) -> int:
        return len(self.xi)

    @property
    def em(self) -> np.ndarray:
        """Right-channel weights e^{−iξ_j}."""
        return np.exp(-1j * self.xi)

    @property
    def ep(self) -> np.ndarray:
        """Left-channel weights e^{+iξ_j}."""
        return np.exp(1j * self.xi)

    @classmethod
    def from_phases(cls, xi, gamma: float = 1.0, positions=None, delta_omega_j=None):
        """Build a realization from raw phases.

        ``positions`` are the unreduced k₀z_j used for ordering; by default
        the atoms sit at k₀z_j = 2πj + ξ_j.
        """
        raw = np.asarray(xi, dtype=float)
        n = raw.size
        if positions is None:
            positions = 2.0 * np.pi * np.arange(n) + raw
        order = np.argsort(np.asarray(positions, dtype=float), kind="stable")
        if delta_omega_j is None:
            delta_omega_j = np.zeros(n)
        return cls(xi=wrap_phase(raw), z_order=order.astype(np.int64),
                   delta_omega_j=np.asarray(delta_omega_j, dtype=float), gamma=gamma)

    def with_offsets(self, delta_omega_j) -> "DisorderRealization":
        return DisorderRealization(self.xi, self.z_order, np.asarray(delta_omega_j, float), self.gamma)


def sample_uniform_disorder(config: SystemConfig, stream: np.random.Generator) -> DisorderRealization:
    """Offsets ξ_j i.i.d. uniform on [−Θ/2, Θ/2)."""
    if config.disorder_kind is not DisorderKind.UNIFORM:
        raise ValueError("config does not request uniform disorder")
    half = config.theta / 2
    xi = stream.uniform(-half, half, size=config.n_atoms) if half > 0 else np.zeros(config.n_atoms)
    return DisorderRealization.from_phases(xi, gamma=config.gamma)


def sample_gaussian_disorder(config: SystemConfig, stream: np.random.Generator) -> DisorderRealization:
    """Offsets ξ_j i.i.d. normal with standard deviation Θ/2."""
    if config.disorder_kind is not DisorderKind.GAUSSIAN:
        raise ValueError("config does not request Gaussian disorder")
    xi = stream.normal(0.0, config.theta / 2, size=config.n_atoms) if config.theta > 0 \
        else np.zeros(config.n_atoms)
    return DisorderRealization.from_phases(xi, gamma=config.gamma)


def regular_lattice(config: SystemConfig) -> DisorderRealization:
    """Equally spaced atoms with phase k₀d between neighbours."""
    j = np.arange(config.n_atoms)
    positions = j * config.k0d
    return DisorderRealization.from_phases(np.mod(positions, 2 * np.pi), gamma=config.gamma,
                                           positions=positions)


def sample_frequency_offsets(config: SystemConfig, stream: np.random.Generator) -> np.ndarray:
    """Frequency offsets δω_j i.i.d. normal with variance Δω²/4."""
    if config.delta_omega == 0:
        return np.zeros(config.n_atoms)
    return stream.normal(0.0, config.delta_omega / 2, size=config.n_atoms)


def sample_disorder(config: SystemConfig, index: int) -> DisorderRealization:
    """Realization used by trajectory ``index`` (index 0 when disorder is frozen)."""
    if config.frozen_disorder:
        index = 0
    kind = config.disorder_kind
    if kind is DisorderKind.LATTICE:
        real = regular_lattice(config)
    else:
        stream = seed_stream(config.master_seed, index, Purpose.DISORDER)
        if kind is DisorderKind.UNIFORM:
            real = sample_uniform_disorder(config, stream)
        else:
            real = sample_gaussian_disorder(config, stream)
    if config.delta_omega > 0:
        offsets = sample_frequency_offsets(config, seed_stream(config.master_seed, index, Purpose.FREQUENCY))
        real = real.with_offsets(offsets)
    return real


def overlap_c(realization: DisorderRealization) -> complex:
    """Overlap c = (1/N) Σ_j e^{−2iξ_j} of the two directional decay modes."""
    return complex(np.mean(np.exp(-2j * np.asarray(realization.xi))))


def channel_rates(realization: DisorderRealization) -> tuple[float, float]:
    """Eigen-rates Γ± = γN(1 ± |c|)/2 of the two-channel dissipator."""
    return realization.cached_gamma_pm


def rayleigh_abs_overlap(n_atoms: int) -> float:
    """Large-N mean of |c| when 2ξ covers whole circles (Θ a multiple of π)."""
    return math.sqrt(math.pi / (4 * n_atoms))


def disorder_moments(theta: float, kind: DisorderKind) -> tuple[float, float, float, float]:
    """Mean and variance of cos 2ξ and sin 2ξ: (μ_a, σ_a², μ_b, σ_b²)."""
    kind = DisorderKind(kind)
    if kind is DisorderKind.UNIFORM:
        if theta < 0:
            raise ValueError("theta must be nonnegative")
        if theta < 1e-4:
            # series to O(Θ⁴); avoids the 0/0 in the closed forms
            t2 = theta * theta
            return (1 - t2 / 6, t2 * t2 / 45, 0.0, t2 / 3)
        s, c = math.sin(theta), math.cos(theta)
        mu_a = s / theta
        var_a = (theta ** 2 + math.cos(2 * theta) + theta * c * s - 1) / (2 * theta ** 2)
        var_b = (theta - c * s) / (2 * theta)
        return (mu_a, var_a, 0.0, var_b)
    if kind is DisorderKind.GAUSSIAN:
        e1 = math.exp(-theta ** 2 / 2)
        e2 = math.exp(-theta ** 2)
        return (e1, (1 - 2 * e2 + e2 * e2) / 2, 0.0, (1 - e2 * e2) / 2)
    raise ValueError(f"no moment formulas for {kind}")


@dataclass(frozen=True)
class InteractionKernels:
    """Prefix-sum form of the pair kernels for one realization.

    For the atom pair (j, l) with z_l < z_j the kernel e^{ik₀|z_j − z_l|}
    factorises as e^{iξ_j}e^{−iξ_l}, and with the roles swapped otherwise,
    so one sweep in position order evaluates Σ_l e^{ik₀|z_j − z_l|} x_l
    for every j at once.
    """

    ep: np.ndarray
    em: np.ndarray
    order: np.ndarray

    def full(self, x) -> np.ndarray:
        """Σ_l e^{ik₀|z_j − z_l|} x_l, diagonal included."""
        out = np.empty(len(x), dtype=np.complex128)
        _kernels.kernel_full(self.order, self.ep, self.em, np.asarray(x, np.complex128), out)
        return out

    def cos_sum(self, x) -> np.ndarray:
        """Σ_l cos(ξ_j − ξ_l) x_l, diagonal included."""
        out = np.empty(len(x), dtype=np.complex128)
        _kernels.kernel_cos(self.ep, self.em, np.asarray(x, np.complex128), out)
        return out

    def sin_sum(self, x) -> np.ndarray:
        """Σ_l sin(k₀|z_j − z_l|) x_l."""
        return (self.full(x) - self.cos_sum(x)) / 1j

    def dense(self) -> np.ndarray:
        """Dense matrix e^{ik₀|z_j − z_l|}; O(N²), for checks only."""
        n = len(self.ep)
        rank = np.empty(n, dtype=np.int64)
        rank[self.order] = np.arange(n)
        xi = np.angle(self.ep)
        diff = xi[:, None] - xi[None, :]
        sign = np.where(rank[:, None] >= rank[None, :], 1.0, -1.0)
        return np.exp(1j * sign * diff)


def interaction_kernels(realization: DisorderRealization) -> InteractionKernels:
    xi = np.asarray(realization.xi)
    return InteractionKernels(np.exp(1j * xi), np.exp(-1j * xi),
                              np.asarray(realization.z_order, dtype=np.int64))
