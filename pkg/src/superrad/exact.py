"""Exact reference solutions.

* Quantum-jump trajectories of the disordered master equation, worked in
  fixed-excitation sectors of the 2^N product basis.
* The rate equation on the symmetric Dicke ladder for ordered arrays.
* The collective spin coupled to one damped cavity, integrated as a
  density matrix on |J = N/2, m⟩ ⊗ |n⟩.
* A dense Lindblad integrator for very small N, used in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply
from scipy.optimize import brentq

from .model import DisorderRealization, SystemConfig, interaction_kernels
from .observables import EnsembleStatistics, find_peak
from .records import TrajectoryRecord
from .streams import Purpose, seed_stream

QJ_MAX_ATOMS = 15
ED_MAX_ATOMS = 30


# ---------------------------------------------------------------- sectors

@lru_cache(maxsize=None)
def _sector_states(n: int, k: int) -> np.ndarray:
    """Bitmasks with exactly k excited atoms, ascending (bit j = atom j)."""
    states = np.arange(1 << n, dtype=np.int64)
    counts = np.zeros(1 << n, dtype=np.int64)
    for j in range(n):
        counts += (states >> j) & 1
    return states[counts == k]


def _index_map(n: int, states: np.ndarray) -> np.ndarray:
    lookup = np.full(1 << n, -1, dtype=np.int64)
    lookup[states] = np.arange(states.size)
    return lookup


@dataclass
class _Sector:
    k: int
    states: np.ndarray
    generator: sp.csr_matrix          # −iH_eff
    lower_r: sp.csr_matrix | None     # J_R into sector k − 1
    lower_l: sp.csr_matrix | None
    norm_bound: float


class SectorOperators:
    """Sparse −iH_eff and J_R, J_L restricted to excitation sectors."""

    def __init__(self, realization: DisorderRealization, gamma: float, hamiltonian: bool = True):
        n = realization.n_atoms
        if n > QJ_MAX_ATOMS:
            raise ValueError(f"exact trajectories are limited to N <= {QJ_MAX_ATOMS}")
        self.n = n
        self.gamma = gamma
        kern = interaction_kernels(realization)
        kmat = kern.dense()
        if not hamiltonian:
            kmat = kmat.real.astype(complex)
        self.kernel = kmat
        self.em = kern.em
        self.ep = kern.ep
        self._cache: dict[int, _Sector] = {}

    def sector(self, k: int) -> _Sector:
        if k in self._cache:
            return self._cache[k]
        n, g = self.n, self.gamma
        states = _sector_states(n, k)
        dim = states.size
        lookup = _index_map(n, states)
        rows, cols, vals = [np.arange(dim)], [np.arange(dim)], [np.full(dim, -0.5 * g * k, complex)]
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                # σ_i⁺σ_j⁻ takes s (j set, i clear) to s − 2^j + 2^i
                mask = (((states >> j) & 1) == 1) & (((states >> i) & 1) == 0)
                src = np.flatnonzero(mask)
                if src.size == 0:
                    continue
                dst = lookup[states[src] - (1 << j) + (1 << i)]
                rows.append(dst)
                cols.append(src)
                vals.append(np.full(src.size, -0.5 * g * self.kernel[i, j]))
        gen = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(dim, dim))
        lower_r = lower_l = None
        if k > 0:
            low = _sector_states(n, k - 1)
            low_lookup = _index_map(n, low)
            r_rows, r_cols, r_vals, l_vals = [], [], [], []
            for j in range(n):
                src = np.flatnonzero(((states >> j) & 1) == 1)
                r_rows.append(low_lookup[states[src] - (1 << j)])
                r_cols.append(src)
                r_vals.append(np.full(src.size, self.em[j]))
                l_vals.append(np.full(src.size, self.ep[j]))
            r_rows = np.concatenate(r_rows)
            r_cols = np.concatenate(r_cols)
            lower_r = sp.csr_matrix((np.concatenate(r_vals), (r_rows, r_cols)), shape=(low.size, dim))
            lower_l = sp.csr_matrix((np.concatenate(l_vals), (r_rows, r_cols)), shape=(low.size, dim))
        bound = float(abs(gen).sum(axis=1).max()) if dim else 0.0
        sec = _Sector(k, states, gen, lower_r, lower_l, bound)
        self._cache[k] = sec
        return sec


def _channel_sums(ops: SectorOperators, k: int, psi: np.ndarray):
    """⟨J_R†J_R⟩, ⟨J_L†J_L⟩ and the three fourth-order moments for normalized ψ."""
    if k == 0:
        return 0.0, 0.0, 0.0, 0.0, 0.0
    sec = ops.sector(k)
    jr = sec.lower_r @ psi
    jl = sec.lower_l @ psi
    o_r = float(np.vdot(jr, jr).real)
    o_l = float(np.vdot(jl, jl).real)
    if k == 1:
        return o_r, o_l, 0.0, 0.0, 0.0
    low = ops.sector(k - 1)
    rr = low.lower_r @ jr
    ll = low.lower_l @ jl
    rl = low.lower_l @ jr
    return (o_r, o_l, float(np.vdot(rr, rr).real), float(np.vdot(ll, ll).real),
            float(np.vdot(rl, rl).real))


def quantum_jump_run(config: SystemConfig, realization: DisorderRealization, index: int,
                     tol: float = 1e-14) -> TrajectoryRecord:
    """One Monte Carlo wavefunction trajectory from the fully excited state.

    Between jumps ψ evolves under −iH_eff by Taylor steps with ‖A‖τ ≤ 1; a
    jump fires when ‖ψ‖² reaches a uniform threshold, located by Brent's
    method on the Taylor polynomial, and the channel is picked with
    probability ∝ ‖J_kψ‖².  Records R(t), the channel occupations and
    ⟨J_η†J_η'†J_η'J_η⟩ on the common grid.
    """
    n = config.n_atoms
    if n > QJ_MAX_ATOMS:
        raise ValueError(f"exact trajectories are limited to N <= {QJ_MAX_ATOMS}")
    ops = _qj_operators(config, realization)
    rng = seed_stream(config.master_seed, index, Purpose.JUMPS)
    grid = config.grid
    ns = grid.size
    occ_r = np.zeros(ns)
    occ_l = np.zeros(ns)
    g2 = np.zeros((ns, 3))
    sum_sz = np.zeros(ns)

    def record(i, k, psi):
        nrm = np.vdot(psi, psi).real
        o = _channel_sums(ops, k, psi / math.sqrt(nrm)) if nrm > 0 else (0.0,) * 5
        occ_r[i], occ_l[i] = o[0], o[1]
        g2[i] = o[2], o[3], o[4]
        sum_sz[i] = 2 * k - n

    k = n
    psi = np.ones(1, dtype=complex)
    t = 0.0
    threshold = rng.uniform()
    gi = 0
    t_end = grid[-1]
    while gi < ns:
        if k == 0:
            for i in range(gi, ns):
                record(i, 0, psi)
            break
        sec = ops.sector(k)
        tau = 1.0 / sec.norm_bound if sec.norm_bound > 0 else t_end
        h = min(tau, t_end - t) if t < t_end else 0.0
        # Taylor terms v_m = A^m ψ / m!
        terms = [psi]
        size = np.linalg.norm(psi)
        m = 0
        while m < 60:
            m += 1
            nxt = sec.generator @ terms[-1] * (h / m if h > 0 else 0.0)
            terms.append(nxt)
            if np.linalg.norm(nxt) <= tol * size:
                break
        vmat = np.array(terms)
        powers = np.arange(len(terms))

        def at(s):
            return (s / h) ** powers @ vmat if h > 0 else psi

        def norm2(s):
            v = at(s)
            return np.vdot(v, v).real - threshold

        end_norm = norm2(h)
        s_jump = None
        if end_norm <= 0:
            s_jump = brentq(norm2, 0.0, h, xtol=1e-12 * max(h, 1e-300), rtol=1e-13) if norm2(0.0) > 0 else 0.0
        stop = h if s_jump is None else s_jump
        while gi < ns and grid[gi] <= t + stop + 1e-15:
            record(gi, k, at(min(max(grid[gi] - t, 0.0), h)))
            gi += 1
        if s_jump is None:
            psi = at(h)
            t += h
            if h == 0.0:
                # only reachable when the grid ends exactly at t
                for i in range(gi, ns):
                    record(i, k, psi)
                break
            continue
        psi = at(s_jump)
        t += s_jump
        jr = sec.lower_r @ psi
        jl = sec.lower_l @ psi
        wr = np.vdot(jr, jr).real
        wl = np.vdot(jl, jl).real
        psi = jr if rng.uniform() * (wr + wl) < wr else jl
        psi = psi / np.linalg.norm(psi)
        k -= 1
        threshold = rng.uniform()
    rate = 0.5 * config.gamma * (occ_r + occ_l)
    return TrajectoryRecord(
        engine="qj", index=index, t=grid, n_atoms=n, gamma=config.gamma, sum_sz=sum_sz,
        g2_num=g2, rate=rate, occ_r=occ_r, occ_l=occ_l, xi=np.asarray(realization.xi))


_QJ_CACHE: dict = {}


def _qj_operators(config: SystemConfig, realization: DisorderRealization) -> SectorOperators:
    key = (config.gamma, config.include_hamiltonian, realization.xi.tobytes(), realization.z_order.tobytes())
    ops = _QJ_CACHE.get(key)
    if ops is None:
        _QJ_CACHE.clear()
        ops = SectorOperators(realization, config.gamma, config.include_hamiltonian)
        _QJ_CACHE[key] = ops
    return ops


# ---------------------------------------------------------- Dicke ladder

def dicke_ladder_rates(n_atoms: int, gamma: float = 1.0) -> np.ndarray:
    """Γ_m = γ(J + m)(J − m + 1) for m = J, J − 1, …, −J + 1."""
    k = np.arange(n_atoms, 0, -1, dtype=float)   # k = J + m excitations
    return gamma * k * (n_atoms - k + 1)


def _ladder_rhs(p, rates):
    out = -rates * p
    out[1:] += rates[:-1] * p[:-1]
    return out


def _ladder_integrate(n_atoms, gamma, grid, n_sub):
    rates = np.append(dicke_ladder_rates(n_atoms, gamma), 0.0)   # index i ↔ k = N − i
    p = np.zeros(n_atoms + 1)
    p[0] = 1.0
    out = np.empty((grid.size, n_atoms + 1))
    out[0] = p
    for i in range(1, grid.size):
        h = (grid[i] - grid[i - 1]) / n_sub
        for _ in range(n_sub):
            k1 = _ladder_rhs(p, rates)
            k2 = _ladder_rhs(p + 0.5 * h * k1, rates)
            k3 = _ladder_rhs(p + 0.5 * h * k2, rates)
            k4 = _ladder_rhs(p + h * k3, rates)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = p
    return out, rates


def dicke_rate_equation_evolve(n_atoms: int, gamma: float, grid, rel_tol: float = 1e-4,
                               max_refinements: int = 12) -> EnsembleStatistics:
    """Populations of the symmetric ladder from the fully excited state.

    RK4 on the given grid; the number of substeps is doubled until R★
    moves by less than ``rel_tol`` relative.  The returned statistics
    carry the exact g² (both channels equal the single collective jump).
    """
    grid = np.asarray(grid, dtype=float)
    n_sub = max(1, int(math.ceil(np.max(np.diff(grid)) * gamma * n_atoms * n_atoms / 4)))
    prev = None
    for _ in range(max_refinements):
        pops, rates = _ladder_integrate(n_atoms, gamma, grid, n_sub)
        r = pops @ rates
        peak = find_peak(r, grid)
        if prev is not None and abs(peak.r_star - prev) <= rel_tol * abs(peak.r_star):
            break
        prev = peak.r_star
        n_sub *= 2
    k = np.arange(n_atoms, -1, -1, dtype=float)
    p_e = pops @ k / n_atoms
    occ = pops @ (rates / gamma)
    fourth = pops @ ((rates / gamma) * np.append((rates / gamma)[1:], 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        g2 = np.where(occ > 1e-12 * n_atoms ** 2, fourth / occ ** 2, np.nan)
    zeros = np.zeros_like(r)
    return EnsembleStatistics(grid, r, zeros, p_e, zeros.copy(), peak.r_star, peak.t_star, peak.at_boundary,
                              1, 0, g2, g2.copy(), g2.copy())


# ------------------------------------------------- collective spin + cavity

def _collective_cavity_ops(n_atoms: int, n_max: int):
    j = n_atoms / 2
    m = np.arange(-j, j + 1)
    lower = sp.diags(np.sqrt((j + m[1:]) * (j - m[1:] + 1)), 1, shape=(n_atoms + 1,) * 2)
    a = sp.diags(np.sqrt(np.arange(1, n_max + 1)), 1, shape=(n_max + 1,) * 2)
    eye_s = sp.identity(n_atoms + 1)
    eye_c = sp.identity(n_max + 1)
    jm = sp.kron(lower, eye_c).tocsr()
    am = sp.kron(eye_s, a).tocsr()
    jz = sp.kron(sp.diags(m), eye_c).tocsr()
    return jm, am, jz


def collective_cavity_generator(n_atoms: int, gamma: float, kappa: float, coupling_g: float | None = None,
                                n_max: int | None = None):
    """Sparse Liouvillian of the collective spin plus one cavity.

    Returns ``(L, dim, ops)``: dρ/dt = L vec(ρ) with ρ flattened row-major,
    and ``ops`` holds the sparse J⁻, a, J_z and the coupling g.
    """
    n_max = n_atoms if n_max is None else n_max
    g = math.sqrt(gamma * kappa) / 2 if coupling_g is None else coupling_g
    jm, am, jz = _collective_cavity_ops(n_atoms, n_max)
    h = 1j * g * (jm @ am.conj().T - jm.conj().T @ am)
    heff = (h - 0.5j * kappa * (am.conj().T @ am)).tocsr()
    dim = heff.shape[0]
    eye = sp.identity(dim, format="csr")
    # vec(AρB) = (A ⊗ Bᵀ) vec(ρ) for row-major flattening
    liou = (-1j * sp.kron(heff, eye) + 1j * sp.kron(eye, heff.conj())
            + kappa * sp.kron(am, am.conj())).tocsr()
    return liou, dim, {"jm": jm, "a": am, "jz": jz, "g": g, "n_max": n_max}


def _excitation_blocks(n_atoms: int, n_max: int) -> np.ndarray:
    """Flat indices of ρ entries between states of equal excitation number.

    H conserves m + J + n and the cavity jump lowers it by one, so from the
    fully excited state ρ never leaves the blocks with at most N quanta.
    """
    exc = (np.arange(n_atoms + 1)[:, None] + np.arange(n_max + 1)[None, :]).ravel()
    rows, cols = np.nonzero((exc[:, None] == exc[None, :]) & (exc[:, None] <= n_atoms))
    return rows * exc.size + cols


def _propagate(liou, y0, grid, dense_limit: int = 4000):
    """vec(ρ) on the grid by exact exponential propagation."""
    out = np.empty((grid.size, y0.size), complex)
    out[0] = y0
    steps = np.diff(grid)
    dense = liou.shape[0] <= dense_limit
    cache = {}
    for i, h in enumerate(steps):
        if not dense:
            out[i + 1] = expm_multiply(h * liou, out[i])
            continue
        # steps of a linspace grid agree to rounding; share one propagator
        key = float(f"{h:.10e}")
        if key not in cache:
            cache[key] = expm(h * liou.toarray())
        out[i + 1] = cache[key] @ out[i]
    return out


def ed_collective_cavity_evolve(n_atoms: int, gamma: float, kappa: float, grid,
                                coupling_g: float | None = None, n_max: int | None = None) -> EnsembleStatistics:
    """Lindblad evolution of N identical atoms in one damped cavity.

    H = i g (J a† − J† a) with g = sqrt(γκ)/2 unless given, cavity
    decay κ, photon number truncated at ``n_max`` (default N).  The
    Liouvillian, restricted to the excitation blocks, is exponentiated
    directly, which stays accurate for κ ≫ γN where explicit integrators
    drift off the positive cone.  R(t)
    is −½ d⟨Σσ_z⟩/dt = g⟨J a† + J† a⟩, evaluated from ρ directly.
    """
    if n_atoms > ED_MAX_ATOMS:
        raise ValueError(f"collective-cavity ED is limited to N <= {ED_MAX_ATOMS}")
    liou, dim, ops = collective_cavity_generator(n_atoms, gamma, kappa, coupling_g, n_max)
    jm, am, jz, g, n_max = ops["jm"], ops["a"], ops["jz"], ops["g"], ops["n_max"]
    psi0 = np.zeros(dim, complex)
    psi0[n_atoms * (n_max + 1)] = 1.0    # m = +J, n = 0
    grid = np.asarray(grid, dtype=float)
    keep = _excitation_blocks(n_atoms, n_max)
    y0 = np.outer(psi0, psi0.conj()).ravel()
    states = np.zeros((grid.size, dim * dim), complex)
    states[:, keep] = _propagate(liou[keep][:, keep], y0[keep], grid)
    # tr(Aρ) = Σ_ij A_ji ρ_ij
    emit = (g * (jm @ am.conj().T + jm.conj().T @ am)).toarray()
    r = (states @ emit.T.ravel()).real
    p_e = 0.5 + (states @ jz.toarray().T.ravel()).real / n_atoms
    exc = (np.arange(n_atoms + 1)[:, None] + np.arange(n_max + 1)[None, :]).ravel()
    for e in range(n_atoms + 1):
        idx = np.flatnonzero(exc == e)
        block = states[:, (idx[:, None] * dim + idx[None, :]).ravel()].reshape(grid.size, idx.size, idx.size)
        lam = np.linalg.eigvalsh(0.5 * (block + np.conj(np.swapaxes(block, 1, 2)))).min(axis=1)
        bad = np.flatnonzero(lam < -1e-8)
        if bad.size:
            i = bad[0]
            raise RuntimeError(f"density matrix lost positivity at t={grid[i]:.4g} (λ_min={lam[i]:.2e})")
    peak = find_peak(r, grid)
    zeros = np.zeros_like(r)
    return EnsembleStatistics(grid, r, zeros, p_e, zeros.copy(), peak.r_star, peak.t_star,
                              peak.at_boundary, 1, 0)


# ------------------------------------------------------- dense reference

def dense_operators(realization: DisorderRealization, hamiltonian: bool = True, gamma: float = 1.0):
    """Dense σ⁻_j, J_R, J_L and H on the 2^N product space (small N only)."""
    n = realization.n_atoms
    if n > 8:
        raise ValueError("dense operators are limited to N <= 8")
    lower1 = np.array([[0, 1], [0, 0]], dtype=complex)   # basis (g, e)
    eye = np.eye(2)
    sig = []
    for j in range(n):
        op = np.array([[1.0 + 0j]])
        for l in range(n):
            op = np.kron(op, lower1 if l == j else eye)
        sig.append(op)
    kern = interaction_kernels(realization).dense()
    jr = sum(np.exp(-1j * realization.xi[j]) * sig[j] for j in range(n))
    jl = sum(np.exp(1j * realization.xi[j]) * sig[j] for j in range(n))
    h = np.zeros_like(sig[0])
    if hamiltonian:
        for i in range(n):
            for j in range(n):
                if i != j:
                    h += 0.5 * gamma * kern[i, j].imag * sig[i].conj().T @ sig[j]
    return sig, jr, jl, h


def dense_lindblad_evolve(realization: DisorderRealization, gamma: float, grid,
                          hamiltonian: bool = True, observables=None):
    """Integrate ρ for N ≤ 8 and return {name: expectation(t)}.

    ``observables`` maps names to dense operators; by default the decay
    rate, each σ_z and the fourth-order moments are reported.
    """
    sig, jr, jl, h = dense_operators(realization, hamiltonian, gamma)
    n = len(sig)
    dim = 1 << n
    jumps = [math.sqrt(gamma / 2) * jr, math.sqrt(gamma / 2) * jl]
    heff = h - 0.5j * sum(L.conj().T @ L for L in jumps)
    psi0 = np.zeros(dim, complex)
    psi0[-1] = 1.0                                 # every atom excited
    rho0 = np.outer(psi0, psi0.conj())

    def rhs(_, y):
        rho = y.reshape(dim, dim)
        out = -1j * (heff @ rho - rho @ heff.conj().T)
        for L in jumps:
            out += L @ rho @ L.conj().T
        return out.ravel()

    if observables is None:
        observables = {"rate": 0.5 * gamma * (jr.conj().T @ jr + jl.conj().T @ jl)}
        for j in range(n):
            observables[f"sz{j}"] = sig[j].conj().T @ sig[j] * 2 - np.eye(dim)
        observables["g2_rr"] = jr.conj().T @ jr.conj().T @ jr @ jr
        observables["g2_ll"] = jl.conj().T @ jl.conj().T @ jl @ jl
        observables["g2_rl"] = jr.conj().T @ jl.conj().T @ jl @ jr
    grid = np.asarray(grid, dtype=float)
    sol = solve_ivp(rhs, (grid[0], grid[-1]), rho0.ravel(), t_eval=grid, method="DOP853",
                    rtol=1e-10, atol=1e-12)
    out = {}
    for name, op in observables.items():
        out[name] = np.array([np.trace(op @ sol.y[:, i].reshape(dim, dim)).real for i in range(grid.size)])
    return out
