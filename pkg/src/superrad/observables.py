"""Ensemble estimators built from trajectory records.

Averages run over trajectories (and, since each trajectory carries its own
disorder draw, over disorder at the same time).  Standard errors of ratio
estimators such as g² use the first-order delta method.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .records import TrajectoryRecord

G2_FLOOR = 1e-12


class Peak(NamedTuple):
    r_star: float
    t_star: float
    at_boundary: bool


@dataclass
class EnsembleStatistics:
    grid: np.ndarray
    r_of_t: np.ndarray
    r_se: np.ndarray
    p_e: np.ndarray
    p_e_se: np.ndarray
    r_star: float
    t_star: float
    peak_at_boundary: bool
    n_effective: int
    n_failed: int = 0
    g2_auto_RR: np.ndarray | None = None
    g2_cross_RL: np.ndarray | None = None
    g2_total: np.ndarray | None = None

    def scaled_peak(self, n_atoms: int, gamma: float = 1.0) -> float:
        """R★/(γN²)."""
        return self.r_star / (gamma * n_atoms ** 2)


@dataclass
class HistogramGrid:
    """2D histogram with its bin edges.

    ``counts`` sum to ``normalization``; ``density`` is the per-bin mass.
    """

    x_edges: np.ndarray
    y_edges: np.ndarray
    counts: np.ndarray
    normalization: float
    label: str = ""
    snapshot_time: float = float("nan")

    @property
    def density(self) -> np.ndarray:
        return self.counts / self.normalization if self.normalization else self.counts * 0.0

    def centers(self):
        return 0.5 * (self.x_edges[1:] + self.x_edges[:-1]), 0.5 * (self.y_edges[1:] + self.y_edges[:-1])


def _usable(records: Sequence[TrajectoryRecord]) -> list[TrajectoryRecord]:
    good = [r for r in records if not r.failed]
    if not good:
        raise ValueError("no successful trajectories")
    grid = good[0].t
    for r in good[1:]:
        if r.t.shape != grid.shape or not np.array_equal(r.t, grid):
            raise ValueError("records live on different time grids")
    return good


def _mean_se(stack: np.ndarray):
    m = stack.shape[0]
    mean = stack.mean(axis=0)
    se = stack.std(axis=0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(mean)
    return mean, se


def _check_grid(records, grid):
    if grid is not None and not np.allclose(records[0].t, grid):
        raise ValueError("requested grid differs from the records' grid")


def decay_rate_estimate(records, realizations=None, grid=None):
    """Mean R(t) and its standard error.

    Per trajectory R = (γ/2)(|J_R|² + |J_L|² − 2Σ|s⁻|²) + (γ/2)Σ(1 + s_z):
    the pair part Σ_{j≠l} cos(ξ_j − ξ_l)s_j⁺s_l⁻ is a difference of a
    squared collective sum and its diagonal, and coincident sites use
    σ⁺σ⁻ = (1 + σ_z)/2.
    """
    good = _usable(records)
    _check_grid(good, grid)
    return _mean_se(np.stack([r.decay_rate() for r in good]))


def excited_population(records, grid=None):
    """Mean excited fraction P_e(t) = Σ_j (1 + s_z,j)/(2N) and its error."""
    good = _usable(records)
    _check_grid(good, grid)
    return _mean_se(np.stack([r.excited_population() for r in good]))


def find_peak(r_of_t, grid) -> Peak:
    """Maximum of a sampled curve, refined by a parabola through three points.

    Ties go to the earliest sample.  A maximum on the first or last sample
    is returned unrefined with ``at_boundary`` set.
    """
    r = np.asarray(r_of_t, dtype=float)
    t = np.asarray(grid, dtype=float)
    if r.size < 3 or r.size != t.size:
        raise ValueError("need at least three samples on a matching grid")
    k = int(np.nanargmax(r))
    if k == 0 or k == r.size - 1:
        return Peak(float(r[k]), float(t[k]), True)
    t0, t1, t2 = t[k - 1:k + 2]
    y0, y1, y2 = r[k - 1:k + 2]
    d01 = (y1 - y0) / (t1 - t0)
    d12 = (y2 - y1) / (t2 - t1)
    a = (d12 - d01) / (t2 - t0)
    if a >= 0:
        return Peak(float(y1), float(t1), False)
    ts = 0.5 * (t0 + t1) - d01 / (2 * a)
    ts = min(max(ts, t0), t2)
    ys = y0 + d01 * (ts - t0) + a * (ts - t0) * (ts - t1)
    return Peak(float(ys), float(ts), False)


def _ratio(num, d1, d2):
    """Ratio of means n̄/(d̄₁d̄₂) with a delta-method standard error."""
    m = num.shape[0]
    nb, b1, b2 = num.mean(0), d1.mean(0), d2.mean(0)
    den = b1 * b2
    with np.errstate(divide="ignore", invalid="ignore"):
        val = nb / den
        resid = num / den - val * (d1 / b1 + d2 / b2)
    se = resid.std(0, ddof=1) / np.sqrt(m) if m > 1 else np.zeros_like(val)
    return val, se, den


def g2_estimates(records, realizations=None, grid=None, with_errors: bool = False):
    """Equal-time g²_RR, g²_RL and the all-channel g̃².

    Numerators and denominators are averaged separately over the ensemble.
    Points whose denominator falls below 10⁻¹²(γN)² are returned as NaN.
    """
    good = _usable(records)
    _check_grid(good, grid)
    if any(r.g2_num is None for r in good):
        raise ValueError("records carry no fourth-order sums")
    n, gamma = good[0].n_atoms, good[0].gamma
    num = np.stack([r.g2_num for r in good])
    occ = [r.occupations() for r in good]
    o_r = np.stack([o[0] for o in occ])
    o_l = np.stack([o[1] for o in occ])
    floor = G2_FLOOR * n ** 2
    auto, auto_se, den_a = _ratio(num[:, :, 0], o_r, o_r)
    cross, cross_se, den_c = _ratio(num[:, :, 2], o_r, o_l)
    tot_num = num[:, :, 0] + num[:, :, 1] + 2 * num[:, :, 2]
    o_t = o_r + o_l
    total, total_se, den_t = _ratio(tot_num, o_t, o_t)
    for v, s, d in ((auto, auto_se, den_a), (cross, cross_se, den_c), (total, total_se, den_t)):
        bad = ~(d > floor)
        v[bad] = np.nan
        s[bad] = np.nan
    # γ²/4 · Σ numerators / R² with R = (γ/2)(occ_R + occ_L) reduces to the ratio above
    if with_errors:
        return (auto, auto_se), (cross, cross_se), (total, total_se)
    return auto, cross, total


def directional_rates(record: TrajectoryRecord, realization=None, grid=None):
    """Right and left emission rates of one product-state trajectory.

    R_R = (γ/2)Σ_{i≠j} e^{i(ξ_i − ξ_j)}⟨σ_i⁺⟩⟨σ_j⁻⟩ = (γ/2)(|⟨J_R⟩|² − Σ|⟨σ⁻⟩|²),
    and likewise for the left channel.
    """
    if record.engine != "qsdmf":
        raise ValueError("directional rates need physical (QSDMF) trajectories")
    half = 0.5 * record.gamma
    return (half * (np.abs(record.jr) ** 2 - record.sum_q),
            half * (np.abs(record.jl) ** 2 - record.sum_q))


def rate_difference_spread(records):
    """Ensemble standard deviation of R_R − R_L over time."""
    good = _usable(records)
    diff = np.stack([np.subtract(*directional_rates(r)) for r in good])
    return diff.std(axis=0, ddof=1)


def wrap_angle(a):
    """Wrap to [−π, π)."""
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


def _nearest_snapshot(record: TrajectoryRecord, t_star: float) -> np.ndarray:
    if record.snapshots is None:
        raise ValueError(f"trajectory {record.index} has no Bloch snapshots")
    k = int(np.argmin(np.abs(record.snapshot_times - t_star)))
    return record.snapshots[k]


def spin_ordering_pairs(records, t_star: float, pair_budget: int = 2_000_000,
                        seed: int = 0, min_sin_theta: float = 0.1):
    """Sampled (Δξ, Δφ) over atom pairs at the snapshot nearest ``t_star``.

    Atoms whose polar angle leaves them within sinθ < ``min_sin_theta`` of
    a pole have no usable azimuth and are dropped.  Returns the two
    wrapped arrays and the fraction of atoms dropped.
    """
    good = [r for r in records if not r.failed]
    if any(r.engine != "qsdmf" for r in good):
        raise ValueError("ordering histograms need physical (QSDMF) trajectories")
    rng = np.random.default_rng(seed)
    per_record = max(1, pair_budget // max(1, len(good)))
    dxi, dphi = [], []
    dropped = total = 0
    for r in good:
        b = _nearest_snapshot(r, t_star)
        sin_t = np.hypot(b[:, 0], b[:, 1]) / np.linalg.norm(b, axis=1)
        keep = np.flatnonzero(sin_t >= min_sin_theta)
        total += b.shape[0]
        dropped += b.shape[0] - keep.size
        if keep.size < 2:
            continue
        phi = np.arctan2(b[keep, 1], b[keep, 0])
        xi = np.asarray(r.xi)[keep]
        m = keep.size
        n_pairs = m * (m - 1) // 2
        if n_pairs <= per_record:
            i, j = np.triu_indices(m, 1)
        else:
            i = rng.integers(0, m, per_record)
            j = rng.integers(0, m - 1, per_record)
            j = j + (j >= i)
        dxi.append(wrap_angle(xi[i] - xi[j]))
        dphi.append(wrap_angle(phi[i] - phi[j]))
    if not dxi:
        raise ValueError("no atom pairs retained for the ordering histogram")
    return np.concatenate(dxi), np.concatenate(dphi), dropped / max(total, 1)


def spin_ordering_histogram(records, t_star: float, bins: int = 32, pair_budget: int = 2_000_000,
                            seed: int = 0) -> HistogramGrid:
    """Joint density of (Δξ, Δφ) on [−π, π)² at the burst."""
    dxi, dphi, _ = spin_ordering_pairs(records, t_star, pair_budget, seed)
    edges = np.linspace(-np.pi, np.pi, bins + 1)
    counts, _, _ = np.histogram2d(dxi, dphi, bins=(edges, edges))
    return HistogramGrid(edges, edges.copy(), counts, float(counts.sum()), "dxi,dphi", t_star)


def band_fractions(dxi, dphi, width: float = np.pi / 4) -> dict:
    """Share of pairs near the aligned row and the two ordered diagonals.

    Returns the measured fractions together with what a uniform density on
    the torus would give (the union of the two diagonal bands covers 7/16
    of it for the default width).
    """
    dxi = np.asarray(dxi)
    dphi = np.asarray(dphi)
    minus = np.abs(wrap_angle(dphi - dxi)) < width
    plus = np.abs(wrap_angle(dphi + dxi)) < width
    row = np.abs(wrap_angle(dphi)) < width
    w = width / np.pi
    # Δφ − Δξ and Δφ + Δξ are independent and uniform under a uniform density
    union_base = 2 * w - w * w
    return {
        "diagonal": float(np.mean(minus | plus)),
        "diagonal_baseline": union_base,
        "counter": float(np.mean(minus)),
        "clock": float(np.mean(plus)),
        "single_baseline": w,
        "row": float(np.mean(row)),
        "row_baseline": w,
    }


def rate_pair_samples(records, t_star: float):
    """(R_R, R_L) of every trajectory at the sample nearest ``t_star``."""
    good = [r for r in records if not r.failed]
    k = int(np.argmin(np.abs(good[0].t - t_star)))
    rr, rl = zip(*(directional_rates(r) for r in good))
    return np.array([a[k] for a in rr]), np.array([b[k] for b in rl])


def rate_pair_histogram(records, t_star: float, bins: int = 32) -> HistogramGrid:
    """Joint density of the directional rates over trajectories at ``t_star``."""
    rr, rl = rate_pair_samples(records, t_star)
    hi = max(rr.max(), rl.max())
    lo = min(rr.min(), rl.min())
    edges = np.linspace(lo, hi if hi > lo else lo + 1.0, bins + 1)
    counts, _, _ = np.histogram2d(rr, rl, bins=(edges, edges))
    return HistogramGrid(edges, edges.copy(), counts, float(counts.sum()), "R_R,R_L", t_star)


def ensemble_statistics(records, with_g2: bool = True) -> EnsembleStatistics:
    good = _usable(records)
    grid = good[0].t
    r, r_se = decay_rate_estimate(good)
    p, p_se = excited_population(good)
    peak = find_peak(r, grid)
    stats = EnsembleStatistics(grid, r, r_se, p, p_se, peak.r_star, peak.t_star, peak.at_boundary,
                               len(good), len(records) - len(good))
    if with_g2 and all(rec.g2_num is not None for rec in good):
        stats.g2_auto_RR, stats.g2_cross_RL, stats.g2_total = g2_estimates(good)
    return stats
