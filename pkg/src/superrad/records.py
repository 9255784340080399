"""Per-trajectory output shared by all engines."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrajectoryRecord:
    """Collective sums of one trajectory on the common time grid.

    Phase-space engines store the sums from which every estimator is
    built: Σs_z, J_R = Σ e^{−iξ}s⁻, J_L = Σ e^{+iξ}s⁻ and Σ|s⁻|².
    Exact engines fill ``rate`` and the channel occupations directly.
    ``g2_num`` columns are the (RR, LL, RL) fourth-order numerators.
    """

    engine: str
    index: int
    t: np.ndarray
    n_atoms: int
    gamma: float
    sum_sz: np.ndarray
    jr: np.ndarray | None = None
    jl: np.ndarray | None = None
    sum_q: np.ndarray | None = None
    g2_num: np.ndarray | None = None
    rate: np.ndarray | None = None
    occ_r: np.ndarray | None = None
    occ_l: np.ndarray | None = None
    homodyne: np.ndarray | None = None
    snapshots: np.ndarray | None = None
    snapshot_times: np.ndarray | None = None
    xi: np.ndarray | None = None
    failed: bool = False
    message: str = ""
    retries: int = 0
    extra: dict = field(default_factory=dict)

    def occupations(self) -> tuple[np.ndarray, np.ndarray]:
        """⟨J_R†J_R⟩ and ⟨J_L†J_L⟩ along the trajectory."""
        if self.occ_r is not None:
            return self.occ_r, self.occ_l
        n_exc = 0.5 * (self.n_atoms + self.sum_sz)
        occ_r = np.abs(self.jr) ** 2 - self.sum_q + n_exc
        occ_l = np.abs(self.jl) ** 2 - self.sum_q + n_exc
        return occ_r, occ_l

    def decay_rate(self) -> np.ndarray:
        """Trajectory estimate of R(t) = (γ/2)(⟨J_R†J_R⟩ + ⟨J_L†J_L⟩)."""
        if self.rate is not None:
            return self.rate
        occ_r, occ_l = self.occupations()
        return 0.5 * self.gamma * (occ_r + occ_l)

    def excited_population(self) -> np.ndarray:
        return 0.5 * (1.0 + self.sum_sz / self.n_atoms)
