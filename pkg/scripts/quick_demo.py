"""Peak emission rate of ordered and disordered arrays at a few sizes (about a minute)."""
import argparse
import math

from superrad import exact, harness
from superrad.model import SystemConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trajectories", type=int, default=200)
    ap.add_argument("--workers", type=int, default=0)
    args = ap.parse_args()
    print(f"{'theta':>8} {'N':>5} {'R*/gN^2':>10} {'se':>8} {'t*gN/lnN':>9}")
    for n in (25, 50, 100):
        lad = exact.dicke_rate_equation_evolve(n, 1.0, SystemConfig(n_atoms=n).grid)
        t_lad = harness.scaled_burst_time(lad.t_star, n, 1.0)
        print(f"{'ladder':>8} {n:5d} {lad.scaled_peak(n):10.4f} {'':>8} {t_lad:9.3f}")
        for theta in (0.0, math.pi, 2 * math.pi):
            cfg = SystemConfig(n_atoms=n, theta=theta)
            run = harness.run_ensemble(cfg, "dtwa-eliminated", args.trajectories, with_g2=False,
                                       workers=harness.worker_count(args.workers or None))
            pk = harness.summarize_peak(run)
            print(f"{theta:8.4f} {n:5d} {pk.r_scaled:10.4f} {pk.r_scaled_se:8.4f} {pk.t_scaled:9.3f}")


if __name__ == "__main__":
    main()
