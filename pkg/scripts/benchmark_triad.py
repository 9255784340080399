"""Largest deviation of both semiclassical engines from quantum jumps for N = 5, 10, 15."""
import argparse
import math

from superrad import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trajectories", type=int, default=1000)
    ap.add_argument("--sizes", default="5,10,15")
    ap.add_argument("--theta", type=float, default=math.pi)
    ap.add_argument("--out", default="results/benchmark_triad")
    ap.add_argument("--force", action="store_true")
    args = ap.parse_args()
    for n in (int(x) for x in args.sizes.split(",")):
        res = harness.run_experiment("benchmark", {"n_atoms": n, "theta": args.theta,
                                                   "trajectories": args.trajectories},
                                     args.out, force=args.force)
        s = res.summary
        print(f"N={n:3d} max|dtwa-qj|={s['maxdiff_dtwa']:.4f} max|qsdmf-qj|={s['maxdiff_qsdmf']:.4f} "
              f"({s['seconds']}s)", flush=True)


if __name__ == "__main__":
    main()
