"""Peak rate against N for each Θ and the two finite-size fits, printed as a table."""
import argparse

from superrad import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta-list", default="0,1.5707963267948966,3.141592653589793,6.283185307179586")
    ap.add_argument("--n-list", default="25,50,100,200,400")
    ap.add_argument("--trajectories", type=int, default=1000)
    ap.add_argument("--delta-omega", type=float, default=0.0)
    args = ap.parse_args()
    thetas = [float(x) for x in args.theta_list.split(",")]
    s = {"theta_list": thetas, "n_list": [int(x) for x in args.n_list.split(",")],
         "trajectories": args.trajectories, "delta_omega": args.delta_omega}
    points = harness.sweep_points(s, log=None)
    for theta in thetas:
        print(f"theta = {theta:.4f}")
        for p in (p for p in points if p.theta == theta):
            print(f"  N={p.n_atoms:4d} R*/gN^2={p.r_scaled:.5f}±{p.r_scaled_se:.5f} t*gN/lnN={p.t_scaled:.3f}")
        if len({p.n_atoms for p in points if p.theta == theta}) >= 4:
            f = harness.fit_both_powers(points, theta)
            c = f["chosen"]
            print(f"  fit p={c['power']}: r0={c['r0']:.4f} r1={c['r1']:.4f}  "
                  f"residuals p=1/2 {f['half']['residual_norm']:.2e}, p=1 {f['one']['residual_norm']:.2e}")


if __name__ == "__main__":
    main()
