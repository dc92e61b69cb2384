"""ATE and RPE of synthetic estimates under increasing translational noise,
rotational noise and drift.

    python3 scripts/trajectory_noise.py --shape helix
"""
import argparse
import math

from dynfeat.synth import TrajSpec, generate_trajectory
from dynfeat.traj_eval import ate, rpe


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shape", default="helix", choices=("line", "circle", "helix"))
    ap.add_argument("--duration", type=float, default=60.0)
    ap.add_argument("--rate", type=float, default=30.0)
    ap.add_argument("--delta", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    print(f"{'sigma_t':>8} {'sigma_r':>8} {'drift':>8} {'ATE rmse':>9} {'sigma*sqrt3':>11} "
          f"{'RPE t rmse':>10} {'RPE r deg':>9}")
    for sigma_t, sigma_r, drift in [(0, 0, 0), (0.005, 0, 0), (0.01, 0, 0), (0.02, 0, 0),
                                    (0, 0.5, 0), (0.01, 0.5, 0), (0, 0, 0.001 / args.rate)]:
        spec = TrajSpec(args.duration, args.rate, args.shape, sigma_t, sigma_r, drift, args.seed)
        gt, est = generate_trajectory(spec)
        a = ate(est, gt)
        tr, rot = rpe(est, gt, args.delta)
        print(f"{sigma_t:>8.3f} {sigma_r:>8.2f} {drift:>8.5f} {a.rmse:>9.5f} {sigma_t * math.sqrt(3):>11.5f} "
              f"{tr.rmse:>10.5f} {rot.rmse:>9.4f}")


if __name__ == "__main__":
    main()
