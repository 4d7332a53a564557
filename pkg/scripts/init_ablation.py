"""Iterations and final accuracy of the likelihood solver from DLT vs zero initialization."""
import argparse

import numpy as np

from mvpose.triangulation import SolverConfig, mle_refine

from _scene import observations, scene


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--noise", type=float, default=2.0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    rows = {mode: {"it": [], "err": []} for mode in ("dlt", "zero")}
    for _ in range(args.trials):
        cams, U, pix = scene(rng, int(rng.integers(2, 9)), args.noise)
        views = observations(cams, pix, [max(args.noise, 1.0)] * len(cams))
        for mode, r in rows.items():
            r["it"].append(mle_refine(views, SolverConfig(tolerance_mm=1e-3, init_mode=mode)).iterations)
            fine = mle_refine(views, SolverConfig(tolerance_mm=1e-6, max_iterations=1000, init_mode=mode))
            r["err"].append(np.linalg.norm(fine.xyz - U))
    for mode, r in rows.items():
        print(f"{mode:5s} mean iterations {np.mean(r['it']):6.2f}  mean error {np.mean(r['err']):8.4f} mm")
    print(f"iteration ratio zero/dlt: {np.mean(rows['zero']['it']) / np.mean(rows['dlt']['it']):.2f}")


if __name__ == "__main__":
    main()
