"""Probability mass of random coupling flows inside a fixed +-k sigma window, by weight scale."""
import argparse

import numpy as np

from mvpose.camera import BoundingBox
from mvpose.density import KeypointObservation, random_coupling_flow, render_density_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", type=int, default=100)
    ap.add_argument("--scales", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.5])
    ap.add_argument("--half", type=float, default=8.0)
    ap.add_argument("--cell", type=float, default=0.02)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    box = BoundingBox(-args.half, -args.half, args.half, args.half)
    for scale in args.scales:
        rng = np.random.default_rng(args.seed)
        mass = []
        for i in range(args.models):
            flow = random_coupling_flow(rng, base=("gaussian", "laplace")[i % 2], scale=scale)
            o = KeypointObservation(np.zeros(2), [1.0, 1.0], flow)
            mass.append(render_density_grid(flow, o, box, args.cell).integral())
        mass = np.array(mass)
        ok = np.mean((mass >= 0.95) & (mass <= 1.001))
        print(f"scale {scale:5.2f}: in [0.95, 1.001] {ok:6.1%}  min {mass.min():.4f}  median {np.median(mass):.4f}  max {mass.max():.4f}")


if __name__ == "__main__":
    main()
