"""Strong convergence of the SPDE stepper against the translation solution.

With sigma = 1 and b = 0 the adjoint equation transports phi0 along the
Brownian path.  For each dt in a halving ladder, the RMS projected error over
independent paths is printed together with the fitted slope.
"""
import argparse

import numpy as np

from hermite_flow import BrownianPath, HermiteExpansion, OperatorSpec, solve_spde, translation_oracle


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=float, default=0.5)
    ap.add_argument("--dt", type=float, default=2.5e-4, help="finest step")
    ap.add_argument("--levels", type=int, default=5)
    ap.add_argument("--paths", type=int, default=64)
    ap.add_argument("--N", type=int, default=32)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    spec = OperatorSpec.adjoint(1, [0])
    phi0 = HermiteExpansion.basis((0,))
    K = round(args.T / args.dt)
    if K % 2 ** (args.levels - 1):
        ap.error(f"T/dt = {K} steps must be divisible by 2^(levels-1)")
    sq = np.zeros(args.levels)
    for i in range(args.paths):
        fine = BrownianPath.sample(args.seed, 1, args.dt, K, i)
        exact = translation_oracle(phi0, fine.at_step(K), args.N)
        for lev in range(args.levels):
            path = fine.coarsen(2 ** lev) if lev else fine
            sq[lev] += (solve_spde(spec, phi0, path, N=args.N).final - exact).norm0() ** 2
    rms = np.sqrt(sq / args.paths)
    dts = args.dt * 2.0 ** np.arange(args.levels)
    for dt, e in zip(dts, rms):
        print(f"dt={dt:.2e}  rms error {e:.4e}")
    slope = np.polyfit(np.log(dts), np.log(rms), 1)[0]
    print(f"fitted order {slope:.3f}")


if __name__ == "__main__":
    main()
