"""Heat equation from h_0: Galerkin error against the closed form.

Sweeps truncation N and time step dt for the three theta schemes and writes
a CSV (N, dt, scheme, max_error).
"""
import argparse
import csv

import numpy as np

from hermite_flow import HermiteExpansion, OperatorSpec, solve_pde
from hermite_flow.harness import heat_closed_form


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=float, default=1.0)
    ap.add_argument("--out", default="heat_convergence.csv")
    args = ap.parse_args()

    spec = OperatorSpec.adjoint(1, [0])
    h0 = HermiteExpansion.basis((0,))
    x = np.linspace(-4, 4, 801)
    exact = heat_closed_form(args.T, x)
    rows = []
    for scheme in ("explicit-euler", "implicit-euler", "crank-nicolson"):
        for N in (8, 16, 32):
            for dt in (1e-1, 1e-2, 1e-3):
                if scheme == "explicit-euler" and dt * N > 2:
                    continue  # outside the stability region
                u = solve_pde(spec, h0, args.T, dt, scheme, N).final
                err = float(np.max(np.abs(u(x) - exact)))
                rows.append({"N": N, "dt": dt, "scheme": scheme, "max_error": err})
                print(f"{scheme:15s} N={N:3d} dt={dt:.0e}  {err:.3e}")
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main()
