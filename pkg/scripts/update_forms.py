"""Compare Gauss-Newton update variants on the same data.

``cells``/``hat`` choose the unknowns; ``factored`` applies the two
pseudoinverses separately instead of the pseudoinverse of the product.

    python3 scripts/update_forms.py --n 9 --phantom smooth
"""
import argparse

import numpy as np

from schrodnet.cli import BENCHMARK_PHANTOMS
from schrodnet.continuum import BoundaryFunctionSet, DiskGrid, Phantom, lumped_measurements
from schrodnet.inversion import (
    CellBasis,
    HatBasis,
    PreconditionerContext,
    estimate_q_avg,
    gauss_newton,
    initial_guess,
    preconditioner_apply,
    sensitivity_grid,
)
from schrodnet.netgraph import build_cmn


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=9)
    p.add_argument("--phantom", default="smooth")
    p.add_argument("--max-iter", type=int, default=3)
    args = p.parse_args()

    gA, gB = DiskGrid(192, 192), DiskGrid(128, 128)
    phi = BoundaryFunctionSet(args.n)
    P = Phantom(BENCHMARK_PHANTOMS[args.phantom])
    M = lumped_measurements(P.evaluate(gA), phi)
    q_avg, mats = estimate_q_avg(M, np.round(np.arange(0, 2.01, 0.1), 10), gB, phi)
    ctx = PreconditionerContext.build(build_cmn(args.n), mats[0.0], mats[q_avg], q_avg)
    hats = HatBasis(sensitivity_grid(ctx, q_avg, gB, phi).points, gB)
    c_hat = initial_guess(hats, preconditioner_apply(ctx, M))
    cells = CellBasis(gB)
    q_true = P.evaluate(gB).values
    norm = np.sqrt(q_true**2 @ gB.volumes)

    variants = {
        "cells, product": (cells, cells.coefficients(hats.field(c_hat)), False),
        "cells, factored": (cells, cells.coefficients(hats.field(c_hat)), True),
        "hat, product": (hats, c_hat, False),
        "hat, factored": (hats, c_hat, True),
    }
    for label, (basis, c0, factored) in variants.items():
        try:
            states = gauss_newton(ctx, M, c0, basis, phi, max_iter=args.max_iter, factored=factored)
        except Exception as exc:  # report and keep going
            print(f"{label:16s} failed: {exc}")
            continue
        for s in states:
            err = np.sqrt((basis.field(s.coeffs).values - q_true) ** 2 @ gB.volumes) / norm
            print(f"{label:16s} k={s.k}  |r|={s.preconditioned:.3e}  |Pr|={s.projected:.3e}  "
                  f"|dM|={s.unpreconditioned:.3e}  err={err:.3f}")


if __name__ == "__main__":
    main()
