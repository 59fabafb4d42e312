"""Selected network size versus relative noise level on the measurements.

    python3 scripts/noise_sweep.py --N 17 --levels 0 1e-4 1e-3 1e-2
"""
import argparse
import json

from schrodnet.cli import BENCHMARK_PHANTOMS
from schrodnet.continuum import BoundaryFunctionSet, DiskGrid, Phantom, lumped_measurements
from schrodnet.regularize import add_noise, select_network_size


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--N", type=int, default=17)
    p.add_argument("--phantom", default="smooth")
    p.add_argument("--levels", type=float, nargs="+", default=[0.0, 1e-4, 1e-3, 1e-2])
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    args = p.parse_args()

    g = DiskGrid(128, 8 * args.N)
    M = lumped_measurements(Phantom(BENCHMARK_PHANTOMS[args.phantom]).evaluate(g),
                            BoundaryFunctionSet(args.N))
    rows = []
    for seed in args.seeds:
        for level in args.levels:
            sel = select_network_size(add_noise(M, level, seed), range(args.N, 4, -2))
            rows.append({"seed": seed, "level": level, "n": sel.n, "log": sel.log})
            print(f"seed {seed} noise {level:.0e}: n = {sel.n}")
    print(json.dumps(rows, indent=1))


if __name__ == "__main__":
    main()
