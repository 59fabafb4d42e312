"""Sensitivity rows of Q o M at constant q: localization per layer and a row gallery.

    python3 scripts/sensitivity_study.py --n 17 --out results/sensitivity
"""
import argparse
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from schrodnet.cli import _raster
from schrodnet.continuum import BoundaryFunctionSet, DiskField, DiskGrid, lumped_measurements
from schrodnet.inversion import PreconditionerContext, sensitivity_functions
from schrodnet.netgraph import build_cmn


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=17)
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--nr", type=int, default=128)
    p.add_argument("--radius", type=float, default=0.35)
    p.add_argument("--widths", type=float, nargs="+", default=[0.8])
    p.add_argument("--out", default="results/sensitivity")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    G = build_cmn(args.n)
    g = DiskGrid(args.nr, args.n * (args.nr // args.n + 1))
    report = {}
    for width in args.widths:
        phi = BoundaryFunctionSet(args.n, width)
        ctx = PreconditionerContext.build(
            G, lumped_measurements(DiskField.constant(g, 0.0), phi),
            lumped_measurements(DiskField.constant(g, args.q), phi), args.q)
        rows = sensitivity_functions(ctx, DiskField.constant(g, args.q), phi)
        mass = np.abs(rows) * g.volumes
        peaks = g.xy[np.argmax(rows, axis=1)]
        near = np.linalg.norm(g.xy[None] - peaks[:, None], axis=2) <= args.radius
        frac = (mass * near).sum(axis=1) / mass.sum(axis=1)
        neg = (np.clip(-rows, 0, None) * g.volumes).sum(axis=1) / mass.sum(axis=1)
        layers = []
        for k in range(1, G.m + 1):
            e = int(np.flatnonzero(G.layers == k)[0])
            layers.append({"layer": k, "kind": G.kinds[e], "peak_radius": float(np.hypot(*peaks[e])),
                           "localized_mass": float(frac[e]), "negative_mass": float(neg[e])})
            print(f"width {width:.2f} layer {k} {G.kinds[e]:7s} r_peak={layers[-1]['peak_radius']:.3f} "
                  f"localized={frac[e]:.3f} negative={neg[e]:.3f}")
        report[f"{width:g}"] = layers

        fig, axes = plt.subplots(2, (G.m + 1) // 2, figsize=(2.6 * ((G.m + 1) // 2), 5.4))
        for ax, k in zip(axes.ravel(), range(1, G.m + 1)):
            e = int(np.flatnonzero(G.layers == k)[0])
            lim = np.abs(rows[e]).max()
            ax.imshow(_raster(DiskField(g, rows[e])), extent=(-1, 1, -1, 1), cmap="RdBu_r",
                      vmin=-lim, vmax=lim)
            ax.set_title(f"layer {k}", fontsize=8)
            ax.set_axis_off()
        fig.savefig(out / f"rows_w{width:g}.png", dpi=100, metadata={"Software": None})
        plt.close(fig)
    (out / "localization.json").write_text(json.dumps(report, indent=1))


if __name__ == "__main__":
    main()
