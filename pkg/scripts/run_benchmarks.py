"""Gauss-Newton on the benchmark phantoms for several n; one CLI run per case.

    python3 scripts/run_benchmarks.py --n 9 13 --out results/benchmarks
"""
import argparse
import json
from pathlib import Path

from schrodnet.cli import ExperimentConfig, cmd_invert, cmd_synth


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, nargs="+", default=[9, 13])
    p.add_argument("--phantoms", nargs="+", default=["smooth", "pc"])
    p.add_argument("--space", default="cells")
    p.add_argument("--out", default="results/benchmarks")
    args = p.parse_args()

    summary = []
    for n in args.n:
        for name in args.phantoms:
            cfg = ExperimentConfig(phantom=name, n=n, space=args.space,
                                   out=str(Path(args.out) / f"{name}_n{n}")).validate()
            cmd_synth(cfg)
            rep = cmd_invert(cfg)
            for it in rep["iterations"]:
                summary.append({"phantom": name, "n": n, **it})
                print(f"{name:6s} n={n:2d} k={it['k']}  |r|={it['preconditioned']:.3e}  "
                      f"|Pr|={it['projected']:.3e}  |dM|={it['unpreconditioned']:.3e}  "
                      f"err={it['error']:.3f}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    (Path(args.out) / "summary.json").write_text(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
