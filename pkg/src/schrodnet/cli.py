"""Command line driver: ``synth``, ``invert``, ``grid`` and ``selftest``.

Exit codes: 0 ok, 1 invalid configuration, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .continuum import (
    BoundaryFunctionSet,
    DiskField,
    DiskGrid,
    Phantom,
    lumped_measurements,
    load_measurements,
    save_measurements,
)
from .inversion import (
    AssumptionError,
    PreconditionerContext,
    invert,
    sensitivity_grid,
)
from .netgraph import build_cmn
from .recovery import RecoveryError
from .regularize import add_noise

log = logging.getLogger("schrodnet")

OK, INVALID, NUMERICAL = 0, 1, 2

# stand-ins for the two benchmark potentials
BENCHMARK_PHANTOMS = {
    "smooth": [{"gaussian": {"center": [0.3, 0.2], "width": 0.3, "amplitude": 2.0}}],
    "pc": [
        {"disk": {"center": [-0.3, 0.3], "radius": 0.25, "value": 2.0}},
        {"disk": {"center": [0.3, -0.3], "radius": 0.25, "value": 2.0}},
    ],
    "zero": [],
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    phantom: str = "smooth"  # benchmark name or path to a phantom JSON file
    n: int = 9
    grid_a: tuple[int, int] = (192, 192)
    grid_b: tuple[int, int] = (128, 128)
    trials: list[float] = field(default_factory=lambda: [round(0.1 * k, 10) for k in range(21)])
    svd_tol: float = 1e-10
    max_iter: int = 2
    noise: float = 0.0
    seed: int = 0
    out: str = "out"
    space: str = "cells"
    grid_q: list[float] = field(default_factory=lambda: [1.0, 3.0])

    def __post_init__(self):
        self.grid_a = tuple(int(v) for v in self.grid_a)
        self.grid_b = tuple(int(v) for v in self.grid_b)
        self.trials = [float(t) for t in self.trials]
        self.grid_q = [float(t) for t in self.grid_q]

    def validate(self) -> "ExperimentConfig":
        if self.n < 5 or self.n % 2 == 0:
            raise ConfigError(f"n must be odd and >= 5, got {self.n}")
        if self.grid_a == self.grid_b:
            raise ConfigError("grid A and grid B must differ (inverse-crime guard)")
        if min(self.grid_a + self.grid_b) < 4:
            raise ConfigError("grid resolutions must be at least 4")
        if not self.trials or min(self.trials) < 0:
            raise ConfigError("trial list must be nonempty and nonnegative")
        if not any(t > 0 for t in self.trials):
            raise ConfigError("trial list needs a positive value for calibration")
        if self.svd_tol <= 0 or self.max_iter < 0 or self.noise < 0:
            raise ConfigError("svd_tol must be positive; max_iter and noise nonnegative")
        if self.space not in ("cells", "hat"):
            raise ConfigError(f"space must be 'cells' or 'hat', got {self.space!r}")
        if len(self.grid_q) < 1 or min(self.grid_q) < 0:
            raise ConfigError("grid_q must list nonnegative constants")
        if self.phantom not in BENCHMARK_PHANTOMS and not Path(self.phantom).is_file():
            raise ConfigError(f"unknown phantom {self.phantom!r}")
        return self

    def load_phantom(self) -> Phantom:
        if self.phantom in BENCHMARK_PHANTOMS:
            return Phantom(BENCHMARK_PHANTOMS[self.phantom])
        return Phantom.from_json(self.phantom)

    @classmethod
    def from_json(cls, path, base: "ExperimentConfig | None" = None) -> "ExperimentConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        merged = asdict(base) if base is not None else {}
        merged.update(data)
        return cls(**merged)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True))


def _grids(cfg: ExperimentConfig):
    return DiskGrid(*cfg.grid_a), DiskGrid(*cfg.grid_b)


def _trial_key(t: float) -> str:
    return repr(float(t))


# ---------------------------------------------------------------- figures

def _raster(f: DiskField, pixels: int = 256) -> np.ndarray:
    """Nearest-cell image on ``[-1, 1]^2``, NaN outside the disk."""
    from scipy.spatial import cKDTree

    s = np.linspace(-1, 1, pixels)
    X, Y = np.meshgrid(s, s[::-1])
    _, idx = cKDTree(f.grid.xy).query(np.column_stack([X.ravel(), Y.ravel()]))
    img = f.values[idx].reshape(X.shape)
    img[X**2 + Y**2 > 1] = np.nan
    return img


def save_heatmaps(out: Path, fields_: dict[str, DiskField], stem: str) -> None:
    """One PNG panel per field on a shared color scale, plus a JSON sidecar."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    vmin = min(float(f.values.min()) for f in fields_.values())
    vmax = max(float(f.values.max()) for f in fields_.values())
    fig, axes = plt.subplots(1, len(fields_), figsize=(3.2 * len(fields_), 3.2), squeeze=False)
    for ax, (name, f) in zip(axes[0], fields_.items()):
        im = ax.imshow(_raster(f), extent=(-1, 1, -1, 1), vmin=vmin, vmax=vmax, cmap="viridis")
        ax.set_title(name)
        ax.set_axis_off()
    fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8)
    fig.savefig(out / f"{stem}.png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    _write_json(out / f"{stem}.json", {
        "panels": {name: f"{name}.csv" for name in fields_},
        "vmin": vmin, "vmax": vmax, "colormap": "viridis", "pixels": 256,
    })


def save_grid_overlay(out: Path, grids: dict[float, np.ndarray], stem: str = "sensitivity_grid") -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(4, 4))
    t = np.linspace(0, 2 * np.pi, 361)
    ax.plot(np.cos(t), np.sin(t), "k-", lw=0.8)
    for (q, pts), marker in zip(grids.items(), ["x", "o", "+", "s"]):
        ax.plot(pts[:, 0], pts[:, 1], marker, mfc="none", ms=5, label=f"q = {q:g}")
    ax.set_aspect("equal")
    ax.legend(loc="upper right", fontsize=7)
    ax.set_axis_off()
    fig.savefig(out / f"{stem}.png", dpi=100, metadata={"Software": None})
    plt.close(fig)
    _write_json(out / f"{stem}.json", {"points": {f"{q:g}": f"grid_q{q:g}.csv" for q in grids}})


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    gA, gB = _grids(cfg)
    phi = BoundaryFunctionSet(cfg.n)
    q_true = cfg.load_phantom().evaluate(gA)
    M_true = lumped_measurements(q_true, phi)
    if cfg.noise > 0:
        M_true = add_noise(M_true, cfg.noise, cfg.seed)
    save_measurements(M_true, out / "M_true.json")
    trials = sorted(set(cfg.trials) | {0.0})
    mats = {_trial_key(t): lumped_measurements(DiskField.constant(gB, t), phi).ravel().tolist()
            for t in trials}
    save_measurements(lumped_measurements(DiskField.constant(gB, 0.0), phi), out / "M_zero.json")
    _write_json(out / "M_trials.json", {"n": cfg.n, "matrices": mats})
    q_true.to_csv(out / "q_true_gridA.csv")
    cfg.load_phantom().evaluate(gB).to_csv(out / "q_true.csv")
    meta = {"config": asdict(cfg), "grid_a": {"nr": gA.nr, "ntheta": gA.ntheta, "h": gA.h},
            "grid_b": {"nr": gB.nr, "ntheta": gB.ntheta, "h": gB.h}}
    _write_json(out / "synth.json", meta)
    return meta


def cmd_invert(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    if not (out / "M_true.json").is_file():
        raise ConfigError(f"no synth outputs in {out}; run 'synth' first")
    _, gB = _grids(cfg)
    phi = BoundaryFunctionSet(cfg.n)
    M_data = load_measurements(out / "M_true.json")
    if M_data.shape != (cfg.n, cfg.n):
        raise ConfigError(f"synth data are for n={M_data.shape[0]}, config says n={cfg.n}")
    stored = json.loads((out / "M_trials.json").read_text())["matrices"]
    mats = {}
    for t in sorted(set(cfg.trials) | {0.0}):
        key = _trial_key(t)
        mats[t] = (np.array(stored[key]).reshape(cfg.n, cfg.n) if key in stored
                   else lumped_measurements(DiskField.constant(gB, t), phi))
    res = invert(M_data, build_cmn(cfg.n), gB, phi, cfg.trials, space=cfg.space,
                 max_iter=cfg.max_iter, svd_tol=cfg.svd_tol, mats=mats)

    with open(out / "residuals.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "preconditioned", "projected", "unpreconditioned"])
        for s in res.states:
            w.writerow([s.k, f"{s.preconditioned:.17g}", f"{s.projected:.17g}",
                        f"{s.unpreconditioned:.17g}"])
    q_true = DiskField.from_csv(gB, out / "q_true.csv")
    panels = {"q_true": q_true, "q0": res.q0}
    res.q0.to_csv(out / "q0.csv")
    for s in res.states[1:]:
        qk = res.iterate(s.k)
        qk.to_csv(out / f"q{s.k}.csv")
        if s.k == 1:
            panels["q1"] = qk
    res.grid.to_csv(out / "sensitivity_grid.csv")
    save_heatmaps(out, panels, "reconstruction")

    def rel_err(f):
        d = f.values - q_true.values
        nrm = np.sqrt(q_true.values**2 @ gB.volumes)
        return float(np.sqrt(d**2 @ gB.volumes) / nrm) if nrm > 0 else float(np.abs(d).max())

    report = {
        "q_avg": res.q_avg,
        "q_calibration": res.q_calibration,
        "iterations": [{"k": s.k, "preconditioned": s.preconditioned, "projected": s.projected,
                        "unpreconditioned": s.unpreconditioned,
                        "error": rel_err(res.iterate(s.k))} for s in res.states],
    }
    if "error" in res.states[-1].extra:
        report["aborted"] = res.states[-1].extra["error"]
    _write_json(out / "report.json", report)
    return report


def cmd_grid(cfg: ExperimentConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _, gB = _grids(cfg)
    phi = BoundaryFunctionSet(cfg.n)
    G = build_cmn(cfg.n)
    q_cal = next(q for q in cfg.grid_q if q > 0) if any(q > 0 for q in cfg.grid_q) else 1.0
    ctx = PreconditionerContext.build(
        G, lumped_measurements(DiskField.constant(gB, 0.0), phi),
        lumped_measurements(DiskField.constant(gB, q_cal), phi), q_cal)
    grids = {}
    for q in cfg.grid_q:
        sg = sensitivity_grid(ctx, q, gB, phi)
        sg.to_csv(out / f"grid_q{q:g}.csv")
        grids[q] = sg.points
    save_grid_overlay(out, grids)
    qs = list(grids)
    disp = {f"{a:g}-{b:g}": float(np.hypot(*(grids[a] - grids[b]).T).mean())
            for i, a in enumerate(qs) for b in qs[i + 1:]}
    report = {"n": cfg.n, "points": {f"{q:g}": len(p) for q, p in grids.items()},
              "mean_displacement": disp}
    _write_json(out / "grid_report.json", report)
    return report


def _dense_line_laplacian(L, gamma) -> np.ndarray:
    """Line-graph Laplacian assembled entry by entry, independent of ``line_weights``."""
    A = np.zeros((L.n_nodes, L.n_nodes))
    for e, f in L.edges:
        w = np.sqrt(gamma[e] * gamma[f])
        A[e, f] -= w
        A[f, e] -= w
        A[e, e] += w
        A[f, f] += w
    return A


def _congruence_residual(L, g0, g1) -> float:
    from .liouville import discrete_liouville_q, line_laplacian

    S = np.diag(np.sqrt(g1 / g0))
    rhs = S @ line_laplacian(L, g0, discrete_liouville_q(g0, g1, L)).toarray() @ S
    lhs = _dense_line_laplacian(L, g1)
    return float(np.linalg.norm(lhs - rhs) / np.linalg.norm(lhs))


def selftest_checks() -> list[tuple[str, float, float]]:
    """``(name, measured, tolerance)`` for the cheap invariant checks."""
    from .liouville import LiouvilleMap
    from .netgraph import line_graph
    from .netops import dtn_map, network_dtn_jacobian, upper_entries
    from .recovery import recover_conductivity

    rng = np.random.default_rng(0)
    checks = []
    for n in (5, 7):
        G = build_cmn(n)
        L = line_graph(G)
        g0, g1 = rng.uniform(0.5, 2, (2, G.n_edges))
        checks.append((f"congruence C({G.m},{n})", _congruence_residual(L, g0, g1), 1e-12))

        Lam = dtn_map(G, g1)
        rec = recover_conductivity(G, Lam)
        checks.append((f"roundtrip C({G.m},{n})", float(np.abs(rec / g1 - 1).max()), 1e-8))

        J = network_dtn_jacobian(G, g1)
        e = rng.standard_normal(G.n_edges)
        h = 1e-6
        fd = (upper_entries(dtn_map(G, g1 + h * e)) - upper_entries(dtn_map(G, g1 - h * e))) / (2 * h)
        checks.append((f"DtN jacobian C({G.m},{n})",
                       float(np.linalg.norm(fd - J @ e) / np.linalg.norm(J @ e)), 1e-6))

        lm = LiouvilleMap(L, g0)
        Jq = lm.jacobian(g1)
        fd = (lm.q(g1 + h * e) - lm.q(g1 - h * e)) / (2 * h)
        checks.append((f"Liouville jacobian C({G.m},{n})",
                       float(np.linalg.norm(fd - Jq @ e) / np.linalg.norm(Jq @ e)), 1e-6))
        # right null vector of dq/dgamma: q is invariant under gamma -> a gamma
        checks.append((f"null vector C({G.m},{n})",
                       float(np.linalg.norm(Jq @ g1) / (np.linalg.norm(Jq) * np.linalg.norm(g1))),
                       1e-10))

    g = DiskGrid(24, 24)
    M = lumped_measurements(DiskField.constant(g, 1.0), BoundaryFunctionSet(5), check_sign=False)
    checks.append(("measurement row sums", float(np.abs(M.sum(axis=1)).max() / np.abs(M).max()),
                   1e-12))
    return checks


def cmd_selftest(cfg: ExperimentConfig | None = None) -> bool:
    ok = True
    for name, val, tol in selftest_checks():
        passed = bool(np.isfinite(val) and val <= tol)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:32s} {val:.3e} (tol {tol:.0e})")
    return ok


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="schrodnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    d = ExperimentConfig()
    for name in ("synth", "invert", "grid", "selftest"):
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file; its values override the flags")
        s.add_argument("--phantom", default=d.phantom)
        s.add_argument("--n", type=int, default=d.n)
        s.add_argument("--grid-a", type=int, nargs=2, default=d.grid_a, metavar=("NR", "NTHETA"))
        s.add_argument("--grid-b", type=int, nargs=2, default=d.grid_b, metavar=("NR", "NTHETA"))
        s.add_argument("--trials", type=float, nargs="+", default=d.trials)
        s.add_argument("--svd-tol", type=float, default=d.svd_tol)
        s.add_argument("--max-iter", type=int, default=d.max_iter)
        s.add_argument("--noise", type=float, default=d.noise)
        s.add_argument("--seed", type=int, default=d.seed)
        s.add_argument("--out", default=d.out)
        s.add_argument("--space", choices=("cells", "hat"), default=d.space)
        s.add_argument("--grid-q", type=float, nargs="+", default=d.grid_q)
    return p


def config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig(
        phantom=args.phantom, n=args.n, grid_a=args.grid_a, grid_b=args.grid_b,
        trials=args.trials, svd_tol=args.svd_tol, max_iter=args.max_iter, noise=args.noise,
        seed=args.seed, out=args.out, space=args.space, grid_q=args.grid_q,
    )
    if args.config:
        cfg = ExperimentConfig.from_json(args.config, base=cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "selftest":
            return OK if cmd_selftest(cfg) else NUMERICAL
        cfg.validate()
        report = {"synth": cmd_synth, "invert": cmd_invert, "grid": cmd_grid}[args.command](cfg)
    except (ConfigError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return INVALID
    except (RecoveryError, AssumptionError, RuntimeError, np.linalg.LinAlgError) as exc:
        err = {"command": args.command, "type": type(exc).__name__, "message": str(exc)}
        out = Path(cfg.out)
        if out.is_dir():
            _write_json(out / "error.json", err)
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return NUMERICAL
    print(json.dumps(report, indent=1, sort_keys=True))
    return OK


if __name__ == "__main__":
    sys.exit(main())
