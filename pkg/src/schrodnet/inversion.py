"""Nonlinear preconditioner Q, sensitivity grids and the preconditioned Gauss-Newton loop.

``Q(M) = q_avg * qt(gamma(M)) / qt(gamma_avg)`` with ``qt`` the discrete
Liouville potential relative to ``gamma0 = gamma(M(0))``.  By construction
``Q(M(0)) = 0``, ``Q(M(q_avg)) = q_avg`` and ``Q(a M) = Q(M)`` for ``a > 0``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay, cKDTree

from .continuum import (
    BoundaryFunctionSet,
    DiskField,
    DiskGrid,
    lumped_measurements,
    measurement_jacobian,
)
from .liouville import LiouvilleMap
from .netgraph import CircularNetwork, line_graph
from .netops import network_dtn_jacobian, upper_entries
from .recovery import RecoveryError, recover_conductivity

log = logging.getLogger(__name__)


class AssumptionError(RuntimeError):
    """Some entry of the calibration potential qt(gamma_avg) vanishes."""


def estimate_q_avg(M_data, trials, grid: DiskGrid, phi: BoundaryFunctionSet, mats=None):
    """Trial constant minimizing ``||M(q) - M_data||_F``; ties go to the smaller trial.

    Returns ``(q_avg, {trial: M(trial)})`` so callers can reuse the matrices.
    Precomputed ``mats`` (keyed by trial value) skip the forward solves.
    """
    trials = sorted(float(t) for t in trials)
    if not trials:
        raise ValueError("need at least one trial value")
    if trials[0] < 0:
        raise ValueError("trial potentials must be nonnegative")
    if mats is None:
        mats = {t: lumped_measurements(DiskField.constant(grid, t), phi) for t in trials}
    misfit = [np.linalg.norm(mats[t] - M_data) for t in trials]
    return trials[int(np.argmin(misfit))], mats


@dataclass(eq=False)
class PreconditionerContext:
    G: CircularNetwork
    gamma0: np.ndarray
    q_avg: float
    gamma_avg: np.ndarray
    liouville: LiouvilleMap
    qt_avg: np.ndarray

    @classmethod
    def build(cls, G: CircularNetwork, M0, M_avg, q_avg: float, rel_floor: float = 1e-8):
        if q_avg <= 0:
            raise ValueError("calibration potential must be positive")
        gamma0 = recover_conductivity(G, M0)
        # re-polish from itself so that Q(M0) reproduces gamma0 bitwise-closely
        gamma0 = recover_conductivity(G, M0, initial=gamma0)
        gamma_avg = recover_conductivity(G, M_avg, initial=gamma0)
        lm = LiouvilleMap(line_graph(G), gamma0)
        qt_avg = lm.q(gamma_avg)
        small = np.abs(qt_avg) <= rel_floor * np.abs(qt_avg).max()
        if np.any(small):
            raise AssumptionError(
                f"calibration potential vanishes on edges {np.flatnonzero(small).tolist()}"
            )
        return cls(G, gamma0, float(q_avg), gamma_avg, lm, qt_avg)

    def gamma(self, M) -> np.ndarray:
        return recover_conductivity(self.G, M, initial=self.gamma0)

    def null_vector(self, gamma) -> np.ndarray:
        """Left null vector ``z = qt_avg * gamma / gamma0`` of DQ."""
        return self.qt_avg * gamma / self.gamma0


def preconditioner_apply(ctx: PreconditionerContext, M) -> np.ndarray:
    return ctx.q_avg * ctx.liouville.q(ctx.gamma(M)) / ctx.qt_avg


def preconditioner_jacobian(ctx: PreconditionerContext, M):
    """``(DQ, z)``: Jacobian w.r.t. strict-upper entries of ``M`` and its left null vector."""
    gamma = ctx.gamma(M)
    dgamma = np.linalg.inv(network_dtn_jacobian(ctx.G, gamma))
    DQ = (ctx.q_avg / ctx.qt_avg)[:, None] * (ctx.liouville.jacobian(gamma) @ dgamma)
    return DQ, ctx.null_vector(gamma)


def sensitivity_functions(
    ctx: PreconditionerContext, q: DiskField, phi: BoundaryFunctionSet
) -> np.ndarray:
    """Rows of ``DQ[M(q)] DM[q]`` as densities on the cells of ``q.grid``, shape ``(E, n_cells)``."""
    J, M = measurement_jacobian(q, phi)
    DQ, _ = preconditioner_jacobian(ctx, M)
    return (DQ @ J) / q.grid.volumes[None, :]


@dataclass(eq=False)
class SensitivityGrid:
    points: np.ndarray  # (E, 2) cartesian, one per base edge
    q_ref: float

    @property
    def triangulation(self) -> Delaunay:
        return Delaunay(self.points)

    def to_csv(self, path) -> None:
        np.savetxt(path, np.column_stack([np.arange(len(self.points)), self.points]),
                   delimiter=",", header="edge,x,y", comments="", fmt=["%d", "%.12g", "%.12g"])


def _argmax_points(rows: np.ndarray, grid: DiskGrid) -> np.ndarray:
    pts = np.empty((len(rows), 2))
    for e, row in enumerate(rows):
        top = np.flatnonzero(row >= row.max() - 1e-14 * np.abs(row).max())
        pts[e] = grid.xy[top[np.argmin(grid.r[top])]]
    return pts


def sensitivity_grid(ctx: PreconditionerContext, q_ref: float, grid: DiskGrid,
                     phi: BoundaryFunctionSet) -> SensitivityGrid:
    rows = sensitivity_functions(ctx, DiskField.constant(grid, q_ref), phi)
    pts = _argmax_points(rows, grid)
    if np.any(np.hypot(*pts.T) >= 1.0):
        raise RuntimeError("sensitivity grid node outside the open unit disk")
    if len(np.unique(pts, axis=0)) != len(pts):
        raise RuntimeError("sensitivity grid has coincident nodes")
    return SensitivityGrid(pts, float(q_ref))


class HatBasis:
    """Piecewise-linear hat functions on a triangulation, extended by nearest node.

    ``matrix`` maps node coefficients to cell values of ``grid``.  Coefficients
    are compared in the plain Euclidean norm (``weights`` are ones).
    """

    def __init__(self, points: np.ndarray, grid: DiskGrid):
        self.points = np.asarray(points, dtype=float)
        self.grid = grid
        tri = Delaunay(self.points)
        xy = grid.xy
        simplex = tri.find_simplex(xy)
        inside = simplex >= 0
        T = tri.transform[simplex[inside]]
        b = np.einsum("ijk,ik->ij", T[:, :2], xy[inside] - T[:, 2])
        bary = np.column_stack([b, 1 - b.sum(axis=1)])
        rows_in = np.repeat(np.flatnonzero(inside), 3)
        cols_in = tri.simplices[simplex[inside]].ravel()
        _, nearest = cKDTree(self.points).query(xy[~inside])
        rows = np.concatenate([rows_in, np.flatnonzero(~inside)])
        cols = np.concatenate([cols_in, nearest])
        vals = np.concatenate([bary.ravel(), np.ones(len(nearest))])
        self.matrix = sp.csr_matrix((vals, (rows, cols)), shape=(grid.n_cells, len(self.points)))
        self.weights = np.ones(len(self.points))

    def field(self, coeffs) -> DiskField:
        values = self.matrix @ np.asarray(coeffs, dtype=float)
        if np.all(np.asarray(coeffs) >= 0):
            values = np.maximum(values, 0.0)  # barycentric roundoff
        return DiskField(self.grid, values)

    def coefficients(self, q: DiskField) -> np.ndarray:
        """Nodal values of ``q`` (nearest cell); exact for fields in the span."""
        _, idx = cKDTree(self.grid.xy).query(self.points)
        return np.asarray(q.values)[idx]


class CellBasis:
    """One unknown per fine-grid cell, with the discrete L2 inner product.

    The pseudoinverses in the Gauss-Newton step are then the minimum-L2-norm
    solutions, i.e. ``DM[q]`` is taken as a map out of L2 of the disk.
    """

    def __init__(self, grid: DiskGrid):
        self.grid = grid
        self.matrix = None
        self.weights = np.sqrt(grid.volumes)

    def field(self, coeffs) -> DiskField:
        return DiskField(self.grid, np.asarray(coeffs, dtype=float).copy())

    def coefficients(self, q: DiskField) -> np.ndarray:
        return np.asarray(q.values, dtype=float).copy()


def initial_guess(basis: HatBasis, Qdata) -> np.ndarray:
    """Nodal coefficients of q0: the data of Q clamped at zero."""
    return np.maximum(np.asarray(Qdata, dtype=float), 0.0)


@dataclass
class InversionState:
    k: int
    coeffs: np.ndarray
    preconditioned: float
    projected: float
    unpreconditioned: float
    extra: dict = field(default_factory=dict)


def _project_out(r, z):
    return r - z * (z @ r) / (z @ z)


def _projector_norm(r, z) -> float:
    return float(np.linalg.norm(_project_out(r, z)))


def gauss_newton_update(DQ, DM, r, svd_tol, z=None, weights=None, factored: bool = False):
    """Gauss-Newton step ``-(DQ DM)^+ r`` for the preconditioned misfit.

    ``weights`` are square roots of the diagonal mass of the unknowns, so the
    pseudoinverse is the minimum-norm solution in that metric.  When the left
    null vector ``z`` of ``DQ`` is given, ``r`` is projected off it first;
    ``z`` is orthogonal to the range of ``DQ DM`` so this changes nothing in
    exact arithmetic, but it makes the invariance exact in floating point.

    ``factored=True`` uses ``DM^+ DQ^+`` instead.  The two agree only when
    ``DQ`` has full column rank, which it never does: it annihilates ``M``
    itself.  The factored form therefore drops the part of the data change
    along ``M`` and, with few unknowns, overshoots badly.
    """
    DM = np.asarray(DM)
    w = np.ones(DM.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    if z is not None:
        r = _project_out(r, z)
    if factored:
        dM = np.linalg.pinv(DQ, rcond=svd_tol) @ r
        return -(np.linalg.pinv(DM / w, rcond=svd_tol) @ dM) / w
    return -(np.linalg.pinv(DQ @ (DM / w), rcond=svd_tol) @ r) / w


def gauss_newton(
    ctx: PreconditionerContext,
    M_data,
    c0,
    basis,
    phi: BoundaryFunctionSet,
    max_iter: int = 2,
    svd_tol: float = 1e-10,
    factored: bool = False,
) -> list[InversionState]:
    """Preconditioned Gauss-Newton on the coefficients of q in ``basis``.

    Returns the states ``k = 0..max_iter``; each holds the residual norms at
    ``q_k``.  Updates are clamped at zero.  A failed recovery inside Q stops
    the loop; the states computed so far are kept and the error is stored in
    ``states[-1].extra["error"]``.
    """
    Q_data = preconditioner_apply(ctx, M_data)
    c = np.maximum(np.asarray(c0, dtype=float), 0.0)
    states: list[InversionState] = []
    for k in range(max_iter + 1):
        try:
            DM, M_k = measurement_jacobian(basis.field(c), phi, basis.matrix)
            r = preconditioner_apply(ctx, M_k) - Q_data
            DQ, z = preconditioner_jacobian(ctx, M_k)
        except RecoveryError as exc:
            log.error("GN k=%d: %s", k, exc)
            if states:
                states[-1].extra["error"] = str(exc)
                return states
            raise
        states.append(InversionState(
            k=k,
            coeffs=c.copy(),
            preconditioned=float(np.linalg.norm(r)),
            projected=_projector_norm(r, z),
            unpreconditioned=float(np.linalg.norm(M_k - M_data)),
        ))
        log.info("GN k=%d  |r|=%.3e  |P r|=%.3e  |dM|=%.3e", k, states[-1].preconditioned,
                 states[-1].projected, states[-1].unpreconditioned)
        if k == max_iter:
            break
        step = gauss_newton_update(DQ, DM, r, svd_tol, z, basis.weights, factored)
        c = np.maximum(c + step, 0.0)
    return states


def update_invariance_check(ctx, M_k, DM, r, alpha: float, svd_tol: float = 1e-10,
                            rtol: float = 1e-10, weights=None) -> bool:
    """Whether the GN update ignores a shift of the residual along ``z``.

    ``z`` is rescaled to ``|r|`` so that ``alpha`` is a relative amount.
    """
    DQ, z = preconditioner_jacobian(ctx, M_k)
    if np.linalg.norm(r) > 0:
        z = z / np.linalg.norm(z) * np.linalg.norm(r)
    d0 = gauss_newton_update(DQ, DM, r, svd_tol, z, weights)
    d1 = gauss_newton_update(DQ, DM, r + alpha * z, svd_tol, z, weights)
    scale = max(np.linalg.norm(d0), np.finfo(float).tiny)
    return bool(np.linalg.norm(d1 - d0) <= rtol * scale)


@dataclass(eq=False)
class InversionResult:
    ctx: PreconditionerContext
    q_avg: float
    q_calibration: float
    grid: SensitivityGrid
    basis: object
    Q_data: np.ndarray
    q0: DiskField
    states: list[InversionState]

    def iterate(self, k: int) -> DiskField:
        return self.basis.field(self.states[k].coeffs)


def invert(
    M_data,
    G: CircularNetwork,
    grid: DiskGrid,
    phi: BoundaryFunctionSet,
    trials,
    space: str = "cells",
    max_iter: int = 2,
    svd_tol: float = 1e-10,
    mats=None,
) -> InversionResult:
    """q_avg search, preconditioner, sensitivity grid, q0 and Gauss-Newton.

    ``space`` is ``"cells"`` (minimum-L2-norm updates on the fine grid) or
    ``"hat"`` (coefficients of the hat functions that also carry q0).  When
    the best trial is 0 the preconditioner is calibrated at the smallest
    positive trial instead, since Q needs a nonzero reference.
    """
    q_avg, mats = estimate_q_avg(M_data, trials, grid, phi, mats)
    positive = [t for t in sorted(mats) if t > 0]
    if not positive:
        raise ValueError("need a positive trial value to calibrate Q")
    q_cal = q_avg if q_avg > 0 else positive[0]
    ctx = PreconditionerContext.build(G, mats[0.0] if 0.0 in mats else lumped_measurements(
        DiskField.constant(grid, 0.0), phi), mats[q_cal], q_cal)
    sgrid = sensitivity_grid(ctx, q_cal, grid, phi)
    hats = HatBasis(sgrid.points, grid)
    Q_data = preconditioner_apply(ctx, M_data)
    q0 = hats.field(initial_guess(hats, Q_data))
    if space == "hat":
        basis, c0 = hats, initial_guess(hats, Q_data)
    elif space == "cells":
        basis = CellBasis(grid)
        c0 = basis.coefficients(q0)
    else:
        raise ValueError(f"unknown space {space!r}")
    states = gauss_newton(ctx, M_data, c0, basis, phi, max_iter=max_iter, svd_tol=svd_tol)
    return InversionResult(ctx, q_avg, q_cal, sgrid, basis, Q_data, q0, states)
