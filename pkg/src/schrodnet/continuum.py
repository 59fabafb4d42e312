"""Finite-volume solver for -div(sigma grad v) + q v = 0 on the unit disk.

Polar tensor grid with a merged center cell.  With ``nr`` radial rings the
spacing is ``h = 1/(nr - 1/2)``: ring 0 is the disk ``r < h/2`` centred at
the origin, ring ``i >= 1`` is the annulus ``(i - 1/2) h < r < (i + 1/2) h``
split into ``ntheta`` sectors with centers at ``r = i h``, ``theta = j dtheta``.
The Dirichlet datum lives on the outer faces at ``r = 1``.

For the Liouville transform note also the two-conductivity form: for
positive sigma0, sigma1 the operators sigma0-weighted Schrodinger and
sigma1-conductivity are congruent through ``(sigma1/sigma0)^{1/2}``; only its
discrete line-graph analogue is implemented (see :mod:`schrodnet.liouville`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .netops import matrix_from_upper, upper_entries, upper_indices


class MeasurementSignError(ValueError):
    """Lumped data has nonnegative off-diagonal entries."""


@dataclass(frozen=True)
class DiskGrid:
    nr: int
    ntheta: int

    def __post_init__(self):
        if self.nr < 3 or self.ntheta < 3:
            raise ValueError("need at least 3 rings and 3 sectors")

    @property
    def h(self) -> float:
        return 1.0 / (self.nr - 0.5)

    @property
    def dtheta(self) -> float:
        return 2 * np.pi / self.ntheta

    @property
    def n_cells(self) -> int:
        return 1 + (self.nr - 1) * self.ntheta

    @cached_property
    def r(self) -> np.ndarray:
        ring = np.repeat(np.arange(1, self.nr), self.ntheta)
        return np.concatenate([[0.0], ring * self.h])

    @cached_property
    def theta(self) -> np.ndarray:
        return np.concatenate([[0.0], np.tile(np.arange(self.ntheta) * self.dtheta, self.nr - 1)])

    @cached_property
    def xy(self) -> np.ndarray:
        return np.column_stack([self.r * np.cos(self.theta), self.r * np.sin(self.theta)])

    @cached_property
    def volumes(self) -> np.ndarray:
        h, dt = self.h, self.dtheta
        ring = np.repeat(np.arange(1, self.nr), self.ntheta)
        return np.concatenate([[np.pi * (h / 2) ** 2], ring * h * h * dt])

    def index(self, i, j):
        """Cell index of ring ``i >= 1``, sector ``j`` (periodic)."""
        return 1 + (np.asarray(i) - 1) * self.ntheta + np.asarray(j) % self.ntheta

    @cached_property
    def boundary_cells(self) -> np.ndarray:
        return self.index(self.nr - 1, np.arange(self.ntheta))

    @cached_property
    def boundary_theta(self) -> np.ndarray:
        return np.arange(self.ntheta) * self.dtheta

    @cached_property
    def faces(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Interior faces as ``(cell_a, cell_b, geometric transmissibility)``."""
        nr, nt, dt = self.nr, self.ntheta, self.dtheta
        j = np.arange(nt)
        a, b, t = [np.zeros(nt, int)], [self.index(1, j)], [np.full(nt, 0.5 * dt)]
        for i in range(1, nr):
            a.append(self.index(i, j))
            b.append(self.index(i, j + 1))
            t.append(np.full(nt, 1.0 / (i * dt)))
            if i < nr - 1:
                a.append(self.index(i, j))
                b.append(self.index(i + 1, j))
                t.append(np.full(nt, (i + 0.5) * dt))
        return np.concatenate(a), np.concatenate(b), np.concatenate(t)

    @property
    def boundary_transmissibility(self) -> float:
        return 2 * self.dtheta / self.h

    def ring_mean(self, values) -> np.ndarray:
        """Angular average per ring (ring 0 is the center cell)."""
        v = np.asarray(values)
        return np.concatenate([[v[0]], v[1:].reshape(self.nr - 1, self.ntheta).mean(axis=1)])


@dataclass(frozen=True, eq=False)
class DiskField:
    grid: DiskGrid
    values: np.ndarray

    def __post_init__(self):
        if np.shape(self.values) != (self.grid.n_cells,):
            raise ValueError(f"expected {self.grid.n_cells} values, got {np.shape(self.values)}")

    @classmethod
    def constant(cls, grid: DiskGrid, c: float) -> "DiskField":
        return cls(grid, np.full(grid.n_cells, float(c)))

    def integral(self) -> float:
        return float(self.values @ self.grid.volumes)

    def mean(self) -> float:
        return self.integral() / np.pi

    def to_csv(self, path) -> None:
        g = self.grid
        data = np.column_stack([g.r, g.theta, self.values])
        np.savetxt(path, data, delimiter=",", header="r,theta,value", comments="")

    @classmethod
    def from_csv(cls, grid: DiskGrid, path) -> "DiskField":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        return cls(grid, data[:, 2])

    def sample(self, grid: DiskGrid) -> "DiskField":
        """Nearest-cell transfer to another grid."""
        from scipy.spatial import cKDTree

        _, idx = cKDTree(self.grid.xy).query(grid.xy)
        return DiskField(grid, self.values[idx])


class BoundaryFunctionSet:
    """Raised-cosine boundary profiles, optionally mixed into lumped profiles.

    Base profile ``k`` is ``cos^2(pi (theta - theta_k)/w)`` on an arc of width
    ``w = width_frac * 2 pi / N`` centred at ``theta_k = 2 pi k / N``.  Each
    base profile is normalized to unit integral under the boundary quadrature
    of the grid it is evaluated on.  ``weights`` (n x N, rows summing to 1)
    produce the lumped set ``psi_i = sum_j weights[i, j] phi_j``.
    """

    def __init__(self, n_base: int, width_frac: float = 0.8, weights=None, offset: float = 0.0):
        self.n_base = n_base
        self.width = width_frac * 2 * np.pi / n_base
        self.centers = offset + 2 * np.pi * np.arange(n_base) / n_base
        self.weights = np.eye(n_base) if weights is None else np.asarray(weights, dtype=float)
        if self.weights.shape[1] != n_base:
            raise ValueError("weights must have one column per base profile")
        if np.any(self.weights < 0) or not np.allclose(self.weights.sum(axis=1), 1.0):
            raise ValueError("lumping weights must be nonnegative with unit row sums")

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def lumped(self, weights) -> "BoundaryFunctionSet":
        w = np.asarray(weights, dtype=float) @ self.weights
        return BoundaryFunctionSet(self.n_base, self.width * self.n_base / (2 * np.pi), w,
                                   offset=self.centers[0])

    def base_values(self, theta: np.ndarray, dtheta: float) -> np.ndarray:
        d = np.angle(np.exp(1j * (theta[None, :] - self.centers[:, None])))
        phi = np.where(np.abs(d) < self.width / 2, np.cos(np.pi * d / self.width) ** 2, 0.0)
        return phi / (phi.sum(axis=1, keepdims=True) * dtheta)

    def values(self, grid: DiskGrid) -> np.ndarray:
        """Profiles sampled on the boundary faces of ``grid``, shape ``(n, ntheta)``."""
        return self.weights @ self.base_values(grid.boundary_theta, grid.dtheta)

    def integrals(self, grid: DiskGrid) -> np.ndarray:
        return self.values(grid).sum(axis=1) * grid.dtheta


class DiskSolver:
    """Factorized finite-volume operator for given ``q`` and ``sigma`` cell fields."""

    def __init__(self, grid: DiskGrid, q=None, sigma=None):
        self.grid = grid
        nc = grid.n_cells
        q = np.zeros(nc) if q is None else np.asarray(q, dtype=float)
        if np.any(q < 0):
            raise ValueError("potential must be nonnegative")
        a, b, t = grid.faces
        if sigma is not None:
            s = np.asarray(sigma, dtype=float)
            if np.any(s <= 0):
                raise ValueError("conductivity must be positive")
            t = t * 2 * s[a] * s[b] / (s[a] + s[b])
        self.tb = grid.boundary_transmissibility
        diag = np.bincount(a, t, nc) + np.bincount(b, t, nc) + q * grid.volumes
        diag[grid.boundary_cells] += self.tb
        A = sp.coo_matrix((-t, (a, b)), shape=(nc, nc))
        A = (A + A.T + sp.diags(diag)).tocsc()
        self.A = A
        try:
            self.lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as err:
            raise np.linalg.LinAlgError("finite-volume system is singular") from err

    def solve(self, f: np.ndarray) -> np.ndarray:
        """Cell values for boundary data ``f`` of shape ``(ntheta,)`` or ``(ntheta, k)``."""
        f = np.asarray(f, dtype=float)
        rhs = np.zeros((self.grid.n_cells,) + f.shape[1:])
        rhs[self.grid.boundary_cells] = self.tb * f
        return self.lu.solve(rhs)

    def boundary_flux(self, v: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Outward current through each boundary face (already times ``dtheta``)."""
        return self.tb * (np.asarray(f) - v[self.grid.boundary_cells])

    def pairings(self, phi: "BoundaryFunctionSet"):
        """Dense ``<phi_i, Lambda phi_j>`` and the interior solutions ``u_j``."""
        F = phi.values(self.grid).T  # (ntheta, n)
        U = self.solve(F)
        flux = self.boundary_flux(U, F)
        P = F.T @ flux
        return 0.5 * (P + P.T), U


def solve_dirichlet(q: DiskField, f) -> DiskField:
    return DiskField(q.grid, DiskSolver(q.grid, q.values).solve(f))


def potential_to_conductivity(q: DiskField) -> DiskField:
    """sigma = s^2 with -Laplace(s) + q s = 0, s = 1 on the boundary."""
    s = DiskSolver(q.grid, q.values).solve(np.ones(q.grid.ntheta))
    return DiskField(q.grid, s**2)


def _assemble_measurements(P: np.ndarray, check_sign: bool) -> np.ndarray:
    n = P.shape[0]
    M = matrix_from_upper(upper_entries(P), n)
    if check_sign and np.any(upper_entries(M) >= 0):
        bad = np.count_nonzero(upper_entries(M) >= 0)
        raise MeasurementSignError(f"{bad} off-diagonal measurements are nonnegative")
    return M


def lumped_measurements(q: DiskField, phi: BoundaryFunctionSet, check_sign: bool = True) -> np.ndarray:
    """Lumped DtN matrix: off-diagonals ``<phi_i, Lambda_{1,q} phi_j>``, zero row sums."""
    P, _ = DiskSolver(q.grid, q.values).pairings(phi)
    return _assemble_measurements(P, check_sign)


def conductivity_measurements(sigma: DiskField, phi: BoundaryFunctionSet) -> np.ndarray:
    P, _ = DiskSolver(sigma.grid, sigma=sigma.values).pairings(phi)
    return _assemble_measurements(P, check_sign=True)


def check_liouville_dtn(q: DiskField, phi: BoundaryFunctionSet) -> float:
    """Max relative off-diagonal mismatch between Schrodinger and conductivity data."""
    Mq = lumped_measurements(q, phi)
    Ms = conductivity_measurements(potential_to_conductivity(q), phi)
    a, b = upper_entries(Mq), upper_entries(Ms)
    return float(np.max(np.abs(a - b) / np.abs(b)))


def measurement_jacobian(q: DiskField, phi: BoundaryFunctionSet, basis=None):
    """Derivative of the strict-upper measurement entries w.r.t. basis coefficients.

    ``basis`` maps coefficients to cell values, shape ``(n_cells, p)``; the
    default is the cell indicator basis.  Returns ``(J, M)`` with ``J`` of
    shape ``(n(n-1)/2, p)`` and ``M`` the measurement matrix at ``q``.
    Uses ``d<phi_i, Lambda phi_j> = integral(dq u_i u_j)``.
    """
    grid = q.grid
    P, U = DiskSolver(grid, q.values).pairings(phi)
    a, b = upper_indices(phi.n)
    W = (U[:, a] * U[:, b]) * grid.volumes[:, None]  # (n_cells, npairs)
    J = W.T if basis is None else np.asarray((basis.T @ W).T)
    return J, _assemble_measurements(P, check_sign=False)


@dataclass
class Phantom:
    """q = max(0, sum of gaussian and disk primitives)."""

    primitives: list

    @classmethod
    def from_json(cls, path) -> "Phantom":
        data = json.loads(Path(path).read_text())
        return cls(data["primitives"] if isinstance(data, dict) else data)

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps({"primitives": self.primitives}, indent=1))

    def evaluate(self, grid: DiskGrid) -> DiskField:
        x, y = grid.xy.T
        total = np.zeros(grid.n_cells)
        for prim in self.primitives:
            if "gaussian" in prim:
                p = prim["gaussian"]
                cx, cy = p["center"]
                total += p["amplitude"] * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / p["width"] ** 2)
            elif "disk" in prim:
                p = prim["disk"]
                cx, cy = p["center"]
                total += np.where((x - cx) ** 2 + (y - cy) ** 2 < p["radius"] ** 2, p["value"], 0.0)
            elif "constant" in prim:
                total += prim["constant"]["value"]
            else:
                raise ValueError(f"unknown phantom primitive {prim!r}")
        return DiskField(grid, np.maximum(total, 0.0))


def save_measurements(M: np.ndarray, path) -> None:
    M = np.asarray(M)
    Path(path).write_text(json.dumps({"n": M.shape[0], "entries": M.ravel().tolist()}))


def load_measurements(path) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    n = data["n"]
    return np.array(data["entries"], dtype=float).reshape(n, n)
