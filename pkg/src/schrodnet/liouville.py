"""Line-graph weights and the discrete generalized Liouville identity.

For conductivities ``g0, g1`` on the base edges and ``s = sqrt(g1/g0)``::

    Lt(g1) = diag(s) (Lt(g0) + diag(qt)) diag(s),   qt = -(Lt(g0) s) / s

where ``Lt(g)`` is the weighted Laplacian of the line graph with weights
``sqrt(g(e) g(f))``.
"""
from __future__ import annotations

import csv
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .netgraph import LineGraphModel


def _positive(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(x > 0):
        raise ValueError(f"{name} must be strictly positive")
    return x


def line_weights(L: LineGraphModel, gamma) -> np.ndarray:
    gamma = _positive(gamma, "gamma")
    return np.sqrt(gamma[L.edges[:, 0]] * gamma[L.edges[:, 1]])


def line_laplacian(L: LineGraphModel, gamma, q=None) -> sp.csr_matrix:
    """``Dt^T diag(line_weights) Dt + diag(q)`` on the line graph."""
    D = L.incidence
    A = D.T @ sp.diags(line_weights(L, gamma)) @ D
    if q is not None:
        A = A + sp.diags(np.asarray(q, dtype=float))
    return sp.csr_matrix(A)


class LiouvilleMap:
    """``g -> qt(g)`` for a fixed reference conductivity ``g0``.

    The reference line-graph Laplacian is assembled once.
    """

    def __init__(self, L: LineGraphModel, gamma0):
        self.L = L
        self.gamma0 = _positive(gamma0, "gamma0").copy()
        self.gamma0.flags.writeable = False

    @cached_property
    def laplacian(self) -> np.ndarray:
        return line_laplacian(self.L, self.gamma0).toarray()

    def q(self, gamma) -> np.ndarray:
        s = np.sqrt(_positive(gamma, "gamma") / self.gamma0)
        return -(self.laplacian @ s) / s

    def jacobian(self, gamma) -> np.ndarray:
        """``d qt / d gamma`` at ``gamma``, shape ``(E, E)``.

        With ``s = sqrt(g/g0)``, ``ds = s dg / (2 g)`` and
        ``dqt = -(Lt ds)/s - qt ds/s``.
        """
        gamma = _positive(gamma, "gamma")
        s = np.sqrt(gamma / self.gamma0)
        ds = 0.5 * s / gamma
        J = -(self.laplacian * ds[None, :]) / s[:, None]
        J[np.diag_indices_from(J)] -= self.q(gamma) * ds / s
        return J


def discrete_liouville_q(gamma0, gamma1, L: LineGraphModel) -> np.ndarray:
    return LiouvilleMap(L, gamma0).q(gamma1)


def verify_congruence(gamma0, gamma1, L: LineGraphModel, q=None) -> float:
    """Relative Frobenius residual of the congruence; ``q`` defaults to the identity's."""
    gamma0 = _positive(gamma0, "gamma0")
    gamma1 = _positive(gamma1, "gamma1")
    if q is None:
        q = discrete_liouville_q(gamma0, gamma1, L)
    S = sp.diags(np.sqrt(gamma1 / gamma0))
    lhs = line_laplacian(L, gamma1)
    rhs = S @ line_laplacian(L, gamma0, q) @ S
    return float(sp.linalg.norm(lhs - rhs) / sp.linalg.norm(lhs))


def liouville_jacobian(gamma0, gamma, L: LineGraphModel) -> np.ndarray:
    return LiouvilleMap(L, gamma0).jacobian(gamma)


def save_line_potential(path, q, midpoints) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge", "x", "y", "value"])
        for e, ((x, y), v) in enumerate(zip(midpoints, q)):
            w.writerow([e, f"{x:.12g}", f"{y:.12g}", f"{v:.17g}"])
