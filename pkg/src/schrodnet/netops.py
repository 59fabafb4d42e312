"""Discrete Schrödinger operators on resistor networks, Dirichlet solves and DtN maps."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .netgraph import CircularNetwork


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Interior block of the network operator failed Cholesky."""


def upper_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the strict upper triangle, row-major."""
    return np.triu_indices(n, 1)


def upper_entries(M: np.ndarray) -> np.ndarray:
    return np.asarray(M)[upper_indices(M.shape[0])]


def matrix_from_upper(vals: np.ndarray, n: int) -> np.ndarray:
    """Symmetric matrix with given strict-upper entries and zero row sums."""
    M = np.zeros((n, n))
    iu = upper_indices(n)
    M[iu] = vals
    M = M + M.T
    M[np.diag_indices(n)] = -M.sum(axis=1)
    return M


def _check_gamma(G: CircularNetwork, gamma) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (G.n_edges,):
        raise ValueError(f"expected {G.n_edges} conductances, got shape {gamma.shape}")
    if not np.all(gamma > 0):
        raise ValueError("conductances must be strictly positive")
    return gamma


def assemble_operator(G: CircularNetwork, gamma, q=None) -> sp.csr_matrix:
    """Sparse ``D^T diag(gamma) D + diag(q)``."""
    gamma = _check_gamma(G, gamma)
    D = G.incidence
    L = D.T @ sp.diags(gamma) @ D
    if q is not None:
        L = L + sp.diags(np.broadcast_to(np.asarray(q, dtype=float), (G.n_nodes,)))
    return sp.csr_matrix(L)


def _blocks(G, gamma, q):
    L = assemble_operator(G, gamma, q).toarray()
    B, I = G.boundary, G.interior
    return L[np.ix_(B, B)], L[np.ix_(B, I)], L[np.ix_(I, I)]


def _factor_interior(L_II: np.ndarray):
    try:
        return sla.cho_factor(L_II)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(
            "interior block is not positive definite (q < 0 or disconnected interior?)"
        ) from err


def harmonic_extension(G: CircularNetwork, gamma, q=None) -> np.ndarray:
    """Matrix ``U`` of shape ``(V, |B|)`` whose column ``a`` solves the
    Dirichlet problem with boundary data ``e_a``."""
    L = assemble_operator(G, gamma, q).toarray()
    B, I = G.boundary, G.interior
    U = np.zeros((G.n_nodes, len(B)))
    U[B, np.arange(len(B))] = 1.0
    if len(I):
        cf = _factor_interior(L[np.ix_(I, I)])
        U[I] = -sla.cho_solve(cf, L[np.ix_(I, B)])
    return U


def dirichlet_solve(G: CircularNetwork, gamma, q, f) -> np.ndarray:
    """Node potentials ``u`` with ``u_B = f`` and ``(L u)_I = 0``."""
    f = np.asarray(f, dtype=float)
    return harmonic_extension(G, gamma, q) @ f


def dtn_map(G: CircularNetwork, gamma, q=None) -> np.ndarray:
    """Schur complement ``L_BB - L_BI L_II^{-1} L_IB``."""
    L_BB, L_BI, L_II = _blocks(G, gamma, q)
    if L_II.size == 0:
        Lam = L_BB
    else:
        cf = _factor_interior(L_II)
        Lam = L_BB - L_BI @ sla.cho_solve(cf, L_BI.T)
    return 0.5 * (Lam + Lam.T)


def network_dtn_jacobian(G: CircularNetwork, gamma) -> np.ndarray:
    """Jacobian of the strict-upper DtN entries w.r.t. edge conductances (q = 0).

    Uses ``d(f^T Lam g)/d gamma(e) = (D u_f)(e) (D u_g)(e)``; shape
    ``(n(n-1)/2, |E|)``.
    """
    gamma = _check_gamma(G, gamma)
    DU = G.incidence @ harmonic_extension(G, gamma)
    a, b = upper_indices(G.n)
    return (DU[:, a] * DU[:, b]).T
