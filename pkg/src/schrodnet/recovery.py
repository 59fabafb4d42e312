"""Discrete inverse conductivity problem: network conductances from a DtN matrix.

Unknowns are log-conductances; the equations are the logs of the n(n-1)/2
negated off-diagonal DtN entries.  In these log-log coordinates the map is
close to linear, which is what makes plain Newton usable at all beyond
n = 9.  Without a warm start the iteration is seeded by a Levenberg-Marquardt
fit of one conductance per layer (continuum data are nearly rotation
invariant), then by a full Levenberg-Marquardt fit, and finished by Newton.

The data are normalized by their geometric-mean magnitude before solving,
so ``recover_conductivity(G, a*M) == a * recover_conductivity(G, M)`` up to
rounding; the preconditioner's scale invariance relies on this.
"""
from __future__ import annotations

import logging

import numpy as np
from scipy.optimize import least_squares

from .netgraph import CircularNetwork
from .netops import dtn_map, network_dtn_jacobian, upper_entries

log = logging.getLogger(__name__)

MAX_LOG_SPREAD = 40.0


class RecoveryError(RuntimeError):
    pass


class NegativeConductorError(RecoveryError):
    """No positive conductivity matches the data (noise too high for this n)."""


class NearSingularJacobianError(RecoveryError):
    pass


def _log_response(G, xi):
    """``log(-offdiag(Lambda(exp(xi))))`` and the raw entries, or ``(None, None)``."""
    if np.ptp(xi) > MAX_LOG_SPREAD:
        return None, None
    try:
        lam = upper_entries(dtn_map(G, np.exp(xi)))
    except (np.linalg.LinAlgError, ValueError):
        return None, None
    if np.any(lam >= 0):
        return None, None
    return np.log(-lam), lam


def _log_jacobian(G, xi, lam):
    g = np.exp(xi)
    return network_dtn_jacobian(G, g) * g / lam[:, None]


def _newton(G, xi, target, tol, max_iter):
    f, lam = _log_response(G, xi)
    if f is None:
        return xi, np.inf
    r = f - target
    rnorm = np.linalg.norm(r)
    for _ in range(max_iter):
        if rnorm <= tol:
            break
        step = np.linalg.lstsq(_log_jacobian(G, xi, lam), -r, rcond=None)[0]
        step *= min(1.0, 2.0 / np.max(np.abs(step)))
        t = 1.0
        while t > 1e-4:
            f_new, lam_new = _log_response(G, xi + t * step)
            if f_new is not None and np.linalg.norm(f_new - target) < rnorm:
                break
            t *= 0.5
        else:
            break
        xi, lam, r = xi + t * step, lam_new, f_new - target
        rnorm = np.linalg.norm(r)
    return xi, rnorm


def _levenberg_marquardt(G, P, x0, target, max_nfev, loose):
    penalty = np.full(len(target), 1e3)

    def fun(x):
        f, _ = _log_response(G, P @ x)
        return penalty if f is None else f - target

    def jac(x):
        xi = P @ x
        f, lam = _log_response(G, xi)
        if f is None:
            return np.zeros((len(target), P.shape[1]))
        return _log_jacobian(G, xi, lam) @ P

    tol = 1e-10 if loose else 1e-15
    sol = least_squares(
        fun, x0, jac=jac, method="lm", x_scale="jac", xtol=tol, ftol=tol, gtol=tol, max_nfev=max_nfev
    )
    return sol.x


def _layer_map(G):
    if len(G.layers) != G.n_edges or G.m == 0:
        return None
    P = np.zeros((G.n_edges, G.m))
    P[np.arange(G.n_edges), G.layers - 1] = 1.0
    return P


def recover_conductivity(
    G: CircularNetwork,
    M: np.ndarray,
    initial: np.ndarray | None = None,
    tol: float = 1e-12,
    max_iter: int = 100,
) -> np.ndarray:
    """Conductances ``gamma > 0`` with ``dtn_map(G, gamma) == M`` on the strict upper triangle.

    ``initial`` is an optional warm start (any positive scale).  Raises
    :class:`NegativeConductorError` when no positive network reproduces the
    data to relative tolerance ``tol``.
    """
    M = np.asarray(M, dtype=float)
    n = G.n
    if M.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} matrix, got {M.shape}")
    if G.n_edges != n * (n - 1) // 2:
        raise ValueError("graph does not have the critical edge count n(n-1)/2")
    data = upper_entries(M)
    if np.any(data >= 0):
        raise NegativeConductorError(
            f"{np.count_nonzero(data >= 0)} off-diagonal entries are nonnegative"
        )
    target = np.log(-data)
    shift = target.mean()
    target = target - shift
    # log-residual tolerance equivalent to the relative entry tolerance
    log_tol = 0.5 * tol * np.linalg.norm(data) / np.abs(data).max()

    def finish(xi):
        gamma = np.exp(xi + shift)
        rel = np.linalg.norm(upper_entries(dtn_map(G, gamma)) - data) / np.linalg.norm(data)
        return gamma if rel <= tol else None

    def align(xi):
        f, _ = _log_response(G, xi)
        return xi + np.mean(target - f)

    seeds = []
    if initial is not None:
        g0 = np.asarray(initial, dtype=float)
        if g0.shape != (G.n_edges,) or np.any(g0 <= 0):
            raise ValueError("initial guess must be a positive conductivity")
        seeds.append(("warm start", lambda: align(np.log(g0))))
    P = _layer_map(G)
    if P is not None:
        def layered():
            x = np.log(np.ones(G.m))
            x = x + np.mean(target - _log_response(G, P @ x)[0])
            x = _levenberg_marquardt(G, P, x, target, 3000, loose=True)
            return _levenberg_marquardt(G, np.eye(G.n_edges), P @ x, target, 2000, loose=False)
        seeds.append(("layer fit", layered))
    seeds.append(
        ("full fit", lambda: _levenberg_marquardt(
            G, np.eye(G.n_edges), align(np.zeros(G.n_edges)), target, 2000, loose=False))
    )

    best = np.inf
    for name, seed in seeds:
        xi, rnorm = _newton(G, seed(), target, log_tol, max_iter)
        gamma = finish(xi)
        if gamma is not None:
            log.debug("recovery converged from %s (log residual %.2e)", name, rnorm)
            return gamma
        best = min(best, rnorm)
        log.debug("recovery from %s stalled at log residual %.2e", name, rnorm)
    raise NegativeConductorError(
        f"Newton stalled at log-residual {best:.3e}; no positive network fits the data"
    )


def gamma_jacobian(G: CircularNetwork, gamma, cond_max: float = 1e12):
    """Jacobian of conductances w.r.t. strict-upper DtN entries, and its condition number."""
    J = network_dtn_jacobian(G, gamma)
    cond = np.linalg.cond(J)
    if not np.isfinite(cond) or cond > cond_max:
        raise NearSingularJacobianError(f"DtN Jacobian condition number {cond:.3e}")
    return np.linalg.inv(J), cond
