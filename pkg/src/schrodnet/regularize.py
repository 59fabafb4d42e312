"""Noise-adaptive lumping of boundary measurements.

Measurements taken with ``N`` boundary functions are combined into ``n < N``
coarser ones, ``psi_i = sum_{j in S_i} alpha_ij phi_j``, and ``n`` is reduced
until the network recovered from the lumped data has positive conductances.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netgraph import build_cmn
from .netops import matrix_from_upper, upper_entries, upper_indices
from .recovery import RecoveryError, recover_conductivity

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LumpingPlan:
    """Partition of ``0..N-1`` into consecutive sets with positive unit-sum weights."""

    N: int
    sets: tuple[tuple[int, ...], ...]
    weights: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        if len(self.sets) != len(self.weights):
            raise ValueError("one weight list per set")
        seen: set[int] = set()
        for S, w in zip(self.sets, self.weights):
            if not S or len(S) != len(w):
                raise ValueError("sets must be nonempty and match their weights")
            if any((b - a) % self.N != 1 for a, b in zip(S, S[1:])):
                raise ValueError(f"set {S} is not consecutive")
            if seen & set(S) or not all(0 <= j < self.N for j in S):
                raise ValueError("sets must be disjoint subsets of range(N)")
            seen |= set(S)
            if min(w) <= 0 or abs(sum(w) - 1) > 1e-12:
                raise ValueError("weights must be positive with unit sum")

    @property
    def n(self) -> int:
        return len(self.sets)

    @classmethod
    def default(cls, N: int, n: int) -> "LumpingPlan":
        """Blocks of ``N // n`` consecutive indices, uniform weights.

        The ``N mod n`` leftover indices are dropped, spread as evenly as
        possible around the circle.
        """
        if not 0 < n <= N:
            raise ValueError(f"need 0 < n <= N, got n={n}, N={N}")
        b, left = divmod(N, n)
        # gap g_i sits after block i; spread the leftovers by Bresenham rounding
        gaps = np.diff(np.floor(np.arange(n + 1) * left / n).astype(int))
        sets, start = [], 0
        for g in gaps:
            sets.append(tuple(range(start, start + b)))
            start += b + int(g)
        weights = tuple((1.0 / b,) * b for _ in sets)
        return cls(N, tuple(sets), weights)

    def matrix(self) -> np.ndarray:
        """``A`` with ``psi = A phi``, shape ``(n, N)``."""
        A = np.zeros((self.n, self.N))
        for i, (S, w) in enumerate(zip(self.sets, self.weights)):
            A[i, list(S)] = w
        return A

    def to_json(self, path=None) -> str:
        text = json.dumps({"N": self.N, "sets": [list(s) for s in self.sets],
                           "weights": [list(w) for w in self.weights]})
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text_or_path) -> "LumpingPlan":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        d = json.loads(text)
        return cls(int(d["N"]), tuple(tuple(int(j) for j in s) for s in d["sets"]),
                   tuple(tuple(float(x) for x in w) for w in d["weights"]))


def lump_measurements(M_N, plan: LumpingPlan) -> np.ndarray:
    """Off-diagonals ``A M A^T`` for the lumped profiles, diagonal from row sums."""
    M_N = np.asarray(M_N, dtype=float)
    if M_N.shape != (plan.N, plan.N):
        raise ValueError(f"plan is for N={plan.N}, got a {M_N.shape} matrix")
    A = plan.matrix()
    # sets are disjoint, so the diagonal of M_N never enters an off-diagonal entry
    off = M_N - np.diag(np.diag(M_N))
    return matrix_from_upper(upper_entries(A @ off @ A.T), plan.n)


def add_noise(M, level: float, rng: np.random.Generator | int = 0) -> np.ndarray:
    """Symmetric i.i.d. Gaussian noise of relative size ``level`` on each off-diagonal entry."""
    M = np.asarray(M, dtype=float)
    rng = np.random.default_rng(rng)
    vals = upper_entries(M)
    noisy = vals + level * np.abs(vals) * rng.standard_normal(vals.shape)
    return matrix_from_upper(noisy, M.shape[0])


@dataclass
class Selection:
    n: int
    M: np.ndarray
    gamma: np.ndarray
    plan: LumpingPlan
    log: list = field(default_factory=list)


class SelectionExhausted(RecoveryError):
    def __init__(self, decisions):
        self.decisions = decisions
        summary = ", ".join(f"n={d['n']}: {d['outcome']}" for d in decisions)
        super().__init__(f"no candidate yields a positive network ({summary})")


def select_network_size(M_N, candidates, plan_factory=LumpingPlan.default) -> Selection:
    """Largest candidate ``n`` whose lumped data admit a positive network on C(m, n).

    ``candidates`` are tried in descending order.  Each decision is logged as
    ``{"n", "outcome", "min_gamma"}``.
    """
    M_N = np.asarray(M_N, dtype=float)
    N = M_N.shape[0]
    cands = sorted({int(c) for c in candidates}, reverse=True)
    if not cands or any(c % 2 == 0 or c > N or c < 5 for c in cands):
        raise ValueError(f"candidates must be odd, >= 5 and <= {N}: {cands}")
    decisions = []
    for n in cands:
        plan = plan_factory(N, n)
        M = lump_measurements(M_N, plan)
        try:
            if np.any(upper_entries(M) >= 0):
                raise RecoveryError("lumped data have nonnegative off-diagonal entries")
            gamma = recover_conductivity(build_cmn(n), M)
        except RecoveryError as exc:
            decisions.append({"n": n, "outcome": f"rejected: {exc}", "min_gamma": None})
            log.info("n=%d rejected: %s", n, exc)
            continue
        decisions.append({"n": n, "outcome": "accepted", "min_gamma": float(gamma.min())})
        log.info("n=%d accepted, min gamma %.3e", n, gamma.min())
        return Selection(n, M, gamma, plan, decisions)
    raise SelectionExhausted(decisions)


def lumped_variance(plan: LumpingPlan, sigma2) -> np.ndarray:
    """Variance of lumped off-diagonal entries under independent entry noise.

    ``sigma2`` is the ``N x N`` matrix of entry variances; the symmetric pair
    ``(p, r), (r, p)`` counts as one random variable.
    """
    A = plan.matrix()
    a, b = upper_indices(plan.n)
    S = np.asarray(sigma2, dtype=float)
    return np.einsum("kp,kr,pr->k", A[a] ** 2, A[b] ** 2, S)
