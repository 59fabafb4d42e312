"""Circular planar graphs C(m, n) and their line graphs.

Node ordering: boundary nodes ``0..n-1`` counter-clockwise, then interior
nodes ring by ring inward, the optional center node last.  Every edge is
stored as ``(a, b)`` with ``a < b``; the discrete gradient is
``(D f)(e) = f(a) - f(b)``, i.e. the +1 endpoint is the smaller index.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class CircularNetwork:
    n_nodes: int
    boundary: np.ndarray
    edges: np.ndarray
    # C(m, n) metadata; generic graphs leave these at defaults
    m: int = 0
    kinds: tuple[str, ...] = ()
    layers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))

    @classmethod
    def from_edges(cls, n_nodes, edges, boundary) -> "CircularNetwork":
        e = np.sort(np.asarray(edges, dtype=int).reshape(-1, 2), axis=1)
        if np.any(e[:, 0] == e[:, 1]):
            raise ValueError("self loops are not allowed")
        if len({tuple(x) for x in e}) != len(e):
            raise ValueError("duplicate edges")
        return cls(n_nodes=int(n_nodes), boundary=np.asarray(boundary, dtype=int), edges=e)

    @property
    def n(self) -> int:
        return len(self.boundary)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def interior(self) -> np.ndarray:
        mask = np.ones(self.n_nodes, dtype=bool)
        mask[self.boundary] = False
        return np.flatnonzero(mask)

    @property
    def incidence(self) -> sp.csr_matrix:
        """Signed incidence (the discrete gradient ``D``), shape ``(E, V)``."""
        ne = self.n_edges
        rows = np.repeat(np.arange(ne), 2)
        cols = self.edges.ravel()
        vals = np.tile([1.0, -1.0], ne)
        return sp.csr_matrix((vals, (rows, cols)), shape=(ne, self.n_nodes))

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)

    def interior_connected(self) -> bool:
        interior = self.interior
        if len(interior) == 0:
            return True
        inside = np.zeros(self.n_nodes, dtype=bool)
        inside[interior] = True
        keep = inside[self.edges[:, 0]] & inside[self.edges[:, 1]]
        sub = self.edges[keep]
        adj = sp.coo_matrix(
            (np.ones(len(sub)), (sub[:, 0], sub[:, 1])), shape=(self.n_nodes,) * 2
        )
        ncomp, labels = sp.csgraph.connected_components(adj, directed=False)
        return len(np.unique(labels[interior])) == 1

    def without_edge(self, e: int) -> "CircularNetwork":
        keep = np.ones(self.n_edges, dtype=bool)
        keep[e] = False
        return CircularNetwork(
            n_nodes=self.n_nodes,
            boundary=self.boundary,
            edges=self.edges[keep],
            m=self.m,
            kinds=tuple(k for k, ok in zip(self.kinds, keep) if ok),
            layers=self.layers[keep] if len(self.layers) else self.layers,
            coords=self.coords,
        )

    def edge_midpoints(self) -> np.ndarray:
        """Cartesian midpoints of the edges in the plotting embedding."""
        r, t = self.coords[:, 0], self.coords[:, 1]
        xy = np.column_stack([r * np.cos(t), r * np.sin(t)])
        return 0.5 * (xy[self.edges[:, 0]] + xy[self.edges[:, 1]])

    def rotation(self, shift: int = 1) -> np.ndarray:
        """Edge permutation ``p`` such that edge ``e`` rotated by ``shift``
        boundary steps is edge ``p[e]``.  Only valid for C(m, n)."""
        n = self.n
        node_map = np.arange(self.n_nodes)
        ring_nodes = self.n_nodes - (self.n_nodes % n)
        idx = np.arange(ring_nodes)
        node_map[:ring_nodes] = (idx // n) * n + (idx % n + shift) % n
        lookup = {tuple(e): k for k, e in enumerate(self.edges)}
        mapped = np.sort(node_map[self.edges], axis=1)
        return np.array([lookup[tuple(e)] for e in mapped])

    def to_json(self, path) -> None:
        data = {
            "n": self.n,
            "m": self.m,
            "nodes": [
                {"id": i, "r": float(c[0]), "theta": float(c[1]), "boundary": bool(i < self.n)}
                for i, c in enumerate(self.coords)
            ],
            "edges": [
                {
                    "id": k,
                    "endpoints": [int(a), int(b)],
                    "kind": self.kinds[k] if self.kinds else None,
                    "layer": int(self.layers[k]) if len(self.layers) else None,
                }
                for k, (a, b) in enumerate(self.edges)
            ],
        }
        Path(path).write_text(json.dumps(data, indent=1))


def build_cmn(n: int) -> CircularNetwork:
    """Critical circular network with ``n`` boundary nodes and m = (n-1)/2 layers.

    Layers alternate radial/angular starting with a radial layer at the
    boundary.  When m is odd the last radial layer joins the innermost ring
    (or the boundary) to a single center node.
    """
    if n < 5 or n % 2 == 0:
        raise ValueError(f"n must be odd and >= 5, got {n}")
    m = (n - 1) // 2
    n_rings = m // 2
    has_center = m % 2 == 1
    n_nodes = n * (1 + n_rings) + int(has_center)
    center = n_nodes - 1

    coords = np.zeros((n_nodes, 2))
    angles = 2 * np.pi * np.arange(n) / n
    radii = 1.0 - np.arange(n_rings + 1) / (n_rings + 1 + int(has_center) * 0.5)
    for k in range(n_rings + 1):
        coords[k * n : (k + 1) * n, 0] = radii[k]
        coords[k * n : (k + 1) * n, 1] = angles

    edges, kinds, layers = [], [], []
    j = np.arange(n)
    for layer in range(1, m + 1):
        if layer % 2 == 1:
            ring = (layer - 1) // 2  # 0 is the boundary
            outer = ring * n + j
            inner = np.full(n, center) if layer == m else (ring + 1) * n + j
            new = np.column_stack([outer, inner])
            kind = "radial"
        else:
            ring = layer // 2
            a = ring * n + j
            b = ring * n + (j + 1) % n
            new = np.column_stack([a, b])
            kind = "angular"
        edges.append(np.sort(new, axis=1))
        kinds += [kind] * n
        layers += [layer] * n
    return CircularNetwork(
        n_nodes=n_nodes,
        boundary=np.arange(n),
        edges=np.vstack(edges),
        m=m,
        kinds=tuple(kinds),
        layers=np.array(layers),
        coords=coords,
    )


@dataclass(frozen=True, eq=False)
class LineGraphModel:
    """Line graph: node ``e`` per base edge, edge ``(e, f)`` when base edges share a node."""

    n_nodes: int
    edges: np.ndarray
    base: CircularNetwork | None = None

    @property
    def incidence(self) -> sp.csr_matrix:
        ne = len(self.edges)
        rows = np.repeat(np.arange(ne), 2)
        vals = np.tile([1.0, -1.0], ne)
        return sp.csr_matrix((vals, (rows, self.edges.ravel())), shape=(ne, self.n_nodes))

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.ravel(), minlength=self.n_nodes)


def line_graph(G: CircularNetwork) -> LineGraphModel:
    pairs = set()
    incident: dict[int, list[int]] = {}
    for k, (a, b) in enumerate(G.edges):
        incident.setdefault(int(a), []).append(k)
        incident.setdefault(int(b), []).append(k)
    for star in incident.values():
        for i, e in enumerate(star):
            for f in star[i + 1 :]:
                pairs.add((min(e, f), max(e, f)))
    edges = np.array(sorted(pairs), dtype=int).reshape(-1, 2)
    return LineGraphModel(n_nodes=G.n_edges, edges=edges, base=G)


def criticality_check(G: CircularNetwork, cond_max: float = 1e12) -> bool:
    """True iff the DtN Jacobian at unit conductance is numerically invertible."""
    from .netops import network_dtn_jacobian

    n = G.n
    if G.n_edges != n * (n - 1) // 2:
        return False
    try:
        J = network_dtn_jacobian(G, np.ones(G.n_edges))
    except np.linalg.LinAlgError:
        return False
    return bool(np.linalg.cond(J) < cond_max)
