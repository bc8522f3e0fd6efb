"""Cell meshes with Legendre-Gauss-Lobatto nodes and spectral cumulative integration."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L


@lru_cache(maxsize=None)
def lobatto(p: int):
    """LGL nodes on [-1, 1], quadrature weights and the integration matrix.

    S[i, j] = int_{-1}^{x_i} l_j(x) dx for the Lagrange basis l_j on the nodes.
    """
    if p < 3:
        raise ValueError("need at least 3 Lobatto nodes")
    n = p - 1
    interior = L.legroots(L.legder([0] * n + [1]))
    x = np.concatenate([[-1.0], np.sort(interior), [1.0]])
    # Lagrange basis in Legendre coefficients via the Vandermonde inverse
    V = L.legvander(x, p - 1)
    coef = np.linalg.inv(V)                # column j: Legendre coefficients of l_j
    S = np.empty((p, p))
    for j in range(p):
        anti = L.legint(coef[:, j], lbnd=-1)
        S[:, j] = L.legval(x, anti)
    w = S[-1].copy()
    x.setflags(write=False)
    S.setflags(write=False)
    w.setflags(write=False)
    return x, w, S


class CellMesh:
    """Cells [s_k, s_{k+1}] of a coordinate s, each with p LGL nodes.

    Nodal arrays have shape (ncell, p); adjacent cells share endpoints.
    """

    def __init__(self, edges, p: int):
        edges = np.asarray(edges, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("cell edges must be strictly increasing")
        self.edges = edges
        self.p = p
        self.xi, self.w, self.S = lobatto(p)
        self.R = self.w[None, :] - self.S      # R[i, j] = int_{x_i}^{1} l_j
        self.half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        self.s = mid[:, None] + self.half[:, None] * self.xi[None, :]
        # endpoints exactly on the edges
        self.s[:, 0] = edges[:-1]
        self.s[:, -1] = edges[1:]

    @property
    def ncell(self):
        return self.edges.size - 1

    def cumulative(self, g, offset=0.0):
        """int_{s_0}^{s} g ds at every node (g sampled on the nodes)."""
        G = (g @ self.S.T) * self.half[:, None]
        tot = G[:, -1]
        starts = offset + np.concatenate([[0.0], np.cumsum(tot[:-1])])
        return G + starts[:, None]

    def total(self, g):
        return float(np.sum((g @ self.w) * self.half))

    def reverse_cumulative(self, g):
        """int_{s}^{s_end} g ds at every node.

        Accumulated from the far end so values that vanish there keep their
        relative precision (no total-minus-partial cancellation).
        """
        G = (g @ self.R.T) * self.half[:, None]
        tot = G[:, 0]
        after = np.concatenate([np.cumsum(tot[::-1])[::-1][1:], [0.0]])
        return G + after[:, None]

    def edge_values(self, v):
        """Values at the cell edges (ncell + 1) from a nodal array."""
        return np.concatenate([v[:, 0], v[-1:, -1]])


def uniform_edges(lo, hi, n):
    return np.linspace(lo, hi, n + 1)


def graded_tail_edges(start, stop, first, growth, cap=2.0):
    """Edges from start to stop with widths first * growth^k, capped."""
    edges = [start]
    w = first
    while edges[-1] < stop:
        w = min(w * growth, cap)
        edges.append(min(edges[-1] + w, stop))
        if stop - edges[-1] < 0.25 * w:
            edges[-1] = stop
    return np.array(edges)
