"""Undirected weighted communication graphs and their matrix views."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import Disconnected, DimensionMismatch, NegativeWeight, NotSymmetric

CONNECTIVITY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class CommGraph:
    """Weighted undirected graph over ``N`` agents.

    Edges are enumerated lexicographically by ``(min(i, j), max(i, j))`` and
    oriented from the smaller index (output vertex) to the larger one.
    Build instances with :func:`build_graph`, which validates the weights.
    """

    weights: np.ndarray
    edges: tuple[tuple[int, int], ...] = field(repr=False)

    @property
    def num_agents(self) -> int:
        return self.weights.shape[0]

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @cached_property
    def edge_weights(self) -> np.ndarray:
        return np.array([self.weights[i, j] for i, j in self.edges], dtype=float)

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.weights[i] > 0)

    @cached_property
    def _laplacian(self) -> np.ndarray:
        L = np.diag(self.degrees) - self.weights
        L.setflags(write=False)
        return L

    @cached_property
    def _incidence(self) -> np.ndarray:
        V = np.zeros((self.num_edges, self.num_agents))
        for ell, (i, j) in enumerate(self.edges):
            s = np.sqrt(self.weights[i, j])
            V[ell, i] = s
            V[ell, j] = -s
        V.setflags(write=False)
        return V

    @cached_property
    def _lambda2(self) -> float:
        if self.num_agents == 1:
            # a single agent is trivially connected; no consensus term exists
            return np.inf
        eig = np.linalg.eigvalsh(self._laplacian)
        return float(eig[1])

    def to_dict(self) -> dict:
        return {
            "n": self.num_agents,
            "edges": [[int(i), int(j), float(self.weights[i, j])] for i, j in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def build_graph(weights) -> CommGraph:
    """Validate a weight matrix and wrap it as a :class:`CommGraph`.

    Raises
    ------
    NotSymmetric, NegativeWeight, Disconnected
    """
    W = np.array(weights, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise DimensionMismatch(f"weight matrix must be square, got shape {W.shape}")
    if not np.array_equal(W, W.T):
        raise NotSymmetric("weight matrix is not symmetric")
    if np.any(W < 0):
        raise NegativeWeight("weights must be nonnegative")
    if np.any(np.diag(W) != 0):
        raise NotSymmetric("weight matrix must have a zero diagonal")
    N = W.shape[0]
    edges = tuple((i, j) for i in range(N) for j in range(i + 1, N) if W[i, j] > 0)
    W.setflags(write=False)
    g = CommGraph(weights=W, edges=edges)
    if N > 1 and g._lambda2 <= CONNECTIVITY_TOL:
        raise Disconnected(f"graph is disconnected (lambda_2 = {g._lambda2:.3e})")
    return g


def laplacian(g: CommGraph) -> np.ndarray:
    """Return ``D - W``."""
    return g._laplacian


def incidence(g: CommGraph) -> np.ndarray:
    """Weighted incidence matrix ``V`` (E x N) with ``V.T @ V == laplacian(g)``."""
    return g._incidence


def algebraic_connectivity(g: CommGraph) -> float:
    """Second-smallest Laplacian eigenvalue (dense symmetric solver)."""
    lam2 = g._lambda2
    if lam2 <= CONNECTIVITY_TOL:
        raise Disconnected(f"lambda_2 = {lam2:.3e}")
    return lam2


def graph_from_dict(data: dict) -> CommGraph:
    N = int(data["n"])
    W = np.zeros((N, N))
    for i, j, w in data["edges"]:
        i, j = int(i), int(j)
        if i == j or not (0 <= i < N and 0 <= j < N):
            raise DimensionMismatch(f"bad edge ({i}, {j}) for n={N}")
        W[i, j] = W[j, i] = float(w)
    return build_graph(W)


def graph_from_json(text: str) -> CommGraph:
    return graph_from_dict(json.loads(text))


def complete_graph(N: int, weight: float = 1.0) -> CommGraph:
    return build_graph(weight * (np.ones((N, N)) - np.eye(N)))


def path_graph(N: int, weight: float = 1.0) -> CommGraph:
    W = np.zeros((N, N))
    for i in range(N - 1):
        W[i, i + 1] = W[i + 1, i] = weight
    return build_graph(W)


def star_graph(N: int, weight: float = 1.0) -> CommGraph:
    W = np.zeros((N, N))
    W[0, 1:] = W[1:, 0] = weight
    return build_graph(W)


def random_connected_graph(rng: np.random.Generator, N: int, p: float = 0.3,
                           max_tries: int = 10_000) -> CommGraph:
    """Erdos-Renyi graph with unit weights, redrawn until connected."""
    if N == 1:
        return build_graph(np.zeros((1, 1)))
    iu = np.triu_indices(N, k=1)
    for _ in range(max_tries):
        mask = rng.random(iu[0].size) < p
        W = np.zeros((N, N))
        W[iu[0][mask], iu[1][mask]] = 1.0
        W = W + W.T
        try:
            return build_graph(W)
        except Disconnected:
            continue
    raise Disconnected(f"no connected draw after {max_tries} tries (N={N}, p={p})")
