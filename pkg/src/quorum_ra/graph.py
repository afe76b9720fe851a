"""Weighted directed communication topologies.

Node labels in the public edge-list API and the graph file format are
1-based (``1..n``); matrices are indexed from 0. Entry ``weights[i, j] > 0``
means node ``i`` hears node ``j``, i.e. the directed edge ``j -> i``.
"""

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateEdge,
    GraphFileError,
    NodeOutOfRange,
    NonPositiveComponent,
    NonPositiveWeight,
    NotStronglyConnected,
    SelfLoop,
)

ROWSUM_TOL = 1e-12
ZERO_EIG_RTOL = 1e-9


@dataclass(frozen=True, eq=False)
class Digraph:
    n: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        if w.shape != (self.n, self.n):
            raise ValueError(f"weights must be {self.n}x{self.n}, got {w.shape}")
        if np.any(np.diag(w) != 0):
            raise SelfLoop("diagonal of the weight matrix must be zero")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise NonPositiveWeight("weights must be finite and nonnegative")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def edges(self):
        """Edges as 1-based ``(from, to, weight)`` triples, sorted."""
        to_idx, from_idx = np.nonzero(self.weights)
        order = np.lexsort((to_idx, from_idx))
        return [
            (int(from_idx[k]) + 1, int(to_idx[k]) + 1, float(self.weights[to_idx[k], from_idx[k]]))
            for k in order
        ]

    def in_neighbors(self, i):
        return np.flatnonzero(self.weights[i])

    @property
    def adjacency(self):
        return self.weights > 0

    def __eq__(self, other):
        if not isinstance(other, Digraph):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.weights, other.weights)

    def __hash__(self):
        return hash((self.n, self.weights.tobytes()))


@dataclass(frozen=True, eq=False)
class Laplacian:
    L: np.ndarray
    degrees: np.ndarray

    @property
    def max_degree(self):
        return float(self.degrees.max())

    @property
    def n(self):
        return self.L.shape[0]


@dataclass(frozen=True, eq=False)
class LeftEigenvector:
    omega: np.ndarray
    residual: float


def build_digraph(n, edges):
    """Build a digraph from 1-based ``(from, to, weight)`` triples."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    w = np.zeros((n, n))
    for edge in edges:
        src, dst, weight = edge
        if not (1 <= src <= n and 1 <= dst <= n):
            raise NodeOutOfRange(f"edge {src}->{dst} outside 1..{n}")
        if src == dst:
            raise SelfLoop(f"self-loop at node {src}")
        if not weight > 0:
            raise NonPositiveWeight(f"edge {src}->{dst} has weight {weight}")
        if w[dst - 1, src - 1] != 0:
            raise DuplicateEdge(f"edge {src}->{dst} given twice")
        w[dst - 1, src - 1] = weight
    return Digraph(n, w)


def _reachable(adj, start):
    # adj[i, j] True means j -> i; walk out-edges of each node.
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[start] = True
    queue = deque([start])
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(adj[:, j]):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return seen


def is_strongly_connected(g):
    """Forward and transposed reachability from node 0 both cover every node."""
    adj = g.adjacency
    return bool(_reachable(adj, 0).all() and _reachable(adj.T, 0).all())


def laplacian(g):
    d = g.weights.sum(axis=1)
    L = np.diag(d) - g.weights
    L.setflags(write=False)
    d.setflags(write=False)
    return Laplacian(L, d)


def metropolis_weights(n, edges):
    """Weight every in-edge of node i by ``1 / (1 + deg_i)``, deg_i the in-neighbor count.

    ``edges`` are unweighted 1-based ``(from, to)`` pairs.
    """
    unit = build_digraph(n, [(s, t, 1.0) for s, t in edges])
    if not is_strongly_connected(unit):
        raise NotStronglyConnected("Assumption 1 violated: graph is not strongly connected")
    deg = unit.adjacency.sum(axis=1)
    return Digraph(n, unit.adjacency / (1.0 + deg)[:, None])


def left_eigenvector(lap):
    """Positive left null vector of L normalized to sum 1."""
    L = lap.L
    scale = max(np.linalg.norm(L, 2), 1e-300)
    vals, vecs = np.linalg.eig(L.T)
    zero = np.abs(vals) < ZERO_EIG_RTOL * scale
    if zero.sum() != 1:
        raise NotStronglyConnected(
            f"zero eigenvalue of L has multiplicity {int(zero.sum())}; "
            "Assumption 1 (strong connectivity) fails"
        )
    v = np.real(vecs[:, np.argmax(zero)])
    v = v / v.sum()
    # one step of refinement: solve the bordered system [L^T; 1^T] w = [0; 1]
    n = L.shape[0]
    M = np.vstack([L.T, np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    w, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    if np.all(w > 0):
        v = w
    if not np.all(v > 0):
        raise NonPositiveComponent(f"left eigenvector has non-positive entries: {v}")
    v = v / v.sum()
    residual = float(np.max(np.abs(v @ L)))
    v.setflags(write=False)
    return LeftEigenvector(v, residual)


def random_strongly_connected(n, extra_edge_prob, seed):
    """Metropolis-weighted digraph: seeded Hamiltonian cycle plus random extra edges."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    adj = np.zeros((n, n), dtype=bool)
    for k in range(n):
        src, dst = order[k], order[(k + 1) % n]
        adj[dst, src] = True
    extra = rng.random((n, n)) < extra_edge_prob
    np.fill_diagonal(extra, False)
    adj |= extra
    to_idx, from_idx = np.nonzero(adj)
    return metropolis_weights(n, [(int(j) + 1, int(i) + 1) for i, j in zip(to_idx, from_idx)])


def read_graph(path):
    """Parse the edge-list format: ``n <count>`` then ``from to [weight]`` lines.

    If no line carries a weight, Metropolis weights are applied. Mixing
    weighted and unweighted lines is an error. ``#`` starts a comment.
    """
    path = Path(path)
    n = None
    triples, pairs = [], []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if n is None:
            if len(parts) != 2 or parts[0] != "n":
                raise GraphFileError(f"{path}:{lineno}: expected 'n <count>' header")
            try:
                n = int(parts[1])
            except ValueError:
                raise GraphFileError(f"{path}:{lineno}: bad node count {parts[1]!r}")
            continue
        try:
            if len(parts) == 2:
                pairs.append((int(parts[0]), int(parts[1])))
            elif len(parts) == 3:
                triples.append((int(parts[0]), int(parts[1]), float(parts[2])))
            else:
                raise ValueError
        except ValueError:
            raise GraphFileError(f"{path}:{lineno}: expected 'from to [weight]', got {raw!r}")
    if n is None:
        raise GraphFileError(f"{path}: empty graph file")
    if pairs and triples:
        raise GraphFileError(f"{path}: mixes weighted and unweighted edges")
    if triples:
        return build_digraph(n, triples)
    return metropolis_weights(n, pairs)


def write_graph(g, path):
    lines = [f"n {g.n}"]
    lines += [f"{s} {t} {w!r}" for s, t, w in g.edges()]
    Path(path).write_text("\n".join(lines) + "\n")
