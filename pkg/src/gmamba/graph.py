"""Graph representation, node heuristics, Laplacian positional encoding, and file I/O.

Graphs are stored with directed edge lists; undirected graphs carry both
directions.  The file format is JSON Lines, one graph per line:

    {"num_nodes": int, "edges": [[int, int], ...],
     "node_feat": [[float, ...], ...], "edge_feat": [[float, ...], ...],
     "y": int | [int, ...] | [float, ...]}

UTF-8 with LF line endings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ConvergenceError, DataFormatError


@dataclass
class Graph:
    """A single graph: L nodes, E directed edges, node/edge features, optional label."""

    num_nodes: int
    edges: np.ndarray          # int64 [E, 2] (src, dst)
    node_feat: np.ndarray      # float64 [L, F_n]
    edge_feat: np.ndarray      # float64 [E, F_e]
    label: object = None       # int, int vector (per node), or float vector

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        self.node_feat = np.asarray(self.node_feat, dtype=np.float64)
        if self.node_feat.ndim == 1:
            self.node_feat = self.node_feat.reshape(self.num_nodes, -1)
        self.edge_feat = np.asarray(self.edge_feat, dtype=np.float64)
        if self.edge_feat.ndim == 1:
            self.edge_feat = self.edge_feat.reshape(len(self.edges), -1)
        self.validate()

    def validate(self) -> None:
        if self.num_nodes < 1:
            raise ConfigError(f"graph must have at least one node, got {self.num_nodes}")
        if len(self.edges) and (
            self.edges.min() < 0 or self.edges.max() >= self.num_nodes
        ):
            raise ConfigError(
                f"edge index out of range [0, {self.num_nodes}) in field 'edges'"
            )
        if self.node_feat.shape[0] != self.num_nodes:
            raise ConfigError(
                f"node_feat rows {self.node_feat.shape[0]} != num_nodes {self.num_nodes}"
            )
        if self.edge_feat.shape[0] != len(self.edges):
            raise ConfigError(
                f"edge_feat rows {self.edge_feat.shape[0]} != num edges {len(self.edges)}"
            )

    @property
    def num_edges(self) -> int:
        return len(self.edges)


@dataclass
class NodeHeuristic:
    """Per-node scalar importance scores used as the sort key."""

    kind: str                      # degree | eigenvector_centrality | none
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("node heuristic values must be finite")


def undirected_pairs(g: Graph) -> np.ndarray:
    """Distinct undirected edges as sorted (lo, hi) pairs, [M, 2]."""
    if g.num_edges == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.sort(g.edges, axis=1)
    return np.unique(pairs, axis=0)


def node_degrees(g: Graph) -> np.ndarray:
    """Undirected degree: distinct neighbors per node; a self-loop adds 1."""
    deg = np.zeros(g.num_nodes, dtype=np.float64)
    pairs = undirected_pairs(g)
    for a, b in pairs:
        if a == b:
            deg[a] += 1.0
        else:
            deg[a] += 1.0
            deg[b] += 1.0
    return deg


def _components(g: Graph) -> list[np.ndarray]:
    """Connected components (undirected), each as a sorted node-index array."""
    adj: list[list[int]] = [[] for _ in range(g.num_nodes)]
    for a, b in undirected_pairs(g):
        if a != b:
            adj[a].append(int(b))
            adj[b].append(int(a))
    seen = np.zeros(g.num_nodes, dtype=bool)
    comps = []
    for start in range(g.num_nodes):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        comp = []
        while stack:
            u = stack.pop()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(v)
        comps.append(np.array(sorted(comp), dtype=np.int64))
    return comps


def eigenvector_centrality(g: Graph, tol: float = 1e-10, max_iter: int = 1000) -> np.ndarray:
    """Unit-norm nonnegative principal eigenvector of the adjacency matrix.

    Power iteration from the all-ones vector.  Iterates on A + I rather
    than A so bipartite components cannot oscillate; the shift leaves the
    principal eigenvector unchanged.  Disconnected input is handled per
    component (each component's sub-vector is unit-normalized);
    components without edges get zeros.
    """
    if tol <= 0:
        raise ConfigError(f"tol must be positive, got {tol}")
    out = np.zeros(g.num_nodes, dtype=np.float64)
    pairs = undirected_pairs(g)
    for comp in _components(g):
        local = {int(n): i for i, n in enumerate(comp)}
        sub = [
            (local[int(a)], local[int(b)])
            for a, b in pairs
            if int(a) in local and int(b) in local
        ]
        if not sub:
            continue
        n = len(comp)
        src = np.array(
            [s for s, d in sub] + [d for s, d in sub if s != d], dtype=np.int64
        )
        dst = np.array(
            [d for s, d in sub] + [s for s, d in sub if s != d], dtype=np.int64
        )
        v = np.ones(n) / np.sqrt(n)
        converged = False
        for _ in range(max_iter):
            nxt = v.copy()  # the +I shift
            np.add.at(nxt, dst, v[src])
            nxt /= np.linalg.norm(nxt)
            if np.max(np.abs(nxt - v)) < tol:
                v = nxt
                converged = True
                break
            v = nxt
        if not converged:
            raise ConvergenceError(
                f"eigenvector centrality did not converge in {max_iter} iterations "
                f"on a graph with {g.num_nodes} nodes / {g.num_edges} edge entries"
            )
        out[comp] = np.abs(v)
    return out


def laplacian_pe(g: Graph, k: int, null_tol: float = 1e-8) -> np.ndarray:
    """Eigenvectors of the symmetric normalized Laplacian for the k smallest
    nonzero eigenvalues.

    Columns are L2-normalized and sign-fixed so each column's
    largest-magnitude entry is positive.  Zero eigenvalues (one per
    connected component) are excluded.
    """
    n = g.num_nodes
    if k >= n:
        raise ConfigError(f"laplacian_pe requires k < num_nodes, got k={k}, L={n}")
    if k == 0:
        return np.zeros((n, 0), dtype=np.float64)
    adj = np.zeros((n, n), dtype=np.float64)
    for a, b in undirected_pairs(g):
        if a != b:
            adj[a, b] = 1.0
            adj[b, a] = 1.0
    deg = adj.sum(axis=1)
    dinv = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    lap = np.eye(n) - dinv[:, None] * adj * dinv[None, :]
    evals, evecs = np.linalg.eigh(lap)
    keep = np.where(evals > null_tol)[0]
    if len(keep) < k:
        raise ConfigError(
            f"laplacian_pe: only {len(keep)} nonzero eigenvalues available, need k={k}"
        )
    cols = evecs[:, keep[:k]]
    cols = cols / np.linalg.norm(cols, axis=0, keepdims=True)
    for j in range(cols.shape[1]):
        lead = np.argmax(np.abs(cols[:, j]))
        if cols[lead, j] < 0:
            cols[:, j] = -cols[:, j]
    return cols


def _label_to_json(label):
    if label is None:
        return None
    if isinstance(label, (int, np.integer)):
        return int(label)
    arr = np.asarray(label)
    if np.issubdtype(arr.dtype, np.integer):
        return [int(v) for v in arr.tolist()]
    return [float(v) for v in arr.tolist()]


def _label_from_json(y):
    if y is None:
        return None
    if isinstance(y, int):
        return int(y)
    if isinstance(y, list):
        if all(isinstance(v, int) for v in y):
            return np.asarray(y, dtype=np.int64)
        return np.asarray(y, dtype=np.float64)
    raise DataFormatError(f"field 'y' has unsupported type {type(y).__name__}")


def write_graphs(graphs, path) -> None:
    """Serialize graphs as JSON Lines (UTF-8, LF)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for g in graphs:
            record = {
                "num_nodes": g.num_nodes,
                "edges": [[int(a), int(b)] for a, b in g.edges],
                "node_feat": [[float(v) for v in row] for row in g.node_feat],
                "edge_feat": [[float(v) for v in row] for row in g.edge_feat],
                "y": _label_to_json(g.label),
            }
            f.write(json.dumps(record, separators=(",", ":")) + "\n")


def read_graphs(path) -> list[Graph]:
    """Parse a JSON Lines graph file, validating per line."""
    graphs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            try:
                num_nodes = int(record["num_nodes"])
                edges = np.asarray(record["edges"], dtype=np.int64).reshape(-1, 2)
                node_feat = np.asarray(record["node_feat"], dtype=np.float64)
                if node_feat.ndim == 1:
                    node_feat = node_feat.reshape(num_nodes, -1)
                edge_feat = np.asarray(record["edge_feat"], dtype=np.float64)
                if edge_feat.ndim == 1:
                    edge_feat = edge_feat.reshape(len(edges), -1)
                label = _label_from_json(record.get("y"))
            except KeyError as exc:
                raise DataFormatError(f"{path}: line {lineno}: missing field {exc}") from exc
            except (TypeError, ValueError) as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
            try:
                graphs.append(
                    Graph(
                        num_nodes=num_nodes,
                        edges=edges,
                        node_feat=node_feat,
                        edge_feat=edge_feat,
                        label=label,
                    )
                )
            except ConfigError as exc:
                raise DataFormatError(f"{path}: line {lineno}: {exc}") from exc
    return graphs


def graphs_equal(a: Graph, b: Graph) -> bool:
    """Structural equality (used by round-trip tests)."""
    if a.num_nodes != b.num_nodes or not np.array_equal(a.edges, b.edges):
        return False
    if not np.array_equal(a.node_feat, b.node_feat):
        return False
    if not np.array_equal(a.edge_feat, b.edge_feat):
        return False
    if a.label is None or b.label is None:
        return a.label is None and b.label is None
    la, lb = np.asarray(a.label), np.asarray(b.label)
    return la.shape == lb.shape and np.array_equal(la, lb)
