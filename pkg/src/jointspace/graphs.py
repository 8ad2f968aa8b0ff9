"""Weighted undirected graphs: ingestion, path metric, subgraphs, generators, splits.

Graphs are simple (no self-loops, no parallel edges) with strictly positive
edge weights.  Node ids are dense integers ``0..num_nodes-1``.  All values are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
from collections import deque
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path

import numpy as np

__all__ = [
    "GraphValidationError",
    "EdgeListParseError",
    "SplitError",
    "WeightedGraph",
    "DistanceMatrix",
    "SplitSpec",
    "EdgeSplitSpec",
    "load_edge_list",
    "load_features_csv",
    "load_labels_csv",
    "save_edge_list",
    "shortest_paths",
    "k_hop_subgraph",
    "generate_lattice",
    "generate_tree",
    "generate_combined",
    "reference_combined_graph",
    "split_nodes",
    "split_edges",
    "graph_hash",
]


class GraphValidationError(ValueError):
    """Raised when a graph violates the simple-graph invariants."""


class EdgeListParseError(ValueError):
    """Raised for malformed edge-list input; carries the offending line number."""


class SplitError(ValueError):
    """Raised when a split cannot give every part at least one element."""


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    """Undirected simple graph with positive edge weights.

    ``edges`` holds canonicalized ``(u, v, w)`` triples with ``u < v``.
    ``features`` is an optional ``(num_nodes, dim)`` float matrix and
    ``labels`` an optional ``(num_nodes,)`` integer class vector.
    """

    num_nodes: int
    edges: tuple[tuple[int, int, float], ...]
    features: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.num_nodes < 1:
            raise GraphValidationError("graph needs at least one node")
        canon = []
        seen: set[tuple[int, int]] = set()
        for u, v, w in self.edges:
            u, v, w = int(u), int(v), float(w)
            if u == v:
                raise GraphValidationError(f"self-loop at node {u}")
            if not (0 <= u < self.num_nodes and 0 <= v < self.num_nodes):
                raise GraphValidationError(f"edge ({u},{v}) outside node range")
            if w <= 0 or not math.isfinite(w):
                raise GraphValidationError(f"edge ({u},{v}) has nonpositive weight {w}")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise GraphValidationError(f"duplicate edge ({u},{v})")
            seen.add(key)
            canon.append((key[0], key[1], w))
        object.__setattr__(self, "edges", tuple(canon))
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != self.num_nodes:
                raise GraphValidationError("features must be (num_nodes, dim)")
            f.setflags(write=False)
            object.__setattr__(self, "features", f)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (self.num_nodes,):
                raise GraphValidationError("labels must have one entry per node")
            lab.setflags(write=False)
            object.__setattr__(self, "labels", lab)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> tuple[tuple[tuple[int, float], ...], ...]:
        """Per-node list of ``(neighbor, weight)`` pairs."""
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.num_nodes)]
        for u, v, w in self.edges:
            adj[u].append((v, w))
            adj[v].append((u, w))
        return tuple(tuple(a) for a in adj)

    def with_features(self, features: np.ndarray) -> "WeightedGraph":
        return replace(self, features=features)

    def with_labels(self, labels: np.ndarray) -> "WeightedGraph":
        return replace(self, labels=labels)

    def scaled(self, s: float) -> "WeightedGraph":
        """Same topology with every edge weight multiplied by ``s > 0``."""
        if s <= 0:
            raise GraphValidationError("scale factor must be positive")
        return replace(self, edges=tuple((u, v, w * s) for u, v, w in self.edges))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """All-pairs path distances with an explicit +inf sentinel for unreachable pairs."""

    d: np.ndarray
    reachable: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.d, dtype=np.float64)
        r = np.asarray(self.reachable, dtype=bool)
        d.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "reachable", r)

    @property
    def num_nodes(self) -> int:
        return self.d.shape[0]

    @property
    def connected(self) -> bool:
        return bool(self.reachable.all())

    @property
    def diameter(self) -> float:
        """Largest finite distance."""
        finite = self.d[self.reachable]
        return float(finite.max()) if finite.size else 0.0


@dataclass(frozen=True)
class SplitSpec:
    """Disjoint train/val/test index sets over nodes or edges."""

    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def to_json(self) -> str:
        return json.dumps(
            {"train": list(self.train), "val": list(self.val),
             "test": list(self.test), "seed": self.seed}
        )

    @classmethod
    def from_json(cls, text: str) -> "SplitSpec":
        obj = json.loads(text)
        return cls(tuple(obj["train"]), tuple(obj["val"]), tuple(obj["test"]),
                   int(obj["seed"]))


@dataclass(frozen=True)
class EdgeSplitSpec(SplitSpec):
    """Edge split (indices into ``graph.edges``) plus sampled non-edge negatives."""

    val_neg: tuple[tuple[int, int], ...] = ()
    test_neg: tuple[tuple[int, int], ...] = ()

    def to_json(self) -> str:
        return json.dumps(
            {"train": list(self.train), "val": list(self.val),
             "test": list(self.test), "seed": self.seed,
             "val_neg": [list(p) for p in self.val_neg],
             "test_neg": [list(p) for p in self.test_neg]}
        )

    @classmethod
    def from_json(cls, text: str) -> "EdgeSplitSpec":
        obj = json.loads(text)
        return cls(
            tuple(obj["train"]), tuple(obj["val"]), tuple(obj["test"]),
            int(obj["seed"]),
            tuple((int(u), int(v)) for u, v in obj.get("val_neg", [])),
            tuple((int(u), int(v)) for u, v in obj.get("test_neg", [])),
        )


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def load_edge_list(path: str | Path, weighted: bool = True,
                   remap_ids: bool = False) -> WeightedGraph:
    """Parse a whitespace-separated edge list (``u v`` or ``u v w`` per line).

    Lines starting with ``#`` and blank lines are skipped.  Missing weights
    default to 1.  Node ids must be dense ``0..n-1`` unless ``remap_ids`` is
    set, in which case arbitrary integer ids are remapped in sorted order.
    """
    path = Path(path)
    raw_edges: list[tuple[int, int, float]] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) not in (2, 3):
                raise EdgeListParseError(
                    f"{path.name}:{lineno}: expected 'u v [w]', got {stripped!r}")
            if len(parts) == 3 and not weighted:
                raise EdgeListParseError(
                    f"{path.name}:{lineno}: weight column present in unweighted mode")
            try:
                u, v = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise EdgeListParseError(f"{path.name}:{lineno}: {exc}") from exc
            raw_edges.append((u, v, w))
    if not raw_edges:
        raise EdgeListParseError(f"{path.name}: no edges found")

    ids = sorted({u for u, _, _ in raw_edges} | {v for _, v, _ in raw_edges})
    if remap_ids:
        remap = {old: new for new, old in enumerate(ids)}
        raw_edges = [(remap[u], remap[v], w) for u, v, w in raw_edges]
        num_nodes = len(ids)
    else:
        if ids[0] < 0:
            raise GraphValidationError("negative node id (use remap_ids for sparse ids)")
        num_nodes = ids[-1] + 1
    return WeightedGraph(num_nodes=num_nodes, edges=tuple(raw_edges))


def save_edge_list(g: WeightedGraph, path: str | Path) -> None:
    """Write edges as ``u v`` (unit weight) or ``u v w`` lines."""
    with Path(path).open("w") as fh:
        for u, v, w in g.edges:
            if w == 1.0:
                fh.write(f"{u} {v}\n")
            else:
                fh.write(f"{u} {v} {w!r}\n")


def load_features_csv(path: str | Path) -> np.ndarray:
    """Load node features from a CSV with header ``node_id,f0,...,fk``."""
    rows = _read_csv_rows(path)
    by_id = {int(r[0]): [float(x) for x in r[1:]] for r in rows}
    n = max(by_id) + 1
    dim = len(next(iter(by_id.values())))
    out = np.zeros((n, dim))
    for i, vals in by_id.items():
        if len(vals) != dim:
            raise EdgeListParseError(f"feature row for node {i} has wrong width")
        out[i] = vals
    return out


def load_labels_csv(path: str | Path) -> np.ndarray:
    """Load node labels from a CSV with header ``node_id,label``."""
    rows = _read_csv_rows(path)
    by_id = {int(r[0]): int(r[1]) for r in rows}
    out = np.zeros(max(by_id) + 1, dtype=np.int64)
    for i, lab in by_id.items():
        out[i] = lab
    return out


def _read_csv_rows(path: str | Path) -> list[list[str]]:
    with Path(path).open() as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if len(lines) < 2:
        raise EdgeListParseError(f"{Path(path).name}: expected header plus data rows")
    return [ln.split(",") for ln in lines[1:]]


# ---------------------------------------------------------------------------
# Path metric
# ---------------------------------------------------------------------------

def shortest_paths(g: WeightedGraph) -> DistanceMatrix:
    """Exact all-pairs shortest-path distances under the weighted path metric.

    Uses breadth-first traversal when all edge weights are equal and
    priority-queue relaxation (Dijkstra) otherwise.  Unreachable pairs get a
    +inf sentinel and a cleared ``reachable`` flag.
    """
    n = g.num_nodes
    adj = g.adjacency
    dist = np.full((n, n), math.inf)
    weights = {w for _, _, w in g.edges}
    uniform = len(weights) <= 1
    w0 = weights.pop() if uniform and weights else 1.0

    for s in range(n):
        row = dist[s]
        if uniform:
            hops = _bfs_hops(adj, s, n)
            finite = hops >= 0
            row[finite] = hops[finite] * w0
        else:
            _dijkstra_into(adj, s, row)
    np.fill_diagonal(dist, 0.0)
    # Mirror the upper triangle so float round-off cannot break symmetry.
    iu = np.triu_indices(n, k=1)
    dist[(iu[1], iu[0])] = dist[iu]
    return DistanceMatrix(d=dist, reachable=np.isfinite(dist))


def _bfs_hops(adj, source: int, n: int) -> np.ndarray:
    hops = np.full(n, -1, dtype=np.int64)
    hops[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v, _ in adj[u]:
            if hops[v] < 0:
                hops[v] = hops[u] + 1
                queue.append(v)
    return hops


def _dijkstra_into(adj, source: int, row: np.ndarray) -> None:
    row[source] = 0.0
    done = [False] * row.shape[0]
    heap: list[tuple[float, int]] = [(0.0, source)]
    while heap:
        du, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for v, w in adj[u]:
            alt = du + w
            if alt < row[v]:
                row[v] = alt
                heapq.heappush(heap, (alt, v))


# ---------------------------------------------------------------------------
# Subgraphs
# ---------------------------------------------------------------------------

def k_hop_subgraph(g: WeightedGraph, v: int, k: int) -> tuple[WeightedGraph, tuple[int, ...]]:
    """Induced subgraph on nodes within ``k`` edge hops of ``v``.

    Hops are counted by edge count even on weighted graphs; weights only shape
    the metric.  Returns the subgraph plus the old-id table indexed by new id.
    """
    if not (0 <= v < g.num_nodes):
        raise GraphValidationError(f"node {v} out of range")
    if k < 0:
        raise GraphValidationError("hop count must be >= 0")
    hops = _bfs_hops(g.adjacency, v, g.num_nodes)
    keep = sorted(int(u) for u in np.nonzero((hops >= 0) & (hops <= k))[0])
    new_id = {old: new for new, old in enumerate(keep)}
    keep_set = set(keep)
    sub_edges = tuple(
        (new_id[u], new_id[w_], wt) for u, w_, wt in g.edges
        if u in keep_set and w_ in keep_set
    )
    feats = g.features[keep] if g.features is not None else None
    labs = g.labels[np.asarray(keep)] if g.labels is not None else None
    sub = WeightedGraph(num_nodes=len(keep), edges=sub_edges,
                        features=feats, labels=labs)
    return sub, tuple(keep)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

def generate_lattice(rows: int, cols: int) -> WeightedGraph:
    """Grid graph with 4-neighbor connectivity and unit weights."""
    if rows < 2 or cols < 2:
        raise GraphValidationError("lattice needs rows >= 2 and cols >= 2")
    edges = []
    for r in range(rows):
        for col in range(cols):
            i = r * cols + col
            if col + 1 < cols:
                edges.append((i, i + 1, 1.0))
            if r + 1 < rows:
                edges.append((i, i + cols, 1.0))
    return WeightedGraph(num_nodes=rows * cols, edges=tuple(edges))


def generate_tree(branching: int, depth: int) -> WeightedGraph:
    """Balanced rooted tree with the given branching factor and depth, unit weights."""
    if branching < 1:
        raise GraphValidationError("branching must be >= 1")
    if depth < 0:
        raise GraphValidationError("depth must be >= 0")
    edges = []
    next_id = 1
    frontier = [0]
    for _ in range(depth):
        new_frontier = []
        for parent in frontier:
            for _ in range(branching):
                edges.append((parent, next_id, 1.0))
                new_frontier.append(next_id)
                next_id += 1
        frontier = new_frontier
    return WeightedGraph(num_nodes=next_id, edges=tuple(edges))


def generate_combined(lattice: WeightedGraph, tree: WeightedGraph,
                      glue: tuple[int, int]) -> WeightedGraph:
    """Disjoint union of two graphs bridged by one unit-weight edge.

    ``glue`` names a lattice node and a tree node (tree ids are offset by the
    lattice size in the result).
    """
    lat_node, tree_node = glue
    if not (0 <= lat_node < lattice.num_nodes):
        raise GraphValidationError(f"glue node {lat_node} not in first graph")
    if not (0 <= tree_node < tree.num_nodes):
        raise GraphValidationError(f"glue node {tree_node} not in second graph")
    off = lattice.num_nodes
    edges = list(lattice.edges)
    edges.extend((u + off, v + off, w) for u, v, w in tree.edges)
    edges.append((lat_node, tree_node + off, 1.0))
    return WeightedGraph(num_nodes=off + tree.num_nodes, edges=tuple(edges))


def reference_combined_graph() -> WeightedGraph:
    """Documented reference construction mixing flat and branching structure.

    A 5x5 unit lattice (nodes 0..24) corner-glued at node 0 to the root of a
    depth-3 binary tree (nodes 25..39): 40 nodes, 55 edges, connected.  All
    synthetic tests and examples use this graph.
    """
    return generate_combined(generate_lattice(5, 5), generate_tree(2, 3), (0, 0))


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _split_counts(total: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    if any(f <= 0 for f in fractions):
        raise SplitError("all fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError("fractions must sum to 1")
    n_train = round(fractions[0] * total)
    n_val = round(fractions[1] * total)
    n_test = total - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise SplitError(
            f"population of {total} too small for fractions {fractions}")
    return n_train, n_val, n_test


def split_nodes(g: WeightedGraph, fractions: tuple[float, float, float],
                seed: int) -> SplitSpec:
    """Seed-deterministic disjoint node split covering all nodes."""
    n_train, n_val, _ = _split_counts(g.num_nodes, fractions)
    perm = np.random.default_rng(seed).permutation(g.num_nodes)
    return SplitSpec(
        train=tuple(int(i) for i in perm[:n_train]),
        val=tuple(int(i) for i in perm[n_train:n_train + n_val]),
        test=tuple(int(i) for i in perm[n_train + n_val:]),
        seed=seed,
    )


def split_edges(g: WeightedGraph, fractions: tuple[float, float, float],
                seed: int) -> EdgeSplitSpec:
    """Seed-deterministic disjoint edge split plus non-edge negatives.

    Negatives for the val/test sets are drawn uniformly from non-edges by
    rejection sampling, one per held-out positive.
    """
    m = g.num_edges
    n_train, n_val, _ = _split_counts(m, fractions)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    val_idx = perm[n_train:n_train + n_val]
    test_idx = perm[n_train + n_val:]
    val_neg = sample_non_edges(g, len(val_idx), rng)
    test_neg = sample_non_edges(g, len(test_idx), rng)
    return EdgeSplitSpec(
        train=tuple(int(i) for i in perm[:n_train]),
        val=tuple(int(i) for i in val_idx),
        test=tuple(int(i) for i in test_idx),
        seed=seed,
        val_neg=val_neg,
        test_neg=test_neg,
    )


def sample_non_edges(g: WeightedGraph, count: int,
                     rng: np.random.Generator) -> tuple[tuple[int, int], ...]:
    """Uniform rejection sample of ``count`` distinct non-edges (u < v)."""
    n = g.num_nodes
    present = {(u, v) for u, v, _ in g.edges}
    max_non = n * (n - 1) // 2 - len(present)
    if count > max_non:
        raise SplitError(f"requested {count} non-edges but only {max_non} exist")
    chosen: set[tuple[int, int]] = set()
    out: list[tuple[int, int]] = []
    while len(out) < count:
        u = int(rng.integers(n))
        v = int(rng.integers(n))
        if u == v:
            continue
        key = (u, v) if u < v else (v, u)
        if key in present or key in chosen:
            continue
        chosen.add(key)
        out.append(key)
    return tuple(out)


def graph_hash(g: WeightedGraph) -> str:
    """Stable content hash of the topology and weights (not features/labels)."""
    h = hashlib.sha256()
    h.update(str(g.num_nodes).encode())
    for u, v, w in g.edges:
        h.update(f"{u},{v},{w!r};".encode())
    return h.hexdigest()[:16]
