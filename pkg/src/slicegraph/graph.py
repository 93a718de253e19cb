"""Per-cell SliceGraph: exact set distances, mutual-kNN edges, RBF weights, size cap."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .cache import AggregationConfig, CellCache
from .exceptions import DegenerateCellError, ValidationError

METRICS = ("jaccard", "cosine", "overlap")


def _check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}; expected one of {METRICS}")
    return metric


def _keys_of(x) -> np.ndarray:
    return np.asarray(getattr(x, "keys", x))


def _from_counts(inter, size_a, size_b, metric):
    if metric == "jaccard":
        sim = inter / (size_a + size_b - inter)
    elif metric == "cosine":
        sim = inter / np.sqrt(size_a * size_b)
    else:
        sim = inter / np.minimum(size_a, size_b)
    return np.clip(1.0 - sim, 0.0, 1.0)


def set_distance(a, b, metric: str = "jaccard") -> float:
    """Distance between two non-empty key sets under ``jaccard``, ``cosine`` or ``overlap``."""
    _check_metric(metric)
    ka, kb = _keys_of(a), _keys_of(b)
    if ka.size == 0 or kb.size == 0:
        raise ValidationError("set distance is undefined for an empty key set")
    inter = float(np.intersect1d(ka, kb, assume_unique=True).size)
    return float(_from_counts(inter, float(ka.size), float(kb.size), metric))


def _incidence(keysets: Sequence[np.ndarray]):
    lens = np.fromiter((k.size for k in keysets), dtype=np.int64, count=len(keysets))
    flat = np.concatenate(keysets) if len(keysets) else np.zeros(0, np.uint32)
    vocab, cols = np.unique(flat, return_inverse=True)
    indptr = np.concatenate([[0], np.cumsum(lens)])
    mat = sp.csr_matrix((np.ones(flat.size, np.float32), cols.reshape(-1), indptr),
                        shape=(len(keysets), vocab.size))
    return mat, lens.astype(np.float64)


def pairwise_distances(keysets: Sequence, metric: str = "jaccard") -> np.ndarray:
    """Dense exact distance matrix between key sets (zero diagonal)."""
    _check_metric(metric)
    mat, sizes = _incidence([_keys_of(k) for k in keysets])
    inter = (mat @ mat.T).toarray().astype(np.float64)
    dist = _from_counts(inter, sizes[:, None], sizes[None, :], metric)
    np.fill_diagonal(dist, 0.0)
    return dist


def cross_distances(queries: Sequence, refs: Sequence, metric: str = "jaccard") -> np.ndarray:
    """Distances from each query set (rows) to each reference set (columns)."""
    _check_metric(metric)
    queries = [_keys_of(k) for k in queries]
    mat, sizes = _incidence(queries + [_keys_of(k) for k in refs])
    nq = len(queries)
    inter = (mat[:nq] @ mat[nq:].T).toarray().astype(np.float64)
    return _from_counts(inter, sizes[:nq, None], sizes[None, nq:], metric)


def rbf_weight(distance, sigma: float):
    return np.exp(-np.square(np.asarray(distance, dtype=np.float64) / sigma))


def knn_mask(dist: np.ndarray, k: int) -> np.ndarray:
    """Boolean matrix: ``mask[i, j]`` iff j is among i's k nearest (ties to smaller index)."""
    n = dist.shape[0]
    k = min(k, n - 1)
    if k <= 0:
        return np.zeros((n, n), dtype=bool)
    d = dist.astype(np.float64, copy=True)
    np.fill_diagonal(d, np.inf)
    kth = np.partition(d, k - 1, axis=1)[:, k - 1:k]
    less = d < kth
    tied = d == kth
    need = k - less.sum(axis=1, keepdims=True)
    return less | (tied & (np.cumsum(tied, axis=1) <= need))


def _largest_remainder(total: int, sizes: np.ndarray, tie_order: np.ndarray) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.int64)
    denom = int(sizes.sum())
    num = total * sizes
    base = num // denom
    rem = num % denom
    left = total - int(base.sum())
    order = np.lexsort((tie_order, -rem))
    base[order[:left]] += 1
    return base


def cap_slices(cell: CellCache, size_cap: int | None = None, seed: int = 0) -> list[tuple[int, int]]:
    """Stratified subsample of a cell's slices, returned as sorted ``(run_id, slice_index)``.

    Strata are (run, position decile). The cap is split across runs and then
    across each run's deciles by largest-remainder rounding (remainder ties
    broken by a seeded order); members are drawn by a seeded shuffle.
    """
    size_cap = cell.config.size_cap if size_cap is None else int(size_cap)
    if size_cap < 1:
        raise ValidationError("size_cap must be >= 1")
    nodes = [(r.run_id, s.slice_index) for r in cell.runs for s in r.slices]
    if len(nodes) <= size_cap:
        return nodes
    rng = np.random.default_rng(seed)
    run_sizes = np.array([len(r) for r in cell.runs])
    per_run = _largest_remainder(size_cap, run_sizes, rng.permutation(len(run_sizes)))
    if size_cap >= len(run_sizes):
        while np.any(per_run == 0):
            donor = int(np.argmax(per_run))
            per_run[donor] -= 1
            per_run[int(np.flatnonzero(per_run == 0)[0])] += 1
    kept = []
    for r, quota in zip(cell.runs, per_run):
        length = len(r)
        deciles = (10 * np.arange(length)) // length
        strata = [np.flatnonzero(deciles == d) for d in range(10)]
        sizes = np.array([s.size for s in strata])
        alloc = _largest_remainder(int(quota), sizes, rng.permutation(10))
        for members, q in zip(strata, alloc):
            if q:
                chosen = rng.permutation(members)[:q]
                kept.extend((r.run_id, int(i)) for i in chosen)
    return sorted(kept)


@dataclass(frozen=True, eq=False)
class SliceGraph:
    """Undirected mutual-kNN graph over ``(run_id, slice_index)`` nodes.

    ``edges`` is an ``(E, 2)`` array of node indices with ``u < v``, sorted.
    """

    nodes: tuple
    edges: np.ndarray
    distances: np.ndarray
    weights: np.ndarray
    metric: str
    config: AggregationConfig
    seed: int = 0
    keysets: tuple = field(default=(), repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def index(self) -> dict:
        return {node: i for i, node in enumerate(self.nodes)}

    def degrees(self) -> np.ndarray:
        return np.bincount(self.edges.reshape(-1), minlength=self.n_nodes)

    def adjacency(self) -> list[list[int]]:
        adj = [[] for _ in range(self.n_nodes)]
        for u, v in self.edges.tolist():
            adj[u].append(v)
            adj[v].append(u)
        for nbrs in adj:
            nbrs.sort()
        return adj

    def edge_set(self) -> set:
        return {(int(u), int(v)) for u, v in self.edges}

    def to_networkx(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        for (u, v), d, w in zip(self.edges.tolist(), self.distances, self.weights):
            g.add_edge(u, v, distance=float(d), weight=float(w))
        return g

    def config_hash(self) -> str:
        payload = json.dumps({"config": self.config.to_dict(), "metric": self.metric,
                              "seed": self.seed}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "config": self.config.to_dict(),
            "config_hash": self.config_hash(),
            "nodes": [{"id": i, "run_id": r, "slice_index": t}
                      for i, (r, t) in enumerate(self.nodes)],
            "edges": [{"source": int(u), "target": int(v), "distance": float(d), "weight": float(w)}
                      for (u, v), d, w in zip(self.edges.tolist(), self.distances, self.weights)],
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path

    def to_dot(self, path=None) -> str:
        lines = ["graph slicegraph {"]
        for i, (r, t) in enumerate(self.nodes):
            lines.append(f'  n{i} [label="r{r}:{t}"];')
        for (u, v), w in zip(self.edges.tolist(), self.weights):
            lines.append(f"  n{u} -- n{v} [weight={w:.6f}];")
        lines.append("}")
        text = "\n".join(lines) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def build_graph(cell: CellCache, config: AggregationConfig | None = None,
                metric: str = "jaccard", seed: int = 0) -> SliceGraph:
    """Cap the cell's slices, then connect mutual k-nearest neighbours."""
    _check_metric(metric)
    config = config or cell.config
    nodes = cap_slices(cell, config.size_cap, seed)
    if len(nodes) < 2:
        raise DegenerateCellError(f"cell {cell.cell_id} has {len(nodes)} slice(s); need >= 2")
    lookup = {r.run_id: r for r in cell.runs}
    keysets = tuple(lookup[r].slices[t].keys for r, t in nodes)
    dist = pairwise_distances(keysets, metric)
    cand = knn_mask(dist, config.k_neighbors)
    mutual = np.triu(cand & cand.T, k=1)
    u, v = np.nonzero(mutual)
    d = dist[u, v]
    return SliceGraph(
        nodes=tuple(nodes),
        edges=np.stack([u, v], axis=1).astype(np.int64),
        distances=d,
        weights=rbf_weight(d, config.sigma),
        metric=metric,
        config=config,
        seed=seed,
        keysets=keysets,
    )
