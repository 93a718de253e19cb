"""Biconnected-component atlas of a SliceGraph: blocks, articulation points, roles."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cache import CellCache
from .graph import SliceGraph

ROLES = ("shared_trunk", "answer_basin", "weak_basin", "decision_point", "intermediate")


@dataclass(frozen=True)
class RoleThresholds:
    trunk_coverage: float = 0.4
    min_region_size: int = 6
    q_trunk: float = 0.5
    q_basin: float = 0.5
    basin_purity: float = 0.6
    basin_min_runs: int = 3
    decision_max_size: int = 5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data) -> "RoleThresholds":
        return cls(**{k: v for k, v in data.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class Block:
    block_id: int
    nodes: tuple
    is_trivial: bool
    has_articulation: bool = False
    coverage: float = 0.0
    purity: float = 0.0
    n_runs: int = 0
    medpos: float = 0.0
    min_position: float = 0.0
    role: Optional[str] = None

    @property
    def size(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class BlockAtlas:
    nodes: tuple
    blocks: tuple
    articulation_points: frozenset
    block_cut_edges: tuple = ()
    primary_block: dict = field(default_factory=dict)

    @property
    def nontrivial(self) -> list[Block]:
        return [b for b in self.blocks if not b.is_trivial]

    def block(self, block_id: int) -> Block:
        return self.blocks[block_id]

    def node_blocks(self) -> list[list[int]]:
        """Block ids containing each node index."""
        out = [[] for _ in self.nodes]
        for b in self.blocks:
            for v in b.nodes:
                out[v].append(b.block_id)
        return out

    def role_counts(self) -> Counter:
        return Counter(b.role for b in self.blocks if b.role is not None)

    def primary_paths(self) -> dict[int, list[int]]:
        """Per-run primary block ids in slice order, skipping uncovered slices."""
        paths = defaultdict(list)
        for node in self.nodes:
            b = self.primary_block.get(node)
            if b is not None:
                paths[node[0]].append(b)
        return dict(paths)

    def compacted_paths(self) -> dict[int, list[int]]:
        return {r: _compact(p) for r, p in self.primary_paths().items()}

    def to_dict(self) -> dict:
        return {
            "blocks": [
                {"id": b.block_id, "size": b.size, "trivial": b.is_trivial, "role": b.role,
                 "coverage": b.coverage, "purity": b.purity, "n_runs": b.n_runs,
                 "medpos": b.medpos,
                 "members": [list(self.nodes[v]) for v in b.nodes]}
                for b in self.blocks
            ],
            "articulation_points": sorted(list(self.nodes[v]) for v in self.articulation_points),
            "block_cut_edges": [list(e) for e in self.block_cut_edges],
            "primary_block": [
                {"run_id": r, "slice_index": t, "block": self.primary_block.get((r, t))}
                for r, t in self.nodes
            ],
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path


def _compact(seq: Sequence) -> list:
    out = []
    for x in seq:
        if not out or out[-1] != x:
            out.append(x)
    return out


def biconnected_components(adj: Sequence[Sequence[int]]):
    """Blocks (as node frozensets) and articulation points of a simple undirected graph.

    Iterative lowpoint DFS with an edge stack, run from every unvisited node so
    each connected component is decomposed. Isolated nodes belong to no block.
    """
    n = len(adj)
    disc = [-1] * n
    low = [0] * n
    clock = 0
    blocks, articulation = [], set()
    for root in range(n):
        if disc[root] != -1 or not adj[root]:
            continue
        disc[root] = low[root] = clock
        clock += 1
        stack = [(root, -1, iter(adj[root]))]
        edges = []
        root_children = 0
        while stack:
            u, parent, it = stack[-1]
            descended = False
            for v in it:
                if v == parent:
                    continue
                if disc[v] == -1:
                    disc[v] = low[v] = clock
                    clock += 1
                    edges.append((u, v))
                    stack.append((v, u, iter(adj[v])))
                    descended = True
                    break
                if disc[v] < disc[u]:
                    low[u] = min(low[u], disc[v])
                    edges.append((u, v))
            if descended:
                continue
            stack.pop()
            if not stack:
                break
            p = stack[-1][0]
            low[p] = min(low[p], low[u])
            if low[u] >= disc[p]:
                comp = set()
                while True:
                    e = edges.pop()
                    comp.update(e)
                    if e == (p, u):
                        break
                blocks.append(frozenset(comp))
                if stack[-1][1] == -1:
                    root_children += 1
                else:
                    articulation.add(p)
        if root_children > 1:
            articulation.add(root)
    return blocks, articulation


def decompose(graph: SliceGraph) -> BlockAtlas:
    """Split the graph into blocks; K2 bridges are flagged trivial."""
    comps, art = biconnected_components(graph.adjacency())
    comps = sorted(tuple(sorted(c)) for c in comps)
    blocks = tuple(
        Block(block_id=i, nodes=c, is_trivial=len(c) < 3,
              has_articulation=any(v in art for v in c))
        for i, c in enumerate(comps)
    )
    holders = defaultdict(list)
    for b in blocks:
        if not b.is_trivial:
            for v in b.nodes:
                if v in art:
                    holders[v].append(b.block_id)
    bc_edges = set()
    for ids in holders.values():
        bc_edges.update(combinations(sorted(ids), 2))
    return BlockAtlas(
        nodes=tuple(graph.nodes),
        blocks=blocks,
        articulation_points=frozenset(art),
        block_cut_edges=tuple(sorted(bc_edges)),
    )


def slice_position(slice_index: int, run_length: int) -> float:
    return slice_index / max(1, run_length - 1)


def _modal_purity(answers: list[str]) -> float:
    if not answers:
        return 0.0
    counts = Counter(answers)
    top = max(counts.values())
    modal = min(a for a, c in counts.items() if c == top)
    return counts[modal] / len(answers)


def compute_block_stats(atlas: BlockAtlas, cell: CellCache) -> BlockAtlas:
    runs = {r.run_id: r for r in cell.runs}
    pos = [slice_position(t, len(runs[r])) for r, t in atlas.nodes]
    n_cell = max(cell.n_runs, 1)
    blocks = []
    for b in atlas.blocks:
        visitors = sorted({atlas.nodes[v][0] for v in b.nodes})
        positions = [pos[v] for v in b.nodes]
        blocks.append(replace(
            b,
            coverage=len(visitors) / n_cell,
            purity=_modal_purity([runs[r].answer_class for r in visitors]),
            n_runs=len(visitors),
            medpos=float(np.median(positions)),
            min_position=float(min(positions)),
        ))
    return replace(atlas, blocks=tuple(blocks))


def role_of(block: Block, th: RoleThresholds) -> str:
    """First matching clause wins: trunk, answer basin, weak basin, decision point."""
    big = block.size >= th.min_region_size
    if block.coverage > th.trunk_coverage and big and block.medpos <= th.q_trunk:
        return "shared_trunk"
    if big and block.medpos > th.q_basin:
        if block.purity >= th.basin_purity and block.n_runs >= th.basin_min_runs:
            return "answer_basin"
        return "weak_basin"
    if block.size <= th.decision_max_size and block.has_articulation:
        return "decision_point"
    return "intermediate"


def assign_roles(atlas: BlockAtlas, cell: CellCache,
                 thresholds: RoleThresholds | None = None) -> BlockAtlas:
    thresholds = thresholds or RoleThresholds()
    atlas = compute_block_stats(atlas, cell)
    blocks = tuple(
        replace(b, role=None if b.is_trivial else role_of(b, thresholds))
        for b in atlas.blocks
    )
    return replace(atlas, blocks=blocks)


def resolve_primary_blocks(atlas: BlockAtlas, cell: CellCache | None = None) -> dict:
    """Map each node ``(run_id, slice_index)`` to its primary non-trivial block or ``None``.

    Tie chain: larger size, more unique runs, earlier first position, smaller id.
    """
    membership = atlas.node_blocks()
    primary = {}
    for v, node in enumerate(atlas.nodes):
        cands = [atlas.blocks[b] for b in membership[v] if not atlas.blocks[b].is_trivial]
        if not cands:
            primary[node] = None
            continue
        best = min(cands, key=lambda b: (-b.size, -b.n_runs, b.min_position, b.block_id))
        primary[node] = best.block_id
    return primary


def build_atlas(graph: SliceGraph, cell: CellCache,
                thresholds: RoleThresholds | None = None) -> BlockAtlas:
    atlas = assign_roles(decompose(graph), cell, thresholds)
    return replace(atlas, primary_block=resolve_primary_blocks(atlas, cell))
