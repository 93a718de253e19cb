"""Builders for hand-made cells, graphs, atlases and partitions."""
from __future__ import annotations

import numpy as np

from slicegraph.atlas import Block, BlockAtlas, decompose
from slicegraph.cache import AggregationConfig, CellCache
from slicegraph.families import FamilyPartition
from slicegraph.graph import SliceGraph


def make_cell(run_slices, correct=None, problem_id="p", model_id="m", config=None):
    """``run_slices``: list (one per run) of lists of key iterables."""
    correct = correct or [True] * len(run_slices)
    raw = [{"run_id": r, "slices": [np.asarray(k) for k in sl], "correct": bool(c),
            "answer_class": "A" if c else "B"}
           for r, (sl, c) in enumerate(zip(run_slices, correct))]
    return CellCache.from_runs(problem_id, model_id, raw, config)


def graph_from_edges(nodes, edges, config=None):
    edges = np.array(sorted(tuple(sorted(e)) for e in edges), dtype=np.int64).reshape(-1, 2)
    d = np.zeros(len(edges))
    return SliceGraph(tuple(nodes), edges, d, np.ones(len(edges)), "jaccard",
                      config or AggregationConfig())


def atlas_from_edges(n, edges):
    nodes = [(0, i) for i in range(n)]
    return decompose(graph_from_edges(nodes, edges))


def atlas_from_blocks(nodes, blocks, primary=None, block_cut_edges=(), roles=None):
    """Hand-made atlas: ``blocks`` are node-index tuples, all non-trivial unless size 2."""
    bl = []
    for i, members in enumerate(blocks):
        bl.append(Block(i, tuple(members), len(members) < 3,
                        role=None if len(members) < 3 else (roles[i] if roles else "intermediate")))
    if primary is None:
        primary = {}
        for v, node in enumerate(nodes):
            owners = [b for b in bl if not b.is_trivial and v in b.nodes]
            primary[node] = owners[0].block_id if owners else None
    return BlockAtlas(tuple(nodes), tuple(bl), frozenset(), tuple(block_cut_edges), primary)


def partition_from(labels, prints, weights=None):
    weights = weights or {b: 1.0 for s in prints.values() for b in s}
    return FamilyPartition(dict(labels), weights, footprints={r: frozenset(s) for r, s in prints.items()})
