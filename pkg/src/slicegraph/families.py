"""Correct-run process families from weighted-Jaccard block co-visitation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from .atlas import BlockAtlas
from .cache import CellCache

WEIGHT_FLOOR = 0.01


def footprints(atlas: BlockAtlas, include_bridges: bool = False) -> dict[int, frozenset]:
    """Set of blocks each run visits over all its graph slices (repeat visits collapse)."""
    visits: dict[int, set] = {}
    membership = atlas.node_blocks()
    for v, (run_id, _) in enumerate(atlas.nodes):
        acc = visits.setdefault(run_id, set())
        for b in membership[v]:
            if include_bridges or not atlas.blocks[b].is_trivial:
                acc.add(b)
    return {r: frozenset(s) for r, s in visits.items()}


def block_weights(atlas: BlockAtlas, prints: Mapping[int, frozenset] | None = None,
                  runs: Iterable[int] | None = None, include_bridges: bool = False) -> dict[int, float]:
    """Rare-block upweighting ``1 / max(coverage, 0.01)``.

    Coverage is the fraction of ``runs`` (default: every run in the atlas)
    whose footprint contains the block.
    """
    prints = footprints(atlas, include_bridges) if prints is None else prints
    runs = sorted(prints) if runs is None else sorted(runs)
    n = max(len(runs), 1)
    counts = {b.block_id: 0 for b in atlas.blocks}
    for r in runs:
        for b in prints.get(r, ()):
            counts[b] += 1
    return {b: 1.0 / max(c / n, WEIGHT_FLOOR) for b, c in counts.items()}


def run_similarity(a: Iterable, b: Iterable, weights: Mapping) -> float:
    """Weighted Jaccard of two block footprints; 0 when both are empty."""
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    den = sum(weights[x] for x in union)
    return sum(weights[x] for x in a & b) / den


def louvain(graph: nx.Graph, resolution: float, seed: int) -> list[set]:
    return nx.community.louvain_communities(graph, weight="weight", resolution=resolution, seed=seed)


@dataclass(frozen=True)
class FamilyPartition:
    labels: dict
    weights: dict = field(repr=False, default_factory=dict)
    tau: float = 0.05
    resolution: float = 1.0
    seed: int = 42
    footprints: dict = field(repr=False, default_factory=dict)
    excluded: tuple = ()

    @property
    def runs(self) -> list[int]:
        return sorted(self.labels)

    @property
    def family_count(self) -> int:
        return len(set(self.labels.values()))

    @property
    def multi_family(self) -> bool:
        return self.family_count >= 2

    def families(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for r in self.runs:
            out.setdefault(self.labels[r], []).append(r)
        return out

    def block_sets(self) -> dict[int, frozenset]:
        """Union of visited blocks per family."""
        return {f: frozenset().union(*(self.footprints[r] for r in members))
                for f, members in self.families().items()}

    def to_rows(self) -> list[dict]:
        return [{"run_id": r, "family": self.labels[r]} for r in self.runs]


def partition_runs(prints: Mapping[int, frozenset], weights: Mapping[int, float],
                   tau: float = 0.05, resolution: float = 1.0, seed: int = 42,
                   clusterer: Callable | None = None) -> FamilyPartition:
    """Cluster runs whose footprints are non-empty; edges need similarity >= tau."""
    clusterer = clusterer or louvain
    runs = sorted(r for r, s in prints.items() if s)
    excluded = tuple(sorted(r for r, s in prints.items() if not s))
    g = nx.Graph()
    g.add_nodes_from(runs)
    for a, b in combinations(runs, 2):
        j = run_similarity(prints[a], prints[b], weights)
        if j >= tau and j > 0:
            g.add_edge(a, b, weight=j)
    comms = clusterer(g, resolution, seed) if runs else []
    comms = sorted((sorted(c) for c in comms), key=lambda c: c[0])
    labels = {r: f for f, members in enumerate(comms) for r in members}
    return FamilyPartition(labels, dict(weights), tau, resolution, seed,
                           {r: prints[r] for r in runs}, excluded)


def detect_families(cell: CellCache, atlas: BlockAtlas, tau: float = 0.05,
                    resolution: float = 1.0, seed: int = 42, include_bridges: bool = False,
                    weight_source: str = "full", runs: Iterable[int] | None = None,
                    labels: Mapping[int, bool] | None = None,
                    clusterer: Callable | None = None) -> FamilyPartition:
    """Louvain families over the cell's correct runs (optionally a subset of them).

    Block weights come from the full cell's coverage (``weight_source="full"``)
    or from correct runs only (``"correct"``); either way only the weights
    change, never the footprints.
    """
    labels = cell.labels() if labels is None else dict(labels)
    prints = footprints(atlas, include_bridges)
    all_runs = [r.run_id for r in cell.runs]
    if weight_source == "full":
        weights = block_weights(atlas, prints, all_runs, include_bridges)
    elif weight_source == "correct":
        weights = block_weights(atlas, prints, [r for r in all_runs if labels.get(r)], include_bridges)
    else:
        raise ValueError(f"weight_source must be 'full' or 'correct', got {weight_source!r}")
    pool = [r for r in all_runs if labels.get(r)]
    if runs is not None:
        keep = set(runs)
        pool = [r for r in pool if r in keep]
    chosen = {r: prints.get(r, frozenset()) for r in pool}
    return partition_runs(chosen, weights, tau, resolution, seed, clusterer)


def isomer_pairs(partition: FamilyPartition,
                 answers: Mapping[int, str] | None = None) -> tuple[int, int]:
    """(# cross-family pairs, # pairs) over unordered same-answer run pairs."""
    cross = total = 0
    for a, b in combinations(partition.runs, 2):
        if answers is not None and answers.get(a) != answers.get(b):
            continue
        total += 1
        cross += partition.labels[a] != partition.labels[b]
    return cross, total


def isomer_rate(partition: FamilyPartition, answers: Mapping[int, str] | None = None) -> Optional[float]:
    cross, total = isomer_pairs(partition, answers)
    return cross / total if total else None


@dataclass(frozen=True)
class IsomerStats:
    isomer_rate: Optional[float]
    multi_family_rate: Optional[float]
    mean_family_count: Optional[float]
    n_eligible: int
    per_cell: tuple

    def to_dict(self) -> dict:
        return {
            "isomer_rate": self.isomer_rate,
            "multi_family_rate": self.multi_family_rate,
            "mean_family_count": self.mean_family_count,
            "n_eligible": self.n_eligible,
            "per_cell": [list(p) for p in self.per_cell],
        }


def isomer_stats(partitions: Sequence[FamilyPartition]) -> IsomerStats:
    """Cell-averaged pairwise isomer rate over cells with >= 2 partitioned runs."""
    per_cell, rates, counts, multi = [], [], [], []
    for p in partitions:
        if not p.labels:
            continue
        counts.append(p.family_count)
        multi.append(p.multi_family)
        cross, total = isomer_pairs(p)
        if total:
            per_cell.append((cross, total))
            rates.append(cross / total)
    return IsomerStats(
        isomer_rate=float(np.mean(rates)) if rates else None,
        multi_family_rate=float(np.mean(multi)) if multi else None,
        mean_family_count=float(np.mean(counts)) if counts else None,
        n_eligible=len(rates),
        per_cell=tuple(per_cell),
    )


def write_family_csv(partition: FamilyPartition, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["run_id", "family"])
        w.writeheader()
        w.writerows(partition.to_rows())
    return path


def family_summary(partition: FamilyPartition) -> dict:
    rate = isomer_rate(partition)
    return {
        "family_count": partition.family_count,
        "multi_family": partition.multi_family,
        "isomer_rate": rate,
        "n_partitioned_runs": len(partition.labels),
        "excluded_empty_footprint": list(partition.excluded),
        "isomer_eligible": rate is not None,
    }


def write_family_summary(partition: FamilyPartition, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(family_summary(partition), sort_keys=True), encoding="utf-8")
    return path
