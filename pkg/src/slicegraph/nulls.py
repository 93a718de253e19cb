"""The five null families and the shuffle drivers that turn them into NullResults."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Optional, Sequence

import networkx as nx
import numpy as np

from .atlas import BlockAtlas
from .dynamics import TERMINALS, compact, estimate_kernels, mean_family_tv
from .families import FamilyPartition, louvain, run_similarity
from .stats import NullResult, summarize_null

NULL_KINDS = ("degree_rewire", "blocktype_rewire", "family_label_shuffle",
              "temporal_shuffle", "label_permutation")
DEFAULT_SHUFFLES = {"degree_rewire": 3, "blocktype_rewire": 3, "family_label_shuffle": 200,
                    "temporal_shuffle": 200, "label_permutation": 100}


@dataclass(frozen=True)
class NullSpec:
    kind: str
    shuffles: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NULL_KINDS:
            raise ValueError(f"unknown null kind {self.kind!r}")
        if self.shuffles is None:
            object.__setattr__(self, "shuffles", DEFAULT_SHUFFLES[self.kind])

    def rngs(self):
        """One generator per replicate, seeded ``seed + replicate_index``."""
        for i in range(self.shuffles):
            yield np.random.default_rng(self.seed + i)


def degree_preserving_rewire(edges, seed=0, swaps_per_edge: int = 10) -> np.ndarray:
    """Double-edge-swap chain on an ``(E, 2)`` edge array.

    Row ``i`` of the output is the rewired version of input edge ``i``, so
    per-edge attributes can follow their slot. Swaps creating self-loops or
    parallel edges are rejected. If no swap ever succeeds the input is
    returned unchanged with a warning.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = np.asarray(edges, dtype=np.int64).reshape(-1, 2).copy()
    m = out.shape[0]
    if m < 2:
        warnings.warn("fewer than 2 edges; rewire is the identity", RuntimeWarning)
        return out
    present = {(min(u, v), max(u, v)) for u, v in out.tolist()}
    done = 0
    tries = swaps_per_edge * m
    picks = rng.integers(0, m, size=(tries, 2)).tolist()
    flips = (rng.random(tries) < 0.5).tolist()
    rows = out.tolist()
    for (i, j), flip in zip(picks, flips):
        if i == j:
            continue
        a, b = rows[i]
        c, d = rows[j]
        if flip:
            c, d = d, c
        e1, e2 = (min(a, d), max(a, d)), (min(c, b), max(c, b))
        if a == d or c == b or e1 == e2 or e1 in present or e2 in present:
            continue
        present.discard((min(a, b), max(a, b)))
        present.discard((min(c, d), max(c, d)))
        present.update((e1, e2))
        rows[i], rows[j] = list(e1), list(e2)
        done += 1
    out = np.array(rows, dtype=np.int64).reshape(-1, 2)
    if done == 0:
        warnings.warn("no valid double-edge swap found; rewire is the identity", RuntimeWarning)
    return out


def _band(value: float, cuts: Sequence[float]) -> int:
    return int(np.searchsorted(cuts, value, side="right"))


SIZE_CUTS = (6, 12, 24, 48)
COVERAGE_CUTS = (0.1, 0.25, 0.5, 0.75)


def blocktype_strata(atlas: BlockAtlas) -> dict[tuple, list[int]]:
    strata: dict[tuple, list[int]] = {}
    for b in atlas.nontrivial:
        key = (_band(b.size, SIZE_CUTS), _band(b.coverage, COVERAGE_CUTS))
        strata.setdefault(key, []).append(b.block_id)
    return strata


def blocktype_preserving_rewire(atlas: BlockAtlas, seed=0) -> BlockAtlas:
    """Permute non-trivial block roles within (size band, coverage band) strata."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    blocks = list(atlas.blocks)
    for key in sorted(blocktype_strata(atlas)):
        ids = blocktype_strata(atlas)[key]
        roles = [blocks[b].role for b in ids]
        for b, k in zip(ids, rng.permutation(len(ids))):
            blocks[b] = replace(blocks[b], role=roles[k])
    return replace(atlas, blocks=tuple(blocks))


def family_label_shuffle(labels: Mapping[int, int], seed=0) -> dict[int, int]:
    """Reassign family labels across runs, keeping the family-size multiset."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    runs = sorted(labels)
    vals = np.array([labels[r] for r in runs])
    return {r: int(f) for r, f in zip(runs, vals[rng.permutation(len(runs))])}


def temporal_shuffle(sequences: Mapping[int, Sequence[str]], seed=0,
                     recompact: bool = True) -> dict[int, list[str]]:
    """Permute each run's non-terminal states, re-compact, re-append the terminal.

    ``recompact=False`` returns the raw permutation (same draws), whose
    non-terminal state multiset equals the input's.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = {}
    for r in sorted(sequences):
        seq = list(sequences[r])
        term = [s for s in seq if s in TERMINALS]
        body = [s for s in seq if s not in TERMINALS]
        body = [body[k] for k in rng.permutation(len(body))]
        out[r] = (compact(body) if recompact else body) + term
    return out


def label_permutation(labels: Mapping[int, bool], seed=0) -> dict[int, bool]:
    """Permute correctness labels across runs; the count of correct runs is unchanged."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    runs = sorted(labels)
    vals = np.array([bool(labels[r]) for r in runs])
    return {r: bool(y) for r, y in zip(runs, vals[rng.permutation(len(runs))])}


def run_null(real: float, statistic: Callable[[np.random.Generator], Optional[float]],
             spec: NullSpec) -> NullResult:
    """Evaluate ``statistic`` on each replicate generator and summarize against ``real``."""
    return summarize_null(real, [statistic(rng) for rng in spec.rngs()])


def family_tv_null(sequences: Mapping[int, Sequence[str]], labels: Mapping[int, int],
                   alphabet: Sequence[str], spec: NullSpec | None = None,
                   mode: str = "full") -> Optional[NullResult]:
    """Real mean pairwise family-TV against the family-label shuffle null."""
    spec = spec or NullSpec("family_label_shuffle")
    labels = {r: f for r, f in labels.items() if r in sequences}
    if len(set(labels.values())) < 2:
        return None

    def tv(lab):
        groups: dict[int, list] = {}
        for r, f in lab.items():
            groups.setdefault(f, []).append(sequences[r])
        return mean_family_tv(estimate_kernels(groups, alphabet), mode)

    real = tv(labels)
    if real is None:
        return None
    null = [tv(family_label_shuffle(labels, rng)) for rng in spec.rngs()]
    if all(v is None for v in null):
        return None
    return summarize_null(real, null)


def family_graph(partition: FamilyPartition) -> nx.Graph:
    g = nx.Graph()
    runs = partition.runs
    g.add_nodes_from(runs)
    for i, a in enumerate(runs):
        for b in runs[i + 1:]:
            j = run_similarity(partition.footprints[a], partition.footprints[b], partition.weights)
            if j >= partition.tau and j > 0:
                g.add_edge(a, b, weight=j)
    return g


def modularity_null(partition: FamilyPartition, spec: NullSpec | None = None) -> Optional[NullResult]:
    """Modularity of the detected partition against Louvain on degree-rewired family graphs."""
    spec = spec or NullSpec("degree_rewire")
    g = family_graph(partition)
    if g.number_of_edges() < 2:
        return None
    comms = [set(m) for m in partition.families().values()]
    real = nx.community.modularity(g, comms, weight="weight", resolution=partition.resolution)
    nodes = sorted(g.nodes)
    edges = np.array(sorted(g.edges), dtype=np.int64)
    weights = [g.edges[u, v]["weight"] for u, v in edges.tolist()]

    def stat(rng):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            new = degree_preserving_rewire(edges, rng)
        h = nx.Graph()
        h.add_nodes_from(nodes)
        for (u, v), w in zip(new.tolist(), weights):
            h.add_edge(u, v, weight=w)
        found = louvain(h, partition.resolution, partition.seed)
        return nx.community.modularity(h, found, weight="weight", resolution=partition.resolution)

    return run_null(real, stat, spec)
