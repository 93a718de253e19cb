"""Label-seeded reward field over non-trivial blocks and its alignment readouts."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components
import scipy.sparse as sp

from .atlas import BlockAtlas, _compact
from .families import FamilyPartition, isomer_rate

ALPHA = 0.65
STEPS = 24
CORE_QUANTILE = 75.0


def graph_valid_paths(atlas: BlockAtlas) -> dict[int, list[int]]:
    """Primary-block paths of runs that visit at least one non-trivial block."""
    return {r: p for r, p in atlas.primary_paths().items() if p}


def visitors(atlas: BlockAtlas) -> dict[int, set]:
    """Runs whose primary-block path passes through each non-trivial block."""
    out = {b.block_id: set() for b in atlas.nontrivial}
    for r, path in graph_valid_paths(atlas).items():
        for b in path:
            out[b].add(r)
    return out


def compute_seed(atlas: BlockAtlas, labels: Mapping[int, bool],
                 leave_one_out: Optional[int] = None) -> np.ndarray:
    """Support-shrunk excess success rate per non-trivial block (ordered by block id).

    ``n`` counts graph-valid runs; a block's seed is zero unless
    ``3 <= n_b <= n - 3``. ``leave_one_out`` drops one run from every count.
    """
    runs = sorted(graph_valid_paths(atlas))
    if leave_one_out is not None:
        runs = [r for r in runs if r != leave_one_out]
    keep = set(runs)
    n = len(runs)
    y = {r: float(bool(labels.get(r, False))) for r in runs}
    base = sum(y.values()) / n if n else 0.0
    vis = visitors(atlas)
    seed = np.zeros(len(vis))
    for i, b in enumerate(sorted(vis)):
        members = vis[b] & keep
        nb = len(members)
        if 3 <= nb <= n - 3:
            seed[i] = (sum(y[r] for r in members) / nb - base) * np.sqrt(nb / n)
    return seed


def diffusion_edges(atlas: BlockAtlas) -> tuple[tuple, frozenset]:
    """Non-trivial block ids and the undirected edge set E_BC | E_temp over their positions."""
    ids = tuple(b.block_id for b in atlas.nontrivial)
    pos = {b: i for i, b in enumerate(ids)}
    edges = set()
    for a, b in atlas.block_cut_edges:
        if a in pos and b in pos and a != b:
            edges.add((min(pos[a], pos[b]), max(pos[a], pos[b])))
    for path in atlas.primary_paths().values():
        path = _compact(path)
        for a, b in zip(path, path[1:]):
            edges.add((min(pos[a], pos[b]), max(pos[a], pos[b])))
    return ids, frozenset(edges)


def row_normalize(n: int, edges) -> np.ndarray:
    a = np.eye(n)
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    return a / a.sum(axis=1, keepdims=True)


def build_diffusion_adjacency(atlas: BlockAtlas) -> np.ndarray:
    """Row-stochastic ``P`` from self-loops plus binarized block-cut and temporal edges."""
    ids, edges = diffusion_edges(atlas)
    return row_normalize(len(ids), edges)


def diffuse_raw(seed: np.ndarray, P: np.ndarray, alpha: float = ALPHA, steps: int = STEPS) -> np.ndarray:
    seed = np.asarray(seed, dtype=np.float64)
    v = seed.copy()
    for _ in range(steps):
        v = alpha * seed + (1.0 - alpha) * (P @ v)
    return v


def linf_normalize(v: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(v)) if v.size else 0.0
    return v / scale if scale > 0 else v.copy()


def diffuse(seed: np.ndarray, P: np.ndarray, alpha: float = ALPHA, steps: int = STEPS) -> np.ndarray:
    """``steps`` damped iterations from ``v = seed``, then l-infinity rescaling."""
    return linf_normalize(diffuse_raw(seed, P, alpha, steps))


@dataclass(frozen=True, eq=False)
class RewardField:
    block_ids: tuple
    seed: np.ndarray
    raw: np.ndarray
    values: np.ndarray
    P: np.ndarray = field(repr=False)
    edges: frozenset = field(repr=False, default=frozenset())
    alpha: float = ALPHA
    steps: int = STEPS

    def as_dict(self) -> dict[int, float]:
        return {b: float(v) for b, v in zip(self.block_ids, self.values)}


def reward_field(atlas: BlockAtlas, labels: Mapping[int, bool], alpha: float = ALPHA,
                 steps: int = STEPS, leave_one_out: Optional[int] = None) -> RewardField:
    ids, edges = diffusion_edges(atlas)
    P = row_normalize(len(ids), edges)
    seed = compute_seed(atlas, labels, leave_one_out)
    raw = diffuse_raw(seed, P, alpha, steps)
    return RewardField(ids, seed, raw, linf_normalize(raw), P, edges, alpha, steps)


@dataclass(frozen=True)
class HighValueCore:
    blocks: tuple
    components: tuple
    threshold: Optional[float]

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def multi_core(self) -> bool:
        return self.n_components >= 2

    @property
    def size_ratio(self) -> Optional[float]:
        if self.n_components < 2:
            return None
        return len(self.components[1]) / len(self.components[0])

    def component_of(self) -> dict[int, int]:
        return {b: k for k, comp in enumerate(self.components) for b in comp}


def extract_cores(values, block_ids, edges, quantile: float = CORE_QUANTILE) -> HighValueCore:
    """Top quantile of the strictly positive field and its connected components.

    ``edges`` are position pairs over ``block_ids``. Components are ordered
    by size (descending), then smallest block id.
    """
    values = np.asarray(values, dtype=np.float64)
    pos = values[values > 0]
    if pos.size == 0:
        return HighValueCore((), (), None)
    thr = float(np.percentile(pos, quantile))
    mask = (values > 0) & (values >= thr)
    idx = np.flatnonzero(mask)
    local = {int(i): k for k, i in enumerate(idx)}
    rows, cols = [], []
    for i, j in edges:
        if i in local and j in local:
            rows.append(local[i])
            cols.append(local[j])
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(idx.size, idx.size))
    _, comp = connected_components(adj, directed=False)
    groups: dict[int, list] = {}
    for i, c in zip(idx, comp):
        groups.setdefault(int(c), []).append(block_ids[int(i)])
    comps = sorted((tuple(sorted(g)) for g in groups.values()), key=lambda g: (-len(g), g[0]))
    return HighValueCore(tuple(sorted(block_ids[int(i)] for i in idx)), tuple(comps), thr)


def field_cores(fld: RewardField, quantile: float = CORE_QUANTILE) -> HighValueCore:
    return extract_cores(fld.values, fld.block_ids, fld.edges, quantile)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def specialization(partition: FamilyPartition, core: HighValueCore) -> Optional[float]:
    """``1 - mean_f H(p_f) / log K`` over families touching the core; ``None`` if K < 2."""
    K = core.n_components
    if K < 2:
        return None
    ents = []
    for blocks in partition.block_sets().values():
        m = np.array([len(blocks & set(c)) / len(c) for c in core.components])
        if m.sum() > 0:
            ents.append(_entropy(m / m.sum()) / np.log(K))
    if not ents:
        return None
    return float(1.0 - np.mean(ents))


def conditioned_labels(labels: Mapping[int, bool], members) -> dict[int, bool]:
    keep = set(members)
    return {r: bool(y) and r in keep for r, y in labels.items()}


def field_sharpness(atlas: BlockAtlas, labels: Mapping[int, bool], members,
                    pooled: RewardField | None = None, alpha: float = ALPHA,
                    steps: int = STEPS) -> dict:
    """Family-conditioned over pooled field maximum, on raw and l-inf-normalized fields.

    Either ratio is ``None`` when the pooled maximum is not positive.
    """
    pooled = pooled or reward_field(atlas, labels, alpha, steps)
    fam = reward_field(atlas, conditioned_labels(labels, members), alpha, steps)
    out = {}
    for name, a, b in (("raw", fam.raw, pooled.raw), ("normalized", fam.values, pooled.values)):
        top = float(b.max()) if b.size else 0.0
        out[name] = float(a.max()) / top if top > 0 else None
    return out


def coverage_loss(partition: FamilyPartition) -> Optional[dict]:
    """Share of the family-union block set that only one family covers, maximised over families."""
    sets = partition.block_sets()
    if len(sets) < 2:
        return None
    union = frozenset().union(*sets.values())
    if not union:
        return None
    shares = {}
    for f in sets:
        rest = frozenset().union(*(s for g, s in sets.items() if g != f))
        shares[f] = len(union - rest) / len(union)
    critical = min(shares, key=lambda f: (-shares[f], f))
    return {"delta_max": shares[critical], "critical_family": critical,
            "shares": shares, "above_0.10": shares[critical] > 0.10}


def core_divergence(partition: FamilyPartition, core: HighValueCore) -> dict:
    """Pairwise core-divergence among correct runs with at least one core visit."""
    comp = core.component_of()
    visited = {r: {comp[b] for b in partition.footprints[r] if b in comp} for r in partition.runs}
    runs = [r for r in partition.runs if visited[r]]
    div = either = 0
    pairs = list(combinations(runs, 2))
    for a, b in pairs:
        d = not (visited[a] & visited[b])
        div += d
        either += d or partition.labels[a] != partition.labels[b]
    n = len(pairs)
    iso = isomer_rate(partition)
    rate_either = either / n if n else None
    return {
        "n_eligible_pairs": n,
        "divergent_rate": div / n if n else None,
        "divergent_or_isomeric_rate": rate_either,
        "isomer_rate": iso,
        "uplift": rate_either - iso if n and iso is not None else None,
    }


@dataclass(frozen=True)
class EligibilityFlags:
    reward_evaluable: bool
    core_eligible_multi_family: bool
    reasons: tuple = ()

    def to_dict(self) -> dict:
        return {"reward_evaluable": self.reward_evaluable,
                "core_eligible_multi_family": self.core_eligible_multi_family,
                "reasons": list(self.reasons)}


def eligibility(atlas: BlockAtlas, labels: Mapping[int, bool], fld: RewardField,
                partition: FamilyPartition | None = None) -> EligibilityFlags:
    paths = graph_valid_paths(atlas)
    n_correct = sum(bool(labels.get(r)) for r in paths)
    reasons = []
    if n_correct < 3:
        reasons.append("fewer than 3 correct runs")
    if len(paths) - n_correct < 3:
        reasons.append("fewer than 3 non-correct runs")
    if len({b for p in paths.values() for b in p}) < 2:
        reasons.append("fewer than 2 visited non-trivial blocks")
    if not np.any(fld.seed != 0):
        n = len(paths)
        gated = [b for b, v in visitors(atlas).items() if 3 <= len(v) <= n - 3]
        if not gated:
            reasons.append("no seed-eligible block")
    if not np.any(fld.values > 0):
        reasons.append("no positive field support")
    evaluable = not reasons
    core_ok = evaluable and partition is not None and partition.multi_family
    if evaluable and not core_ok:
        reasons.append("single family")
    return EligibilityFlags(evaluable, core_ok, tuple(reasons))


def field_rows(fld: RewardField, core: HighValueCore) -> list[dict]:
    comp = core.component_of()
    return [{"block_id": b, "seed": float(s), "value": float(v),
             "in_core": b in comp, "component": comp.get(b, "")}
            for b, s, v in zip(fld.block_ids, fld.seed, fld.values)]


def write_field_csv(fld: RewardField, core: HighValueCore, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["block_id", "seed", "value", "in_core", "component"])
        w.writeheader()
        for row in field_rows(fld, core):
            w.writerow({**row, "seed": repr(row["seed"]), "value": repr(row["value"])})
    return path


def write_eligibility_json(flags: EligibilityFlags, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(flags.to_dict(), sort_keys=True), encoding="utf-8")
    return path


def family_core_jaccard(atlas: BlockAtlas, labels: Mapping[int, bool], partition: FamilyPartition,
                        alpha: float = ALPHA, steps: int = STEPS,
                        quantile: float = CORE_QUANTILE) -> Optional[float]:
    """Mean Jaccard between each family-conditioned core and the pooled core."""
    pooled = set(field_cores(reward_field(atlas, labels, alpha, steps), quantile).blocks)
    if not pooled:
        return None
    vals = []
    for members in partition.families().values():
        fam = reward_field(atlas, conditioned_labels(labels, members), alpha, steps)
        core = set(field_cores(fam, quantile).blocks)
        if core:
            vals.append(len(core & pooled) / len(core | pooled))
    return float(np.mean(vals)) if vals else None
