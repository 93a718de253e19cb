"""Family robustness procedures and the hyperparameter sweeps."""
from __future__ import annotations

import hashlib
from dataclasses import replace
from typing import Mapping, Sequence

import numpy as np
from sklearn.metrics import normalized_mutual_info_score

from .atlas import BlockAtlas, build_atlas
from .cache import CellCache
from .families import (FamilyPartition, block_weights, detect_families, footprints, isomer_rate,
                       partition_runs)
from .graph import build_graph, cross_distances
from .pipeline import PipelineParams, analyze_cell
from .reward import field_cores, reward_field

MIN_HALF_RUNS = 2
MIN_HELDOUT_RUNS = 4


def _family_kwargs(p: PipelineParams) -> dict:
    return dict(tau=p.tau, resolution=p.resolution, seed=p.family_seed,
                include_bridges=p.include_bridges, weight_source=p.weight_source)


def split_half_stability(cell: CellCache, atlas: BlockAtlas,
                         params: PipelineParams | None = None) -> dict:
    """Re-detect families inside the even and odd run_id halves on the fixed scaffold."""
    p = params or PipelineParams()
    full = detect_families(cell, atlas, **_family_kwargs(p))
    halves = [[r for r in full.runs if r % 2 == parity] for parity in (0, 1)]
    if min(len(h) for h in halves) < MIN_HALF_RUNS:
        return {"eligible": False, "both_halves_multi_family": None,
                "family_counts": None, "isomer_rates": None}
    parts = [detect_families(cell, atlas, runs=h, **_family_kwargs(p)) for h in halves]
    return {
        "eligible": True,
        "both_halves_multi_family": all(q.multi_family for q in parts),
        "family_counts": [q.family_count for q in parts],
        "isomer_rates": [isomer_rate(q) for q in parts],
    }


def project_heldout(cell: CellCache, train_runs: Sequence[int], params: PipelineParams,
                    full: FamilyPartition | None = None) -> dict:
    """Build the scaffold on ``train_runs`` and route the remaining runs onto it."""
    p = params
    train = cell.subset(train_runs)
    test_ids = [r.run_id for r in cell.runs if r.run_id not in set(train_runs)]
    graph = build_graph(train, p.config, p.metric, p.seed)
    atlas = build_atlas(graph, train, p.thresholds)
    queries, owners = [], []
    for rid in test_ids:
        for s in cell.run(rid).slices:
            queries.append(s.keys)
            owners.append(rid)
    nearest = np.argmin(cross_distances(queries, graph.keysets, p.metric), axis=1)
    assigned = [atlas.primary_block.get(graph.nodes[j]) for j in nearest]
    prints = {rid: set() for rid in test_ids}
    for rid, b in zip(owners, assigned):
        if b is not None:
            prints[rid].add(b)
    weights = block_weights(atlas, footprints(atlas, p.include_bridges),
                            [r.run_id for r in train.runs], p.include_bridges)
    correct = {rid: frozenset(prints[rid]) for rid in test_ids if cell.run(rid).correct}
    part = partition_runs(correct, weights, p.tau, p.resolution, p.family_seed)
    nmi = None
    if full is not None:
        shared = [r for r in part.runs if r in full.labels]
        if len(shared) >= 2:
            nmi = float(normalized_mutual_info_score([full.labels[r] for r in shared],
                                                     [part.labels[r] for r in shared]))
    return {
        "block_coverage": float(np.mean([b is not None for b in assigned])) if assigned else None,
        "multi_family": part.multi_family,
        "isomer_rate": isomer_rate(part),
        "nmi_vs_full": nmi,
    }


def heldout_projection(cell: CellCache, params: PipelineParams | None = None, splits: int = 5,
                       seed: int = 0, full: FamilyPartition | None = None) -> dict:
    """Random half-splits; the train half builds the atlas, the test half is projected."""
    p = params or PipelineParams()
    n_correct = sum(r.correct for r in cell.runs)
    if n_correct < MIN_HELDOUT_RUNS:
        return {"eligible": False}
    if full is None:
        atlas = build_atlas(build_graph(cell, p.config, p.metric, p.seed), cell, p.thresholds)
        full = detect_families(cell, atlas, **_family_kwargs(p))
    ids = np.array([r.run_id for r in cell.runs])
    per = []
    for i in range(splits):
        rng = np.random.default_rng(seed + i)
        train = sorted(rng.choice(ids, size=ids.size // 2, replace=False).tolist())
        per.append(project_heldout(cell, train, p, full))
    rates = [s["isomer_rate"] for s in per if s["isomer_rate"] is not None]
    nmis = [s["nmi_vs_full"] for s in per if s["nmi_vs_full"] is not None]
    multi = float(np.mean([s["multi_family"] for s in per]))
    return {
        "eligible": True,
        "block_coverage": float(np.mean([s["block_coverage"] for s in per])),
        "heldout_multi_family": multi >= 0.5,
        "heldout_multi_family_rate": multi,
        "heldout_isomer_rate": float(np.mean(rates)) if rates else None,
        "nmi_vs_full": float(np.mean(nmis)) if nmis else None,
        "splits": per,
    }


def controlled_isomer_rate(cells: Sequence[tuple[CellCache, BlockAtlas]],
                           m_values: Sequence[int] = (4, 8, 16), replicates: int = 10,
                           seed: int = 0, params: PipelineParams | None = None) -> dict:
    """Isomer statistics at a fixed number ``m`` of correct runs per cell."""
    p = params or PipelineParams()
    table = {}
    for m in m_values:
        rates, multi, counts = [], [], []
        for cell, atlas in cells:
            eligible = detect_families(cell, atlas, **_family_kwargs(p)).runs
            if len(eligible) < m:
                continue
            r_rate, r_multi, r_count = [], [], []
            for i in range(replicates):
                rng = np.random.default_rng(seed + i)
                sample = sorted(rng.choice(eligible, size=m, replace=False).tolist())
                part = detect_families(cell, atlas, runs=sample, **_family_kwargs(p))
                r_rate.append(isomer_rate(part))
                r_multi.append(part.multi_family)
                r_count.append(part.family_count)
            r_rate = [x for x in r_rate if x is not None]
            if r_rate:
                rates.append(float(np.mean(r_rate)))
            multi.append(float(np.mean(r_multi)))
            counts.append(float(np.mean(r_count)))
        table[m] = {
            "n_cells": len(rates),
            "mean_isomer_rate": float(np.mean(rates)) if rates else None,
            "multi_family_pct": 100.0 * float(np.mean(multi)) if multi else None,
            "mean_families": float(np.mean(counts)) if counts else None,
        }
    return table


def discovery_curves(cells: Sequence[CellCache], n_values: Sequence[int] = (8, 16, 32, 64),
                     replicates: int = 5, seed: int = 0,
                     params: PipelineParams | None = None) -> dict:
    """Family count, core components and block coverage as the run budget grows.

    Each replicate draws one random run order and uses its length-``N``
    prefixes, so every ``N`` is a uniform subsample and subsamples are
    nested. Block coverage is the share of the full-sample atlas's
    non-trivial blocks visited by the subsample's runs.
    """
    p = params or PipelineParams()
    out = {n: {"families": [], "core_components": [], "block_coverage": []} for n in n_values}
    for cell in cells:
        if cell.n_runs < max(n_values):
            continue
        atlas = build_atlas(build_graph(cell, p.config, p.metric, p.seed), cell, p.thresholds)
        prints = footprints(atlas)
        total = len(atlas.nontrivial)
        ids = [r.run_id for r in cell.runs]
        for i in range(replicates):
            order = np.random.default_rng(seed + i).permutation(ids).tolist()
            for n in n_values:
                sub = cell.subset(order[:n])
                a = analyze_cell(sub, p)
                out[n]["families"].append(a.partition.family_count)
                out[n]["core_components"].append(a.core.n_components)
                seen = set().union(*(prints.get(r, ()) for r in order[:n]))
                out[n]["block_coverage"].append(len(seen) / total if total else 0.0)
    return {n: {k: (float(np.mean(v)) if v else None) for k, v in d.items()}
            for n, d in out.items()}


def family_sensitivity(cells: Sequence[tuple[CellCache, BlockAtlas]],
                       resolutions: Sequence[float] = (0.5, 1.0, 1.5, 2.0),
                       taus: Sequence[float] = (0.025, 0.05, 0.1),
                       params: PipelineParams | None = None) -> list[dict]:
    """Resolution x threshold grid of mean isomer rate, multi-family share and family count."""
    p = params or PipelineParams()
    rows = []
    for rho in resolutions:
        for tau in taus:
            kw = {**_family_kwargs(p), "resolution": rho, "tau": tau}
            parts = [detect_families(cell, atlas, **kw) for cell, atlas in cells]
            parts = [q for q in parts if q.labels]
            rates = [isomer_rate(q) for q in parts if isomer_rate(q) is not None]
            rows.append({
                "resolution": rho, "tau": tau,
                "isomer_rate": float(np.mean(rates)) if rates else None,
                "multi_family_rate": float(np.mean([q.multi_family for q in parts])) if parts else None,
                "mean_families": float(np.mean([q.family_count for q in parts])) if parts else None,
            })
    return rows


def run_field_scores(atlas: BlockAtlas, values: Mapping[int, float]) -> dict[int, float]:
    """Mean field value along each run's primary-block path."""
    return {r: float(np.mean([values[b] for b in path]))
            for r, path in atlas.primary_paths().items() if path}


def reward_sensitivity(cells: Sequence[tuple[CellCache, BlockAtlas]],
                       alphas: Sequence[float] = (0.5, 0.65, 0.8),
                       quantiles: Sequence[float] = (50.0, 75.0, 90.0)) -> list[dict]:
    """Correct-minus-incorrect mean field score and multi-core rate per (alpha, q)."""
    rows = []
    for alpha in alphas:
        for q in quantiles:
            seps, multi = [], []
            for cell, atlas in cells:
                labels = cell.labels()
                fld = reward_field(atlas, labels, alpha=alpha)
                scores = run_field_scores(atlas, fld.as_dict())
                good = [s for r, s in scores.items() if labels[r]]
                bad = [s for r, s in scores.items() if not labels[r]]
                if good and bad:
                    seps.append(float(np.mean(good) - np.mean(bad)))
                multi.append(field_cores(fld, q).multi_core)
            rows.append({"alpha": alpha, "quantile": q,
                         "separation": float(np.mean(seps)) if seps else None,
                         "multi_core_rate": float(np.mean(multi)) if multi else None})
    return rows


def sigma_sweep(cell: CellCache, sigmas: Sequence[float] = (0.20, 0.35, 0.50),
                params: PipelineParams | None = None) -> list[dict]:
    """Graph and family statistics under each RBF bandwidth (topology never depends on sigma)."""
    p = params or PipelineParams()
    rows = []
    for sigma in sigmas:
        cfg = replace(p.config, sigma=sigma)
        g = build_graph(cell, cfg, p.metric, p.seed)
        atlas = build_atlas(g, cell, p.thresholds)
        part = detect_families(cell, atlas, **_family_kwargs(p))
        rows.append({"sigma": sigma, "n_edges": g.n_edges,
                     "edge_digest": hash_edges(g.edges), "isomer_rate": isomer_rate(part),
                     "mean_weight": float(np.mean(g.weights)) if g.n_edges else None})
    return rows


def hash_edges(edges: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(edges, dtype=np.int64).tobytes()).hexdigest()[:16]
