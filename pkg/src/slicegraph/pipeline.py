"""Per-cell pipeline, corpus orchestration and the deterministic roll-up report."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .atlas import BlockAtlas, RoleThresholds, build_atlas
from .cache import AggregationConfig, CellCache, cache_digest, read_cache
from .dynamics import DynamicsResult, analyze_dynamics, lift_cell
from .exceptions import SliceGraphError
from .families import FamilyPartition, detect_families, isomer_rate
from .graph import SliceGraph, build_graph
from .nulls import NullSpec, family_tv_null, modularity_null
from .reward import (ALPHA, CORE_QUANTILE, STEPS, EligibilityFlags, HighValueCore, RewardField,
                     core_divergence, coverage_loss, eligibility, field_cores, field_sharpness,
                     reward_field, specialization)
from .stats import clustered_bootstrap

REPORT_VERSION = 1


@dataclass(frozen=True)
class PipelineParams:
    """Every knob of the per-cell pipeline; hashing it keys the stage cache."""

    config: AggregationConfig = field(default_factory=AggregationConfig)
    thresholds: RoleThresholds = field(default_factory=RoleThresholds)
    metric: str = "jaccard"
    seed: int = 0
    tau: float = 0.05
    resolution: float = 1.0
    family_seed: int = 42
    include_bridges: bool = False
    weight_source: str = "full"
    alpha: float = ALPHA
    steps: int = STEPS
    core_quantile: float = CORE_QUANTILE

    def to_dict(self) -> dict:
        d = asdict(self)
        d["config"] = self.config.to_dict()
        d["thresholds"] = self.thresholds.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "PipelineParams":
        """Accepts nested ``config``/``thresholds`` sections or a flat mapping."""
        data = dict(data)
        cfg = dict(data.pop("config", {}))
        th = dict(data.pop("thresholds", {}))
        for k in list(data):
            if k in AggregationConfig.__dataclass_fields__:
                cfg[k] = data.pop(k)
            elif k in RoleThresholds.__dataclass_fields__:
                th[k] = data.pop(k)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown parameter(s): {sorted(unknown)}")
        return cls(config=AggregationConfig.from_dict(cfg), thresholds=RoleThresholds.from_dict(th), **data)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class CellAnalysis:
    cell: CellCache
    params: PipelineParams
    graph: SliceGraph
    atlas: BlockAtlas
    partition: FamilyPartition
    field: RewardField
    core: HighValueCore
    flags: EligibilityFlags
    dynamics: DynamicsResult
    readouts: dict

    def summary(self) -> dict:
        cell, part = self.cell, self.partition
        return {
            "problem_id": cell.problem_id,
            "model_id": cell.model_id,
            "sampled_runs": cell.sampled_runs,
            "analysed_runs": cell.n_runs,
            "dropped_runs": len(cell.dropped_runs),
            "n_correct": sum(r.correct for r in cell.runs),
            "n_slices": cell.n_slices,
            "n_nodes": self.graph.n_nodes,
            "n_edges": self.graph.n_edges,
            "n_blocks": len(self.atlas.blocks),
            "n_nontrivial_blocks": len(self.atlas.nontrivial),
            "n_articulation_points": len(self.atlas.articulation_points),
            "role_counts": {k: v for k, v in sorted(self.atlas.role_counts().items())},
            "family_count": part.family_count,
            "multi_family": part.multi_family,
            "isomer_rate": isomer_rate(part),
            "n_partitioned_runs": len(part.labels),
            "reward_evaluable": self.flags.reward_evaluable,
            "core_eligible": self.flags.core_eligible_multi_family,
            "eligibility_reasons": list(self.flags.reasons),
            "core_components": self.core.n_components,
            "multi_core": self.core.multi_core,
            "core_size_ratio": self.core.size_ratio,
            **self.readouts,
            "tv_full": self.dynamics.tv_full,
            "tv_common_support": self.dynamics.tv_common,
            "h3": self.dynamics.h3,
        }


def analyze_cell(cell: CellCache, params: PipelineParams | None = None) -> CellAnalysis:
    """graph -> atlas -> families -> reward field and cores -> typed dynamics."""
    p = params or PipelineParams()
    graph = build_graph(cell, p.config, p.metric, p.seed)
    atlas = build_atlas(graph, cell, p.thresholds)
    part = detect_families(cell, atlas, p.tau, p.resolution, p.family_seed,
                           p.include_bridges, p.weight_source)
    labels = cell.labels()
    fld = reward_field(atlas, labels, p.alpha, p.steps)
    core = field_cores(fld, p.core_quantile)
    flags = eligibility(atlas, labels, fld, part)
    readouts = {"specialization": None, "coverage_loss": None, "sharpness_raw": None,
                "sharpness_normalized": None, "core_divergence_uplift": None}
    if flags.reward_evaluable:
        readouts["specialization"] = specialization(part, core)
        loss = coverage_loss(part)
        readouts["coverage_loss"] = loss["delta_max"] if loss else None
        raws, norms = [], []
        for members in part.families().values():
            s = field_sharpness(atlas, labels, members, fld, p.alpha, p.steps)
            if s["raw"] is not None:
                raws.append(s["raw"])
                norms.append(s["normalized"])
        if raws:
            readouts["sharpness_raw"] = float(max(raws))
            readouts["sharpness_normalized"] = float(max(norms))
        readouts["core_divergence_uplift"] = core_divergence(part, core)["uplift"]
    dyn = analyze_dynamics(cell, atlas, core.blocks, part.labels)
    return CellAnalysis(cell, p, graph, atlas, part, fld, core, flags, dyn, readouts)


def cell_nulls(analysis: CellAnalysis, seed: int = 0, family_shuffles: int = 200,
               rewires: int = 3) -> dict:
    """Family-TV (full and common-support) and modularity nulls for one cell."""
    seqs, _ = lift_cell(analysis.cell, analysis.atlas, analysis.core.blocks)
    out = {}
    labels = analysis.partition.labels
    alphabet = analysis.dynamics.kernels.alphabet
    for mode in ("full", "common_support"):
        res = family_tv_null(seqs, labels, alphabet,
                             NullSpec("family_label_shuffle", family_shuffles, seed), mode)
        out[f"family_tv_{mode}"] = res.to_dict() if res else None
    res = modularity_null(analysis.partition, NullSpec("degree_rewire", rewires, seed))
    out["modularity"] = res.to_dict() if res else None
    return out


def stage_dir(cell: CellCache, params: PipelineParams, root=None) -> Path:
    """Content-addressed directory keyed by the cache bytes and every parameter."""
    root = Path(root or os.environ.get("SLICEGRAPH_CACHE_DIR", ".slicegraph-cache"))
    key = hashlib.sha256((cache_digest(cell) + params.digest()).encode()).hexdigest()[:20]
    return root / key


def _safe(x):
    if isinstance(x, float) and not np.isfinite(x):
        return None
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def dumps(obj) -> str:
    """Canonical JSON (sorted keys, fixed separators) for byte-stable artifacts."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_safe, allow_nan=False) + "\n"


def _analyze_one(args) -> dict:
    source, params, with_nulls, cache_root = args
    try:
        cell = read_cache(source) if isinstance(source, (str, Path)) else source
    except (OSError, SliceGraphError) as exc:
        return {"cell": str(source), "error": {"type": type(exc).__name__, "message": str(exc)}}
    record = {"cell": f"{cell.problem_id}/{cell.model_id}"}
    d = stage_dir(cell, params, cache_root) if cache_root else None
    if d is not None and (d / "summary.json").exists():
        cached = json.loads((d / "summary.json").read_text(encoding="utf-8"))
        if with_nulls <= ("nulls" in cached):
            return cached
    try:
        analysis = analyze_cell(cell, params)
        record["summary"] = analysis.summary()
        if with_nulls:
            record["nulls"] = cell_nulls(analysis, params.seed)
    except Exception as exc:  # isolate per-cell failures into the error ledger
        record["error"] = {"type": type(exc).__name__, "message": str(exc)}
    if d is not None and "error" not in record:
        d.mkdir(parents=True, exist_ok=True)
        (d / "summary.json").write_text(dumps(record), encoding="utf-8")
    return record


def run_corpus(sources: Sequence, params: PipelineParams | None = None, jobs: int | None = None,
               with_nulls: bool = False, cache_root=None) -> list[dict]:
    """Analyse many cells; failures become ``error`` records instead of aborting."""
    params = params or PipelineParams()
    jobs = int(jobs or os.environ.get("SLICEGRAPH_JOBS", 1))
    tasks = [(s, params, with_nulls, cache_root) for s in sources]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_analyze_one, tasks))
    else:
        records = [_analyze_one(t) for t in tasks]
    return sorted(records, key=lambda r: r["cell"])


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return float(np.mean(xs)) if xs else None


def _frac(xs):
    xs = list(xs)
    return float(np.mean(xs)) if xs else None


def rollup(records: Sequence[dict], n_boot: int = 1000, seed: int = 0) -> dict:
    """Corpus-level report with run bookkeeping and the eligibility chain."""
    ok = [r for r in records if "summary" in r]
    cells = [r["summary"] for r in ok]
    sampled = sum(c["sampled_runs"] for c in cells)
    analysed = sum(c["analysed_runs"] for c in cells)
    dropped = sum(c["dropped_runs"] for c in cells)
    partitioned = [c for c in cells if c["n_partitioned_runs"] > 0]
    iso = [c for c in cells if c["isomer_rate"] is not None]
    evaluable = [c for c in cells if c["reward_evaluable"]]
    core_ok = [c for c in evaluable if c["core_eligible"]]
    multi_core = [c for c in evaluable if c["multi_core"]]
    multi_fam = [c for c in cells if c["family_count"] >= 2]
    ci = None
    if iso:
        mean, lo, hi = clustered_bootstrap([c["isomer_rate"] for c in iso],
                                           [c["problem_id"] for c in iso], n_boot, seed)
        ci = [lo, hi]
    report = {
        "report_version": REPORT_VERSION,
        "n_cells": len(records),
        "n_failed": len(records) - len(ok),
        "runs": {"sampled": sampled, "analysed": analysed, "dropped": dropped,
                 "reconciles": sampled == analysed + dropped},
        "eligibility_chain": {"all": len(cells), "reward_evaluable": len(evaluable),
                              "core_eligible": len(core_ok)},
        "families": {
            "multi_family_rate": _frac(c["multi_family"] for c in partitioned),
            "mean_family_count": _mean(c["family_count"] for c in partitioned),
            "isomer_rate": _mean(c["isomer_rate"] for c in iso),
            "isomer_rate_ci": ci,
            "n_isomer_cells": len(iso),
        },
        "reward": {
            "multi_core_rate": _frac(c["multi_core"] for c in evaluable),
            "specialization": _mean(c["specialization"] for c in multi_core),
            "coverage_loss_above_0.10": _frac(c["coverage_loss"] > 0.10 for c in multi_fam
                                              if c["coverage_loss"] is not None),
            "sharpness_raw_median": (float(np.median([c["sharpness_raw"] for c in evaluable
                                                      if c["sharpness_raw"] is not None]))
                                     if any(c["sharpness_raw"] is not None for c in evaluable)
                                     else None),
        },
        "dynamics": {
            "tv_full_mean": _mean(c["tv_full"] for c in core_ok),
            "tv_common_support_mean": _mean(c["tv_common_support"] for c in core_ok),
        },
    }
    with_null = [r for r in ok if r.get("nulls")]
    if with_null:
        nulls = {}
        for key in ("family_tv_full", "family_tv_common_support", "modularity"):
            res = [r["nulls"][key] for r in with_null if r["nulls"].get(key)]
            zs = [x["z"] for x in res if x["z"] is not None]
            nulls[key] = {"n": len(res), "fraction_above_p95": _frac(x["above_p95"] for x in res),
                          "median_z": float(np.median(zs)) if zs else None}
        report["nulls"] = nulls
    return report


CELL_COLUMNS = ("problem_id", "model_id", "analysed_runs", "n_correct", "n_nodes", "n_edges",
                "n_nontrivial_blocks", "family_count", "multi_family", "isomer_rate",
                "reward_evaluable", "core_eligible", "core_components", "specialization",
                "coverage_loss", "sharpness_raw", "tv_full", "tv_common_support")


def _ecdf_rows(values: Iterable[float]) -> list[dict]:
    vals = sorted(v for v in values if v is not None)
    n = len(vals)
    return [{"value": v, "ecdf": (i + 1) / n} for i, v in enumerate(vals)]


def _write_csv(path: Path, fields, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fields})


def write_report(records: Sequence[dict], out_dir, n_boot: int = 1000, seed: int = 0) -> dict:
    """Write ``report.json``, ``cells.csv``, ``errors.json`` and plot-data CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = rollup(records, n_boot, seed)
    (out / "report.json").write_text(dumps(report), encoding="utf-8")
    cells = [r["summary"] for r in records if "summary" in r]
    _write_csv(out / "cells.csv", CELL_COLUMNS, cells)
    errors = [{"cell": r["cell"], **r["error"]} for r in records if "error" in r]
    (out / "errors.json").write_text(dumps(errors), encoding="utf-8")
    _write_csv(out / "ecdf_isomer_rate.csv", ("value", "ecdf"),
               _ecdf_rows(c["isomer_rate"] for c in cells))
    _write_csv(out / "ecdf_family_count.csv", ("value", "ecdf"),
               _ecdf_rows(c["family_count"] for c in cells if c["n_partitioned_runs"]))
    _write_csv(out / "scatter_families_vs_cores.csv",
               ("problem_id", "model_id", "family_count", "core_components"),
               [c for c in cells if c["reward_evaluable"]])
    return report
