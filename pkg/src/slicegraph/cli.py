"""Command-line entry point: ``slicegraph <command> [options]``.

Every command writes plain JSON/CSV artifacts into ``--out`` and is
byte-deterministic for fixed inputs, flags and ``--seed``. Environment:
``SLICEGRAPH_JOBS`` (default worker count for ``report``) and
``SLICEGRAPH_CACHE_DIR`` (root of the content-addressed stage cache).
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .exceptions import SliceGraphError
from .cache import (AggregationConfig, CellCache, aggregate_rows, read_cache, read_json,
                    score_token, write_cache)
from .families import isomer_stats, write_family_csv, write_family_summary
from .graph import METRICS
from .dynamics import write_diagnostics_csv, write_kernel_json
from .pipeline import PipelineParams, analyze_cell, cell_nulls, dumps, run_corpus, write_report
from .reward import write_eligibility_json, write_field_csv
from .robustness import (controlled_isomer_rate, discovery_curves, family_sensitivity,
                         heldout_projection, reward_sensitivity, sigma_sweep,
                         split_half_stability)
from .synth import PlantSpec, generate_cell, score_recovery


def _load_cell(path) -> CellCache:
    path = Path(path)
    return read_json(path) if path.suffix == ".json" else read_cache(path)


def _params(args) -> PipelineParams:
    data = {}
    if getattr(args, "config", None):
        data = json.loads(Path(args.config).read_text(encoding="utf-8"))
    p = PipelineParams.from_dict(data)
    overrides = {"seed": getattr(args, "seed", None), "metric": getattr(args, "metric", None)}
    if getattr(args, "include_bridges", False):
        overrides["include_bridges"] = True
    return replace(p, **{k: v for k, v in overrides.items() if v is not None})


def _write(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")


def _write_rows(path: Path, rows: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: "" if v is None else v for k, v in row.items()})


def _ingest_run(raw: dict, config: AggregationConfig) -> dict:
    """Runs carry either ready ``slices`` or per-token ``tokens`` of layer -> {up, gate}."""
    if "slices" in raw:
        return raw
    scored = [score_token({int(layer): (v["up"], v["gate"]) for layer, v in tok.items()},
                          config.global_topk) for tok in raw["tokens"]]
    slices = aggregate_rows(scored, config, int(raw["run_id"]))
    return {**raw, "slices": [s.keys for s in slices]}


def cmd_ingest(args, params: PipelineParams) -> int:
    payload = json.loads(Path(args.input).read_text(encoding="utf-8"))
    runs = [_ingest_run(r, params.config) for r in payload["runs"]]
    cell = CellCache.from_runs(payload["problem_id"], payload["model_id"], runs, params.config)
    write_cache(cell, args.output)
    print(f"{args.output}: {cell.n_runs} runs, {cell.n_slices} slices, "
          f"{len(cell.dropped_runs)} dropped")
    return 0


def cmd_build(args, params: PipelineParams) -> int:
    a = analyze_cell(_load_cell(args.cache), params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    a.graph.to_json(out / "graph.json")
    a.atlas.to_json(out / "atlas.json")
    (out / "graph.dot").write_text(a.graph.to_dot(), encoding="utf-8")
    print(f"{a.graph.n_nodes} nodes, {a.graph.n_edges} edges, "
          f"{len(a.atlas.nontrivial)} non-trivial blocks")
    return 0


def cmd_families(args, params: PipelineParams) -> int:
    a = analyze_cell(_load_cell(args.cache), params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_family_csv(a.partition, out / "families.csv")
    write_family_summary(a.partition, out / "families.json")
    _write(out / "isomers.json", isomer_stats([a.partition]).to_dict())
    print(f"{a.partition.family_count} families over {len(a.partition.labels)} correct runs")
    return 0


def cmd_reward(args, params: PipelineParams) -> int:
    a = analyze_cell(_load_cell(args.cache), params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_field_csv(a.field, a.core, out / "field.csv")
    write_eligibility_json(a.flags, out / "eligibility.json")
    _write(out / "readouts.json", {**a.readouts, "core_components": a.core.n_components,
                                   "core_threshold": a.core.threshold})
    print(f"core components: {a.core.n_components}; evaluable: {a.flags.reward_evaluable}")
    return 0


def cmd_dynamics(args, params: PipelineParams) -> int:
    a = analyze_cell(_load_cell(args.cache), params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_kernel_json(a.dynamics, out / "kernels.json")
    write_diagnostics_csv(a.dynamics, out / "diagnostics.csv")
    print(f"{len(a.dynamics.kernels.alphabet)} typed states; TV full {a.dynamics.tv_full}")
    return 0


def cmd_nulls(args, params: PipelineParams) -> int:
    a = analyze_cell(_load_cell(args.cache), params)
    res = cell_nulls(a, params.seed, args.shuffles, args.rewires)
    _write(Path(args.out) / "nulls.json", res)
    return 0


def cmd_robustness(args, params: PipelineParams) -> int:
    cell = _load_cell(args.cache)
    a = analyze_cell(cell, params)
    res = {
        "split_half": split_half_stability(cell, a.atlas, params),
        "heldout": heldout_projection(cell, params, args.splits, params.seed, a.partition),
        "controlled_m": controlled_isomer_rate([(cell, a.atlas)], args.m, args.replicates,
                                               params.seed, params),
        "discovery": discovery_curves([cell], [n for n in args.n if n <= cell.n_runs],
                                      args.replicates, params.seed, params),
    }
    _write(Path(args.out) / "robustness.json", res)
    return 0


def cmd_sweep(args, params: PipelineParams) -> int:
    cells = [_load_cell(p) for p in args.caches]
    out = Path(args.out)
    if args.kind == "family":
        pairs = [(c, analyze_cell(c, params).atlas) for c in cells]
        rows = family_sensitivity(pairs, params=params)
    elif args.kind == "reward":
        pairs = [(c, analyze_cell(c, params).atlas) for c in cells]
        rows = reward_sensitivity(pairs)
    else:
        rows = [{"cell": f"{c.problem_id}/{c.model_id}", **r}
                for c in cells for r in sigma_sweep(c, params=params)]
    _write_rows(out / f"sweep_{args.kind}.csv", rows)
    print(f"{len(rows)} rows -> {out / f'sweep_{args.kind}.csv'}")
    return 0


def cmd_synth(args, params: PipelineParams) -> int:
    spec = PlantSpec(n_runs=args.runs, n_families=args.families,
                     blocks_per_family=args.blocks_per_family, keys_per_slice=args.keys,
                     accuracy=args.accuracy, slices_per_block=args.slices_per_block,
                     private_pairs=args.private_pairs, rotate_paths=args.rotate_paths,
                     seed=params.seed,
                     problem_id=args.problem_id)
    cell, truth = generate_cell(spec, params.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_cache(cell, out / f"{spec.problem_id}.slg")
    truth.to_json(out / f"{spec.problem_id}.truth.json")
    if args.score:
        a = analyze_cell(cell, params)
        _write(out / f"{spec.problem_id}.recovery.json",
               score_recovery(truth, a.partition, a.atlas, a.core))
    print(f"{cell.n_runs} runs, {cell.n_slices} slices -> {out}")
    return 0


def cmd_report(args, params: PipelineParams) -> int:
    records = run_corpus(args.caches, params, getattr(args, "jobs", None), args.with_nulls,
                         os.environ.get("SLICEGRAPH_CACHE_DIR"))
    rep = write_report(records, args.out, args.n_boot, params.seed)
    print(f"{rep['n_cells']} cells ({rep['n_failed']} failed) -> {args.out}")
    return 0


def _common() -> argparse.ArgumentParser:
    # global flags are accepted before or after the command; SUPPRESS keeps a
    # subcommand's unset flag from overwriting one given before it
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON file with AggregationConfig, RoleThresholds and "
                                    "pipeline fields (flat or nested)")
    p.add_argument("--seed", type=int, help="pipeline seed (default 0)")
    p.add_argument("--jobs", type=int, help="worker processes (default $SLICEGRAPH_JOBS or 1)")
    p.add_argument("--include-bridges", action="store_true",
                   help="count K2 bridge blocks in family footprints")
    p.add_argument("--metric", choices=METRICS, help="set distance (default jaccard)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="slicegraph", parents=[common],
                                     description="Process atlases from sparse activation caches.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    sp = add("ingest", cmd_ingest, "raw JSON (slices or per-token up/gate) -> binary cache")
    sp.add_argument("input")
    sp.add_argument("output")
    for name, fn, help_ in [("build", cmd_build, "cache -> graph and block atlas"),
                            ("families", cmd_families, "process families and isomer stats"),
                            ("reward", cmd_reward, "reward field, cores and eligibility"),
                            ("dynamics", cmd_dynamics, "typed kernels and diagnostics")]:
        sp = add(name, fn, help_)
        sp.add_argument("cache")
        sp.add_argument("--out", required=True)
    sp = add("nulls", cmd_nulls, "family-TV and modularity null controls")
    sp.add_argument("cache")
    sp.add_argument("--out", required=True)
    sp.add_argument("--shuffles", type=int, default=200)
    sp.add_argument("--rewires", type=int, default=3)
    sp = add("robustness", cmd_robustness, "split-half, held-out, controlled-m, discovery")
    sp.add_argument("cache")
    sp.add_argument("--out", required=True)
    sp.add_argument("--splits", type=int, default=5)
    sp.add_argument("--replicates", type=int, default=5)
    sp.add_argument("--m", type=int, nargs="+", default=[4, 8, 16])
    sp.add_argument("--n", type=int, nargs="+", default=[8, 16, 32, 64])
    sp = add("sweep", cmd_sweep, "resolution x tau, alpha x quantile, or sigma sweeps")
    sp.add_argument("caches", nargs="+")
    sp.add_argument("--kind", choices=("family", "reward", "sigma"), default="family")
    sp.add_argument("--out", required=True)
    sp = add("synth", cmd_synth, "planted-family cell plus ground truth")
    sp.add_argument("--out", required=True)
    sp.add_argument("--runs", type=int, default=64)
    sp.add_argument("--families", type=int, default=2)
    sp.add_argument("--blocks-per-family", type=int, default=2)
    sp.add_argument("--slices-per-block", type=int, default=2)
    sp.add_argument("--keys", type=int, default=40)
    sp.add_argument("--accuracy", type=float, default=1.0)
    sp.add_argument("--private-pairs", type=int, default=0)
    sp.add_argument("--rotate-paths", action="store_true")
    sp.add_argument("--problem-id", default="synth")
    sp.add_argument("--score", action="store_true", help="also write recovery scores")
    sp = add("report", cmd_report, "corpus roll-up report and plot-data CSVs")
    sp.add_argument("caches", nargs="+")
    sp.add_argument("--out", required=True)
    sp.add_argument("--with-nulls", action="store_true")
    sp.add_argument("--n-boot", type=int, default=1000)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        params = _params(args)
        return args.func(args, params)
    except (OSError, ValueError, KeyError, SliceGraphError) as exc:
        print(f"slicegraph {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
