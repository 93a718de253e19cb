"""Synthetic cells with planted trunk / family / basin structure and their ground truth.

A slice's keys are a global pool shared by every slice, a core shared by
every slice of its planted block, and a short window on a per-block key
circle. The first two fix the within- and across-block overlaps exactly;
the window gives each block a ring-shaped neighbourhood structure so that
mutual kNN does not collapse onto tie-broken hubs.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
from sklearn.metrics import adjusted_rand_score, normalized_mutual_info_score

from .cache import AggregationConfig, CellCache
from .exceptions import ValidationError
from .families import isomer_rate


@dataclass(frozen=True)
class PlantSpec:
    """Recipe for one synthetic cell.

    Each run walks the shared trunk blocks, then its family's blocks, with
    ``slices_per_block`` slices per block. Incorrect runs swap their family's
    last block for a shared wrong-answer basin. ``core_placement`` maps a
    family to a basin id; families with the same id share their last block.
    ``private_pairs`` appends that many pairs of near-duplicate run-private
    slices to every run; the mutual-kNN graph turns each pair into an
    isolated bridge. Their planted blocks are named ``pair<run_id>_<i>``.
    ``rotate_paths`` rotates family ``f``'s pre-basin block order by ``f``
    places, so families differ in transition order as well as footprint.
    """

    n_runs: int = 64
    n_families: int = 2
    blocks_per_family: int = 2
    shared_trunk_blocks: int = 1
    keys_per_slice: int = 40
    key_overlap_within_block: float = 0.9
    key_overlap_across_blocks: float = 0.1
    accuracy: float | tuple = 1.0
    core_placement: Optional[Mapping[int, int]] = None
    slices_per_block: int = 2
    private_pairs: int = 0
    rotate_paths: bool = False
    seed: int = 0
    problem_id: str = "synth"
    model_id: str = "plant"

    def __post_init__(self):
        if self.n_families < 1 or self.n_runs < self.n_families:
            raise ValidationError("need n_runs >= n_families >= 1")
        if (self.blocks_per_family < 1 or self.shared_trunk_blocks < 0
                or self.slices_per_block < 1 or self.private_pairs < 0):
            raise ValidationError("block counts must be positive")
        w, a = self.key_overlap_within_block, self.key_overlap_across_blocks
        if not (0.0 <= a <= 1.0 and 0.0 <= w <= 1.0):
            raise ValidationError("overlaps must lie in [0, 1]")
        if w <= a:
            raise ValidationError("within-block overlap must exceed across-block overlap")
        if self.keys_per_slice < 2:
            raise ValidationError("keys_per_slice must be >= 2")
        for acc in self.accuracies():
            if not 0.0 <= acc <= 1.0:
                raise ValidationError("accuracies must lie in [0, 1]")

    def accuracies(self) -> tuple:
        acc = self.accuracy
        if np.isscalar(acc):
            return (float(acc),) * self.n_families
        acc = tuple(float(x) for x in acc)
        if len(acc) != self.n_families:
            raise ValidationError("one accuracy per family required")
        return acc

    def basins(self) -> dict[int, int]:
        place = self.core_placement or {f: f for f in range(self.n_families)}
        return {f: int(place.get(f, f)) for f in range(self.n_families)}

    def to_dict(self) -> dict:
        out = asdict(self)
        out["accuracy"] = list(self.accuracies())
        out["core_placement"] = {str(k): v for k, v in self.basins().items()}
        return out


@dataclass(frozen=True)
class GroundTruth:
    block_names: tuple
    slice_blocks: dict
    run_family: dict
    labels: dict
    intended_core: tuple
    spec: dict = field(default_factory=dict)

    def correct_runs(self) -> list[int]:
        return sorted(r for r, y in self.labels.items() if y)

    def planted_isomer_rate(self) -> Optional[float]:
        runs = self.correct_runs()
        pairs = list(combinations(runs, 2))
        if not pairs:
            return None
        return sum(self.run_family[a] != self.run_family[b] for a, b in pairs) / len(pairs)

    def to_dict(self) -> dict:
        return {
            "block_names": list(self.block_names),
            "slice_blocks": [{"run_id": r, "slice_index": t, "block": b}
                             for (r, t), b in sorted(self.slice_blocks.items())],
            "run_family": {str(r): f for r, f in sorted(self.run_family.items())},
            "labels": {str(r): y for r, y in sorted(self.labels.items())},
            "intended_core": [list(c) for c in self.intended_core],
            "spec": self.spec,
        }

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def from_json(cls, path) -> "GroundTruth":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            tuple(d["block_names"]),
            {(s["run_id"], s["slice_index"]): s["block"] for s in d["slice_blocks"]},
            {int(r): f for r, f in d["run_family"].items()},
            {int(r): y for r, y in d["labels"].items()},
            tuple(tuple(c) for c in d["intended_core"]),
            d.get("spec", {}),
        )


def key_budget(spec: PlantSpec) -> tuple[int, int, int]:
    """``(global, block_core, ring)`` key counts per slice.

    ``global + block_core`` is the guaranteed within-block intersection and
    ``global`` the exact cross-block intersection.
    """
    K = spec.keys_per_slice
    n_global = int(np.floor(spec.key_overlap_across_blocks * K + 1e-9))
    floor = int(np.ceil(spec.key_overlap_within_block * K - 1e-9))
    return n_global, floor - n_global, K - floor


def family_sizes(n_runs: int, n_families: int) -> list[int]:
    base, extra = divmod(n_runs, n_families)
    return [base + (f < extra) for f in range(n_families)]


class _KeyAllocator:
    def __init__(self, start: int):
        self.next = start

    def take(self, n: int) -> np.ndarray:
        out = np.arange(self.next, self.next + n, dtype=np.int64)
        self.next += n
        return out


def _ring_windows(n_slices: int, width: int, alloc: _KeyAllocator, rng) -> list[np.ndarray]:
    """Contiguous windows on a key circle, one per slice, at shuffled positions.

    Slices ``d`` steps apart on the circle share ``width - d`` ring keys, so
    each slice's nearest block-mates are its circle neighbours rather than
    an arbitrary tie order.
    """
    if width == 0:
        return [np.zeros(0, np.int64)] * n_slices
    length = max(n_slices, 2 * width + 1)
    circle = alloc.take(length)
    starts = rng.permutation(n_slices)
    return [circle[(s + np.arange(width)) % length] for s in starts]


def generate_cell(spec: PlantSpec, config: AggregationConfig | None = None) -> tuple[CellCache, GroundTruth]:
    """Build a synthetic cell and the manifest that produced it.

    Same-block slices always share at least ``within * K`` keys (global pool
    plus block core) and differ only in a window on a per-block key circle;
    slices of different blocks share exactly the ``across * K`` global keys.
    """
    rng = np.random.default_rng(spec.seed)
    F, B = spec.n_families, spec.blocks_per_family
    basins = spec.basins()
    basin_ids = sorted(set(basins.values()))

    names = [f"trunk{i}" for i in range(spec.shared_trunk_blocks)]
    fam_blocks = {}
    for f in range(F):
        ids = []
        for j in range(B - 1):
            ids.append(len(names))
            names.append(f"family{f}_step{j}")
        fam_blocks[f] = ids
    basin_block = {}
    for c in basin_ids:
        basin_block[c] = len(names)
        names.append(f"basin{c}")
    wrong = len(names)
    names.append("wrong_basin")

    run_family, labels = {}, {}
    r = 0
    for f, size in enumerate(family_sizes(spec.n_runs, F)):
        n_ok = int(round(spec.accuracies()[f] * size))
        ok = set(rng.permutation(size)[:n_ok].tolist())
        for i in range(size):
            run_family[r] = f
            labels[r] = i in ok
            r += 1

    plan = {}
    for r in range(spec.n_runs):
        f = run_family[r]
        final = basin_block[basins[f]] if labels[r] else wrong
        pre = list(range(spec.shared_trunk_blocks)) + fam_blocks[f]
        if spec.rotate_paths and pre:
            k = f % len(pre)
            pre = pre[k:] + pre[:k]
        path = pre + [final]
        plan[r] = [b for b in path for _ in range(spec.slices_per_block)]
        for i in range(spec.private_pairs):
            names.append(f"pair{r}_{i}")
            plan[r] += [len(names) - 1] * 2

    n_global, n_core, width = key_budget(spec)
    alloc = _KeyAllocator(0)
    global_keys = alloc.take(n_global)
    visits: dict[int, list] = {}
    for r in range(spec.n_runs):
        for t, b in enumerate(plan[r]):
            visits.setdefault(b, []).append((r, t))
    keysets = {}
    for b in sorted(visits):
        core = alloc.take(n_core)
        for (r, t), ring in zip(visits[b], _ring_windows(len(visits[b]), width, alloc, rng)):
            keysets[(r, t)] = np.sort(np.concatenate([global_keys, core, ring]))

    raw_runs, slice_blocks = [], {}
    for r in range(spec.n_runs):
        for t, b in enumerate(plan[r]):
            slice_blocks[(r, t)] = b
        raw_runs.append({"run_id": r, "slices": [keysets[(r, t)] for t in range(len(plan[r]))],
                         "correct": labels[r], "answer_class": "A" if labels[r] else "B"})

    core = []
    for c in basin_ids:
        members = [f for f in range(F) if basins[f] == c]
        if any(labels[r] for r in run_family if run_family[r] in members):
            core.append((basin_block[c],))
    cell = CellCache.from_runs(spec.problem_id, spec.model_id, raw_runs, config or AggregationConfig())
    truth = GroundTruth(tuple(names), slice_blocks, run_family, labels, tuple(core), spec.to_dict())
    return cell, truth


def _modal(values) -> tuple:
    vals, counts = np.unique(np.asarray(values), return_counts=True)
    k = int(np.argmax(counts))
    return vals[k], counts[k]


def score_recovery(truth: GroundTruth, partition=None, atlas=None, core=None) -> dict:
    """External agreement between a pipeline run and its planted manifest.

    ``block_purity`` is the slice-weighted share of each non-trivial block's
    slices that come from its modal planted block. ``core_placement_accuracy``
    is the share of detected core blocks whose modal planted block is an
    intended core block.
    """
    out: dict = {}
    if partition is not None and partition.labels:
        runs = partition.runs
        pred = [partition.labels[r] for r in runs]
        true = [truth.run_family[r] for r in runs]
        out["family_ari"] = float(adjusted_rand_score(true, pred))
        out["family_nmi"] = float(normalized_mutual_info_score(true, pred))
        out["family_count"] = partition.family_count
        out["planted_family_count"] = len(set(true))
        detected, planted = isomer_rate(partition), truth.planted_isomer_rate()
        out["isomer_rate_error"] = (abs(detected - planted)
                                    if detected is not None and planted is not None else None)
    if atlas is not None:
        hits = total = 0
        modal_of = {}
        for b in atlas.nontrivial:
            planted = [truth.slice_blocks[atlas.nodes[v]] for v in b.nodes]
            m, c = _modal(planted)
            modal_of[b.block_id] = int(m)
            hits += int(c)
            total += len(planted)
        out["block_purity"] = hits / total if total else None
        if core is not None:
            intended = {b for comp in truth.intended_core for b in comp}
            blocks = list(core.blocks)
            out["core_placement_accuracy"] = (
                sum(modal_of[b] in intended for b in blocks) / len(blocks) if blocks else None)
    return out
