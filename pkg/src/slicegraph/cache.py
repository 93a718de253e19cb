"""Sparse activation cache: key encoding, token/row/slice aggregation, and file I/O.

A neuron is addressed by a 32-bit key ``(layer << 16) | unit``. Each analysed
slice of a run is a sorted, duplicate-free array of such keys; magnitudes are
only used while aggregating tokens into slices and are dropped afterwards.

Binary layout (all integers little-endian)::

    b"SLGCACHE"                 8-byte magic
    0x01                        1-byte version
    uint32 n, n bytes           UTF-8 JSON manifest
    per run, in manifest order:
        uint32 n_slices
        per slice: uint32 n_keys, n_keys * uint32
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .exceptions import CacheFormatError, ValidationError

MAGIC = b"SLGCACHE"
VERSION = 1
UNIT_BITS = 16
MAX_UNIT = 1 << UNIT_BITS
MAX_LAYER = 1 << 16


def encode_key(layer: int, unit: int) -> int:
    """Pack ``(layer, unit)`` into one 32-bit neuron key."""
    if not 0 <= unit < MAX_UNIT:
        raise ValidationError(f"unit index {unit} does not fit in 16 bits")
    if not 0 <= layer < MAX_LAYER:
        raise ValidationError(f"layer {layer} does not fit in 16 bits")
    return (int(layer) << UNIT_BITS) | int(unit)


def decode_key(key: int) -> tuple[int, int]:
    key = int(key)
    return key >> UNIT_BITS, key & (MAX_UNIT - 1)


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    return x * expit(x)


@dataclass(frozen=True)
class AggregationConfig:
    """Cache aggregation and graph-construction constants."""

    slice_size: int = 32
    sep_up: int = 8
    global_topk: int = 2000
    slice_topk: int = 500
    k_neighbors: int = 6
    sigma: float = 0.35
    size_cap: int = 2600

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise ValidationError(f"{name} must be strictly positive, got {value!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "AggregationConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


def _as_keys(keys) -> np.ndarray:
    arr = np.asarray(keys)
    if arr.size and (arr.min() < 0 or arr.max() >= 1 << 32):
        raise ValidationError("neuron keys must be unsigned 32-bit integers")
    return arr.astype(np.uint32).reshape(-1)


@dataclass(frozen=True, eq=False)
class SliceKeySet:
    run_id: int
    slice_index: int
    keys: np.ndarray

    def __post_init__(self):
        keys = _as_keys(self.keys)
        if keys.size > 1 and not np.all(keys[1:] > keys[:-1]):
            raise ValidationError(
                f"slice ({self.run_id}, {self.slice_index}) keys are not strictly increasing"
            )
        if self.slice_index < 0:
            raise ValidationError("slice_index must be >= 0")
        keys.setflags(write=False)
        object.__setattr__(self, "keys", keys)

    def __len__(self):
        return int(self.keys.size)

    def __eq__(self, other):
        if not isinstance(other, SliceKeySet):
            return NotImplemented
        return (
            self.run_id == other.run_id
            and self.slice_index == other.slice_index
            and np.array_equal(self.keys, other.keys)
        )

    __hash__ = None


@dataclass(frozen=True)
class RunRecord:
    run_id: int
    slices: tuple
    correct: bool
    answer_class: str = ""

    def __post_init__(self):
        object.__setattr__(self, "slices", tuple(self.slices))
        object.__setattr__(self, "correct", bool(self.correct))
        for i, s in enumerate(self.slices):
            if s.slice_index != i or s.run_id != self.run_id:
                raise ValidationError(
                    f"run {self.run_id}: slices must be indexed 0..L-1 in trace order"
                )
        if self.correct and not self.answer_class:
            raise ValidationError(f"run {self.run_id} is correct but has no answer_class")

    def __len__(self):
        return len(self.slices)


@dataclass(frozen=True)
class CellCache:
    """All analysed runs of one (problem, model) cell."""

    problem_id: str
    model_id: str
    runs: tuple
    config: AggregationConfig = field(default_factory=AggregationConfig)
    dropped_runs: tuple = ()
    dropped_slices: int = 0

    def __post_init__(self):
        runs = tuple(sorted(self.runs, key=lambda r: r.run_id))
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "dropped_runs", tuple(sorted(self.dropped_runs)))
        ids = [r.run_id for r in runs]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate run_id in cell {self.cell_id}")
        for r in runs:
            if len(r) == 0:
                raise ValidationError(f"run {r.run_id} has no admitted slices")
            for s in r.slices:
                if len(s) == 0:
                    raise ValidationError(f"run {r.run_id} slice {s.slice_index} is empty")

    @property
    def cell_id(self) -> tuple[str, str]:
        return (self.problem_id, self.model_id)

    @property
    def n_runs(self) -> int:
        return len(self.runs)

    @property
    def sampled_runs(self) -> int:
        return len(self.runs) + len(self.dropped_runs)

    @property
    def n_slices(self) -> int:
        return sum(len(r) for r in self.runs)

    def run(self, run_id: int) -> RunRecord:
        for r in self.runs:
            if r.run_id == run_id:
                return r
        raise KeyError(run_id)

    def labels(self) -> dict[int, bool]:
        return {r.run_id: r.correct for r in self.runs}

    def subset(self, run_ids: Iterable[int]) -> "CellCache":
        keep = set(run_ids)
        return CellCache(
            self.problem_id,
            self.model_id,
            tuple(r for r in self.runs if r.run_id in keep),
            self.config,
        )

    def with_labels(self, labels: Mapping[int, bool]) -> "CellCache":
        """Copy of the cell with correctness relabelled (answer classes follow)."""
        correct_class = next((r.answer_class for r in self.runs if r.correct), "correct")
        runs = []
        for r in self.runs:
            y = bool(labels.get(r.run_id, r.correct))
            answer = r.answer_class
            if y and not r.correct:
                answer = correct_class
            elif not y and r.correct:
                answer = ""
            runs.append(RunRecord(r.run_id, r.slices, y, answer))
        return CellCache(
            self.problem_id, self.model_id, tuple(runs), self.config,
            self.dropped_runs, self.dropped_slices,
        )

    @classmethod
    def from_runs(cls, problem_id, model_id, raw_runs: Iterable[Mapping],
                  config: AggregationConfig | None = None) -> "CellCache":
        """Admit raw runs, dropping empty slices and runs with no surviving slice.

        Each raw run is a mapping with ``run_id``, ``slices`` (sequence of key
        arrays in trace order), ``correct`` and optional ``answer_class``.
        Surviving slices are re-indexed consecutively.
        """
        config = config or AggregationConfig()
        runs, dropped, dropped_slices = [], [], 0
        for raw in raw_runs:
            rid = int(raw["run_id"])
            kept = []
            for keys in raw["slices"]:
                arr = np.unique(_as_keys(keys))
                if arr.size == 0:
                    dropped_slices += 1
                    continue
                kept.append(arr)
            if not kept:
                dropped.append(rid)
                continue
            slices = tuple(SliceKeySet(rid, i, k) for i, k in enumerate(kept))
            runs.append(RunRecord(rid, slices, bool(raw.get("correct", False)),
                                  str(raw.get("answer_class", "") or "")))
        return cls(str(problem_id), str(model_id), tuple(runs), config,
                   tuple(dropped), dropped_slices)


def score_token_activations(up, gate, layer: int, global_topk: int = 2000,
                            gate_fn: Callable = silu):
    """Score one layer's FFN units at a token by the positive part of ``gate_fn(gate) * up``.

    Returns ``(keys, scores)`` ordered by descending score, ties toward the
    smaller unit. Units with zero score never survive.
    """
    up = np.asarray(up, dtype=np.float64).reshape(-1)
    gate = np.asarray(gate, dtype=np.float64).reshape(-1)
    if up.shape != gate.shape:
        raise ValidationError(f"up/gate length mismatch: {up.size} != {gate.size}")
    if up.size > MAX_UNIT:
        raise ValidationError("more than 2**16 units in one layer")
    if not 0 <= layer < MAX_LAYER:
        raise ValidationError(f"layer {layer} does not fit in 16 bits")
    act = np.maximum(0.0, gate_fn(gate) * up)
    units = np.flatnonzero(act > 0)
    keys = (np.uint32(layer) << np.uint32(UNIT_BITS)) | units.astype(np.uint32)
    return _top_by_mass(keys, act[units], global_topk)


def score_token(layers: Mapping[int, tuple], global_topk: int = 2000,
                gate_fn: Callable = silu):
    """Score a token across all layers and keep the global top-k keys."""
    keys, scores = [], []
    for layer, (up, gate) in sorted(layers.items()):
        k, s = score_token_activations(up, gate, int(layer), global_topk, gate_fn)
        keys.append(k)
        scores.append(s)
    if not keys:
        return np.zeros(0, np.uint32), np.zeros(0)
    return _top_by_mass(np.concatenate(keys), np.concatenate(scores), global_topk)


def _top_by_mass(keys: np.ndarray, mass: np.ndarray, topk: int):
    # descending mass, ties -> smaller key
    order = np.lexsort((keys, -mass))[:topk]
    return keys[order], mass[order]


def _merge_mass(keys: Sequence[np.ndarray], masses: Sequence[np.ndarray]):
    if not keys:
        return np.zeros(0, np.uint32), np.zeros(0)
    k = np.concatenate(keys).astype(np.uint32)
    m = np.concatenate(masses).astype(np.float64)
    uniq, inv = np.unique(k, return_inverse=True)
    return uniq, np.bincount(inv, weights=m, minlength=uniq.size)


def _truncate(keys, mass, topk):
    positive = mass > 0
    keys, mass = _top_by_mass(keys[positive], mass[positive], topk)
    order = np.argsort(keys)
    return keys[order], mass[order]


def aggregate_rows(token_scores: Sequence, config: AggregationConfig | None = None,
                   run_id: int = 0) -> list[SliceKeySet]:
    """Aggregate per-token scored keys into analysed slices.

    ``token_scores`` holds one ``(keys, scores)`` pair per token in trace
    order. Tokens are summed into rows of ``slice_size``; each row keeps its
    ``slice_topk`` heaviest keys; every ``sep_up`` consecutive rows are merged
    by summing the retained masses and truncated to ``slice_topk`` again.
    """
    config = config or AggregationConfig()
    rows = []
    for start in range(0, len(token_scores), config.slice_size):
        chunk = token_scores[start:start + config.slice_size]
        k, m = _merge_mass([np.asarray(t[0]) for t in chunk], [np.asarray(t[1]) for t in chunk])
        rows.append(_truncate(k, m, config.slice_topk))
    slices = []
    for idx, start in enumerate(range(0, len(rows), config.sep_up)):
        group = rows[start:start + config.sep_up]
        k, m = _merge_mass([g[0] for g in group], [g[1] for g in group])
        k, _ = _truncate(k, m, config.slice_topk)
        slices.append(SliceKeySet(run_id, idx, k))
    return slices


def _manifest(cell: CellCache) -> dict:
    return {
        "cell_id": {"problem_id": cell.problem_id, "model_id": cell.model_id},
        "config": cell.config.to_dict(),
        "runs": [
            {"run_id": r.run_id, "correct": r.correct, "answer_class": r.answer_class,
             "n_slices": len(r)}
            for r in cell.runs
        ],
        "dropped_runs": list(cell.dropped_runs),
        "counters": {
            "sampled_runs": cell.sampled_runs,
            "analysed_runs": cell.n_runs,
            "dropped_runs": len(cell.dropped_runs),
            "dropped_slices": cell.dropped_slices,
        },
    }


def cache_bytes(cell: CellCache) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(bytes([VERSION]))
    manifest = json.dumps(_manifest(cell), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(manifest)))
    buf.write(manifest)
    for r in cell.runs:
        buf.write(struct.pack("<I", len(r)))
        for s in r.slices:
            buf.write(struct.pack("<I", len(s)))
            buf.write(s.keys.astype("<u4").tobytes())
    return buf.getvalue()


def cache_digest(cell: CellCache) -> str:
    return hashlib.sha256(cache_bytes(cell)).hexdigest()


def write_cache(cell: CellCache, path) -> Path:
    path = Path(path)
    path.write_bytes(cache_bytes(cell))
    return path


def _cell_from_manifest(manifest: Mapping, run_keys: Sequence[Sequence]) -> CellCache:
    try:
        config = AggregationConfig.from_dict(manifest["config"])
        entries = manifest["runs"]
        cell_id = manifest["cell_id"]
    except (KeyError, TypeError) as exc:
        raise CacheFormatError(f"manifest missing field: {exc}") from exc
    runs = []
    for entry, slices in zip(entries, run_keys):
        rid = int(entry["run_id"])
        runs.append(RunRecord(
            rid,
            tuple(SliceKeySet(rid, i, k) for i, k in enumerate(slices)),
            bool(entry["correct"]),
            entry.get("answer_class", ""),
        ))
    counters = manifest.get("counters", {})
    return CellCache(
        str(cell_id["problem_id"]), str(cell_id["model_id"]), tuple(runs), config,
        tuple(manifest.get("dropped_runs", ())), int(counters.get("dropped_slices", 0)),
    )


def read_manifest(path) -> dict:
    data = Path(path).read_bytes()
    manifest, _ = _parse_header(data)
    return manifest


def _parse_header(data: bytes):
    if len(data) < len(MAGIC) + 5 or data[:len(MAGIC)] != MAGIC:
        raise CacheFormatError("not a slicegraph cache (bad magic)")
    version = data[len(MAGIC)]
    if version != VERSION:
        raise CacheFormatError(f"unsupported cache version {version}")
    pos = len(MAGIC) + 1
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if pos + n > len(data):
        raise CacheFormatError("truncated manifest")
    try:
        manifest = json.loads(data[pos:pos + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CacheFormatError(f"manifest is not valid JSON: {exc}") from exc
    return manifest, pos + n


def read_cache(path) -> CellCache:
    data = Path(path).read_bytes()
    manifest, pos = _parse_header(data)
    run_keys = []
    try:
        for entry in manifest["runs"]:
            (n_slices,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if n_slices != entry["n_slices"]:
                raise CacheFormatError(f"run {entry['run_id']}: slice count disagrees with manifest")
            slices = []
            for _ in range(n_slices):
                (n_keys,) = struct.unpack_from("<I", data, pos)
                pos += 4
                end = pos + 4 * n_keys
                if end > len(data):
                    raise CacheFormatError("truncated key block")
                slices.append(np.frombuffer(data, dtype="<u4", count=n_keys, offset=pos))
                pos = end
            run_keys.append(slices)
    except struct.error as exc:
        raise CacheFormatError(f"truncated cache: {exc}") from exc
    if pos != len(data):
        raise CacheFormatError("trailing bytes after last run block")
    return _cell_from_manifest(manifest, run_keys)


def export_json(cell: CellCache, path) -> Path:
    """Write the plain-JSON debugging sidecar."""
    payload = _manifest(cell)
    for entry, r in zip(payload["runs"], cell.runs):
        entry["slices"] = [s.keys.tolist() for s in r.slices]
    path = Path(path)
    path.write_text(json.dumps(payload, sort_keys=True, indent=1), encoding="utf-8")
    return path


def read_json(path) -> CellCache:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        run_keys = [entry["slices"] for entry in payload["runs"]]
    except (KeyError, TypeError) as exc:
        raise CacheFormatError(f"sidecar missing field: {exc}") from exc
    return _cell_from_manifest(payload, run_keys)
