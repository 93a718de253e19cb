"""Typed-state chains, Laplace-smoothed family kernels and absorbing-chain diagnostics.

States are strings ``"role:posbin:core"`` (core is 0/1) plus the two absorbing
terminals ``EOS_correct`` and ``EOS_wrong``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .atlas import BlockAtlas, ROLES
from .cache import CellCache

EOS_CORRECT = "EOS_correct"
EOS_WRONG = "EOS_wrong"
TERMINALS = (EOS_CORRECT, EOS_WRONG)
POSBINS = ("early", "mid", "late")
SMOOTHING = 0.5


def posbin(slice_index: int, run_length: int) -> str:
    """Position third of a slice; boundaries at 1/3 and 2/3 fall in the lower bin."""
    d = max(1, run_length - 1)
    if 3 * slice_index <= d:
        return "early"
    if 3 * slice_index <= 2 * d:
        return "mid"
    return "late"


def state_label(role: str, bin_: str, in_core: bool) -> str:
    return f"{role}:{bin_}:{int(bool(in_core))}"


def parse_state(label: str) -> Optional[tuple]:
    if label in TERMINALS:
        return None
    role, bin_, core = label.split(":")
    return role, bin_, core == "1"


def is_core_state(label: str) -> bool:
    parsed = parse_state(label)
    return parsed is not None and parsed[2]


def _state_order(label: str):
    if label in TERMINALS:
        return (1, TERMINALS.index(label), 0, 0)
    role, bin_, core = parse_state(label)
    return (0, ROLES.index(role), POSBINS.index(bin_), int(core))


def compact(seq: Sequence) -> list:
    out = []
    for s in seq:
        if not out or out[-1] != s:
            out.append(s)
    return out


def lift_run(slices: Sequence[tuple[int, Optional[int]]], run_length: int, atlas: BlockAtlas,
             core_blocks: Iterable[int], correct: bool, compacted: bool = True) -> list[str]:
    """Typed-state chain for one run from ``(slice_index, primary_block)`` pairs.

    Slices without a primary block are skipped before compaction. The terminal
    is appended only when at least one typed state survives.
    """
    core = set(core_blocks)
    states = [state_label(atlas.blocks[b].role, posbin(t, run_length), b in core)
              for t, b in slices if b is not None]
    if compacted:
        states = compact(states)
    if not states:
        return []
    return states + [EOS_CORRECT if correct else EOS_WRONG]


def lift_cell(cell: CellCache, atlas: BlockAtlas, core_blocks: Iterable[int],
              compacted: bool = True) -> tuple[dict[int, list[str]], tuple]:
    """Typed chains for every run; returns ``(sequences, excluded_run_ids)``."""
    core = set(core_blocks)
    per_run: dict[int, list] = {}
    for node in atlas.nodes:
        per_run.setdefault(node[0], []).append((node[1], atlas.primary_block.get(node)))
    seqs, excluded = {}, []
    for run in cell.runs:
        seq = lift_run(per_run.get(run.run_id, []), len(run), atlas, core, run.correct, compacted)
        if seq:
            seqs[run.run_id] = seq
        else:
            excluded.append(run.run_id)
    return seqs, tuple(excluded)


def build_alphabet(sequences: Iterable[Sequence[str]]) -> tuple:
    seen = {s for seq in sequences for s in seq if s not in TERMINALS}
    return tuple(sorted(seen, key=_state_order)) + TERMINALS


def count_transitions(sequences: Iterable[Sequence[str]], alphabet: Sequence[str]) -> np.ndarray:
    idx = {s: i for i, s in enumerate(alphabet)}
    counts = np.zeros((len(alphabet), len(alphabet)))
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            counts[idx[a], idx[b]] += 1
    return counts


def smooth_kernel(counts: np.ndarray, alphabet: Sequence[str], alpha: float = SMOOTHING) -> np.ndarray:
    """``(C_ij + alpha) / (sum_j C_ij + alpha |S|)`` with terminal rows made absorbing."""
    n = counts.shape[0]
    P = (counts + alpha) / (counts.sum(axis=1, keepdims=True) + alpha * n)
    for i, s in enumerate(alphabet):
        if s in TERMINALS:
            P[i] = 0.0
            P[i, i] = 1.0
    return P


@dataclass(frozen=True, eq=False)
class TypedKernelSet:
    alphabet: tuple
    counts: dict
    kernels: dict
    alpha: float = SMOOTHING
    low_support: tuple = ()

    def visited_rows(self, family) -> np.ndarray:
        return self.counts[family].sum(axis=1) > 0

    def to_dict(self) -> dict:
        return {
            "alphabet": list(self.alphabet),
            "alpha": self.alpha,
            "low_support": list(self.low_support),
            "counts": {str(f): c.tolist() for f, c in self.counts.items()},
            "kernels": {str(f): k.tolist() for f, k in self.kernels.items()},
        }


def estimate_kernels(groups: Mapping, alphabet: Sequence[str] | None = None,
                     alpha: float = SMOOTHING) -> TypedKernelSet:
    """Per-group smoothed kernels over a shared alphabet.

    ``groups`` maps a family id to its list of typed-state sequences.
    """
    if alphabet is None:
        alphabet = build_alphabet(s for seqs in groups.values() for s in seqs)
    alphabet = tuple(alphabet)
    counts, kernels, low = {}, {}, []
    for f in sorted(groups):
        c = count_transitions(groups[f], alphabet)
        counts[f] = c
        kernels[f] = smooth_kernel(c, alphabet, alpha)
        if c.sum() == 0:
            low.append(f)
    return TypedKernelSet(alphabet, counts, kernels, alpha, tuple(low))


def pooled_kernel(sequences: Iterable[Sequence[str]], alphabet: Sequence[str],
                  alpha: float = SMOOTHING) -> np.ndarray:
    """Kernel from summed transition counts (not an average of family kernels)."""
    return smooth_kernel(count_transitions(sequences, alphabet), alphabet, alpha)


def family_tv(P: np.ndarray, Q: np.ndarray, mode: str = "full",
              visits_p: np.ndarray | None = None, visits_q: np.ndarray | None = None,
              alphabet: Sequence[str] | None = None,
              exclude_terminals: bool = False) -> Optional[float]:
    """Row-averaged total variation between two kernels on the same alphabet.

    ``common_support`` averages over rows visited by both families and
    returns ``None`` when no row is shared. ``exclude_terminals`` drops the
    two terminal rows from the denominator.
    """
    if P.shape != Q.shape:
        raise ValueError("kernels must share an alphabet")
    rows = 0.5 * np.abs(P - Q).sum(axis=1)
    keep = np.ones(rows.size, dtype=bool)
    if exclude_terminals:
        if alphabet is None:
            raise ValueError("alphabet required to exclude terminal rows")
        keep &= np.array([s not in TERMINALS for s in alphabet])
    if mode == "common_support":
        if visits_p is None or visits_q is None:
            raise ValueError("common_support needs visit masks for both kernels")
        keep &= np.asarray(visits_p, bool) & np.asarray(visits_q, bool)
    elif mode != "full":
        raise ValueError(f"unknown TV mode {mode!r}")
    if not keep.any():
        return None
    return float(rows[keep].mean())


def pairwise_tv(ks: TypedKernelSet, mode: str = "full") -> list[dict]:
    out = []
    for f, g in combinations(sorted(ks.kernels), 2):
        vf, vg = ks.visited_rows(f), ks.visited_rows(g)
        out.append({
            "family_a": f, "family_b": g,
            "tv": family_tv(ks.kernels[f], ks.kernels[g], mode, vf, vg),
            "shared_rows": int((vf & vg).sum()),
        })
    return out


def mean_family_tv(ks: TypedKernelSet, mode: str = "full") -> Optional[float]:
    vals = [p["tv"] for p in pairwise_tv(ks, mode) if p["tv"] is not None]
    return float(np.mean(vals)) if vals else None


def _transient(alphabet: Sequence[str]) -> np.ndarray:
    return np.array([s not in TERMINALS for s in alphabet])


def committor(P: np.ndarray, alphabet: Sequence[str]) -> np.ndarray:
    """Absorption probability at ``EOS_correct`` from every state: ``(I - Q) q = r_A``."""
    alphabet = list(alphabet)
    T = np.flatnonzero(_transient(alphabet))
    q = np.zeros(len(alphabet))
    q[alphabet.index(EOS_CORRECT)] = 1.0
    if T.size:
        Q = P[np.ix_(T, T)]
        r = P[T, alphabet.index(EOS_CORRECT)]
        q[T] = np.linalg.solve(np.eye(T.size) - Q, r)
    return np.clip(q, 0.0, 1.0)


def core_occupancy(sequences: Iterable[Sequence[str]], alphabet: Sequence[str]) -> np.ndarray:
    """Empirical frequency of each core state among core-state occurrences."""
    idx = {s: i for i, s in enumerate(alphabet)}
    occ = np.zeros(len(alphabet))
    for seq in sequences:
        for s in seq:
            if is_core_state(s):
                occ[idx[s]] += 1
    total = occ.sum()
    return occ / total if total else occ


def escape_hazard(P: np.ndarray, alphabet: Sequence[str], occupancy: np.ndarray,
                  steps: int = 3) -> Optional[float]:
    """``sum_{i in C} pi(i) sum_{j not in C} (P^steps)_ij``; ``None`` for an empty core."""
    core = np.array([is_core_state(s) for s in alphabet])
    if not core.any():
        return None
    Pk = np.linalg.matrix_power(P, steps)
    leak = Pk[:, ~core].sum(axis=1)
    return float((occupancy[core] * leak[core]).sum())


def mfpt_to_core(P: np.ndarray, alphabet: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Hit probability of the core and expected steps to reach it given that it is hit.

    Core states and terminals are absorbing. Core states get time 0; states
    that cannot reach the core (including terminals) get ``inf``.
    """
    core = np.array([is_core_state(s) for s in alphabet])
    free = _transient(alphabet) & ~core
    hit = core.astype(float)
    time = np.where(core, 0.0, np.inf)
    F = np.flatnonzero(free)
    if F.size and core.any():
        A = np.eye(F.size) - P[np.ix_(F, F)]
        h = np.linalg.solve(A, P[np.ix_(F, np.flatnonzero(core))].sum(axis=1))
        u = np.linalg.solve(A, h)
        hit[F] = h
        with np.errstate(divide="ignore", invalid="ignore"):
            time[F] = np.where(h > 0, u / h, np.inf)
    return hit, time


@dataclass(frozen=True, eq=False)
class DynamicsResult:
    kernels: TypedKernelSet
    pooled: np.ndarray = field(repr=False)
    committor: np.ndarray = field(repr=False)
    hit_core: np.ndarray = field(repr=False)
    mfpt: np.ndarray = field(repr=False)
    h3: Optional[float] = None
    h3_raw: Optional[float] = None
    tv_full: Optional[float] = None
    tv_common: Optional[float] = None
    excluded_runs: tuple = ()

    def state_rows(self) -> list[dict]:
        return [{"state": s, "committor": float(q), "hit_core": float(h),
                 "mfpt": float(m) if np.isfinite(m) else None}
                for s, q, h, m in zip(self.kernels.alphabet, self.committor, self.hit_core, self.mfpt)]

    def to_dict(self) -> dict:
        return {**self.kernels.to_dict(), "h3": self.h3, "h3_raw": self.h3_raw,
                "tv_full": self.tv_full, "tv_common_support": self.tv_common,
                "excluded_runs": list(self.excluded_runs), "states": self.state_rows(),
                "pairwise_tv": [{**a, "tv_common_support": b["tv"]} for a, b in
                                zip(pairwise_tv(self.kernels, "full"),
                                    pairwise_tv(self.kernels, "common_support"))]}


def analyze_dynamics(cell: CellCache, atlas: BlockAtlas, core_blocks: Iterable[int],
                     families: Mapping[int, int], alpha: float = SMOOTHING) -> DynamicsResult:
    """Family kernels over correct-run chains; diagnostics on the pooled all-run kernel."""
    core_blocks = set(core_blocks)
    seqs, excluded = lift_cell(cell, atlas, core_blocks)
    raw, _ = lift_cell(cell, atlas, core_blocks, compacted=False)
    alphabet = build_alphabet(seqs.values())
    groups: dict[int, list] = {}
    for r, f in families.items():
        if r in seqs:
            groups.setdefault(f, []).append(seqs[r])
    ks = estimate_kernels(groups, alphabet, alpha)
    pooled = pooled_kernel(seqs.values(), alphabet, alpha)
    hit, time = mfpt_to_core(pooled, alphabet)
    return DynamicsResult(
        kernels=ks, pooled=pooled, committor=committor(pooled, alphabet),
        hit_core=hit, mfpt=time,
        h3=escape_hazard(pooled, alphabet, core_occupancy(seqs.values(), alphabet)),
        h3_raw=escape_hazard(pooled, alphabet, core_occupancy(raw.values(), alphabet)),
        tv_full=mean_family_tv(ks, "full"), tv_common=mean_family_tv(ks, "common_support"),
        excluded_runs=excluded,
    )


def write_kernel_json(result: DynamicsResult, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(result.to_dict(), sort_keys=True), encoding="utf-8")
    return path


def write_diagnostics_csv(result: DynamicsResult, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["state", "committor", "hit_core", "mfpt"])
        w.writeheader()
        w.writerows(result.state_rows())
    return path
