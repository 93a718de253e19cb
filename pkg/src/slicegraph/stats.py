"""Problem-clustered bootstrap, Benjamini-Hochberg step-up and null summaries."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np


def clustered_bootstrap(values: Sequence[float], groups: Sequence, n_boot: int = 1000,
                        seed: int = 0, level: float = 0.95) -> tuple[float, float, float]:
    """Mean and percentile CI when whole problems (``groups``) are resampled with replacement.

    Each replicate pools every cell of the sampled problems (a problem drawn
    twice contributes its cells twice) and takes the pooled mean.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("clustered bootstrap needs at least one value")
    keys, inv = np.unique(np.asarray(groups, dtype=object).astype(str), return_inverse=True)
    sums = np.bincount(inv, weights=values, minlength=keys.size)
    counts = np.bincount(inv, minlength=keys.size).astype(np.float64)
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, keys.size, size=(n_boot, keys.size))
    means = sums[draws].sum(axis=1) / counts[draws].sum(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(means, [tail, 100.0 - tail])
    return float(values.mean()), float(lo), float(hi)


def bh_fdr(p_values: Sequence[float], q: float = 0.05) -> np.ndarray:
    """Boolean rejection mask from the Benjamini-Hochberg step-up procedure."""
    p = np.asarray(p_values, dtype=np.float64)
    m = p.size
    reject = np.zeros(m, dtype=bool)
    if m == 0:
        return reject
    order = np.argsort(p, kind="stable")
    passed = np.flatnonzero(p[order] <= q * np.arange(1, m + 1) / m)
    if passed.size:
        reject[order[: passed[-1] + 1]] = True
    return reject


@dataclass(frozen=True)
class NullResult:
    real: float
    mean: float
    sd: float
    p95: float
    z: Optional[float]
    above_p95: bool
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_null(real: float, null_values: Sequence[float]) -> NullResult:
    """z-score and 95th percentile (linear interpolation) from one shuffle set."""
    vals = np.asarray([v for v in null_values if v is not None], dtype=np.float64)
    if vals.size == 0:
        raise ValueError("empty null distribution")
    mean = float(vals.mean())
    sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
    p95 = float(np.percentile(vals, 95))
    z = (real - mean) / sd if sd > 0 else None
    return NullResult(float(real), mean, sd, p95, z, bool(real > p95), int(vals.size))
