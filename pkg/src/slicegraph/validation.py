"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

from numbers import Integral, Real
from typing import Mapping

from .atlas import BlockAtlas
from .cache import CellCache
from .exceptions import ValidationError
from .graph import METRICS


def check_cell(cell) -> CellCache:
    if not isinstance(cell, CellCache):
        raise ValidationError(f"expected a CellCache, got {type(cell).__name__}")
    if cell.n_runs == 0:
        raise ValidationError("cell has no runs")
    return cell


def check_atlas(atlas) -> BlockAtlas:
    if not isinstance(atlas, BlockAtlas):
        raise ValidationError(f"expected a BlockAtlas, got {type(atlas).__name__}")
    return atlas


def check_labels(labels, cell: CellCache | None = None) -> dict[int, bool]:
    """Run-id to correctness mapping; every run of ``cell`` must be labelled."""
    if labels is None and cell is not None:
        return cell.labels()
    if not isinstance(labels, Mapping):
        raise ValidationError("labels must map run_id -> bool")
    out = {int(r): bool(y) for r, y in labels.items()}
    if cell is not None:
        missing = {r.run_id for r in cell.runs} - set(out)
        if missing:
            raise ValidationError(f"labels missing for runs {sorted(missing)[:5]}")
    return out


def check_fraction(value, name: str, inclusive_zero: bool = True) -> float:
    if not isinstance(value, Real) or isinstance(value, bool):
        raise ValidationError(f"{name} must be a real number")
    lo_ok = value >= 0 if inclusive_zero else value > 0
    if not (lo_ok and value <= 1):
        raise ValidationError(f"{name} must lie in [0, 1], got {value}")
    return float(value)


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, Integral) or isinstance(value, bool) or value < 1:
        raise ValidationError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_positive(value, name: str) -> float:
    if not isinstance(value, Real) or isinstance(value, bool) or not value > 0:
        raise ValidationError(f"{name} must be strictly positive, got {value!r}")
    return float(value)


def check_metric(metric: str) -> str:
    if metric not in METRICS:
        raise ValidationError(f"metric must be one of {METRICS}, got {metric!r}")
    return metric
