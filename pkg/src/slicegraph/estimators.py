"""scikit-learn style wrappers over the functional pipeline.

The functional modules remain the reference implementation; these classes
only hold hyperparameters (``get_params``/``set_params``), validate inputs
and keep fitted state in trailing-underscore attributes.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .atlas import RoleThresholds, build_atlas
from .dynamics import estimate_kernels, family_tv
from .families import detect_families
from .graph import build_graph, cross_distances
from .reward import CORE_QUANTILE, field_cores, reward_field
from .robustness import run_field_scores
from .validation import (check_atlas, check_cell, check_fraction, check_labels, check_metric,
                         check_positive, check_positive_int)


class SliceGraphAtlas(BaseEstimator, TransformerMixin):
    """Fit a mutual-kNN SliceGraph and its block atlas on one cell.

    ``transform`` routes new slices (key arrays or ``SliceKeySet``) to the
    primary block of their nearest fitted slice; ``-1`` marks slices whose
    neighbour is in no non-trivial block.
    """

    def __init__(self, k_neighbors=6, sigma=0.35, size_cap=2600, metric="jaccard", seed=0,
                 thresholds=None):
        self.k_neighbors = k_neighbors
        self.sigma = sigma
        self.size_cap = size_cap
        self.metric = metric
        self.seed = seed
        self.thresholds = thresholds

    def fit(self, X, y=None):
        cell = check_cell(X)
        check_metric(self.metric)
        config = replace(cell.config,
                         k_neighbors=check_positive_int(self.k_neighbors, "k_neighbors"),
                         sigma=check_positive(self.sigma, "sigma"),
                         size_cap=check_positive_int(self.size_cap, "size_cap"))
        self.graph_ = build_graph(cell, config, self.metric, self.seed)
        self.atlas_ = build_atlas(self.graph_, cell, self.thresholds or RoleThresholds())
        self.n_blocks_ = len(self.atlas_.nontrivial)
        return self

    def transform(self, X):
        check_is_fitted(self, "atlas_")
        keys = [getattr(x, "keys", x) for x in X]
        if not keys:
            return np.zeros(0, dtype=np.int64)
        nearest = np.argmin(cross_distances(keys, self.graph_.keysets, self.metric), axis=1)
        blocks = [self.atlas_.primary_block.get(self.graph_.nodes[j]) for j in nearest]
        return np.array([-1 if b is None else b for b in blocks], dtype=np.int64)


class ProcessFamilyDetector(BaseEstimator, ClusterMixin):
    """Louvain process families over a fitted atlas's correct runs.

    ``fit`` takes ``(cell, atlas)``; ``labels_`` follows ``runs_`` order.
    """

    def __init__(self, tau=0.05, resolution=1.0, seed=42, include_bridges=False,
                 weight_source="full"):
        self.tau = tau
        self.resolution = resolution
        self.seed = seed
        self.include_bridges = include_bridges
        self.weight_source = weight_source

    def fit(self, X, y=None):
        cell, atlas = X
        check_cell(cell)
        check_atlas(atlas)
        check_fraction(self.tau, "tau")
        check_positive(self.resolution, "resolution")
        self.partition_ = detect_families(cell, atlas, self.tau, self.resolution, self.seed,
                                          self.include_bridges, self.weight_source,
                                          labels=check_labels(y, cell) if y is not None else None)
        self.runs_ = np.array(self.partition_.runs, dtype=np.int64)
        self.labels_ = np.array([self.partition_.labels[r] for r in self.partition_.runs],
                                dtype=np.int64)
        self.n_families_ = self.partition_.family_count
        return self


class RewardFieldEstimator(BaseEstimator):
    """Diffused reward field and high-value core of an atlas under run labels.

    ``predict`` returns the mean field value along each run's primary path.
    """

    def __init__(self, alpha=0.65, steps=24, core_quantile=CORE_QUANTILE):
        self.alpha = alpha
        self.steps = steps
        self.core_quantile = core_quantile

    def fit(self, X, y):
        atlas = check_atlas(X)
        check_fraction(self.alpha, "alpha")
        check_positive_int(self.steps, "steps")
        self.field_ = reward_field(atlas, check_labels(y), self.alpha, self.steps)
        self.core_ = field_cores(self.field_, self.core_quantile)
        self.atlas_ = atlas
        return self

    def predict(self, run_ids):
        check_is_fitted(self, "field_")
        scores = run_field_scores(self.atlas_, self.field_.as_dict())
        return np.array([scores.get(int(r), np.nan) for r in run_ids])


class TypedKernelEstimator(BaseEstimator):
    """Laplace-smoothed per-family kernels from typed-state sequences.

    ``fit(sequences, families)`` takes ``{run_id: states}`` and
    ``{run_id: family}``.
    """

    def __init__(self, smoothing=0.5, mode="full"):
        self.smoothing = smoothing
        self.mode = mode

    def fit(self, X, y):
        check_positive(self.smoothing, "smoothing")
        groups: dict = {}
        for r, f in y.items():
            if r in X:
                groups.setdefault(f, []).append(X[r])
        self.kernels_ = estimate_kernels(groups, alpha=self.smoothing)
        return self

    def tv_matrix(self):
        check_is_fitted(self, "kernels_")
        ks = self.kernels_
        fams = sorted(ks.kernels)
        out = np.zeros((len(fams), len(fams)))
        for i, f in enumerate(fams):
            for j, g in enumerate(fams):
                if i < j:
                    tv = family_tv(ks.kernels[f], ks.kernels[g], self.mode,
                                   ks.visited_rows(f), ks.visited_rows(g))
                    out[i, j] = out[j, i] = np.nan if tv is None else tv
        return out
