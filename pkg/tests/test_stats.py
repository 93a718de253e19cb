import numpy as np
import pytest
from hypothesis import given, strategies as st

from slicegraph.stats import bh_fdr, clustered_bootstrap, summarize_null

from oracles import exact_cluster_bootstrap


def test_bh_hand_thresholds():
    # step-up thresholds i*q/m at q=0.05 are 0.0125, 0.025, 0.0375, 0.05;
    # 0.04 misses its 0.0375 threshold, so only the two smallest are rejected
    p = [0.01, 0.02, 0.04, 0.5]
    assert bh_fdr(p, 0.05).tolist() == [True, True, False, False]
    # at q=0.10 the thresholds are 0.025, 0.05, 0.075, 0.1 and three pass
    assert bh_fdr(p, 0.10).tolist() == [True, True, True, False]


def test_bh_trivial_cases():
    assert not bh_fdr([1.0, 1.0, 1.0]).any()
    assert bh_fdr([0.01], 0.05).tolist() == [True]
    assert bh_fdr([]).size == 0


@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.sampled_from([0.01, 0.05, 0.1]))
def test_bh_matches_sorted_step_up(p, q):
    mask = bh_fdr(p, q)
    ps = sorted(p)
    m = len(p)
    k = max([i + 1 for i in range(m) if ps[i] <= q * (i + 1) / m], default=0)
    assert mask.sum() >= k
    if k:
        assert all(mask[i] for i in range(m) if p[i] < ps[k - 1])
        assert all(not mask[i] for i in range(m) if p[i] > ps[k - 1])
    # order invariance
    perm = np.random.default_rng(0).permutation(m)
    assert bh_fdr(np.asarray(p)[perm], q).tolist() == mask[perm].tolist()


def test_bootstrap_constant_and_single_problem():
    assert clustered_bootstrap([0.3, 0.3, 0.3], ["a", "b", "c"]) == pytest.approx((0.3, 0.3, 0.3))
    m, lo, hi = clustered_bootstrap([0.1, 0.5], ["a", "a"])
    assert lo == hi == pytest.approx(0.3) and m == pytest.approx(0.3)


def _exact_ci(dist, level=0.95):
    tail = 100 * (1 - level) / 2
    # quantiles of the discrete resampling law (each enumerated resample equally likely)
    return (np.percentile(dist, tail, method="inverted_cdf"),
            np.percentile(dist, 100 - tail, method="inverted_cdf"))


@pytest.mark.parametrize("values,groups", [
    ([0.0, 1.0], ["a", "b"]),
    ([0.0, 0.0, 1.0], ["a", "a", "b"]),
])
def test_bootstrap_two_problem_ci_matches_enumeration(values, groups):
    dist = exact_cluster_bootstrap(values, groups)
    # the 4 equiprobable resamples place >= 25% mass on each extreme
    assert dist[0] == min(values) and dist[-1] == max(values)
    lo_exact, hi_exact = _exact_ci(dist)
    _, lo, hi = clustered_bootstrap(values, groups, n_boot=1000, seed=0)
    assert (lo, hi) == (lo_exact, hi_exact)


def test_bootstrap_three_outcome_distribution():
    dist = exact_cluster_bootstrap([0.0, 1.0], ["a", "b"])
    assert dist == [0.0, 0.5, 0.5, 1.0]


def test_summarize_null():
    r = summarize_null(5.0, [1.0, 2.0, 3.0])
    assert r.mean == 2.0 and r.sd == 1.0 and r.z == 3.0
    assert r.p95 == pytest.approx(2.9) and r.above_p95
    flat = summarize_null(1.0, [1.0, 1.0])
    assert flat.z is None and not flat.above_p95
    with pytest.raises(ValueError):
        summarize_null(0.0, [])
