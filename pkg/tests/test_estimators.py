import numpy as np
import pytest
from sklearn.base import clone

from slicegraph import (ProcessFamilyDetector, RewardFieldEstimator, SliceGraphAtlas,
                        TypedKernelEstimator)
from slicegraph.dynamics import lift_cell
from slicegraph.exceptions import ValidationError
from slicegraph.robustness import run_field_scores


def test_params_roundtrip_and_clone():
    est = SliceGraphAtlas(k_neighbors=4, sigma=0.2)
    assert est.get_params()["k_neighbors"] == 4
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est
    assert clone(ProcessFamilyDetector(tau=0.1)).tau == 0.1
    assert RewardFieldEstimator().set_params(alpha=0.5).alpha == 0.5


def test_atlas_estimator_matches_functional_pipeline(planted3):
    cell, _, a = planted3
    est = SliceGraphAtlas().fit(cell)
    assert np.array_equal(est.graph_.edges, a.graph.edges)
    assert est.n_blocks_ == len(a.atlas.nontrivial)
    slices = [s for r in cell.runs[:3] for s in r.slices]
    routed = est.transform(slices)
    expected = [a.atlas.primary_block.get((s.run_id, s.slice_index)) for s in slices]
    assert routed.tolist() == [-1 if b is None else b for b in expected]
    assert est.transform([]).size == 0


def test_family_detector_matches_partition(planted3):
    cell, _, a = planted3
    det = ProcessFamilyDetector().fit((cell, a.atlas))
    assert det.n_families_ == a.partition.family_count == 3
    assert dict(zip(det.runs_.tolist(), det.labels_.tolist())) == a.partition.labels


def test_reward_estimator_predicts_run_scores(planted3):
    cell, _, a = planted3
    est = RewardFieldEstimator().fit(a.atlas, cell.labels())
    expected = run_field_scores(a.atlas, a.field.as_dict())
    runs = sorted(expected)
    assert np.allclose(est.predict(runs), [expected[r] for r in runs])
    assert np.isnan(est.predict([10 ** 6])[0])
    assert est.core_.blocks == a.core.blocks


def test_kernel_estimator_tv_matrix(planted3):
    cell, _, a = planted3
    seqs, _ = lift_cell(cell, a.atlas, a.core.blocks)
    est = TypedKernelEstimator().fit(seqs, a.partition.labels)
    tv = est.tv_matrix()
    assert tv.shape == (3, 3) and np.allclose(tv, tv.T) and np.all(np.diag(tv) == 0)


def test_invalid_inputs_raise():
    with pytest.raises(ValidationError):
        SliceGraphAtlas().fit("not a cell")
    with pytest.raises(ValidationError):
        RewardFieldEstimator(alpha=1.5).fit(None, {})


def test_invalid_hyperparameters_raise(planted3):
    cell, _, a = planted3
    with pytest.raises(ValidationError):
        SliceGraphAtlas(k_neighbors=0).fit(cell)
    with pytest.raises(ValidationError):
        SliceGraphAtlas(metric="hamming").fit(cell)
    with pytest.raises(ValidationError):
        ProcessFamilyDetector(resolution=-1).fit((cell, a.atlas))
    with pytest.raises(ValidationError):
        RewardFieldEstimator(alpha=1.5).fit(a.atlas, cell.labels())
