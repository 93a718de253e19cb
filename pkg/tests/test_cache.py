import numpy as np
import pytest
from hypothesis import given, strategies as st

from slicegraph.cache import (AggregationConfig, CellCache, aggregate_rows, decode_key, encode_key,
                              export_json, read_cache, read_json, read_manifest,
                              score_token_activations, silu, write_cache)
from slicegraph.exceptions import CacheFormatError, ValidationError

from helpers import make_cell


def test_positive_part_clamp_keeps_only_unit_zero():
    keys, scores = score_token_activations([1, -1], [10, 10], layer=0, global_topk=2)
    assert keys.tolist() == [0]
    assert scores[0] == pytest.approx(silu(10.0))


def test_zero_gate_gives_empty_result():
    keys, _ = score_token_activations([2, 3], [0, 0], layer=5)
    assert keys.size == 0


def test_top2_of_three_units_in_layer_two():
    keys, scores = score_token_activations([1, 1, 1], [1, 2, 3], layer=2, global_topk=2)
    assert [decode_key(int(k)) for k in keys] == [(2, 2), (2, 1)]
    assert scores[0] > scores[1]


def test_key_encoding_roundtrip_and_range():
    assert decode_key(encode_key(7, 65535)) == (7, 65535)
    with pytest.raises(ValidationError):
        encode_key(0, 65536)


def test_256_tokens_make_one_slice():
    tokens = [(np.array([i % 7], np.uint32), np.array([1.0])) for i in range(256)]
    assert len(aggregate_rows(tokens, AggregationConfig(slice_size=32, sep_up=8))) == 1


def test_single_token_under_capacity():
    slices = aggregate_rows([(np.array([5, 9, 11], np.uint32), np.array([3.0, 2.0, 1.0]))])
    assert len(slices) == 1 and slices[0].keys.tolist() == [5, 9, 11]


def test_merged_rows_keep_heaviest_500_of_union():
    rng = np.random.default_rng(0)
    mass = rng.permutation(1000).astype(float) + 1.0
    row_a = (np.arange(500, dtype=np.uint32), mass[:500])
    row_b = (np.arange(500, 1000, dtype=np.uint32), mass[500:])
    cfg = AggregationConfig(slice_size=1, sep_up=2, slice_topk=500)
    (s,) = aggregate_rows([row_a, row_b], cfg)
    expected = np.sort(np.argsort(-mass)[:500])
    assert s.keys.tolist() == expected.tolist()


@given(st.lists(st.lists(st.lists(st.integers(0, 5000), max_size=12), min_size=1, max_size=4),
                min_size=1, max_size=5),
       st.lists(st.booleans(), min_size=5, max_size=5))
def test_cache_roundtrip_is_identity(tmp_path_factory, runs, correct):
    cell = CellCache.from_runs("p", "m", [
        {"run_id": r, "slices": sl, "correct": c, "answer_class": "A"}
        for r, (sl, c) in enumerate(zip(runs, correct))])
    if cell.n_runs == 0:
        return
    path = tmp_path_factory.mktemp("c") / "cell.slg"
    write_cache(cell, path)
    back = read_cache(path)
    assert back == cell
    assert back.sampled_runs == back.n_runs + len(back.dropped_runs)


def test_json_sidecar_roundtrip(tmp_path):
    cell = make_cell([[[1, 2], [3]], [[4]]], [True, False])
    assert read_json(export_json(cell, tmp_path / "c.json")) == cell


def test_version_gate(tmp_path):
    cell = make_cell([[[1, 2]]])
    data = bytearray((write_cache(cell, tmp_path / "c.slg")).read_bytes())
    data[8] = 2
    (tmp_path / "bad.slg").write_bytes(bytes(data))
    with pytest.raises(CacheFormatError):
        read_cache(tmp_path / "bad.slg")


def test_run_with_only_empty_slices_is_dropped(tmp_path):
    cell = CellCache.from_runs("p", "m", [
        {"run_id": 0, "slices": [[1, 2]], "correct": True, "answer_class": "A"},
        {"run_id": 1, "slices": [[], []], "correct": False}])
    assert [r.run_id for r in cell.runs] == [0]
    man = read_manifest(write_cache(cell, tmp_path / "c.slg"))
    assert man["counters"]["dropped_runs"] == 1
    assert man["counters"]["sampled_runs"] == 2
    assert man["dropped_runs"] == [1]


def test_empty_slice_is_dropped_and_reindexed():
    cell = CellCache.from_runs("p", "m", [
        {"run_id": 0, "slices": [[1], [], [2]], "correct": True, "answer_class": "A"}])
    assert [s.slice_index for s in cell.runs[0].slices] == [0, 1]
    assert cell.dropped_slices == 1


def test_truncated_file_rejected(tmp_path):
    cell = make_cell([[[1, 2, 3]]])
    data = write_cache(cell, tmp_path / "c.slg").read_bytes()
    (tmp_path / "t.slg").write_bytes(data[:-2])
    with pytest.raises(CacheFormatError):
        read_cache(tmp_path / "t.slg")
