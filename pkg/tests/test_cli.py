import csv
import json

import numpy as np
import pytest

from slicegraph.cache import read_cache
from slicegraph.cli import main


def _synth(tmp_path, *extra, seed="3", pid="p0"):
    out = tmp_path / "synth"
    assert main(["synth", "--out", str(out), "--runs", "24", "--families", "3",
                 "--accuracy", "0.75", "--problem-id", pid, "--seed", seed, *extra]) == 0
    return out / f"{pid}.slg", out / f"{pid}.truth.json"


def test_synth_build_families_roundtrip_recovers_counts(tmp_path):
    cache, truth_path = _synth(tmp_path)
    truth = json.loads(truth_path.read_text())
    assert main(["build", str(cache), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "atlas.json").exists() and (tmp_path / "b" / "graph.dot").exists()
    assert main(["families", str(cache), "--out", str(tmp_path / "f")]) == 0
    with (tmp_path / "f" / "families.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    planted = {truth["run_family"][r["run_id"]] for r in rows}
    assert len({r["family"] for r in rows}) == len(planted) == 3


def test_stage_commands_write_artifacts(tmp_path):
    cache, _ = _synth(tmp_path)
    for cmd, name in [("reward", "field.csv"), ("dynamics", "kernels.json"),
                      ("nulls", "nulls.json"), ("robustness", "robustness.json")]:
        extra = ["--shuffles", "20"] if cmd == "nulls" else []
        if cmd == "robustness":
            extra = ["--splits", "2", "--replicates", "2", "--m", "4", "--n", "8", "16"]
        assert main([cmd, str(cache), "--out", str(tmp_path / cmd), *extra]) == 0
        assert (tmp_path / cmd / name).stat().st_size > 0


def test_global_flags_before_and_after_command(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["--seed", "5", "synth", "--out", str(a), "--runs", "8"]) == 0
    assert main(["synth", "--seed", "5", "--out", str(b), "--runs", "8"]) == 0
    assert (a / "synth.slg").read_bytes() == (b / "synth.slg").read_bytes()


def test_report_is_byte_deterministic(tmp_path):
    caches = [str(_synth(tmp_path, pid=f"p{i}", seed=str(i))[0]) for i in range(3)]
    for out in ("r1", "r2"):
        assert main(["report", *caches, "--out", str(tmp_path / out), "--n-boot", "200"]) == 0
    for name in ("report.json", "cells.csv", "errors.json", "ecdf_isomer_rate.csv",
                 "scatter_families_vs_cores.csv"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()
    rep = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert rep["runs"]["reconciles"] and rep["n_cells"] == 3


def test_report_isolates_broken_cells(tmp_path):
    good, _ = _synth(tmp_path)
    bad = tmp_path / "bad.slg"
    bad.write_bytes(b"not a cache")
    assert main(["report", str(good), str(bad), "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["n_cells"] == 2 and rep["n_failed"] == 1
    errors = json.loads((tmp_path / "r" / "errors.json").read_text())
    assert errors[0]["cell"].endswith("bad.slg")


def test_single_family_corpus_has_zero_multi_family_rate(tmp_path):
    out = tmp_path / "s"
    caches = []
    for i in range(2):
        assert main(["synth", "--out", str(out), "--runs", "12", "--families", "1",
                     "--problem-id", f"q{i}", "--seed", str(i)]) == 0
        caches.append(str(out / f"q{i}.slg"))
    assert main(["report", *caches, "--out", str(tmp_path / "r")]) == 0
    rep = json.loads((tmp_path / "r" / "report.json").read_text())
    assert rep["families"]["multi_family_rate"] == 0.0


def test_sweep_emits_resolution_by_threshold_grid(tmp_path):
    cache, _ = _synth(tmp_path)
    assert main(["sweep", str(cache), "--kind", "family", "--out", str(tmp_path / "sw")]) == 0
    with (tmp_path / "sw" / "sweep_family.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert len({r["resolution"] for r in rows}) == 4 and len({r["tau"] for r in rows}) == 3
    assert main(["sweep", str(cache), "--kind", "sigma", "--out", str(tmp_path / "sw")]) == 0
    with (tmp_path / "sw" / "sweep_sigma.csv").open() as fh:
        assert len({r["edge_digest"] for r in csv.DictReader(fh)}) == 1


def test_token_level_ingest(tmp_path):
    rng = np.random.default_rng(0)
    runs = []
    for r in range(3):
        tokens = [{"0": {"up": rng.normal(size=8).tolist(), "gate": rng.normal(size=8).tolist()},
                   "1": {"up": rng.normal(size=8).tolist(), "gate": rng.normal(size=8).tolist()}}
                  for _ in range(4)]
        runs.append({"run_id": r, "tokens": tokens, "correct": r == 0, "answer_class": "7"})
    src = tmp_path / "raw.json"
    src.write_text(json.dumps({"problem_id": "tok", "model_id": "m", "runs": runs}))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"slice_size": 2, "sep_up": 1}))
    assert main(["ingest", str(src), str(tmp_path / "tok.slg"), "--config", str(cfg)]) == 0
    cell = read_cache(tmp_path / "tok.slg")
    assert cell.n_runs == 3 and all(len(r.slices) == 2 for r in cell.runs)
    assert all(((s.keys >> 16) <= 1).all() for r in cell.runs for s in r.slices)


@pytest.mark.parametrize("argv", [["frobnicate"], ["build"], ["synth", "--out", "x", "--bogus"]])
def test_usage_errors_exit_nonzero(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_one(tmp_path, capsys):
    assert main(["build", str(tmp_path / "missing.slg"), "--out", str(tmp_path)]) == 1
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"not_a_field": 1}))
    assert main(["synth", "--out", str(tmp_path), "--config", str(cfg)]) == 1
    assert "not_a_field" in capsys.readouterr().err
