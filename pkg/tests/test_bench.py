import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdc_ifd import bench
from hdc_ifd.bench import RunConfig
from hdc_ifd.errors import StageError

import oracles

SMALL = dict(dim=400, hdc_epochs=5, iterations=4, str_counts=(40, 80), train_per_class=12,
             test_per_class=6, max_epochs=3, patience=1)


@pytest.fixture(scope="module")
def small_report():
    return bench.run_pipeline(RunConfig(replicates=2, **SMALL))


def test_accuracy_examples():
    labels = np.arange(750) % 10
    pred = labels.copy()
    pred[:150] = (pred[:150] + 1) % 10
    assert bench.accuracy(pred, labels) == 0.8
    assert bench.accuracy(labels, labels) == 1.0
    with pytest.raises(ValueError):
        bench.accuracy([], [])


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=200))
def test_accuracy_matches_recount(pairs):
    p, t = zip(*pairs)
    assert bench.accuracy(p, t) == oracles.accuracy_recount(p, t)


def test_compromise_examples():
    assert bench.compromise(0.9, 0.45) == 2.0
    assert bench.compromise(0.8, 0.8) == 1.0
    assert bench.compromise_flagged(0.8, 0.0) == (1e6, True)
    with pytest.raises(ValueError):
        bench.compromise(0.0, 0.5)


def test_mean_compromise_examples():
    assert bench.mean_compromise(0.8, [0.8, 0.4, 0.2, 0.1]) == 3.75
    assert bench.mean_compromise(0.6, [0.6] * 4) == 1.0
    with pytest.raises(ValueError):
        bench.mean_compromise(0.8, [])


def test_improvement_examples():
    assert round(bench.improvement(1.42, 1.24), 2) == 12.68
    assert bench.improvement(1.3, 1.3) == 0.0
    assert bench.improvement(1.0, 1.5) == -50.0
    with pytest.raises(ValueError):
        bench.improvement(0.0, 1.0)


def test_weak_attack_compromise_below_one_kept():
    assert bench.compromise(0.5, 0.6) == pytest.approx(5 / 6)


def test_nearest_centroid():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]])
    nc = bench.NearestCentroid().fit(X, np.array([0, 0, 1, 1]), 2)
    assert nc.predict(np.array([[1.0, 1.0], [9.0, 9.0], [5.0, 5.5]])).tolist() == [0, 1, 0]


def test_report_shape(small_report):
    rep = small_report
    assert not rep.incomplete
    n_target, n_str, n_atk, n_rep = 3, 2, 4, 2
    assert len(rep.attacks) == n_target * n_str * n_atk * n_rep
    assert len(rep.means) == n_target * n_str * n_rep
    assert len(rep.improvements) == 2 * n_str * n_rep
    assert {a.attack for a in rep.attacks} == set(bench.ATTACKS)
    assert all(c["substitute_sha256"] for c in rep.metadata["cells"])


def test_clean_accuracy_shared_across_attacks(small_report):
    cells = {}
    for r in small_report.attacks:
        cells.setdefault((r.target, r.str_count, r.replicate), set()).add(r.acc_normal)
    assert all(len(v) == 1 for v in cells.values())


def test_recompute_passes_and_catches_tampering(small_report):
    assert bench.recompute_check(small_report) == []
    bad = bench.ResiliencyReport.from_dict(json.loads(json.dumps(small_report.to_dict())))
    bad.means[0].mean_compromise += 1e-6
    assert bench.recompute_check(bad)


def test_json_round_trip(small_report, tmp_path):
    path = bench.emit_report(small_report, "json", tmp_path / "r.json")
    back = bench.load_report(path)
    assert back.to_dict() == small_report.to_dict()


def test_csv_schema(small_report, tmp_path):
    text = bench.emit_report(small_report, "csv", tmp_path / "r.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert tuple(rows[0]) == bench.CSV_COLUMNS
    assert {"target", "str", "attack", "acc_normal", "acc_perturbed", "compromise",
            "train_seconds", "seed"} <= set(rows[0])
    assert sum(r["attack"] == "mean" for r in rows) == len(small_report.means)


def test_empty_report_refused(tmp_path):
    with pytest.raises(ValueError):
        bench.emit_report(bench.ResiliencyReport(), "csv", tmp_path / "e.csv")
    assert not (tmp_path / "e.csv").exists()


def test_clean_run_has_unit_compromise():
    rep = bench.run_pipeline(RunConfig(attacks=("none",), **SMALL))
    assert all(r.compromise == 1.0 for r in rep.attacks)
    assert all(m.mean_compromise == 1.0 for m in rep.means)


def test_replicate_summary_is_mean(small_report):
    row = next(r for r in small_report.summary() if r["target"] == "HDC" and r["str_count"] == 40)
    ms = [m.mean_compromise for m in small_report.means if m.target == "HDC" and m.str_count == 40]
    assert row["replicates"] == 2
    assert row["mean_compromise"] == sum(ms) / 2


def test_stage_error_yields_incomplete_report():
    cfg = RunConfig(**{**SMALL, "str_counts": (40, 500)})
    with pytest.raises(StageError) as info:
        bench.run_pipeline(cfg)
    rep = info.value.report
    assert rep.incomplete and "load-data" in rep.error


def test_stage_error_in_later_cell_keeps_finished_cells(monkeypatch):
    real_fit = bench.hdc.HdcClassifier.fit
    calls = []

    def flaky_fit(self, X, y, num_classes):
        calls.append(len(X))
        if len(calls) == 2:
            raise RuntimeError("boom")
        return real_fit(self, X, y, num_classes)

    monkeypatch.setattr(bench.hdc.HdcClassifier, "fit", flaky_fit)
    with pytest.raises(StageError) as info:
        bench.run_pipeline(RunConfig(**SMALL))
    rep = info.value.report
    assert rep.incomplete and rep.error == "[train-target HDC str=80] boom"
    assert {r.str_count for r in rep.attacks} == {40}
    assert bench.recompute_check(rep) == []


def test_training_error_is_stage_tagged():
    with pytest.raises(StageError, match=r"\[train-substitute str=40\]"):
        bench.run_pipeline(RunConfig(**{**SMALL, "batch_size": 32}))


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(attacks=("pgd",))
    with pytest.raises(ValueError):
        RunConfig(str_counts=(480, 240))


def test_derive_seed_stable():
    assert bench.derive_seed(0, 1) == bench.derive_seed(0, 1) != bench.derive_seed(1, 0)
