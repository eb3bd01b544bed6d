import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicam.core import DomainError, LabelTimeline, ValidationError
from multicam.evaluation import (
    REFERENCE_RESULTS,
    VARIANT_ORDER,
    Variant,
    confusion_matrix,
    macro_f1,
    make_folds,
    mean_report,
    means_from_json,
    render_reports,
    run_experiment,
    score,
)
from multicam.neural import TrainConfig
from multicam.simulator import preset, simulate_sessions

from oracles import confusion_reference, metrics_reference


def _assert_matches_reference(report, truth, pred):
    ref = metrics_reference(truth, pred)
    assert report.confusion.tolist() == confusion_reference(truth, pred)
    assert report.occurrence.tolist() == ref["occurrence"]
    assert report.precision.tolist() == ref["precision"]
    assert report.recall.tolist() == ref["recall"]
    assert report.f1.tolist() == ref["f1"]
    for name in ("accuracy", "f1_weighted", "f1_macro", "f1_macro_min100", "f1_macro_min200"):
        assert getattr(report, name) == ref[name], name


class TestScore:
    def test_identity(self):
        rng = np.random.default_rng(0)
        truth = rng.integers(0, 5, (4, 300))
        r = score(truth, truth)
        assert r.accuracy == 1.0
        present = r.occurrence > 0
        assert (r.f1[present] == 1.0).all()

    def test_hand_crafted_ten_frames(self):
        row_t = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1]
        row_p = [0, 0, 0, 0, 1, 1, 1, 1, 1, 0]
        r = score(np.array([row_t] * 4), np.array([row_p] * 4))
        assert r.accuracy == 0.8
        # class E of every hand: 4 of 5 predicted E are right, 4 of 5 true E found
        for hand in range(4):
            for state in (0, 1):
                c = hand * 5 + state
                assert r.precision[c] == 0.8 and r.recall[c] == 0.8
                assert r.f1[c] == pytest.approx(0.8, abs=1e-15)
        assert r.f1_weighted == pytest.approx(0.8, abs=1e-15)
        assert r.f1_macro == pytest.approx(8 * 0.8 / 20, abs=1e-15)
        assert r.precision[2] == 0.0 and r.recall[2] == 0.0

    def test_threshold_rule(self):
        truth = np.zeros((4, 300), int)
        truth[0, :50] = 1  # SRN: 50 hand-frames
        truth[1, :150] = 2  # SLF: 150 hand-frames
        r = score(truth, truth)
        assert r.occurrence[1] == 50 and r.occurrence[7] == 150
        # classes present: SRE 250, SRN 50, SLE 150, SLF 150, ARE 300, ALE 300
        assert r.f1_macro == pytest.approx(6 / 20)
        assert r.f1_macro_min100 == 1.0
        assert r.f1_macro_min200 == 1.0
        pred = truth.copy()
        pred[0, :50] = 0  # miss every SRN frame
        r = score(truth, pred)
        assert r.f1[1] == 0.0
        assert r.f1_macro_min100 == pytest.approx(np.mean(r.f1[r.occurrence >= 100]))
        assert set(np.flatnonzero(r.occurrence >= 200)) == {0, 15, 10}

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            score(np.zeros((4, 10), int), np.zeros((4, 9), int))

    def test_accepts_timelines(self):
        t = LabelTimeline(np.ones((4, 5), int))
        assert score(t, t).accuracy == 1.0

    def test_block_diagonal(self):
        rng = np.random.default_rng(1)
        cm = confusion_matrix(rng.integers(0, 5, (4, 100)), rng.integers(0, 5, (4, 100)))
        assert cm.sum() == 400
        for a in range(4):
            for b in range(4):
                if a != b:
                    assert not cm[a * 5:a * 5 + 5, b * 5:b * 5 + 5].any()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 400))
    def test_matches_reference(self, seed, n):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, 5, (4, n))
        pred = np.where(rng.random((4, n)) < 0.7, truth, rng.integers(0, 5, (4, n)))
        _assert_matches_reference(score(truth, pred), truth, pred)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        truth = rng.integers(0, 5, (4, 250))
        pred = rng.integers(0, 5, (4, 250))
        r = score(truth, pred)
        assert r.accuracy == np.trace(r.confusion) / r.confusion.sum()
        assert macro_f1(r.f1, r.occurrence, 0) == r.f1_macro
        for v in (r.precision, r.recall, r.f1):
            assert ((v >= 0) & (v <= 1)).all()

    def test_equal_occurrence_weighted_equals_macro(self):
        rng = np.random.default_rng(5)
        truth = np.tile(np.repeat(np.arange(5), 40), (4, 1))
        pred = np.where(rng.random(truth.shape) < 0.6, truth, rng.integers(0, 5, truth.shape))
        r = score(truth, pred)
        assert (r.occurrence == 40).all()
        assert r.f1_weighted == pytest.approx(r.f1_macro, abs=1e-15)

    def test_mean_report(self):
        a = score(np.zeros((4, 10), int), np.zeros((4, 10), int))
        b = score(np.zeros((4, 10), int), np.ones((4, 10), int))
        m = mean_report([a, b])
        assert m.accuracy == 0.5
        assert m.occurrence[0] == 20
        with pytest.raises(DomainError):
            mean_report([])


class TestFolds:
    def test_twenty_sessions(self):
        ids = [f"s{i:03d}" for i in range(20)]
        folds = make_folds(ids, 4, seed=0)
        assert len(folds) == 4
        tests = []
        for train, test in folds:
            assert len(train) == 15 and len(test) == 5
            assert not set(train) & set(test)
            tests += test
        assert sorted(tests) == ids

    @pytest.mark.parametrize("k, n", [(1, 10), (0, 10), (5, 4)])
    def test_invalid(self, k, n):
        with pytest.raises(ValidationError):
            make_folds([f"s{i}" for i in range(n)], k)

    def test_uneven(self):
        folds = make_folds([str(i) for i in range(10)], 4)
        assert sorted(len(te) for _, te in folds) == [2, 2, 3, 3]

    def test_order_invariant_and_seeded(self):
        ids = [f"s{i}" for i in range(20)]
        shuffled = ids[:]
        random.Random(1).shuffle(shuffled)
        assert make_folds(ids, 4, 3) == make_folds(shuffled, 4, 3)
        assert make_folds(ids, 4, 3) != make_folds(ids, 4, 4)


@pytest.fixture(scope="module")
def noisy():
    cfg = preset("occluded-noisy", seed=31, n_frames=900)
    return [s.bundle for s in simulate_sessions(cfg, 8)]


class TestExperiment:
    def test_clean_both_naive_perfect(self):
        sessions = [s.bundle for s in simulate_sessions(preset("fullvis-clean", seed=4), 4)]
        res = run_experiment(sessions, ["both-naive"], k=2)
        assert res.mean("both-naive").accuracy == 1.0

    def test_needs_training_config(self, noisy):
        with pytest.raises(ValidationError):
            run_experiment(noisy, ["mcc"], None)

    def test_session_order_invariant(self, noisy):
        variants = ["top-naive", "close-naive", "both-naive"]
        a = run_experiment(noisy, variants, k=4, seed=2)
        b = run_experiment(noisy[::-1], variants, k=4, seed=2)
        assert a.to_json() == b.to_json()

    def test_trained_variants_and_workers(self, noisy):
        cfg = TrainConfig(epochs=1, samples_per_video_per_epoch=8, learning_rate=1e-3)
        serial = run_experiment(noisy, ["high", "both-naive"], cfg, k=2, workers=1)
        parallel = run_experiment(noisy, ["high", "both-naive"], cfg, k=2, workers=2)
        assert serial.to_json() == parallel.to_json()
        assert serial.variants == [Variant.BOTH_NAIVE, Variant.HIGH]
        assert len(serial.per_fold[Variant.HIGH]) == 2

    def test_reports(self, noisy):
        res = run_experiment(noisy, ["top-naive", "both-naive"], k=2)
        files = render_reports(res, with_reference=True)
        assert set(files) == {"aggregate.txt", "aggregate.csv", "per_class.txt",
                              "per_class.csv", "results.json"}
        header = files["aggregate.csv"].splitlines()[0]
        assert header == "Metric,Top-view,Top-view (ref),Naive,Naive (ref)"
        acc_row = files["aggregate.csv"].splitlines()[1].split(",")
        assert acc_row[2] == "0.88" and acc_row[4] == "0.90"
        classes = [line.split(",")[0] for line in files["per_class.csv"].splitlines()[1:]]
        assert classes[:5] == ["SRE", "SRN", "SRF", "SRS", "SRM"] and len(classes) == 20
        means = means_from_json(files["results.json"])
        assert means[Variant.BOTH_NAIVE].accuracy == res.mean("both-naive").accuracy
        json.loads(files["results.json"])

    def test_reference_values(self):
        assert REFERENCE_RESULTS["accuracy"] == (0.88, 0.81, 0.90, 0.90, 0.92, 0.93)
        assert REFERENCE_RESULTS["f1_weighted"][VARIANT_ORDER.index(Variant.MCC)] == 0.94
