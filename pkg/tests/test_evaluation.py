import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afbeat.evaluation import (
    CATEGORIES, average_reports, benchmark, bid_sweep, calibration, classification_metrics,
    risk_quintile_waveforms, roc_auc, subgroup_classify, subgroup_evaluate,
)
from afbeat.io_formats import Beat, RiskSeries
from afbeat.net1d import build_model, count_parameters, reduced_config

from conftest import make_bundle


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    twice = sum(2 if p > n else 1 if p == n else 0 for p in pos for n in neg)
    return twice / (2 * len(pos) * len(neg))


class TestAuc:
    def test_worked_example(self):
        assert roc_auc([0.9, 0.4, 0.3, 0.5], [1, 1, 0, 0]) == 0.75

    def test_separated(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_tied(self):
        assert roc_auc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5

    def test_single_class_undefined(self):
        assert roc_auc([0.1, 0.2], [1, 1]) is None

    @settings(max_examples=200, deadline=None)
    @given(data=st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0, 0.1, 0.9]), st.integers(0, 1)),
                         min_size=2, max_size=60))
    def test_equals_pairwise_oracle_with_ties(self, data):
        s, y = zip(*data)
        if len(set(y)) < 2:
            return
        assert roc_auc(s, y) == pairwise_auc(s, y)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_invariant_under_increasing_transform(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.normal(size=40)
        y = np.r_[0, 1, rng.integers(0, 2, 38)]
        assert roc_auc(np.exp(3 * s) + 7, y) == roc_auc(s, y)


class TestClassificationMetrics:
    def test_all_correct(self):
        r = classification_metrics([0.9, 0.1, 0.8], [1, 0, 1])
        assert r.accuracy == 1.0 and r.f1 == 1.0

    def test_confusion_layout(self):
        assert classification_metrics([0.6, 0.4], [1, 0]).confusion == [[1, 0], [0, 1]]

    def test_zero_denominators(self):
        r = classification_metrics([0.1, 0.2], [0, 0])
        assert r.precision is None and r.recall is None and r.f1 == 0.0 and r.auc is None

    @pytest.mark.parametrize("seed", range(10))
    def test_counting_oracle(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 50))
        s, y = rng.random(n), rng.integers(0, 2, n)
        r = classification_metrics(s, y, 0.4)
        tp = sum(1 for a, b in zip(s, y) if a >= 0.4 and b == 1)
        tn = sum(1 for a, b in zip(s, y) if a < 0.4 and b == 0)
        fp = sum(1 for a, b in zip(s, y) if a >= 0.4 and b == 0)
        fn = n - tp - tn - fp
        assert r.confusion == [[tn, fp], [fn, tp]]
        assert r.accuracy == (tp + tn) / n
        assert r.accuracy == np.trace(np.array(r.confusion)) / n
        if tp:
            p, q = tp / (tp + fp), tp / (tp + fn)
            assert r.f1 == pytest.approx(2 * p * q / (p + q), abs=1e-15)

    def test_average_reports_mean_of_folds(self):
        rng = np.random.default_rng(0)
        reps = [classification_metrics(rng.random(30), np.r_[0, 1, rng.integers(0, 2, 28)]) for _ in range(5)]
        avg = average_reports(reps)
        assert abs(avg["auc"] - np.mean([r.auc for r in reps])) <= 1e-12
        assert avg["auc_folds"] == 5


class TestCalibration:
    def test_calibrated_sampling(self):
        rng = np.random.default_rng(0)
        s = rng.random(100_000)
        y = (rng.random(s.size) < s).astype(int)
        for b in calibration(s, y):
            assert abs(b.mean_predicted - b.observed_rate) < 0.02

    def test_all_ones(self):
        bins = calibration(np.ones(5), np.ones(5))
        assert [b.count for b in bins] == [0] * 9 + [5]
        assert bins[-1].observed_rate == 1.0

    def test_bins_tile_unit_interval(self):
        bins = calibration([0.5], [1], bins=7)
        assert bins[0].lower == 0.0 and bins[-1].upper == 1.0
        assert all(a.upper == b.lower for a, b in zip(bins, bins[1:]))


def _patients(means, beats=60, noise=0.25, seed=0):
    rng = np.random.default_rng(seed)
    out, labels = {}, {}
    for i, (mu, lab) in enumerate(means):
        p = np.clip(mu + noise * rng.normal(size=beats), 0, 1)
        out[f"p{i}"] = RiskSeries(f"p{i}", p, np.arange(beats), np.arange(beats) * 200)
        labels[f"p{i}"] = lab
    return out, labels


class TestSweep:
    def test_constant_probabilities_same_auc(self):
        series = {f"p{i}": RiskSeries(f"p{i}", np.full(30, v), np.arange(30), np.arange(30) * 200)
                  for i, v in enumerate([0.2, 0.4, 0.6, 0.8])}
        labels = {"p0": 0, "p1": 1, "p2": 0, "p3": 1}
        rows = bid_sweep(series, labels, [1, 5, 10, 30], aggregation="mean_of_all")
        assert len({r["auc"] for r in rows}) == 1
        rows = bid_sweep(series, labels, [1, 5, 10, 30])
        assert len({r["auc"] for r in rows}) == 1

    def test_grouping_does_not_hurt(self):
        means = [(0.45, 0), (0.55, 1)] * 10
        series, labels = _patients(means, seed=3)
        rows = {r["n"]: r["auc"] for r in bid_sweep(series, labels, [1, 10])}
        assert rows[10] >= rows[1] - 0.01


def _record_with(types, rpeaks, af=(), n=20000, label=1):
    return make_bundle(n_samples=n, rpeaks=rpeaks, beat_types=types, af_episodes=af, label=label)


def _beat(rec, i):
    return Beat(np.zeros(200), int(rec.rpeaks[i]), i + 1, rec.beat_types[i], 0, 0)


class TestSubgroups:
    def test_v_beat_nearby(self):
        rec = _record_with(["N", "V"], [5000, 5600])
        assert subgroup_classify(_beat(rec, 0), rec).categories == frozenset({"BNV"})

    def test_stable(self):
        rec = _record_with(["N", "V"], [1000, 8000])
        assert subgroup_classify(_beat(rec, 0), rec).categories == frozenset({"Stable"})

    def test_before_af(self):
        rec = _record_with(["N"], [5000], af=[(6000, 9000)])
        assert subgroup_classify(_beat(rec, 0), rec).categories == frozenset({"BeforeAF"})

    def test_after_af(self):
        rec = _record_with(["N"], [10000], af=[(6000, 9000)])
        assert subgroup_classify(_beat(rec, 0), rec).categories == frozenset({"AfterAF"})

    def test_af_on_both_sides_is_neither(self):
        rec = _record_with(["N"], [10000], af=[(6000, 9000), (11000, 12000)])
        assert subgroup_classify(_beat(rec, 0), rec).categories == frozenset({"Stable"})

    def test_non_af_patient_uncategorised(self):
        rec = _record_with(["N", "V"], [5000, 5600], label=0)
        a = subgroup_classify(_beat(rec, 0), rec)
        assert not a.af_patient and a.categories == frozenset()

    def test_window_clipped_at_record_edge(self):
        rec = _record_with(["A", "N"], [10, 300])
        assert "BNA" in subgroup_classify(_beat(rec, 1), rec).categories

    def test_evaluate_counts(self):
        af = _record_with(["N", "V", "N", "N"], [1000, 1500, 9000, 16000], af=[(17000, 19000)])
        ok = _record_with(["N", "N"], [1000, 3000], label=0)
        assigns = [subgroup_classify(_beat(af, i), af) for i in (0, 2, 3)]
        assigns += [subgroup_classify(_beat(ok, i), ok) for i in (0, 1)]
        out = subgroup_evaluate(assigns, [0.9, 0.2, 0.7, 0.1, 0.3], [1, 1, 1, 0, 0])
        assert set(out) == set(CATEGORIES)
        assert out["BNA"]["n_in_category"] == 0 and out["BNA"]["metrics"] is None
        assert out["BNV"]["n_in_category"] == 1 and out["BeforeAF"]["n_in_category"] == 1
        assert out["Stable"]["n_in_category"] == 1
        assert all(v["n_non_af"] == 2 for v in out.values())
        total = sum(v["n_in_category"] for v in out.values())
        assert total == sum(len(a.categories) for a in assigns)
        for a in assigns:
            assert not ("Stable" in a.categories and len(a.categories) > 1)


class TestQuintiles:
    def test_part_sizes(self):
        beats = np.arange(10, dtype=float)[:, None] * np.ones((1, 4))
        waves = risk_quintile_waveforms(beats, np.arange(10))
        np.testing.assert_array_equal(waves[:, 0], [0.5, 2.5, 4.5, 6.5, 8.5])

    def test_identical_beats(self):
        beats = np.tile(np.sin(np.arange(20)), (15, 1))
        waves = risk_quintile_waveforms(beats, np.random.default_rng(0).random(15))
        assert np.allclose(waves, waves[0])

    def test_direct_mean_oracle(self):
        rng = np.random.default_rng(1)
        beats, s = rng.normal(size=(23, 8)), rng.random(23)
        order = sorted(range(23), key=lambda i: s[i])
        sizes = [5, 5, 5, 4, 4]
        start = 0
        waves = risk_quintile_waveforms(beats, s)
        for q, size in enumerate(sizes):
            idx = order[start:start + size]
            np.testing.assert_allclose(waves[q], beats[idx].mean(axis=0), atol=1e-12)
            start += size


class TestBenchmark:
    def test_reports_parameters_and_amortisation(self):
        w = build_model(reduced_config(beat_length=200), 0)
        r = benchmark(w, runs=100)
        assert r["parameters_trainable"] == count_parameters(w).trainable
        assert r["median_batch32_latency_s"] < 32 * r["median_single_latency_s"]
        assert r["environment"]["threads"] == 1
