import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afbeat.segmentation import (
    SegmentReport, assign_labels, extract_archive, segment_beats, select_sinus, usable_ordinals,
)

from conftest import make_bundle


def _beats_of(types):
    b = make_bundle(n_samples=200 * (len(types) + 20), rpeaks=200 * np.arange(1, len(types) + 1),
                    beat_types=types)
    return segment_beats(b, skip_head=1, skip_tail=0)


class TestSegmentBeats:
    def test_window_bounds(self):
        rpeaks = np.arange(1, 21) * 100
        rpeaks[9] = 1000
        b = make_bundle(n_samples=3000, rpeaks=rpeaks)
        beat = segment_beats(b)[0]
        assert beat.ordinal == 10 and beat.rpeak_index == 1000
        assert (beat.left, beat.right) == (900, 1100)
        assert len(beat.samples) == 200
        np.testing.assert_array_equal(beat.samples, b.samples[900:1100])

    def test_too_few_peaks(self):
        b = make_bundle(n_samples=5000, rpeaks=np.arange(1, 15) * 300)
        assert segment_beats(b) == []

    def test_twenty_peaks_give_ordinals_10_to_15(self):
        b = make_bundle(n_samples=7000, rpeaks=np.arange(1, 21) * 300)
        assert [x.ordinal for x in segment_beats(b)] == [10, 11, 12, 13, 14, 15]

    def test_boundary_windows_skipped_and_counted(self):
        b = make_bundle(n_samples=1000, rpeaks=[50, 150, 500, 950], beat_types=["N"] * 4)
        rep = SegmentReport()
        beats = segment_beats(b, skip_head=1, skip_tail=0, report=rep)
        assert [x.ordinal for x in beats] == [2, 3]
        assert rep.skipped_boundary == [1, 4] and rep.usable == 4 and rep.emitted == 2

    @settings(max_examples=50, deadline=None)
    @given(k=st.integers(0, 60), head=st.integers(1, 12), tail=st.integers(0, 8), seed=st.integers(0, 999))
    def test_count_law_and_centering(self, k, head, tail, seed):
        rng = np.random.default_rng(seed)
        gaps = rng.integers(40, 300, size=k)
        rpeaks = np.cumsum(gaps)
        n = int(rpeaks[-1] + rng.integers(1, 200)) if k else 500
        b = make_bundle(n_samples=n, rpeaks=rpeaks, seed=seed)
        rep = SegmentReport()
        beats = segment_beats(b, 200, head, tail, rep)
        assert len(beats) + len(rep.skipped_boundary) == max(0, k - head - tail + 1)
        for x in beats:
            assert len(x.samples) == 200
            assert x.samples[100] == b.samples[x.rpeak_index]

    def test_wrong_fs_rejected(self):
        with pytest.raises(ValueError, match="fs"):
            segment_beats(make_bundle(fs=250))

    @pytest.mark.parametrize("L", [0, 199])
    def test_bad_length_rejected(self, L):
        with pytest.raises(ValueError):
            segment_beats(make_bundle(), L=L)

    def test_usable_ordinals(self):
        assert list(usable_ordinals(20)) == list(range(10, 16))
        assert len(usable_ordinals(14)) == 0


class TestSelectSinus:
    def test_mixed(self):
        beats = _beats_of(["N", "A", "N", "V"])
        assert [b.ordinal for b in select_sinus(beats)] == [1, 3]

    def test_all_non_sinus(self):
        assert select_sinus(_beats_of(["A", "V", "other"])) == []

    def test_all_sinus_identity(self):
        beats = _beats_of(["N"] * 5)
        assert select_sinus(beats) == beats

    def test_idempotent(self):
        beats = _beats_of(["N", "A", "N", "V", "other", "N"])
        once = select_sinus(beats)
        assert select_sinus(once) == once


class TestLabels:
    def test_af_patient_far_from_episode_labelled_1(self):
        b = make_bundle(n_samples=8000, rpeaks=np.arange(1, 30) * 200, af_episodes=[(7000, 8000)], label=1)
        arc = assign_labels(b, select_sinus(segment_beats(b)))
        assert len(arc.beats) > 0 and np.all(arc.labels == 1)

    def test_non_af_patient(self):
        b = make_bundle(n_samples=8000, rpeaks=np.arange(1, 30) * 200, label=0)
        assert np.all(assign_labels(b, segment_beats(b)).labels == 0)

    def test_empty(self):
        arc = assign_labels(make_bundle(label=1), [])
        assert arc.beats == [] and len(arc.labels) == 0

    def test_extract_keeps_requested_types(self):
        types = ["N", "A"] * 15
        b = make_bundle(n_samples=8000, rpeaks=np.arange(1, 31) * 200, beat_types=types, patient_id="p9")
        assert {x.beat_type for x in extract_archive(b).beats} == {"N"}
        assert {x.beat_type for x in extract_archive(b, keep=None).beats} == {"N", "A"}
        assert extract_archive(b).patient == "p9"
