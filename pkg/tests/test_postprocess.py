"""Tests for the score-to-events inference chain and the event TSV format."""

import numpy as np
import pytest

from milsed.errors import ConfigError, DataError
from milsed.events import Event, read_events_tsv, sort_events, write_events_tsv
from milsed.model import ScoreMatrix
from milsed.postprocess import (
    PostprocessConfig,
    binarize_and_segment,
    mask_by_tags,
    merge_gaps,
    pipeline,
    rescale,
    smooth,
)


class TestMaskByTags:
    def test_all_ones_is_identity(self):
        rng = np.random.default_rng(0)
        scores = rng.uniform(size=(10, 4))
        np.testing.assert_array_equal(mask_by_tags(scores, np.ones(4)), scores)

    def test_all_zero_masks_everything(self):
        rng = np.random.default_rng(1)
        scores = rng.uniform(size=(10, 4))
        assert not mask_by_tags(scores, np.zeros(4)).any()

    def test_partial_mask(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(size=(6, 2))
        masked = mask_by_tags(scores, np.array([1, 0]))
        np.testing.assert_array_equal(masked[:, 0], scores[:, 0])
        assert not masked[:, 1].any()


class TestRescale:
    def test_two_point_curve(self):
        np.testing.assert_allclose(rescale([2.0, 4.0]), [0.0, 1.0])

    def test_constant_curve_maps_to_zeros(self):
        np.testing.assert_array_equal(rescale([0.7, 0.7, 0.7]), np.zeros(3))

    def test_spanning_curve_unchanged(self):
        curve = np.array([0.0, 0.25, 0.5, 1.0])
        np.testing.assert_allclose(rescale(curve), curve)


class TestSmooth:
    def test_window_one_is_identity(self):
        curve = np.array([0.1, 0.9, 0.4])
        np.testing.assert_array_equal(smooth(curve, 1), curve)

    def test_constant_curve_preserved_exactly(self):
        curve = np.full(30, 0.37)
        np.testing.assert_array_equal(smooth(curve, 19), curve)

    def test_impulse_interior_values_exactly_one_nineteenth(self):
        # impulse at the center of T=25: every frame with a full window that
        # covers the impulse is exactly 1/19; truncated-edge frames are larger
        curve = np.zeros(25)
        curve[12] = 1.0
        out = smooth(curve, 19)
        interior = np.arange(9, 16)
        np.testing.assert_array_equal(out[interior], np.full(7, 1.0 / 19.0))
        touched = np.arange(3, 22)
        assert np.all(out[touched] >= 1.0 / 19.0 - 1e-15)
        assert not out[:3].any() and not out[22:].any()

    def test_impulse_long_clip_gives_nineteen_frames(self):
        # with T = 2*window - 1 all touched frames have full windows
        curve = np.zeros(37)
        curve[18] = 1.0
        out = smooth(curve, 19)
        np.testing.assert_array_equal(out[9:28], np.full(19, 1.0 / 19.0))
        assert not out[:9].any() and not out[28:].any()

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            smooth(np.zeros(10), 4)

    def test_oversized_window_rejected(self):
        with pytest.raises(ConfigError):
            smooth(np.zeros(5), 11)

    def test_mean_preserved_for_constant_curves(self):
        curve = np.full(11, 0.25)
        assert smooth(curve, 5).mean() == pytest.approx(0.25)


class TestBinarizeAndSegment:
    def test_all_below_threshold(self):
        assert binarize_and_segment(np.zeros(20), 0.03, 0.1) == []

    def test_single_run(self):
        curve = np.zeros(30)
        curve[10:20] = 0.5
        assert binarize_and_segment(curve, 0.03, 0.1) == [(1.0, 2.0)]

    def test_exact_threshold_excluded(self):
        curve = np.full(10, 0.03)
        assert binarize_and_segment(curve, 0.03, 0.1) == []

    def test_multiple_runs(self):
        curve = np.zeros(12)
        curve[1:3] = 1.0
        curve[6:7] = 1.0
        segments = binarize_and_segment(curve, 0.5, 1.0)
        assert segments == [(1.0, 3.0), (6.0, 7.0)]


def brute_force_merge(segments, gap_s):
    """Pairwise closure oracle: keep fusing any two close segments."""
    segments = [list(s) for s in segments]
    changed = True
    while changed:
        changed = False
        for i in range(len(segments) - 1):
            a, b = segments[i], segments[i + 1]
            if b[0] - a[1] < gap_s:
                segments[i] = [a[0], max(a[1], b[1])]
                del segments[i + 1]
                changed = True
                break
    return [tuple(s) for s in segments]


class TestMergeGaps:
    def test_small_gap_fused(self):
        assert merge_gaps([(0.0, 1.0), (1.1, 2.0)], 0.2) == [(0.0, 2.0)]

    def test_large_gap_untouched(self):
        segments = [(0.0, 1.0), (1.3, 2.0)]
        assert merge_gaps(segments, 0.2) == segments

    def test_chain_fuses_transitively(self):
        segments = [(0.0, 0.5), (0.6, 1.0), (1.1, 1.5)]
        merged = merge_gaps(segments, 0.2)
        assert merged == [(0.0, 1.5)]
        assert merged == brute_force_merge(segments, 0.2)

    def test_matches_brute_force_closure(self):
        rng = np.random.default_rng(3)
        for _ in range(300):
            n = rng.integers(0, 8)
            onsets = np.sort(rng.uniform(0, 10, size=n))
            segments = []
            cursor = 0.0
            for onset in onsets:
                onset = max(onset, cursor)
                offset = onset + rng.uniform(0.05, 1.0)
                segments.append((float(onset), float(offset)))
                cursor = offset + 1e-6
            gap = float(rng.uniform(0.0, 0.5))
            assert merge_gaps(segments, gap) == brute_force_merge(segments, gap)

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            n = rng.integers(0, 6)
            segments = []
            cursor = 0.0
            for _ in range(n):
                onset = cursor + rng.uniform(0.0, 0.6)
                offset = onset + rng.uniform(0.05, 0.8)
                segments.append((onset, offset))
                cursor = offset
            gap = float(rng.uniform(0.0, 0.5))
            once = merge_gaps(segments, gap)
            assert merge_gaps(once, gap) == once

    def test_unsorted_rejected(self):
        with pytest.raises(DataError):
            merge_gaps([(2.0, 3.0), (0.0, 1.0)], 0.1)


class TestPipeline:
    def config(self, hop=0.1, window=5):
        return PostprocessConfig(smooth_window=window, binarize_threshold=0.03,
                                 merge_gap_s=0.2, hop_s=hop)

    def test_all_zero_scores_give_no_events(self):
        scores = np.zeros((40, 3))
        assert pipeline(scores, np.ones(3), self.config()) == []

    def test_clean_pulse_widened_by_half_window(self):
        # analytic widening: (window-1)/2 frames on each side
        n_frames, window, hop = 60, 5, 0.1
        half = (window - 1) // 2
        scores = np.full((n_frames, 2), 0.05)
        scores[20:30, 0] = 0.95  # frames 20..29
        scores[40:44, 1] = 0.95  # frames 40..43
        events = pipeline(scores, np.ones(2), self.config(hop=hop, window=window))
        expected = [
            Event((20 - half) * hop, (29 + half + 1) * hop, 0),
            Event((40 - half) * hop, (43 + half + 1) * hop, 1),
        ]
        assert len(events) == 2
        for got, want in zip(events, expected):
            assert got.label == want.label
            assert got.onset == pytest.approx(want.onset)
            assert got.offset == pytest.approx(want.offset)

    def test_masked_class_never_emits(self):
        rng = np.random.default_rng(5)
        scores = rng.uniform(size=(50, 3))
        events = pipeline(scores, np.array([1, 0, 1]), self.config())
        assert all(ev.label != 1 for ev in events)

    def test_events_within_clip_and_disjoint_per_class(self):
        rng = np.random.default_rng(6)
        config = self.config()
        for _ in range(50):
            n_frames = int(rng.integers(10, 80))
            scores = rng.uniform(size=(n_frames, 3))
            tags = rng.integers(0, 2, size=3)
            events = pipeline(scores, tags, config)
            clip = n_frames * config.hop_s
            for ev in events:
                assert 0.0 <= ev.onset < ev.offset <= clip + 1e-9
            by_label = {}
            for ev in events:
                by_label.setdefault(ev.label, []).append(ev)
            for group in by_label.values():
                group.sort(key=lambda e: e.onset)
                for a, b in zip(group, group[1:]):
                    assert b.onset >= a.offset

    def test_threshold_monotonicity(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            curve = rng.uniform(size=40)
            thresholds = np.sort(rng.uniform(0.05, 0.95, size=4))
            durations = []
            for th in thresholds:
                segments = binarize_and_segment(curve, float(th), 0.1)
                durations.append(sum(b - a for a, b in segments))
            assert all(d1 >= d2 - 1e-12 for d1, d2 in zip(durations, durations[1:]))

    def test_score_matrix_hop_wins(self):
        scores = np.zeros((30, 1))
        scores[10:20, 0] = 1.0
        sm = ScoreMatrix(scores, frame_hop_s=0.5)
        events = pipeline(sm, np.ones(1), self.config(hop=0.1, window=1))
        assert events[0].onset == pytest.approx(5.0)

    def test_class_names_applied(self):
        scores = np.zeros((30, 2))
        scores[5:15, 1] = 1.0
        events = pipeline(scores, np.ones(2), self.config(window=1),
                          class_names=["dishes", "frying"])
        assert [ev.label for ev in events] == ["frying"]


class TestEventsTsv:
    def test_round_trip(self, tmp_path):
        events = {
            "clip_a": [Event(0.5, 1.25, "dog"), Event(2.0, 3.0, "cat")],
            "clip_b": [Event(0.125, 4.0, "dog")],
        }
        path = tmp_path / "events.tsv"
        write_events_tsv(events, path)
        back = read_events_tsv(path)
        assert set(back) == {"clip_a", "clip_b"}
        assert back["clip_a"] == [Event(2.0, 3.0, "cat"), Event(0.5, 1.25, "dog")]

    def test_three_decimal_formatting(self, tmp_path):
        path = tmp_path / "events.tsv"
        write_events_tsv({"f": [Event(0.123456, 1.0, "x")]}, path)
        assert path.read_text() == "f\t0.123\t1.000\tx\n"

    def test_header_line_tolerated(self, tmp_path):
        path = tmp_path / "events.tsv"
        path.write_text("filename\tonset\toffset\tevent_label\n"
                        "clip\t0.000\t1.000\tdog\n")
        back = read_events_tsv(path)
        assert back == {"clip": [Event(0.0, 1.0, "dog")]}

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "events.tsv"
        path.write_text("clip\t0.000\t1.000\tdog\nbroken line\n")
        with pytest.raises(DataError, match=":2:"):
            read_events_tsv(path)

    def test_sorted_by_class_then_onset(self):
        events = [Event(3.0, 4.0, "b"), Event(0.0, 1.0, "b"), Event(2.0, 3.0, "a")]
        ordered = sort_events(events)
        assert ordered == [Event(2.0, 3.0, "a"), Event(0.0, 1.0, "b"),
                           Event(3.0, 4.0, "b")]
