import numpy as np
import pytest

from cvsqa.preprocess import (
    InsufficientBeatsError,
    cycle_labels,
    detect_r_peaks,
    embed_cycle,
    embed_cycles,
    make_cycle_windows,
    make_point_windows,
    reverse,
    segment_cycles,
    stack_windows,
)
from cvsqa.simulate import MotionEpisode, SimConfig, gen_ecg, synthesize_trace
from cvsqa.traces import DataError, SignalTrace


def peak_match(found_idx, truth_times, fs, tol_s=0.02):
    """Greedy one-to-one matching within +-tol_s; returns (precision, recall)."""
    found = np.asarray(found_idx, dtype=np.float64) / fs
    truth = np.asarray(truth_times, dtype=np.float64)
    used = np.zeros(len(truth), dtype=bool)
    hits = 0
    for f in found:
        d = np.abs(truth - f)
        d[used] = np.inf
        j = int(np.argmin(d))
        if d[j] <= tol_s:
            used[j] = True
            hits += 1
    precision = hits / len(found) if len(found) else 0.0
    recall = hits / len(truth) if len(truth) else 0.0
    return precision, recall


class TestRPeaks:
    def test_clean_fixed_rate(self):
        cfg = SimConfig(duration=60.0, hr_mean=72.0, hr_std=0.0)
        ecg, truth = gen_ecg(cfg)
        peaks = detect_r_peaks(ecg, cfg.fs)
        precision, recall = peak_match(peaks, truth, cfg.fs)
        assert precision >= 0.99 and recall >= 0.99

    def test_with_hrv(self):
        cfg = SimConfig(duration=60.0, hr_mean=80.0, hr_std=6.0, seed=3)
        ecg, truth = gen_ecg(cfg)
        peaks = detect_r_peaks(ecg, cfg.fs)
        precision, recall = peak_match(peaks, truth, cfg.fs)
        assert precision >= 0.99 and recall >= 0.99

    def test_output_strictly_increasing(self):
        cfg = SimConfig(duration=30.0, hr_mean=65.0, hr_std=4.0)
        ecg, _ = gen_ecg(cfg)
        peaks = detect_r_peaks(ecg, cfg.fs)
        assert np.all(np.diff(peaks) > 0)

    def test_flat_signal_raises(self):
        with pytest.raises(InsufficientBeatsError):
            detect_r_peaks(np.zeros(5000), 100.0)

    def test_single_beat_raises(self):
        ecg = np.zeros(500)
        ecg[100] = 1.0  # one lonely spike
        with pytest.raises(InsufficientBeatsError):
            detect_r_peaks(ecg, 100.0)

    def test_2d_input_rejected(self):
        with pytest.raises(DataError):
            detect_r_peaks(np.zeros((10, 2)), 100.0)


class TestCycles:
    def trace(self, duration=30.0, hr_std=0.0, motion=()):
        cfg = SimConfig(duration=duration, hr_mean=60.0, hr_std=hr_std,
                        motion_episodes=motion)
        trace, parts = synthesize_trace(cfg, "t")
        return trace, parts

    def test_segmentation_spans_are_contiguous(self):
        trace, _ = self.trace()
        cycles = segment_cycles(trace)
        assert len(cycles) >= 25
        for a, b in zip(cycles, cycles[1:]):
            assert a.end == b.start
        assert all(c.length > 0 for c in cycles)

    def test_explicit_peaks_respected(self):
        trace, _ = self.trace()
        peaks = np.array([100, 200, 350])
        cycles = segment_cycles(trace, peaks)
        assert [(c.start, c.end) for c in cycles] == [(100, 200), (200, 350)]

    def test_embed_fixed_length_and_endpoints(self):
        samples = np.linspace(3.0, 7.0, 97)
        emb = embed_cycle(samples, dim=150)
        assert emb.shape == (150,)
        assert emb[0] == samples[0] and emb[-1] == samples[-1]
        np.testing.assert_allclose(emb, np.linspace(3.0, 7.0, 150), atol=1e-12)

    def test_embed_constant_cycle(self):
        emb = embed_cycle(np.full(40, 2.5), dim=10)
        np.testing.assert_array_equal(emb, np.full(10, 2.5))

    def test_embed_rejects_tiny_cycle(self):
        with pytest.raises(DataError):
            embed_cycle(np.array([1.0]), dim=10)

    def test_cycle_labels_any_motion_sample_marks_cycle(self):
        trace, _ = self.trace(motion=(MotionEpisode(10.0, 12.0),))
        cycles = segment_cycles(trace)
        labels = cycle_labels(trace, cycles)
        for c, lab in zip(cycles, labels):
            span = trace.labels[c.start : c.end]
            assert lab == int(np.all(span == 1))
        assert labels.min() == 0 and labels.max() == 1

    def test_unlabeled_trace_counts_all_normal(self):
        trace, _ = self.trace()
        bare = SignalTrace(trace.trace_id, trace.fs, trace.t0, trace.cvs, trace.ecg)
        cycles = segment_cycles(bare)
        assert np.all(cycle_labels(bare, cycles) == 1)

    def test_reverse(self):
        np.testing.assert_array_equal(reverse(np.array([1, 2, 3])), [3, 2, 1])
        two_d = np.arange(6).reshape(3, 2)
        np.testing.assert_array_equal(reverse(two_d), two_d[::-1])
        assert reverse(two_d).flags["C_CONTIGUOUS"]


class TestPointWindows:
    def trace(self, n=50):
        labels = np.ones(n, dtype=np.int8)
        labels[20:25] = 0
        return SignalTrace("t", 100.0, 0.0, np.arange(n, dtype=float),
                           np.zeros(n), labels)

    def test_count_and_alignment(self):
        tr = self.trace()
        wins = make_point_windows(tr, r=4, p=2, stride=1)
        assert len(wins) == 50 - 6 + 1
        w = wins[10]
        np.testing.assert_array_equal(w.inputs[:, 0], [10, 11, 12, 13])
        np.testing.assert_array_equal(w.future[:, 0], [14, 15])
        assert w.inputs.shape == (4, 1) and w.future.shape == (2, 1)

    def test_stride(self):
        wins = make_point_windows(self.trace(), r=4, p=2, stride=10)
        assert [w.start for w in wins] == [0, 10, 20, 30, 40]

    def test_label_covers_inputs_only(self):
        tr = self.trace()
        wins = make_point_windows(tr, r=4, p=2, stride=1)
        by_start = {w.start: w for w in wins}
        assert by_start[16].input_label == 1   # inputs 16..19 clean
        assert by_start[17].input_label == 0   # input 20 dirty
        assert by_start[24].input_label == 0   # input 24 dirty
        assert by_start[25].input_label == 1   # future may be dirty, label ignores it

    def test_zero_future_allowed(self):
        wins = make_point_windows(self.trace(), r=4, p=0, stride=1)
        assert wins[0].future.shape == (0, 1)

    def test_values_override(self):
        tr = self.trace()
        wins = make_point_windows(tr, r=2, p=0, values=tr.cvs * 10.0)
        np.testing.assert_array_equal(wins[0].inputs[:, 0], [0.0, 10.0])
        with pytest.raises(DataError):
            make_point_windows(tr, r=2, p=0, values=np.zeros(3))

    def test_bad_geometry_rejected(self):
        tr = self.trace()
        with pytest.raises(DataError):
            make_point_windows(tr, r=0, p=1)
        with pytest.raises(DataError):
            make_point_windows(tr, r=1, p=-1)
        with pytest.raises(DataError):
            make_point_windows(tr, r=1, p=0, stride=0)


class TestCycleWindows:
    def trace(self):
        cfg = SimConfig(duration=30.0, hr_mean=60.0,
                        motion_episodes=(MotionEpisode(10.0, 12.0),))
        trace, _ = synthesize_trace(cfg, "t")
        return trace

    def test_window_geometry(self):
        tr = self.trace()
        cycles = segment_cycles(tr)
        wins = make_cycle_windows(tr, big_r=2, big_p=1, dim=80)
        assert len(wins) == len(cycles) - 3 + 1
        assert wins[0].inputs.shape == (2, 80)
        assert wins[0].future.shape == (1, 80)

    def test_windows_follow_embedding(self):
        tr = self.trace()
        cycles = segment_cycles(tr)
        emb = embed_cycles(tr, cycles, dim=60)
        wins = make_cycle_windows(tr, big_r=2, big_p=2, dim=60)
        w = wins[5]
        np.testing.assert_array_equal(w.inputs, emb[5:7])
        np.testing.assert_array_equal(w.future, emb[7:9])

    def test_label_rule(self):
        tr = self.trace()
        cycles = segment_cycles(tr)
        lab = cycle_labels(tr, cycles)
        wins = make_cycle_windows(tr, big_r=2, big_p=1)
        for w in wins:
            assert w.input_label == int(np.all(lab[w.start_cycle : w.start_cycle + 2] == 1))

    def test_stack_windows_shapes(self):
        tr = self.trace()
        wins = make_cycle_windows(tr, big_r=2, big_p=1, dim=40)
        inputs, futures, labels = stack_windows(wins)
        assert inputs.shape == (len(wins), 2, 40)
        assert futures.shape == (len(wins), 1, 40)
        assert labels.shape == (len(wins),)
        assert labels.dtype == np.int8

    def test_stack_empty_rejected(self):
        with pytest.raises(DataError):
            stack_windows([])
