import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicam.core import CameraId, ToolState, ValidationError
from multicam.ingest import serialize_detections, serialize_intervals
from multicam.simulator import (
    NoiseModel,
    ScenarioConfig,
    SegmentModel,
    VisibilityModel,
    generate_timeline,
    preset,
    render_detections,
    simulate_session,
    simulate_sessions,
)

N = int(ToolState.NEEDLE_HOLDER)


def _serialized(session):
    b = session.bundle
    return (serialize_detections(b.top), serialize_detections(b.close),
            serialize_intervals(b.truth.to_intervals()))


def _run_lengths(row):
    change = np.flatnonzero(np.diff(row)) + 1
    bounds = np.concatenate(([0], change, [row.size]))
    return np.diff(bounds)


class TestTimeline:
    def test_same_seed_same_timeline(self):
        cfg = preset("occluded-noisy", seed=11, n_frames=2000)
        assert generate_timeline(cfg) == generate_timeline(cfg)
        other = preset("occluded-noisy", seed=12, n_frames=2000)
        assert generate_timeline(cfg) != generate_timeline(other)

    def test_degenerate_chain(self):
        w = np.zeros((5, 5))
        w[:, N] = 1.0
        cfg = ScenarioConfig(n_frames=3000, seed=4, segments=SegmentModel([1.0] * 5, w.tolist()))
        tl = generate_timeline(cfg)
        for row in tl.labels:
            first = np.flatnonzero(row != ToolState.EMPTY)
            assert first.size
            assert (row[:first[0]] == ToolState.EMPTY).all()
            assert (row[first[0]:] == N).all()

    def test_geometric_mean_duration(self):
        # every segment is followed by a different state, so run lengths are segment lengths
        cfg = ScenarioConfig(n_frames=10_000, seed=0, segments=SegmentModel([2.0] * 5))
        tl = generate_timeline(cfg)
        lengths = np.concatenate([_run_lengths(row)[:-1] for row in tl.labels])
        assert abs(lengths.mean() - 60.0) <= 6.0

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_no_switch_while_hidden(self, seed):
        cfg = preset("occluded-noisy", seed=seed, n_frames=3000, switch_while_hidden_rate=0.0)
        s = simulate_session(cfg)
        seen = s.visibility.any(axis=1)
        labels = s.bundle.truth.labels
        for hand in range(4):
            changes = np.flatnonzero(np.diff(labels[hand])) + 1
            assert seen[hand, changes].all()


class TestRender:
    def test_noise_free_limit(self):
        s = simulate_session(preset("fullvis-clean", seed=5, n_frames=400))
        truth = s.bundle.truth.labels
        for stream in (s.bundle.top, s.bundle.close):
            assert len(stream.records) == 4 * 400
            counts = np.zeros((400, 4), int)
            for r in stream.records:
                counts[r.frame, r.hand] += 1
                assert r.p == 1.0
                assert r.state == truth[r.hand, r.frame]
            assert (counts == 1).all()

    def test_pinned_hidden_camera_is_empty(self):
        cfg = preset("fullvis-clean", seed=2)
        cfg.visibility = {"top": VisibilityModel(), "close": VisibilityModel(p_hide=1.0, p_show=0.0)}
        s = simulate_session(cfg)
        assert len(s.bundle.close) == 0
        assert len(s.bundle.top) == 4 * cfg.n_frames

    def test_miss_probability(self):
        cfg = ScenarioConfig(n_frames=1250, seed=9, noise=NoiseModel(miss_prob=0.5))
        s = simulate_session(cfg)
        emitted = len(s.bundle.top) + len(s.bundle.close)
        assert 0.48 <= emitted / 10_000 <= 0.52

    def test_detections_only_where_visible(self):
        s = simulate_session(preset("occluded-noisy", seed=1, n_frames=3000))
        for cam, stream in ((CameraId.TOP, s.bundle.top), (CameraId.CLOSE, s.bundle.close)):
            for r in stream.records:
                assert s.visibility[r.hand, cam, r.frame]

    def test_clutter_duplicates_have_lower_p(self):
        cfg = preset("fullvis-clean", seed=3, n_frames=500)
        cfg.noise = NoiseModel(p_correct=(0.6, 0.9), clutter_rate=0.5)
        s = simulate_session(cfg)
        by_key = {}
        for r in s.bundle.top.records:
            by_key.setdefault((r.frame, r.hand), []).append(r)
        dup = [v for v in by_key.values() if len(v) == 2]
        # 2000 hand-frames at rate 0.5
        assert 900 < len(dup) < 1100
        for a, b in dup:
            lo, hi = sorted((a.p, b.p))
            assert a.state == b.state
            assert 0.3 * hi <= lo <= 0.9 * hi

    def test_confusion_marginals_chi_square(self):
        conf = np.full((5, 5), 0.1) + np.eye(5) * 0.5
        cfg = ScenarioConfig(n_frames=1250, seed=21, noise=NoiseModel(confusion=conf.tolist()))
        s = simulate_session(cfg)
        truth = s.bundle.truth.labels
        counts = np.zeros((5, 5))
        for stream in (s.bundle.top, s.bundle.close):
            for r in stream.records:
                counts[truth[r.hand, r.frame], r.state] += 1
        assert counts.sum() == 10_000
        for state in range(5):
            n = counts[state].sum()
            if n < 100:
                continue
            expected = conf[state] * n
            chi2 = ((counts[state] - expected) ** 2 / expected).sum()
            # 99.9th percentile of chi-square with 4 degrees of freedom
            assert chi2 < 18.47

    def test_render_is_deterministic(self):
        cfg = preset("occluded-noisy", seed=8, n_frames=1500)
        tl = generate_timeline(cfg)
        a = render_detections(tl, cfg)
        b = render_detections(tl, cfg)
        assert _serialized(a) == _serialized(b)


class TestSessionsAndConfig:
    def test_bit_identical_sessions(self):
        cfg = preset("occluded-noisy", seed=3, n_frames=1200)
        a = [_serialized(s) for s in simulate_sessions(cfg, 3)]
        b = [_serialized(s) for s in simulate_sessions(cfg, 3)]
        assert a == b
        assert len({x[0] for x in a}) == 3

    def test_json_round_trip(self):
        cfg = preset("occluded-noisy", seed=42)
        again = ScenarioConfig.from_json(cfg.to_json())
        assert again == cfg

    @pytest.mark.parametrize("patch, field", [
        ({"n_frames": -1}, "n_frames"),
        ({"noise": {"miss_prob": 1.5}}, "noise.miss_prob"),
        ({"noise": {"confusion": [[1, 0, 0, 0, 0]] * 4 + [[0.5, 0, 0, 0, 0]]}}, "noise.confusion"),
        ({"segments": {"mean_duration_s": [0, 1, 1, 1, 1]}}, "segments.mean_duration_s"),
        ({"bogus": 1}, "bogus"),
    ])
    def test_validation_names_field(self, patch, field):
        with pytest.raises(ValidationError) as e:
            ScenarioConfig.from_dict(patch)
        assert e.value.field == field

    def test_unknown_preset(self):
        with pytest.raises(ValidationError):
            preset("nope")
