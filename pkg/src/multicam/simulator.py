"""Synthetic sessions: ground-truth tool timelines plus noisy two-camera detection streams.

Everything is driven by one integer seed. Independent random streams (visibility,
timeline, rendering, and per-session seeds) are split off it with
``numpy.random.SeedSequence`` spawn keys, so each part can be regenerated on its own.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    CAMERAS,
    HANDS,
    N_HANDS,
    N_STATES,
    BBox,
    CameraId,
    DetectionClass,
    DetectionRecord,
    HandId,
    LabelTimeline,
    ToolState,
    ValidationError,
)
from .ingest import DEFAULT_FPS, DetectionStream, SessionBundle

# spawn keys of the independent random streams
_VISIBILITY, _TIMELINE, _RENDER = 1, 2, 3


@dataclass
class SegmentModel:
    """How long a hand keeps one tool and what it picks up next.

    ``mean_duration_s[s]`` is the mean length of a segment in state ``s``;
    ``transitions[s][s2]`` are unnormalized weights of moving from ``s`` to ``s2``.
    """

    mean_duration_s: list[float] = field(default_factory=lambda: [6.0, 15.0, 12.0, 3.0, 5.0])
    transitions: list[list[float]] = field(
        default_factory=lambda: (np.ones((N_STATES, N_STATES)) - np.eye(N_STATES)).tolist()
    )


@dataclass
class VisibilityModel:
    """Two-state Markov chain per (hand, camera): per-frame hide and reveal probabilities."""

    p_hide: float = 0.0
    p_show: float = 1.0


@dataclass
class NoiseModel:
    miss_prob: float = 0.0
    confusion: list[list[float]] = field(default_factory=lambda: np.eye(N_STATES).tolist())
    # detector confidence for the correct / a substituted class, uniform on [lo, hi]
    p_correct: tuple[float, float] = (1.0, 1.0)
    p_wrong: tuple[float, float] = (1.0, 1.0)
    bbox_jitter: float = 0.0
    clutter_rate: float = 0.0


@dataclass
class ScenarioConfig:
    n_frames: int = 3600
    seed: int = 0
    fps: float = DEFAULT_FPS
    segments: SegmentModel = field(default_factory=SegmentModel)
    # per-hand overrides of ``segments`` keyed by hand code (SR, SL, AR, AL)
    hand_segments: dict[str, SegmentModel] = field(default_factory=dict)
    visibility: dict[str, VisibilityModel] = field(
        default_factory=lambda: {"top": VisibilityModel(), "close": VisibilityModel()}
    )
    noise: NoiseModel = field(default_factory=NoiseModel)
    switch_while_hidden_rate: float = 0.0

    def segment_model(self, hand: HandId) -> SegmentModel:
        return self.hand_segments.get(hand.code, self.segments)

    def validate(self) -> "ScenarioConfig":
        def prob(name, v):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]", field=name)

        if self.n_frames < 0:
            raise ValidationError(f"n_frames={self.n_frames} is negative", field="n_frames")
        if self.fps <= 0:
            raise ValidationError(f"fps={self.fps} must be positive", field="fps")
        for code in self.hand_segments:
            HandId.from_code(code)
        for name, seg in [("segments", self.segments)] + [
            (f"hand_segments.{k}", v) for k, v in self.hand_segments.items()
        ]:
            if len(seg.mean_duration_s) != N_STATES or any(d <= 0 for d in seg.mean_duration_s):
                raise ValidationError(f"{name}.mean_duration_s needs 5 positive values",
                                      field=f"{name}.mean_duration_s")
            w = np.asarray(seg.transitions, float)
            if w.shape != (N_STATES, N_STATES) or (w < 0).any() or (w.sum(axis=1) <= 0).any():
                raise ValidationError(f"{name}.transitions must be 5x5, non-negative, rows > 0",
                                      field=f"{name}.transitions")
        if set(self.visibility) != {"top", "close"}:
            raise ValidationError("visibility needs entries 'top' and 'close'", field="visibility")
        for cam, vis in self.visibility.items():
            prob(f"visibility.{cam}.p_hide", vis.p_hide)
            prob(f"visibility.{cam}.p_show", vis.p_show)
        nz = self.noise
        prob("noise.miss_prob", nz.miss_prob)
        prob("noise.clutter_rate", nz.clutter_rate)
        prob("switch_while_hidden_rate", self.switch_while_hidden_rate)
        conf = np.asarray(nz.confusion, float)
        if conf.shape != (N_STATES, N_STATES) or (conf < 0).any() or not np.allclose(conf.sum(axis=1), 1.0):
            raise ValidationError("noise.confusion must be 5x5 with rows summing to 1",
                                  field="noise.confusion")
        for name in ("p_correct", "p_wrong"):
            lo, hi = getattr(nz, name)
            prob(f"noise.{name}", lo)
            prob(f"noise.{name}", hi)
            if lo > hi:
                raise ValidationError(f"noise.{name} has lo > hi", field=f"noise.{name}")
        if nz.bbox_jitter < 0:
            raise ValidationError("noise.bbox_jitter is negative", field="noise.bbox_jitter")
        return self

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}", field=sorted(unknown)[0])
        try:
            kw = dict(obj)
            if "segments" in kw:
                kw["segments"] = SegmentModel(**kw["segments"])
            if "hand_segments" in kw:
                kw["hand_segments"] = {k: SegmentModel(**v) for k, v in kw["hand_segments"].items()}
            if "visibility" in kw:
                kw["visibility"] = {k: VisibilityModel(**v) for k, v in kw["visibility"].items()}
            if "noise" in kw:
                noise = dict(kw["noise"])
                for key in ("p_correct", "p_wrong"):
                    if key in noise:
                        noise[key] = tuple(noise[key])
                kw["noise"] = NoiseModel(**noise)
            cfg = cls(**kw)
        except TypeError as exc:
            raise ValidationError(f"bad config structure: {exc}", field="config") from None
        return cfg.validate()

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}", field="config") from None
        if not isinstance(obj, dict):
            raise ValidationError("config must be a JSON object", field="config")
        return cls.from_dict(obj)

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        return cls.from_json(Path(path).read_text())


def _seq(cfg_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=cfg_seed, spawn_key=key)


def _rng(cfg: ScenarioConfig, *key: int) -> np.random.Generator:
    return np.random.default_rng(_seq(cfg.seed, *key))


def session_seed(base_seed: int, index: int) -> int:
    """Seed of the ``index``-th session of a batch generated from ``base_seed``."""
    return int(_seq(base_seed, 0, index).generate_state(1, np.uint64)[0] >> np.uint64(1))


def generate_visibility(cfg: ScenarioConfig) -> np.ndarray:
    """Boolean array (4 hands, 2 cameras, n_frames).

    Each chain starts from its stationary distribution, so a chain that can never
    become visible is hidden from frame 0.
    """
    rng = _rng(cfg, _VISIBILITY)
    n = cfg.n_frames
    vis = np.ones((N_HANDS, len(CAMERAS), n), dtype=bool)
    for hand in HANDS:
        for cam in CAMERAS:
            model = cfg.visibility[cam.code]
            u = rng.random(n)
            rate = model.p_hide + model.p_show
            p_visible = model.p_show / rate if rate > 0 else 1.0
            state = bool(n) and u[0] < p_visible
            row = vis[hand, cam]
            for t in range(n):
                if t:
                    if state and u[t] < model.p_hide:
                        state = False
                    elif not state and u[t] < model.p_show:
                        state = True
                row[t] = state
    return vis


def _segments_for_hand(cfg: ScenarioConfig, hand: HandId, rng: np.random.Generator,
                       seen: np.ndarray) -> np.ndarray:
    seg = cfg.segment_model(hand)
    n = cfg.n_frames
    mean_frames = np.asarray(seg.mean_duration_s) * cfg.fps
    weights = np.asarray(seg.transitions, float)
    probs = weights / weights.sum(axis=1, keepdims=True)
    # next frame index at which the hand is visible in some camera, n if never again
    next_seen = np.full(n + 1, n)
    for t in range(n - 1, -1, -1):
        next_seen[t] = t if seen[t] else next_seen[t + 1]

    labels = np.zeros(n, dtype=np.int8)
    state, t = int(ToolState.EMPTY), 0
    while t < n:
        length = int(rng.geometric(1.0 / max(mean_frames[state], 1.0)))
        end = t + length
        keep_hidden_switch = rng.random() < cfg.switch_while_hidden_rate
        nxt = int(rng.choice(N_STATES, p=probs[state]))
        if end < n and not seen[end] and not keep_hidden_switch:
            end = next_seen[end]
        labels[t:min(end, n)] = state
        state, t = nxt, end
    return labels


def generate_timeline(cfg: ScenarioConfig) -> LabelTimeline:
    """Piecewise-constant ground truth; every hand starts Empty.

    Segment lengths are geometric with the configured per-state means. Unless
    ``switch_while_hidden_rate`` allows it, a switch that would happen while the hand is
    hidden from both cameras is postponed to the frame it reappears.
    """
    cfg.validate()
    seen = generate_visibility(cfg).any(axis=1)
    rng = _rng(cfg, _TIMELINE)
    labels = np.stack([_segments_for_hand(cfg, hand, rng, seen[hand]) for hand in HANDS]) \
        if cfg.n_frames else np.zeros((N_HANDS, 0), dtype=np.int8)
    return LabelTimeline(labels)


# where each hand tends to be in each view: (x, y, w, h)
_ANCHORS = {
    CameraId.TOP: [(0.40, 0.62, 0.08, 0.10), (0.60, 0.62, 0.08, 0.10),
                   (0.38, 0.30, 0.08, 0.10), (0.62, 0.30, 0.08, 0.10)],
    CameraId.CLOSE: [(0.30, 0.70, 0.22, 0.26), (0.70, 0.70, 0.22, 0.26),
                     (0.28, 0.25, 0.20, 0.24), (0.72, 0.25, 0.20, 0.24)],
}


@dataclass
class SyntheticSession:
    bundle: SessionBundle
    visibility: np.ndarray  # (4, 2, n_frames) bool


def _anchor_path(camera: CameraId, hand: HandId, n: int, phase: float) -> np.ndarray:
    x, y, w, h = _ANCHORS[camera][hand]
    t = np.arange(n) / 900.0
    path = np.empty((n, 4))
    path[:, 0] = x + 0.05 * np.sin(2 * np.pi * t + phase)
    path[:, 1] = y + 0.04 * np.cos(2 * np.pi * 0.7 * t + phase)
    path[:, 2] = w
    path[:, 3] = h
    return path


def _clip_box(box: np.ndarray) -> np.ndarray:
    out = box.copy()
    out[..., :2] = np.clip(out[..., :2], 0.0, 1.0)
    out[..., 2:] = np.clip(out[..., 2:], 1e-3, 1.0)
    return out


def render_detections(timeline: LabelTimeline, cfg: ScenarioConfig,
                      session_id: str = "session") -> SyntheticSession:
    """Turn a ground-truth timeline into Top-view and Close-up detection streams."""
    cfg.validate()
    vis = generate_visibility(cfg)
    rng = _rng(cfg, _RENDER)
    nz = cfg.noise
    conf_cdf = np.cumsum(np.asarray(nz.confusion, float), axis=1)
    conf_cdf[:, -1] = 1.0
    n = cfg.n_frames
    streams = {}
    for cam in CAMERAS:
        records = []
        for hand in HANDS:
            truth = timeline.labels[hand].astype(np.int64)
            # draw everything for the full length so streams do not depend on each other
            u_miss = rng.random(n)
            u_conf = rng.random(n)
            u_p = rng.random(n)
            jitter = rng.normal(0.0, 1.0, size=(n, 4))
            u_clutter = rng.random(n)
            u_cp = rng.random(n)
            clutter_jitter = rng.normal(0.0, 1.0, size=(n, 4))
            phase = rng.uniform(0, 2 * np.pi)

            observed = (u_conf[:, None] < conf_cdf[truth]).argmax(axis=1)
            correct = observed == truth
            lo = np.where(correct, nz.p_correct[0], nz.p_wrong[0])
            hi = np.where(correct, nz.p_correct[1], nz.p_wrong[1])
            p = lo + (hi - lo) * u_p
            path = _anchor_path(cam, hand, n, phase)
            scale = np.array([1.0, 1.0, 0.25, 0.25]) * nz.bbox_jitter
            boxes = _clip_box(path + jitter * scale)
            cboxes = _clip_box(path + clutter_jitter * scale * 3.0)
            emit = vis[hand, cam] & (u_miss >= nz.miss_prob)
            clutter = emit & (u_clutter < nz.clutter_rate)
            for t in np.flatnonzero(emit):
                cls = DetectionClass(hand, ToolState(int(observed[t])))
                records.append(DetectionRecord(cam, int(t), cls, float(p[t]), BBox(*boxes[t].tolist())))
                if clutter[t]:
                    cp = float(p[t] * (0.3 + 0.6 * u_cp[t]))
                    records.append(DetectionRecord(cam, int(t), cls, cp, BBox(*cboxes[t].tolist())))
        streams[cam] = DetectionStream(cam, tuple(records), cfg.fps, n)
    bundle = SessionBundle(session_id, n, streams[CameraId.TOP], streams[CameraId.CLOSE],
                           timeline, cfg.fps)
    return SyntheticSession(bundle, vis)


def simulate_session(cfg: ScenarioConfig, session_id: str = "session") -> SyntheticSession:
    return render_detections(generate_timeline(cfg), cfg, session_id)


def simulate_sessions(cfg: ScenarioConfig, n_sessions: int, prefix: str = "s") -> list[SyntheticSession]:
    """``n_sessions`` independent sessions whose seeds are split off ``cfg.seed``."""
    out = []
    for k in range(n_sessions):
        sub = ScenarioConfig(**{**cfg.__dict__, "seed": session_seed(cfg.seed, k)})
        out.append(simulate_session(sub, f"{prefix}{k:03d}"))
    return out


def _uniform_confusion(error: float) -> list[list[float]]:
    off = error / (N_STATES - 1)
    return (np.full((N_STATES, N_STATES), off) + np.eye(N_STATES) * (1.0 - error - off)).tolist()


def _preset_fullvis_clean() -> ScenarioConfig:
    return ScenarioConfig(n_frames=1000)


def _preset_occluded_noisy() -> ScenarioConfig:
    # surgeon hands mostly carry needle holder / forceps, assistant hands mostly empty
    no_self = np.ones((N_STATES, N_STATES)) - np.eye(N_STATES)
    sr = no_self * np.array([1.0, 4.0, 1.0, 1.5, 0.5])
    sl = no_self * np.array([1.0, 0.5, 4.0, 0.5, 0.5])
    assist = no_self * np.array([4.0, 0.5, 1.0, 1.0, 1.5])
    return ScenarioConfig(
        n_frames=3600,
        segments=SegmentModel(),
        hand_segments={
            "SR": SegmentModel([5.0, 20.0, 10.0, 3.0, 4.0], sr.tolist()),
            "SL": SegmentModel([6.0, 6.0, 20.0, 3.0, 4.0], sl.tolist()),
            "AR": SegmentModel([15.0, 5.0, 8.0, 4.0, 8.0], assist.tolist()),
            "AL": SegmentModel([15.0, 4.0, 6.0, 4.0, 10.0], assist.tolist()),
        },
        visibility={
            # hidden stints average 10 s in both views; Close-up loses hands more often
            "top": VisibilityModel(p_hide=1.0 / 900.0, p_show=1.0 / 300.0),
            "close": VisibilityModel(p_hide=1.0 / 450.0, p_show=1.0 / 300.0),
        },
        noise=NoiseModel(
            miss_prob=0.1,
            confusion=_uniform_confusion(0.2),
            p_correct=(0.45, 0.95),
            p_wrong=(0.25, 0.75),
            bbox_jitter=0.01,
            clutter_rate=0.05,
        ),
        switch_while_hidden_rate=0.1,
    )


PRESETS = {
    "fullvis-clean": _preset_fullvis_clean,
    "occluded-noisy": _preset_occluded_noisy,
}


def preset(name: str, **overrides) -> ScenarioConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}", field="preset")
    cfg = PRESETS[name]()
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg.validate()
