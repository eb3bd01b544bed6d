import numpy as np
import pytest

from multicam.core import BBox, CameraId, DetectionClass, DetectionRecord, HandId, ToolState
from multicam.ingest import DetectionStream, bundle_session


def random_stream(rng: np.random.Generator, camera: CameraId, n_frames: int,
                  density: float = 0.6, max_per_frame: int = 6,
                  p_levels: int | None = None) -> DetectionStream:
    """Random detections; a small ``p_levels`` makes probability ties common."""
    records = []
    for t in range(n_frames):
        if rng.random() > density:
            continue
        for _ in range(rng.integers(1, max_per_frame + 1)):
            hand = HandId(int(rng.integers(4)))
            state = ToolState(int(rng.integers(5)))
            p = rng.integers(1, p_levels + 1) / p_levels if p_levels else float(rng.random())
            box = BBox(float(rng.random()), float(rng.random()),
                       float(rng.uniform(0.01, 1)), float(rng.uniform(0.01, 1)))
            records.append(DetectionRecord(camera, t, DetectionClass(hand, state), p, box))
    return DetectionStream(camera, tuple(records), n_frames=n_frames)


def random_bundle(seed: int, n_frames: int = 300, **kw):
    rng = np.random.default_rng(seed)
    return bundle_session(f"r{seed}", random_stream(rng, CameraId.TOP, n_frames, **kw),
                          random_stream(rng, CameraId.CLOSE, n_frames, **kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Desk-scale settings shared by the noise-free training checks: 4 videos of 1000 frames,
# 200 epochs. lr 1e-3 instead of the 1e-4 default so 200 short epochs converge.
CLEAN_TRAIN = dict(epochs=200, learning_rate=1e-3, samples_per_video_per_epoch=32, seed=0)


@pytest.fixture(scope="session")
def clean_sessions():
    from multicam.simulator import preset, simulate_sessions

    cfg = preset("fullvis-clean", seed=2024)
    return [s.bundle for s in simulate_sessions(cfg, 8)]


@pytest.fixture(scope="session")
def clean_mcc(clean_sessions):
    from multicam.neural import TrainConfig, train

    return train(clean_sessions[:4], TrainConfig(**CLEAN_TRAIN), "mcc")
