"""Per-hand detection vectors and the two sliding windows fed to the classifier.

A hand's vector for one camera is 25 numbers: for each tool state in E, N, F, S, M
order, the ``[p, x, y, w, h]`` of the most confident detection of that (hand, state),
or zeros. Each timestep concatenates the Top-view vector and then the Close-up one.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import CAMERAS, N_HANDS, N_STATES, CameraId, DetectionRecord, DomainError, HandId, ParseError
from .ingest import SessionBundle

SLOT = 5
HAND_FEATURE_DIM = N_STATES * SLOT
FEATURE_DIM = len(CAMERAS) * HAND_FEATURE_DIM
HIGH_STEPS = 30
LOW_STEPS = 120
LOW_STRIDE = 10
# left padding so the oldest low-window frame, t - 1190, is always indexable
PAD = (LOW_STEPS - 1) * LOW_STRIDE


@dataclass(frozen=True)
class FeatureWindowPair:
    """``high``: (30, 50) frames t-29..t; ``low``: (120, 50) every 10th frame ending at t.

    Batched windows carry a leading batch axis.
    """

    high: np.ndarray
    low: np.ndarray

    def __len__(self) -> int:
        return 1 if self.high.ndim == 2 else self.high.shape[0]


def _record_key(r: DetectionRecord):
    return (r.p, *r.box.as_tuple())


def hand_feature(detections: Iterable[DetectionRecord], camera: CameraId, hand: HandId) -> np.ndarray:
    best: dict[int, DetectionRecord] = {}
    for r in detections:
        if r.camera != camera or r.hand != hand:
            continue
        cur = best.get(r.state)
        if cur is None or _record_key(r) > _record_key(cur):
            best[r.state] = r
    out = np.zeros(HAND_FEATURE_DIM)
    for state, r in best.items():
        out[state * SLOT:(state + 1) * SLOT] = (r.p, *r.box.as_tuple())
    return out


def session_features(bundle: SessionBundle) -> np.ndarray:
    """All hand vectors of a session as an array of shape (n_frames, 4, 50)."""
    feats = np.zeros((bundle.n_frames, N_HANDS, FEATURE_DIM))
    keys = {}
    for camera in CAMERAS:
        base = camera * HAND_FEATURE_DIM
        for r in bundle.stream(camera).records:
            col = base + r.state * SLOT
            k = (r.frame, r.hand, col)
            key = _record_key(r)
            if k not in keys or key > keys[k]:
                keys[k] = key
                feats[r.frame, r.hand, col:col + SLOT] = key
    return feats


def high_indices(t: int) -> np.ndarray:
    return np.arange(t - HIGH_STEPS + 1, t + 1)


def low_indices(t: int) -> np.ndarray:
    return t - LOW_STRIDE * np.arange(LOW_STEPS - 1, -1, -1)


def _padded(features: np.ndarray) -> np.ndarray:
    pad = np.zeros((PAD,) + features.shape[1:], dtype=features.dtype)
    return np.concatenate([pad, features], axis=0)


def windows_from_features(features: np.ndarray, hands: Sequence[int], ts: Sequence[int],
                          padded: np.ndarray | None = None) -> FeatureWindowPair:
    """Batched windows for (hand, t) pairs from a precomputed (n, 4, 50) array."""
    hands = np.asarray(hands, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.int64)
    n = features.shape[0]
    if ts.size and (ts.min() < 0 or ts.max() >= n):
        raise DomainError(f"frame index outside [0, {n})")
    fp = _padded(features) if padded is None else padded
    hi = ts[:, None] + PAD + np.arange(-HIGH_STEPS + 1, 1)[None, :]
    lo = ts[:, None] + PAD - LOW_STRIDE * np.arange(LOW_STEPS - 1, -1, -1)[None, :]
    return FeatureWindowPair(fp[hi, hands[:, None]], fp[lo, hands[:, None]])


def window_pair(bundle: SessionBundle, hand: HandId, t: int,
                features: np.ndarray | None = None) -> FeatureWindowPair:
    if not 0 <= t < bundle.n_frames:
        raise DomainError(f"frame {t} outside [0, {bundle.n_frames})")
    feats = session_features(bundle) if features is None else features
    batch = windows_from_features(feats, [int(hand)], [t])
    return FeatureWindowPair(batch.high[0], batch.low[0])


CACHE_MAGIC = b"MCFT"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIIII")


def write_feature_cache(path: str | Path, features: np.ndarray) -> None:
    """Header (magic, version, n_frames, n_hands, dims) as little-endian uint32, then
    row-major little-endian float32 payload."""
    n, hands, dims = features.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, hands, dims))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_feature_cache(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise ParseError(f"{path}: truncated feature cache header")
    magic, version, n, hands, dims = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC or version != CACHE_VERSION:
        raise ParseError(f"{path}: not a version-{CACHE_VERSION} feature cache")
    payload = data[_CACHE_HEADER.size:]
    if len(payload) != n * hands * dims * 4:
        raise ParseError(f"{path}: payload size does not match header")
    return np.frombuffer(payload, dtype="<f4").reshape(n, hands, dims).astype(np.float64)
