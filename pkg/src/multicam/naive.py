"""Rule-based baseline: per-frame fusion of the most confident detections with memory.

For each hand and frame: if both cameras see the hand, take the state of the more
confident detection; if one does, take its state; if neither does, keep the state
output at the previous frame. Ties go to the Top-view camera, and within one camera
to the earlier tool state (E, N, F, S, M order). Memory starts Empty.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np

from .core import CAMERAS, HANDS, N_HANDS, CameraId, DetectionRecord, HandId, ToolState, ValidationError
from .ingest import DetectionStream, SessionBundle

Best = Mapping[HandId, tuple[ToolState, float]]


def best_per_hand(detections: Iterable[DetectionRecord]) -> dict[HandId, tuple[ToolState, float]]:
    best: dict[HandId, tuple[ToolState, float]] = {}
    for r in detections:
        cur = best.get(r.hand)
        if cur is None or r.p > cur[1] or (r.p == cur[1] and r.state < cur[0]):
            best[r.hand] = (r.state, r.p)
    return best


def naive_step(top: Best, close: Best, memory: Mapping[HandId, ToolState]):
    """One frame of fusion; returns (per-hand states, updated memory)."""
    out = {}
    for hand in HANDS:
        a, b = top.get(hand), close.get(hand)
        if a is not None and (b is None or a[1] >= b[1]):
            out[hand] = a[0]
        elif b is not None:
            out[hand] = b[0]
        else:
            out[hand] = memory.get(hand, ToolState.EMPTY)
    return out, dict(out)


def initial_memory() -> dict[HandId, ToolState]:
    return {hand: ToolState.EMPTY for hand in HANDS}


def best_arrays(stream: DetectionStream, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame best detection of each hand: (state, p) arrays of shape (n_frames, 4).

    Absent hands have state -1 and p -inf.
    """
    state = np.full((n_frames, N_HANDS), -1, dtype=np.int8)
    prob = np.full((n_frames, N_HANDS), -np.inf)
    for r in stream.records:
        t, h = r.frame, r.hand
        if r.p > prob[t, h] or (r.p == prob[t, h] and r.state < state[t, h]):
            state[t, h] = r.state
            prob[t, h] = r.p
    return state, prob


_CAMERA_SETS = {
    "top": (CameraId.TOP,),
    "close": (CameraId.CLOSE,),
    "both": (CameraId.TOP, CameraId.CLOSE),
}


def parse_cameras(cameras) -> tuple[CameraId, ...]:
    if isinstance(cameras, str):
        if cameras not in _CAMERA_SETS:
            raise ValidationError(f"cameras must be one of {sorted(_CAMERA_SETS)}", field="cameras")
        return _CAMERA_SETS[cameras]
    cams = tuple(sorted({CameraId(c) for c in cameras}))
    if not cams:
        raise ValidationError("at least one camera is required", field="cameras")
    return cams


def classify_session_naive(bundle: SessionBundle, cameras="both") -> np.ndarray:
    """Labels of shape (4, n_frames) from the selected camera subset."""
    cams = parse_cameras(cameras)
    n = bundle.n_frames
    fused = np.full((n, N_HANDS), -1, dtype=np.int8)
    fused_p = np.full((n, N_HANDS), -np.inf)
    # Top first, and a later camera only wins on strictly higher p
    for cam in CAMERAS:
        if cam not in cams:
            continue
        state, prob = best_arrays(bundle.stream(cam), n)
        take = (state >= 0) & (prob > fused_p)
        fused[take] = state[take]
        fused_p[take] = prob[take]
    # memory: carry the last fused output forward, Empty before the first one
    out = np.empty((N_HANDS, n), dtype=np.int8)
    for hand in HANDS:
        col = fused[:, hand]
        seen = col >= 0
        idx = np.where(seen, np.arange(n), -1)
        np.maximum.accumulate(idx, out=idx)
        out[hand] = np.where(idx >= 0, col[np.maximum(idx, 0)], ToolState.EMPTY)
    return out
