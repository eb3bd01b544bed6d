"""Reading and writing detection streams, annotation intervals, label tables and manifests.

Detection streams are JSONL, one detected object per line::

    {"frame":0,"class":"SRN","p":0.9,"x":0.5,"y":0.5,"w":0.1,"h":0.2}

Boxes may instead be given in corner form (``x1, y1, x2, y2``); they are converted
to normalized center form on input. Unknown keys are ignored.

Intervals are CSV with header ``hand,state,start_s,stop_s``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import (
    HANDS,
    BBox,
    CameraId,
    DetectionClass,
    DetectionRecord,
    EventInterval,
    HandId,
    LabelTimeline,
    MulticamError,
    ParseError,
    ToolState,
    ValidationError,
    check_non_overlapping,
    timeline_from_intervals,
)

DEFAULT_FPS = 30.0
# guards floor(t * fps) against seconds written as frame / fps
_FRAME_EPS = 1e-6


@dataclass(frozen=True)
class DetectionStream:
    camera: CameraId
    records: tuple[DetectionRecord, ...] = ()
    fps: float = DEFAULT_FPS
    n_frames: int = 0

    def __post_init__(self):
        records = tuple(sorted(self.records, key=DetectionRecord.sort_key))
        for r in records:
            if r.camera != self.camera:
                raise ValidationError(
                    f"record for camera {r.camera.code} in {self.camera.code} stream", field="camera"
                )
        n = max(self.n_frames, records[-1].frame + 1 if records else 0)
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "n_frames", n)

    def __len__(self) -> int:
        return len(self.records)

    def by_frame(self) -> dict[int, list[DetectionRecord]]:
        out: dict[int, list[DetectionRecord]] = {}
        for r in self.records:
            out.setdefault(r.frame, []).append(r)
        return out

    def frame(self, t: int) -> list[DetectionRecord]:
        return [r for r in self.records if r.frame == t]

    def padded(self, n_frames: int) -> "DetectionStream":
        return replace(self, n_frames=max(n_frames, self.n_frames))


@dataclass(frozen=True)
class SessionBundle:
    session_id: str
    n_frames: int
    top: DetectionStream
    close: DetectionStream
    truth: LabelTimeline | None = None
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        if self.top.n_frames != self.n_frames or self.close.n_frames != self.n_frames:
            raise ValidationError("both streams must span the session's n_frames")
        if self.truth is not None and self.truth.n_frames != self.n_frames:
            raise ValidationError(
                f"truth has {self.truth.n_frames} frames, session has {self.n_frames}"
            )

    def stream(self, camera: CameraId) -> DetectionStream:
        return self.top if camera == CameraId.TOP else self.close


def _text(data: bytes | str) -> str:
    return data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data


def _record_from_obj(obj: dict, camera: CameraId) -> DetectionRecord:
    for key in ("frame", "class", "p"):
        if key not in obj:
            raise ValidationError(f"missing key {key!r}", field=key)
    frame = obj["frame"]
    if isinstance(frame, bool) or not isinstance(frame, int):
        raise ValidationError(f"frame must be an integer, got {frame!r}", field="frame")
    if all(k in obj for k in ("x", "y", "w", "h")):
        coords = [obj[k] for k in ("x", "y", "w", "h")]
        corner = False
    elif all(k in obj for k in ("x1", "y1", "x2", "y2")):
        coords = [obj[k] for k in ("x1", "y1", "x2", "y2")]
        corner = True
    else:
        raise ValidationError("missing box coordinates (x,y,w,h or x1,y1,x2,y2)", field="box")
    for name, v in zip(("p", "box"), (obj["p"], coords)):
        vals = v if isinstance(v, list) else [v]
        if any(isinstance(u, bool) or not isinstance(u, (int, float)) for u in vals):
            raise ValidationError(f"non-numeric {name}", field=name)
    box = BBox.from_corners(*map(float, coords)) if corner else BBox(*map(float, coords))
    return DetectionRecord(camera, frame, DetectionClass.from_code(obj["class"]), float(obj["p"]), box)


def parse_detections(data: bytes | str, camera: CameraId = CameraId.TOP,
                     fps: float = DEFAULT_FPS) -> DetectionStream:
    """Parse a JSONL detection stream; errors carry the 1-based line number."""
    records = []
    for lineno, line in enumerate(_text(data).splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line=lineno)
        try:
            records.append(_record_from_obj(obj, camera))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}", field=exc.field) from None
        except ParseError as exc:
            raise ParseError(str(exc), line=lineno) from None
    return DetectionStream(camera, tuple(records), fps)


def serialize_detections(stream: DetectionStream) -> str:
    lines = []
    for r in stream.records:
        obj = {"frame": r.frame, "class": r.cls.code, "p": r.p,
               "x": r.box.x, "y": r.box.y, "w": r.box.w, "h": r.box.h}
        lines.append(json.dumps(obj, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


INTERVAL_HEADER = ("hand", "state", "start_s", "stop_s")


def seconds_to_frame(t: float, fps: float) -> int:
    return math.floor(t * fps + _FRAME_EPS)


def parse_intervals(data: bytes | str, fps: float = DEFAULT_FPS) -> list[EventInterval]:
    reader = csv.reader(io.StringIO(_text(data)))
    rows = [row for row in reader if row and any(cell.strip() for cell in row)]
    if not rows:
        return []
    header = tuple(cell.strip() for cell in rows[0])
    if header != INTERVAL_HEADER:
        raise ParseError(f"expected header {','.join(INTERVAL_HEADER)}, got {','.join(header)}", line=1)
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 4:
            raise ParseError(f"expected 4 columns, got {len(row)}", line=lineno)
        try:
            hand = HandId.from_code(row[0].strip())
            state = ToolState.from_code(row[1].strip())
        except ParseError as exc:
            raise ParseError(str(exc), line=lineno) from None
        try:
            start, stop = float(row[2]), float(row[3])
        except ValueError:
            raise ParseError(f"non-numeric time in {row!r}", line=lineno) from None
        if not (math.isfinite(start) and math.isfinite(stop)) or start < 0:
            raise ValidationError(f"line {lineno}: invalid times {start}, {stop}", field="start_s")
        if stop <= start:
            raise ValidationError(f"line {lineno}: stop {stop} <= start {start}", field="stop_s")
        try:
            out.append(EventInterval(hand, state, seconds_to_frame(start, fps),
                                     seconds_to_frame(stop, fps)))
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}", field=exc.field) from None
    check_non_overlapping(out)
    return out


def serialize_intervals(intervals: Iterable[EventInterval], fps: float = DEFAULT_FPS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(INTERVAL_HEADER)
    for iv in intervals:
        writer.writerow([iv.hand.code, iv.state.code, repr(iv.start_frame / fps),
                         repr(iv.end_frame / fps)])
    return buf.getvalue()


LABEL_HEADER = ("frame",) + tuple(h.code for h in HANDS)


def serialize_labels(labels) -> str:
    """Label table: one row per frame, one tool-state code per hand."""
    rows = labels.labels if isinstance(labels, LabelTimeline) else labels
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABEL_HEADER)
    codes = [s.code for s in ToolState]
    for t in range(rows.shape[1]):
        writer.writerow([t] + [codes[rows[h, t]] for h in range(len(HANDS))])
    return buf.getvalue()


def parse_labels(data: bytes | str) -> LabelTimeline:
    rows = list(csv.reader(io.StringIO(_text(data))))
    if not rows or tuple(rows[0]) != LABEL_HEADER:
        raise ParseError(f"expected header {','.join(LABEL_HEADER)}", line=1)
    labels = np.zeros((len(HANDS), len(rows) - 1), dtype=np.int8)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 5 or int(row[0]) != lineno - 2:
            raise ParseError("bad label row", line=lineno)
        for h in range(len(HANDS)):
            labels[h, lineno - 2] = ToolState.from_code(row[h + 1])
    return LabelTimeline(labels)


def bundle_session(session_id: str, top: DetectionStream | None = None,
                   close: DetectionStream | None = None,
                   intervals: Sequence[EventInterval] | None = None,
                   fps: float = DEFAULT_FPS) -> SessionBundle:
    """Align two camera streams (either may be absent) and optional ground-truth intervals."""
    top = top if top is not None else DetectionStream(CameraId.TOP, fps=fps)
    close = close if close is not None else DetectionStream(CameraId.CLOSE, fps=fps)
    n = max(top.n_frames, close.n_frames)
    if intervals:
        n = max(n, max(iv.end_frame for iv in intervals))
    truth = timeline_from_intervals(intervals, n) if intervals is not None else None
    return SessionBundle(session_id, n, top.padded(n), close.padded(n), truth, fps)


@dataclass
class ManifestEntry:
    session_id: str
    top_path: str | None = None
    close_path: str | None = None
    intervals_path: str | None = None

    def to_json(self) -> dict:
        out = {"session_id": self.session_id, "top_path": self.top_path,
               "close_path": self.close_path}
        if self.intervals_path is not None:
            out["intervals_path"] = self.intervals_path
        return out


@dataclass
class Manifest:
    sessions: list[ManifestEntry] = field(default_factory=list)
    fps: float = DEFAULT_FPS
    base_dir: Path = Path(".")

    def to_json(self) -> str:
        obj = {"fps": self.fps, "sessions": [e.to_json() for e in self.sessions]}
        return json.dumps(obj, indent=2, sort_keys=True) + "\n"

    def load(self, entry: ManifestEntry) -> SessionBundle:
        def read(rel: str | None) -> str | None:
            if rel is None:
                return None
            path = self.base_dir / rel
            if not path.is_file():
                raise ValidationError(f"session {entry.session_id}: missing file {path}", field="path")
            return path.read_text()

        top_text, close_text = read(entry.top_path), read(entry.close_path)
        iv_text = read(entry.intervals_path)
        top = parse_detections(top_text, CameraId.TOP, self.fps) if top_text is not None else None
        close = parse_detections(close_text, CameraId.CLOSE, self.fps) if close_text is not None else None
        intervals = parse_intervals(iv_text, self.fps) if iv_text is not None else None
        return bundle_session(entry.session_id, top, close, intervals, self.fps)

    def load_all(self) -> list[SessionBundle]:
        return [self.load(e) for e in self.sessions]


def read_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from None
    if isinstance(obj, list):
        obj = {"sessions": obj}
    if not isinstance(obj, dict) or not isinstance(obj.get("sessions"), list):
        raise ParseError(f"manifest {path} has no 'sessions' list")
    entries = []
    for i, e in enumerate(obj["sessions"]):
        if not isinstance(e, dict) or "session_id" not in e:
            raise ValidationError(f"manifest entry {i} lacks session_id", field="session_id")
        entries.append(ManifestEntry(str(e["session_id"]), e.get("top_path"), e.get("close_path"),
                                     e.get("intervals_path")))
    ids = [e.session_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate session ids in manifest", field="session_id")
    return Manifest(entries, float(obj.get("fps", DEFAULT_FPS)), path.parent)


__all__ = [
    "DetectionStream", "SessionBundle", "Manifest", "ManifestEntry", "MulticamError",
    "parse_detections", "serialize_detections", "parse_intervals", "serialize_intervals",
    "parse_labels", "serialize_labels", "bundle_session", "read_manifest", "seconds_to_frame",
]
