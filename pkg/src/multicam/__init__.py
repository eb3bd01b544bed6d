"""Multi-camera tool-use classification for open-surgery detection streams."""

from .core import (
    BBox,
    CameraId,
    DetectionClass,
    DetectionRecord,
    EventInterval,
    HandId,
    LabelTimeline,
    ToolState,
    class_decode,
    class_encode,
    timeline_from_intervals,
)
from .ingest import SessionBundle, bundle_session, parse_detections, parse_intervals

__version__ = "0.1.0"

__all__ = [
    "BBox", "CameraId", "DetectionClass", "DetectionRecord", "EventInterval", "HandId",
    "LabelTimeline", "SessionBundle", "ToolState", "bundle_session", "class_decode",
    "class_encode", "parse_detections", "parse_intervals", "timeline_from_intervals",
]
