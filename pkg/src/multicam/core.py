"""Domain vocabulary: hands, tool states, the 20-class taxonomy and label timelines."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np


class MulticamError(ValueError):
    """Base class for input and domain errors raised by this package."""


class DomainError(MulticamError):
    pass


class ValidationError(MulticamError):
    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class ParseError(MulticamError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class HandId(IntEnum):
    SURGEON_RIGHT = 0
    SURGEON_LEFT = 1
    ASSISTANT_RIGHT = 2
    ASSISTANT_LEFT = 3

    @property
    def code(self) -> str:
        return _HAND_CODES[self]

    @classmethod
    def from_code(cls, code: str) -> "HandId":
        try:
            return cls(_HAND_CODES.index(code))
        except ValueError:
            raise ParseError(f"unknown hand code {code!r}") from None


class ToolState(IntEnum):
    EMPTY = 0
    NEEDLE_HOLDER = 1
    FORCEPS = 2
    SCISSORS = 3
    MOSQUITO_FORCEPS = 4

    @property
    def code(self) -> str:
        return _STATE_CODES[self]

    @classmethod
    def from_code(cls, code: str) -> "ToolState":
        try:
            return cls(_STATE_CODES.index(code))
        except ValueError:
            raise ParseError(f"unknown tool state code {code!r}") from None


class CameraId(IntEnum):
    TOP = 0
    CLOSE = 1

    @property
    def code(self) -> str:
        return ("top", "close")[self]


_HAND_CODES = ("SR", "SL", "AR", "AL")
_STATE_CODES = ("E", "N", "F", "S", "M")

HANDS: tuple[HandId, ...] = tuple(HandId)
STATES: tuple[ToolState, ...] = tuple(ToolState)
CAMERAS: tuple[CameraId, ...] = tuple(CameraId)
N_HANDS = len(HANDS)
N_STATES = len(STATES)
N_CLASSES = N_HANDS * N_STATES


def class_encode(hand: HandId, state: ToolState) -> int:
    """Map (hand, state) to the class id used in reports (0..19, Table-1 reading order)."""
    return int(hand) * N_STATES + int(state)


def class_decode(class_id: int) -> tuple[HandId, ToolState]:
    if not 0 <= class_id < N_CLASSES:
        raise DomainError(f"class id {class_id} outside 0..{N_CLASSES - 1}")
    return HandId(class_id // N_STATES), ToolState(class_id % N_STATES)


@dataclass(frozen=True, slots=True)
class DetectionClass:
    hand: HandId
    state: ToolState

    @property
    def id(self) -> int:
        return class_encode(self.hand, self.state)

    @property
    def code(self) -> str:
        return self.hand.code + self.state.code

    @classmethod
    def from_id(cls, class_id: int) -> "DetectionClass":
        return cls(*class_decode(class_id))

    @classmethod
    def from_code(cls, code: str) -> "DetectionClass":
        if not isinstance(code, str) or len(code) != 3:
            raise ParseError(f"bad class code {code!r}")
        return cls(HandId.from_code(code[:2]), ToolState.from_code(code[2]))


CLASS_CODES: tuple[str, ...] = tuple(DetectionClass.from_id(i).code for i in range(N_CLASSES))


@dataclass(frozen=True, slots=True)
class BBox:
    """Normalized center-format box: (x, y) center, (w, h) size, all image fractions."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"box {name}={v} outside [0, 1]", field=name)
        for name in ("w", "h"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValidationError(f"box {name}={v} outside (0, 1]", field=name)

    @classmethod
    def from_corners(cls, x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return cls((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x, self.y, self.w, self.h)


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    camera: CameraId
    frame: int
    cls: DetectionClass
    p: float
    box: BBox

    def __post_init__(self):
        if self.frame < 0:
            raise ValidationError(f"negative frame {self.frame}", field="frame")
        if not 0.0 <= self.p <= 1.0:
            raise ValidationError(f"p={self.p} outside [0, 1]", field="p")

    @property
    def hand(self) -> HandId:
        return self.cls.hand

    @property
    def state(self) -> ToolState:
        return self.cls.state

    def sort_key(self) -> tuple:
        return (self.frame, self.cls.id, self.p, *self.box.as_tuple())


@dataclass(frozen=True, slots=True)
class EventInterval:
    """One annotated event; ``end_frame`` is exclusive."""

    hand: HandId
    state: ToolState
    start_frame: int
    end_frame: int

    def __post_init__(self):
        if self.start_frame >= self.end_frame:
            raise ValidationError(
                f"interval {self.hand.code}/{self.state.code} has start {self.start_frame} "
                f">= end {self.end_frame}",
                field="end_frame",
            )


@dataclass(frozen=True)
class LabelTimeline:
    """Global ground truth: one ToolState per hand per frame.

    ``labels`` has shape (4, n_frames) with ToolState values, rows in HandId order.
    """

    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int8)
        if labels.ndim != 2 or labels.shape[0] != N_HANDS:
            raise ValidationError(f"labels must have shape (4, n), got {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() >= N_STATES):
            raise ValidationError("labels contain values outside the ToolState range")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_frames(self) -> int:
        return self.labels.shape[1]

    def __getitem__(self, hand: HandId) -> np.ndarray:
        return self.labels[int(hand)]

    def __eq__(self, other):
        if not isinstance(other, LabelTimeline):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def to_intervals(self) -> list[EventInterval]:
        """Run-length encode back into intervals, one per constant segment."""
        out = []
        for hand in HANDS:
            row = self.labels[hand]
            if not row.size:
                continue
            change = np.flatnonzero(np.diff(row)) + 1
            starts = np.concatenate(([0], change))
            ends = np.concatenate((change, [row.size]))
            out.extend(
                EventInterval(hand, ToolState(int(row[s])), int(s), int(e))
                for s, e in zip(starts, ends)
            )
        return out


def check_non_overlapping(intervals: Iterable[EventInterval]) -> None:
    by_hand: dict[HandId, list[EventInterval]] = {}
    for iv in intervals:
        by_hand.setdefault(iv.hand, []).append(iv)
    for hand, ivs in by_hand.items():
        ivs.sort(key=lambda iv: (iv.start_frame, iv.end_frame))
        for a, b in zip(ivs, ivs[1:]):
            if b.start_frame < a.end_frame:
                raise ValidationError(
                    f"overlapping intervals for hand {hand.code}: "
                    f"[{a.start_frame}, {a.end_frame}) and [{b.start_frame}, {b.end_frame})",
                    field="intervals",
                )


def timeline_from_intervals(intervals: Sequence[EventInterval], n_frames: int) -> LabelTimeline:
    """Build per-hand labels from event intervals.

    Frames covered by an interval take its state. Uncovered frames keep the state of
    the most recent earlier interval for that hand (a hidden hand still holds what it
    held when last seen); frames before the first interval are Empty.
    """
    check_non_overlapping(intervals)
    labels = np.zeros((N_HANDS, n_frames), dtype=np.int8)
    for hand in HANDS:
        ivs = sorted((iv for iv in intervals if iv.hand == hand), key=lambda iv: iv.start_frame)
        for k, iv in enumerate(ivs):
            if iv.start_frame >= n_frames:
                break
            stop = ivs[k + 1].start_frame if k + 1 < len(ivs) else n_frames
            labels[hand, iv.start_frame:min(stop, n_frames)] = iv.state
    return LabelTimeline(labels)
