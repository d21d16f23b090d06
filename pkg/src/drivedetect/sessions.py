"""Frame/session data model, label/interval conversions, and dataset splits.

A session is an untrimmed recording already synchronized onto the 3 Hz
clock: an ordered list of frames, each carrying named feature tensors, a
CAN sensor vector, and a per-frame behavior label. Ground truth is stored
per frame; intervals are a derived view only.

Instances are treated as immutable after construction. Arrays are not
defensively copied; do not mutate them once a session is shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IntervalOutOfRangeError,
    InvalidConfigError,
    OverlappingIntervalsError,
    TooFewSessionsError,
)
from .taxonomy import BACKGROUND_ID, NUM_CLASSES

FRAME_RATE_HZ = 3.0


@dataclass(frozen=True)
class FrameSample:
    """One synchronized 3 Hz tick."""

    tick_index: int
    features: dict[str, np.ndarray]
    can: np.ndarray
    label: int


@dataclass(frozen=True)
class Session:
    """Ordered untrimmed sequence of frames from one recording."""

    session_id: str
    frames: list[FrameSample]
    frame_rate_hz: float = FRAME_RATE_HZ

    def __post_init__(self):
        if not self.frames:
            raise InvalidConfigError(f"session {self.session_id!r} has no frames")
        first = self.frames[0]
        streams = set(first.features)
        shapes = {name: arr.shape for name, arr in first.features.items()}
        for i, frame in enumerate(self.frames):
            if frame.tick_index != i:
                raise InvalidConfigError(
                    f"session {self.session_id!r}: tick_index {frame.tick_index} "
                    f"at position {i}, expected consecutive from 0"
                )
            if set(frame.features) != streams:
                raise InvalidConfigError(
                    f"session {self.session_id!r}: frame {i} stream names differ"
                )
            for name, arr in frame.features.items():
                if arr.shape != shapes[name]:
                    raise InvalidConfigError(
                        f"session {self.session_id!r}: stream {name!r} shape "
                        f"{arr.shape} at frame {i}, expected {shapes[name]}"
                    )
            if not 0 <= frame.label < NUM_CLASSES:
                raise InvalidConfigError(
                    f"session {self.session_id!r}: label {frame.label} at frame {i}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def stream_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.frames[0].features))

    @property
    def stream_shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self.frames[0].features.items()}

    @property
    def can_dim(self) -> int:
        return int(self.frames[0].can.shape[0])

    def labels(self) -> np.ndarray:
        return np.array([f.label for f in self.frames], dtype=np.uint8)


@dataclass(frozen=True, order=True)
class EventInterval:
    """Maximal run of one foreground class, [start_tick, end_tick] inclusive."""

    class_id: int
    start_tick: int
    end_tick: int


@dataclass(frozen=True)
class DatasetSplit:
    train: list[Session]
    eval: list[Session] = field(default_factory=list)


def labels_to_intervals(session: Session) -> list[EventInterval]:
    """Collapse the per-frame label sequence into foreground event intervals."""
    return label_array_to_intervals(session.labels())


def label_array_to_intervals(labels: np.ndarray) -> list[EventInterval]:
    intervals = []
    labels = np.asarray(labels)
    n = len(labels)
    start = 0
    while start < n:
        cls = int(labels[start])
        end = start
        while end + 1 < n and labels[end + 1] == cls:
            end += 1
        if cls != BACKGROUND_ID:
            intervals.append(EventInterval(cls, start, end))
        start = end + 1
    return intervals


def intervals_to_labels(intervals: list[EventInterval], length: int) -> np.ndarray:
    """Inverse of :func:`labels_to_intervals`; unlisted ticks are background."""
    labels = np.full(length, BACKGROUND_ID, dtype=np.uint8)
    claimed = np.zeros(length, dtype=bool)
    for iv in intervals:
        if not BACKGROUND_ID < iv.class_id < NUM_CLASSES:
            raise InvalidConfigError(f"interval {iv} has no foreground class id")
        if iv.start_tick < 0 or iv.end_tick >= length or iv.start_tick > iv.end_tick:
            raise IntervalOutOfRangeError(
                f"interval {iv} outside [0, {length}) or reversed"
            )
        span = slice(iv.start_tick, iv.end_tick + 1)
        if claimed[span].any():
            raise OverlappingIntervalsError(f"interval {iv} overlaps an earlier one")
        claimed[span] = True
        labels[span] = iv.class_id
    return labels


def split_dataset(
    sessions: list[Session], eval_fraction: float, seed: int
) -> DatasetSplit:
    """Deterministic whole-session split into train and eval sets."""
    if not 0 < eval_fraction < 1:
        raise InvalidConfigError(f"eval_fraction {eval_fraction} not in (0, 1)")
    if len(sessions) < 2:
        raise TooFewSessionsError("need at least 2 sessions to split")
    ids = [s.session_id for s in sessions]
    if len(set(ids)) != len(ids):
        raise InvalidConfigError("duplicate session ids")
    order = np.random.default_rng(seed).permutation(len(sessions))
    n_eval = min(max(int(round(eval_fraction * len(sessions))), 1), len(sessions) - 1)
    eval_idx = set(order[:n_eval].tolist())
    return DatasetSplit(
        train=[s for i, s in enumerate(sessions) if i not in eval_idx],
        eval=[s for i, s in enumerate(sessions) if i in eval_idx],
    )
