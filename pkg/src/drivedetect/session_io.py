"""Binary session persistence and synchronization of raw streams to 3 Hz.

On disk a session is a ``manifest.json`` plus one flat binary file per
stream: little-endian float32, frame-major, row-major within a frame.
Labels are one unsigned byte per frame. This is the only persistence
format in the package; metadata stays human-inspectable, bulk data stays
bit-exact.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CoverageGapError,
    EmptyStreamError,
    InvalidConfigError,
    MissingManifestError,
    NoSessionsError,
    ShapeMismatchError,
    UnknownDtypeError,
)
from .sessions import FRAME_RATE_HZ, FrameSample, Session
from .taxonomy import TAXONOMY_VERSION

MANIFEST_NAME = "manifest.json"
LABELS_STREAM = "labels"
CAN_STREAM = "can"

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


@dataclass(frozen=True)
class StreamSpec:
    name: str
    dtype: str
    frame_shape: tuple[int, ...]
    file: str

    def frame_bytes(self) -> int:
        if self.dtype not in _DTYPES:
            raise UnknownDtypeError(f"stream {self.name!r}: unknown dtype {self.dtype!r}")
        return int(np.prod(self.frame_shape, initial=1)) * _DTYPES[self.dtype].itemsize


@dataclass(frozen=True)
class RawStream:
    """Irregularly sampled source data: ascending timestamps plus values."""

    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        if ts.size == 0:
            raise EmptyStreamError("raw stream has no samples")
        if ts.size > 1 and not np.all(np.diff(ts) > 0):
            raise InvalidConfigError("raw stream timestamps must be strictly ascending")
        if len(self.values) != ts.size:
            raise ShapeMismatchError(
                f"{ts.size} timestamps vs {len(self.values)} values"
            )


def write_session(session: Session, directory: str | Path) -> None:
    """Persist one session; overwrites any previous content of ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    n = len(session)
    specs: list[StreamSpec] = []
    arrays: dict[str, np.ndarray] = {}
    for name in sorted(session.frames[0].features):
        stacked = np.stack([f.features[name] for f in session.frames]).astype("<f4")
        specs.append(StreamSpec(name, "f32", stacked.shape[1:], f"{name}.bin"))
        arrays[name] = stacked
    can = np.stack([f.can for f in session.frames]).astype("<f4")
    specs.append(StreamSpec(CAN_STREAM, "f32", can.shape[1:], "can.bin"))
    arrays[CAN_STREAM] = can
    labels = session.labels()
    specs.append(StreamSpec(LABELS_STREAM, "u8", (), "labels.bin"))
    arrays[LABELS_STREAM] = labels

    manifest = {
        "session_id": session.session_id,
        "frame_count": n,
        "frame_rate_hz": session.frame_rate_hz,
        "taxonomy_version": TAXONOMY_VERSION,
        "streams": [
            {
                "name": s.name,
                "dtype": s.dtype,
                "frame_shape": list(s.frame_shape),
                "file": s.file,
            }
            for s in specs
        ],
    }
    for spec in specs:
        (directory / spec.file).write_bytes(arrays[spec.name].tobytes())
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2) + "\n")


def read_session(directory: str | Path) -> Session:
    """Exact inverse of :func:`write_session`, with byte-count validation."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MissingManifestError(f"no {MANIFEST_NAME} in {directory}")
    manifest = json.loads(manifest_path.read_text())

    n = int(manifest["frame_count"])
    rate = float(manifest.get("frame_rate_hz", FRAME_RATE_HZ))
    if rate != FRAME_RATE_HZ:
        warnings.warn(
            f"session {manifest.get('session_id')!r}: non-canonical frame rate {rate} Hz",
            stacklevel=2,
        )
    version = manifest.get("taxonomy_version")
    if version != TAXONOMY_VERSION:
        warnings.warn(
            f"session {manifest.get('session_id')!r}: taxonomy version {version}, "
            f"this build uses {TAXONOMY_VERSION}",
            stacklevel=2,
        )

    features: dict[str, np.ndarray] = {}
    can = None
    labels = None
    for entry in manifest["streams"]:
        spec = StreamSpec(
            entry["name"], entry["dtype"], tuple(entry["frame_shape"]), entry["file"]
        )
        if spec.dtype not in _DTYPES:
            raise UnknownDtypeError(f"stream {spec.name!r}: unknown dtype {spec.dtype!r}")
        payload = (directory / spec.file).read_bytes()
        expected = n * spec.frame_bytes()
        if len(payload) != expected:
            raise ShapeMismatchError(
                f"stream {spec.name!r}: {len(payload)} bytes on disk, expected {expected}"
            )
        arr = np.frombuffer(payload, dtype=_DTYPES[spec.dtype]).reshape((n,) + spec.frame_shape)
        if spec.name == LABELS_STREAM:
            labels = arr
        elif spec.name == CAN_STREAM:
            can = arr
        else:
            features[spec.name] = arr
    if labels is None or can is None:
        raise ShapeMismatchError("manifest must list 'can' and 'labels' streams")

    frames = [
        FrameSample(
            tick_index=t,
            features={name: features[name][t] for name in features},
            can=can[t],
            label=int(labels[t]),
        )
        for t in range(n)
    ]
    return Session(session_id=manifest["session_id"], frames=frames, frame_rate_hz=rate)


def load_sessions_dir(directory: str | Path) -> list["Session"]:
    """Read every session subdirectory (any child with a manifest), sorted by name."""
    directory = Path(directory)
    if not directory.is_dir():
        raise NoSessionsError(f"{directory} is not a directory")
    sessions = [
        read_session(child)
        for child in sorted(p for p in directory.iterdir() if p.is_dir())
        if (child / MANIFEST_NAME).is_file()
    ]
    if not sessions:
        raise NoSessionsError(f"no session manifests under {directory}")
    return sessions


def _zero_order_hold(stream: RawStream, ticks: np.ndarray, name: str) -> np.ndarray:
    ts = np.asarray(stream.timestamps, dtype=np.float64)
    idx = np.searchsorted(ts, ticks, side="right") - 1
    if idx[0] < 0:
        raise CoverageGapError(f"stream {name!r}: no sample at or before t=0")
    values = np.asarray(stream.values)
    return values[idx]


def resample_to_3hz(
    streams: dict[str, RawStream],
    labels: RawStream,
    duration_s: float,
    session_id: str = "resampled",
) -> Session:
    """Zero-order-hold synchronization of raw streams onto the 3 Hz clock.

    Each output tick at t = k/3 takes the latest raw sample with timestamp
    <= t. Labels and CAN states are step signals, so holding (rather than
    interpolating) preserves their semantics.
    """
    n_ticks = int(np.floor(FRAME_RATE_HZ * duration_s + 1e-9))
    if n_ticks < 1:
        raise InvalidConfigError(f"duration {duration_s}s yields no 3 Hz ticks")
    ticks = np.arange(n_ticks, dtype=np.float64) / FRAME_RATE_HZ

    held = {name: _zero_order_hold(raw, ticks, name) for name, raw in streams.items()}
    held_labels = _zero_order_hold(labels, ticks, LABELS_STREAM)

    can = held.pop(CAN_STREAM, np.zeros((n_ticks, 0), dtype=np.float32))
    frames = [
        FrameSample(
            tick_index=k,
            features={name: np.asarray(arr[k], dtype=np.float32) for name, arr in held.items()},
            can=np.asarray(can[k], dtype=np.float32),
            label=int(held_labels[k]),
        )
        for k in range(n_ticks)
    ]
    return Session(session_id=session_id, frames=frames)
