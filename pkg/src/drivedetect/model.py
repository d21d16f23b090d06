"""Detector architectures: per-stream branches, fusion, LSTM, softmax head.

Every variant follows the same template. Each visual feature stream passes
through a 1x1 convolution that reduces its channel count and is flattened;
the CAN vector passes through a dense layer. The branch outputs are
concatenated into one fused vector which is batch-normalized across the
lane batch, fed to a single LSTM cell whose state persists across segment
boundaries, and projected to 12 class logits per frame.

``forward_segment`` / ``backward_segment`` operate on fixed-length segments
so the trainer can do truncated backpropagation through time: gradients
never flow into the hidden state a segment starts from.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CacheMissingError,
    ConfigMismatchError,
    InvalidConfigError,
    MissingStreamError,
    ShapeMismatchError,
)
from .nn import BatchNorm, Conv1x1, Dense, LstmCell, Param, focal_loss_batch, softmax
from .sessions import FrameSample
from .taxonomy import NUM_CLASSES

_MODEL_KEY = 303


class ArchitectureVariant(enum.Enum):
    """The five architectures compared in the experiments."""

    BASELINE_IMAGE_CAN = "baseline-image-can"
    RECON_FEAT_CAN = "recon-feat-can"
    DEPTH_CAN = "depth-can"
    SEG_CAN = "seg-can"
    FUSION_ALL = "fusion-all"

    @property
    def feature_streams(self) -> tuple[str, ...]:
        return _VARIANT_STREAMS[self]


_VARIANT_STREAMS: dict[ArchitectureVariant, tuple[str, ...]] = {
    ArchitectureVariant.BASELINE_IMAGE_CAN: ("image",),
    ArchitectureVariant.RECON_FEAT_CAN: ("recon",),
    ArchitectureVariant.DEPTH_CAN: ("depth",),
    ArchitectureVariant.SEG_CAN: ("seg",),
    ArchitectureVariant.FUSION_ALL: ("depth", "seg"),
}

DEFAULT_STREAM_SHAPES: dict[str, tuple[int, int, int]] = {
    "image": (8, 8, 16),
    "recon": (8, 8, 8),
    "depth": (8, 8, 8),
    "seg": (8, 8, 8),
}
DEFAULT_REDUCE_CHANNELS: dict[str, int] = {"image": 20, "recon": 8, "depth": 8, "seg": 8}


@dataclass(frozen=True)
class ModelConfig:
    variant: ArchitectureVariant = ArchitectureVariant.FUSION_ALL
    stream_shapes: dict[str, tuple[int, int, int]] = field(
        default_factory=lambda: dict(DEFAULT_STREAM_SHAPES)
    )
    can_dim: int = 8
    reduce_channels: dict[str, int] = field(
        default_factory=lambda: dict(DEFAULT_REDUCE_CHANNELS)
    )
    can_feature_dim: int = 64
    hidden_size: int = 256
    n_classes: int = NUM_CLASSES

    def validate(self) -> None:
        if self.n_classes != NUM_CLASSES:
            raise InvalidConfigError(f"n_classes is fixed at {NUM_CLASSES}")
        if self.can_dim < 1 or self.can_feature_dim < 1 or self.hidden_size < 1:
            raise InvalidConfigError("can_dim, can_feature_dim, hidden_size must be >= 1")
        for name in self.variant.feature_streams:
            if name not in self.stream_shapes:
                raise MissingStreamError(
                    f"variant {self.variant.value!r} needs stream {name!r}: no shape configured"
                )
            if name not in self.reduce_channels:
                raise MissingStreamError(
                    f"variant {self.variant.value!r} needs stream {name!r}: "
                    "no reduce_channels entry"
                )
            shape = tuple(self.stream_shapes[name])
            if len(shape) != 3 or any(d < 1 for d in shape):
                raise InvalidConfigError(f"stream {name!r}: bad frame shape {shape}")
            if self.reduce_channels[name] < 1:
                raise InvalidConfigError(f"stream {name!r}: reduce_channels must be >= 1")

    def branch_width(self, name: str) -> int:
        h, w, _ = self.stream_shapes[name]
        return h * w * self.reduce_channels[name]

    def fused_width(self) -> int:
        return sum(self.branch_width(s) for s in self.variant.feature_streams) + self.can_feature_dim

    def to_json_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "stream_shapes": {k: list(v) for k, v in sorted(self.stream_shapes.items())},
            "can_dim": self.can_dim,
            "reduce_channels": dict(sorted(self.reduce_channels.items())),
            "can_feature_dim": self.can_feature_dim,
            "hidden_size": self.hidden_size,
            "n_classes": self.n_classes,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            variant=ArchitectureVariant(d["variant"]),
            stream_shapes={k: tuple(v) for k, v in d["stream_shapes"].items()},
            can_dim=int(d["can_dim"]),
            reduce_channels={k: int(v) for k, v in d["reduce_channels"].items()},
            can_feature_dim=int(d["can_feature_dim"]),
            hidden_size=int(d["hidden_size"]),
            n_classes=int(d["n_classes"]),
        )


@dataclass
class ModelState:
    """Per-lane LSTM state plus the batchnorm mode for this pass."""

    h: np.ndarray
    c: np.ndarray
    training: bool = False

    @property
    def n_lanes(self) -> int:
        return self.h.shape[0]

    def reset_lanes(self, lanes: Sequence[int]) -> None:
        for lane in lanes:
            self.h[lane] = 0.0
            self.c[lane] = 0.0


@dataclass
class SegmentBatch:
    """One training step's worth of frames: lanes x T, padded where short.

    ``valid`` marks real frames; padded positions carry zeros, are excluded
    from batch statistics and the loss, and leave their lane's LSTM state
    untouched.
    """

    features: dict[str, np.ndarray]  # name -> (lanes, T, h, w, c)
    can: np.ndarray  # (lanes, T, can_dim)
    labels: np.ndarray  # (lanes, T)
    valid: np.ndarray  # (lanes, T) bool

    @property
    def n_lanes(self) -> int:
        return self.valid.shape[0]

    @property
    def segment_length(self) -> int:
        return self.valid.shape[1]


def assemble_segment(
    lane_frames: Sequence[Sequence[FrameSample]],
    config: ModelConfig,
    segment_length: int | None = None,
) -> SegmentBatch:
    """Pack ragged per-lane frame lists into padded arrays for the model."""
    if not lane_frames:
        raise InvalidConfigError("need at least one lane")
    n_lanes = len(lane_frames)
    t_max = max((len(fr) for fr in lane_frames), default=0)
    seg_t = t_max if segment_length is None else segment_length
    if seg_t < 1 or t_max > seg_t:
        raise ShapeMismatchError(f"lanes hold up to {t_max} frames, segment length {seg_t}")

    streams = config.variant.feature_streams
    features = {
        name: np.zeros((n_lanes, seg_t) + tuple(config.stream_shapes[name]))
        for name in streams
    }
    can = np.zeros((n_lanes, seg_t, config.can_dim))
    labels = np.zeros((n_lanes, seg_t), dtype=np.intp)
    valid = np.zeros((n_lanes, seg_t), dtype=bool)
    for lane, frames in enumerate(lane_frames):
        for t, frame in enumerate(frames):
            for name in streams:
                if name not in frame.features:
                    raise MissingStreamError(
                        f"variant {config.variant.value!r} needs stream {name!r}, "
                        f"frame has {sorted(frame.features)}"
                    )
                arr = frame.features[name]
                if arr.shape != tuple(config.stream_shapes[name]):
                    raise ShapeMismatchError(
                        f"stream {name!r}: frame shape {arr.shape}, "
                        f"config {tuple(config.stream_shapes[name])}"
                    )
                features[name][lane, t] = arr
            if frame.can.shape != (config.can_dim,):
                raise ShapeMismatchError(
                    f"can: frame dim {frame.can.shape}, config ({config.can_dim},)"
                )
            can[lane, t] = frame.can
            labels[lane, t] = frame.label
            valid[lane, t] = True
    return SegmentBatch(features=features, can=can, labels=labels, valid=valid)


@dataclass
class _TickCache:
    branch: dict[str, object]
    can: object
    bn: object
    lstm: object
    head: object
    valid: np.ndarray


@dataclass
class _SegmentCache:
    batch: SegmentBatch
    ticks: list[_TickCache]
    logits: np.ndarray


class Model:
    """One detector instance; see the module docstring for the data path."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, _MODEL_KEY])
        self.branches: dict[str, Conv1x1] = {}
        for name in config.variant.feature_streams:
            c_in = config.stream_shapes[name][2]
            self.branches[name] = Conv1x1(
                c_in, config.reduce_channels[name], rng, name=f"branch_{name}"
            )
        self.can_dense = Dense(config.can_dim, config.can_feature_dim, rng, name="can_fc")
        self.fuse_bn = BatchNorm(config.fused_width(), name="fusion_bn")
        self.lstm = LstmCell(config.fused_width(), config.hidden_size, rng, name="lstm")
        self.head = Dense(config.hidden_size, config.n_classes, rng, name="head")
        self._cache: _SegmentCache | None = None

    # -- parameter plumbing -------------------------------------------------

    def params(self) -> list[Param]:
        out: list[Param] = []
        for name in self.config.variant.feature_streams:
            out.extend(self.branches[name].params())
        out.extend(self.can_dense.params())
        out.extend(self.fuse_bn.params())
        out.extend(self.lstm.params())
        out.extend(self.head.params())
        return out

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self.params())

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """All persistent arrays (parameters + batchnorm running stats)."""
        arrays = [(p.name, p.value) for p in self.params()]
        arrays.append(("fusion_bn.running_mean", self.fuse_bn.running_mean))
        arrays.append(("fusion_bn.running_var", self.fuse_bn.running_var))
        return arrays

    def init_state(self, n_lanes: int, training: bool = False) -> ModelState:
        if n_lanes < 1:
            raise InvalidConfigError(f"n_lanes must be >= 1, got {n_lanes}")
        h = np.zeros((n_lanes, self.config.hidden_size))
        c = np.zeros((n_lanes, self.config.hidden_size))
        return ModelState(h=h, c=c, training=training)

    # -- forward / backward -------------------------------------------------

    def forward_segment(
        self,
        batch: SegmentBatch | Sequence[Sequence[FrameSample]],
        state: ModelState,
    ) -> tuple[np.ndarray, ModelState]:
        """Run one segment; returns (logits lanes x T x 12, outgoing state).

        In training mode the forward pass is cached for one subsequent
        ``backward_segment`` call. Padded frames never advance their lane's
        state.
        """
        if not isinstance(batch, SegmentBatch):
            batch = assemble_segment(batch, self.config)
        n_lanes, seg_t = batch.valid.shape
        if state.n_lanes != n_lanes:
            raise ShapeMismatchError(f"state has {state.n_lanes} lanes, batch {n_lanes}")

        streams = self.config.variant.feature_streams
        h = state.h.copy()
        c = state.c.copy()
        logits = np.empty((n_lanes, seg_t, self.config.n_classes))
        ticks: list[_TickCache] = []
        for t in range(seg_t):
            parts = []
            branch_caches: dict[str, object] = {}
            for name in streams:
                y, cc = self.branches[name].forward(batch.features[name][:, t])
                branch_caches[name] = cc
                parts.append(y.reshape(n_lanes, -1))
            y_can, can_cache = self.can_dense.forward(batch.can[:, t])
            parts.append(y_can)
            fused = np.concatenate(parts, axis=1)

            valid_t = batch.valid[:, t]
            if state.training and int(valid_t.sum()) >= 2:
                z, bn_cache = self.fuse_bn.forward(fused, train=True, stat_mask=valid_t)
            else:
                # Too few real lanes for batch statistics (or eval mode):
                # normalize with the running estimates instead.
                z, bn_cache = self.fuse_bn.forward(fused, train=False)

            h_new, c_new, lstm_cache = self.lstm.forward(z, h, c)
            keep = valid_t[:, None]
            h = np.where(keep, h_new, h)
            c = np.where(keep, c_new, c)
            out, head_cache = self.head.forward(h)
            logits[:, t] = out
            if state.training:
                ticks.append(
                    _TickCache(branch_caches, can_cache, bn_cache, lstm_cache, head_cache, valid_t)
                )

        self._cache = _SegmentCache(batch, ticks, logits) if state.training else None
        return logits, ModelState(h=h, c=c, training=state.training)

    def backward_segment(
        self,
        targets: np.ndarray | None = None,
        gamma: float = 2.0,
        alpha: float | np.ndarray = 1.0,
    ) -> float:
        """Backpropagate the mean focal loss of the last cached forward.

        Returns the mean loss over valid frames and accumulates parameter
        gradients. The incoming state is treated as a constant (truncation),
        so no gradient leaves the segment. Consumes the cache.
        """
        cache = self._cache
        if cache is None:
            raise CacheMissingError("no cached training forward; call forward_segment first")
        self._cache = None
        batch = cache.batch
        labels = batch.labels if targets is None else np.asarray(targets, dtype=np.intp)
        if labels.shape != batch.valid.shape:
            raise ShapeMismatchError(f"targets {labels.shape} vs batch {batch.valid.shape}")
        valid = batch.valid
        n_valid = int(valid.sum())
        if n_valid == 0:
            return 0.0

        probs = softmax(cache.logits)
        losses, grads = focal_loss_batch(probs[valid], labels[valid], gamma=gamma, alpha=alpha)
        mean_loss = float(losses.sum() / n_valid)
        glogits = np.zeros_like(cache.logits)
        glogits[valid] = grads / n_valid

        n_lanes = batch.n_lanes
        hidden = self.config.hidden_size
        streams = self.config.variant.feature_streams
        gh = np.zeros((n_lanes, hidden))
        gc = np.zeros((n_lanes, hidden))
        for t in reversed(range(batch.segment_length)):
            tc = cache.ticks[t]
            gh_total = gh + self.head.backward(tc.head, glogits[:, t])
            gc_total = gc
            gate = tc.valid[:, None]
            gz, gh_prev, gc_prev = self.lstm.backward(
                tc.lstm, np.where(gate, gh_total, 0.0), np.where(gate, gc_total, 0.0)
            )
            # Lanes masked at this tick skipped the cell, so their gradient
            # passes straight through to the previous tick's state.
            gh = gh_prev + np.where(gate, 0.0, gh_total)
            gc = gc_prev + np.where(gate, 0.0, gc_total)

            gfused = self.fuse_bn.backward(tc.bn, gz)
            offset = 0
            for name in streams:
                width = self.config.branch_width(name)
                gpart = gfused[:, offset : offset + width]
                offset += width
                hgt, wdt, _ = self.config.stream_shapes[name]
                reduced = self.config.reduce_channels[name]
                self.branches[name].backward(
                    tc.branch[name], gpart.reshape(n_lanes, hgt, wdt, reduced)
                )
            self.can_dense.backward(tc.can, gfused[:, offset:])
        # gh/gc now hold the gradient into the incoming state: dropped.
        return mean_loss


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    return Model(config, seed)


# -- checkpointing ----------------------------------------------------------

_CHECKPOINT_MAGIC = "drivedetect-checkpoint"


def save_checkpoint(model: Model, step: int, path) -> None:
    """One file: a JSON header line, then all arrays as little-endian f64."""
    arrays = model.state_arrays()
    header = {
        "format": _CHECKPOINT_MAGIC,
        "version": 1,
        "config": model.config.to_json_dict(),
        "seed": model.seed,
        "step": int(step),
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for _, a in arrays)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n" + payload
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> tuple[Model, int]:
    """Bit-exact inverse of :func:`save_checkpoint`; returns (model, step)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n")
    if sep < 0:
        raise ConfigMismatchError("checkpoint has no header line")
    try:
        header = json.loads(blob[:sep])
    except json.JSONDecodeError as exc:
        raise ConfigMismatchError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != _CHECKPOINT_MAGIC or header.get("version") != 1:
        raise ConfigMismatchError("not a recognized checkpoint file")
    config = ModelConfig.from_json_dict(header["config"])
    model = build_model(config, int(header["seed"]))

    arrays = model.state_arrays()
    expected = [{"name": n, "shape": list(a.shape)} for n, a in arrays]
    if header["arrays"] != expected:
        raise ConfigMismatchError("checkpoint array manifest does not match its config")
    payload = blob[sep + 1 :]
    total = sum(int(np.prod(a.shape, initial=1)) for _, a in arrays) * 8
    if len(payload) != total:
        raise ConfigMismatchError(f"payload is {len(payload)} bytes, manifest implies {total}")
    offset = 0
    for _, arr in arrays:
        n_bytes = arr.size * 8
        flat = np.frombuffer(payload[offset : offset + n_bytes], dtype="<f8")
        arr[...] = flat.reshape(arr.shape)
        offset += n_bytes
    return model, int(header["step"])
