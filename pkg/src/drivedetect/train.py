"""Stateful training loop: sequential segments per lane, carried LSTM state.

Sessions are dealt round-robin onto a fixed number of lanes. Each lane
walks its sessions front to back in T-frame slices, so consecutive steps
see consecutive frames and the LSTM state carried between steps is always
the state the frames actually followed. A lane's state is zeroed when it
crosses into a new session (configurable) and between epochs; the final
slice of a session may be shorter than T and is padded with masked frames
that contribute nothing to the loss.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfigError, NoSessionsError, StreamMismatchError
from .model import Model, assemble_segment
from .model import load_checkpoint, save_checkpoint  # noqa: F401  (re-export)
from .nn import Adam, default_alpha
from .sessions import Session
from .taxonomy import BACKGROUND_ID
from .validation import check_streams

_PLAN_KEY = 404


@dataclass(frozen=True)
class TrainConfig:
    segment_length: int = 90
    n_lanes: int = 4
    epochs: int = 1
    lr: float = 5e-4
    gamma: float = 2.0
    # Focal class weight for the background class; foreground classes get 1.
    alpha: float = 0.25
    seed: int = 0
    state_reset_on_session_boundary: bool = True

    def validate(self) -> None:
        if self.segment_length < 1:
            raise InvalidConfigError("segment_length must be >= 1")
        if self.n_lanes < 1:
            raise InvalidConfigError("n_lanes must be >= 1")
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1")
        # lr == 0 is allowed: it turns the optimizer into a no-op, which the
        # test suite uses as a control.
        if self.lr < 0:
            raise InvalidConfigError("lr must be >= 0")
        if self.gamma < 0:
            raise InvalidConfigError("gamma must be >= 0")
        if self.alpha <= 0:
            raise InvalidConfigError("alpha must be > 0")


@dataclass(frozen=True)
class LaneSlice:
    session_id: str
    start_tick: int
    length: int


@dataclass(frozen=True)
class BatchPlan:
    """Per-lane slice schedules; step k consumes slice k of every lane."""

    lanes: tuple[tuple[LaneSlice, ...], ...]
    segment_length: int

    @property
    def n_steps(self) -> int:
        return max((len(lane) for lane in self.lanes), default=0)


def make_batch_plan(
    sessions: Sequence[Session], n_lanes: int, segment_length: int, seed: int
) -> BatchPlan:
    """Deal sessions onto lanes round-robin in seeded order, then slice.

    Within a lane, a session's slices are consecutive and in tick order, so
    concatenating a lane's slices replays its sessions frame for frame.
    """
    if not sessions:
        raise NoSessionsError("cannot plan over zero sessions")
    if n_lanes < 1 or segment_length < 1:
        raise InvalidConfigError("n_lanes and segment_length must be >= 1")
    order = np.random.default_rng([seed, _PLAN_KEY]).permutation(len(sessions))
    lanes: list[list[LaneSlice]] = [[] for _ in range(n_lanes)]
    for position, session_index in enumerate(order):
        session = sessions[int(session_index)]
        lane = lanes[position % n_lanes]
        for start in range(0, len(session), segment_length):
            length = min(segment_length, len(session) - start)
            lane.append(LaneSlice(session.session_id, start, length))
    return BatchPlan(lanes=tuple(tuple(lane) for lane in lanes), segment_length=segment_length)


def train(
    model: Model,
    sessions: Sequence[Session],
    plan: BatchPlan,
    config: TrainConfig,
    log_path: str | Path | None = None,
) -> list[str]:
    """Run the plan for ``config.epochs`` epochs; returns the log lines.

    Each line is ``step,epoch,mean_loss,fg_fraction`` where the loss is the
    mean focal loss over this step's valid frames and fg_fraction is the
    share of those frames with a foreground label. Deterministic given the
    seeds baked into model, plan, and config.
    """
    config.validate()
    check_streams(model.config, sessions)
    by_id = {s.session_id: s for s in sessions}
    for lane in plan.lanes:
        for sl in lane:
            if sl.session_id not in by_id:
                raise StreamMismatchError(f"plan references unknown session {sl.session_id!r}")

    optimizer = Adam(model.params(), lr=config.lr)
    alpha_vec = default_alpha(model.config.n_classes, background=config.alpha)
    n_lanes = len(plan.lanes)
    lines: list[str] = []
    log_file = open(log_path, "w") if log_path is not None else None
    try:
        step = 0
        for epoch in range(1, config.epochs + 1):
            state = model.init_state(n_lanes, training=True)
            previous: list[str | None] = [None] * n_lanes
            for k in range(plan.n_steps):
                lane_frames = []
                for lane_idx, lane in enumerate(plan.lanes):
                    if k >= len(lane):
                        lane_frames.append([])
                        continue
                    sl = lane[k]
                    if (
                        config.state_reset_on_session_boundary
                        and previous[lane_idx] is not None
                        and previous[lane_idx] != sl.session_id
                    ):
                        state.reset_lanes([lane_idx])
                    previous[lane_idx] = sl.session_id
                    frames = by_id[sl.session_id].frames[sl.start_tick : sl.start_tick + sl.length]
                    lane_frames.append(frames)
                batch = assemble_segment(lane_frames, model.config, plan.segment_length)
                _, state = model.forward_segment(batch, state)
                loss = model.backward_segment(gamma=config.gamma, alpha=alpha_vec)
                optimizer.step()

                step += 1
                n_valid = int(batch.valid.sum())
                fg = (
                    float((batch.labels[batch.valid] != BACKGROUND_ID).sum() / n_valid)
                    if n_valid
                    else 0.0
                )
                line = f"{step},{epoch},{loss:.10f},{fg:.6f}"
                lines.append(line)
                if log_file is not None:
                    log_file.write(line + "\n")
                    log_file.flush()
    finally:
        if log_file is not None:
            log_file.close()
    return lines
