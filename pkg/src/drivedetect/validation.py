"""Input validation shared by the trainer, evaluator, and estimator."""

from __future__ import annotations

from typing import Iterable, Sequence

from .errors import NoSessionsError, StreamMismatchError
from .model import ModelConfig
from .sessions import Session


def check_sessions(sessions: Iterable[Session]) -> list[Session]:
    """Materialize and type-check a session collection; must be non-empty."""
    out = list(sessions)
    if not out:
        raise NoSessionsError("need at least one session")
    for s in out:
        if not isinstance(s, Session):
            raise TypeError(f"expected Session, got {type(s).__name__}")
    return out


def check_streams(config: ModelConfig, sessions: Sequence[Session]) -> None:
    """Every session must carry the variant's streams at the model's shapes."""
    needed = set(config.variant.feature_streams)
    for session in sessions:
        have = set(session.stream_names)
        if not needed.issubset(have):
            raise StreamMismatchError(
                f"session {session.session_id!r} lacks streams "
                f"{sorted(needed - have)} required by variant {config.variant.value!r}"
            )
        for name in needed:
            shape = session.stream_shapes[name]
            if tuple(shape) != tuple(config.stream_shapes[name]):
                raise StreamMismatchError(
                    f"session {session.session_id!r} stream {name!r} has shape {shape}, "
                    f"model expects {tuple(config.stream_shapes[name])}"
                )
        if session.can_dim != config.can_dim:
            raise StreamMismatchError(
                f"session {session.session_id!r} has can_dim {session.can_dim}, "
                f"model expects {config.can_dim}"
            )
