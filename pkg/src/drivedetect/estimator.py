"""Scikit-learn style front door for the detector.

``BehaviorDetector`` wraps configuration, planning, training, and scoring
behind the familiar ``fit`` / ``predict`` / ``predict_proba`` / ``score``
surface. X is a list of :class:`~drivedetect.sessions.Session`; there is no
separate y, because labels travel inside the sessions frame by frame.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .errors import NotFittedError
from .metrics import EvaluationReport, evaluate, predict_probs
from .model import (
    DEFAULT_REDUCE_CHANNELS,
    ArchitectureVariant,
    ModelConfig,
    build_model,
)
from .sessions import Session
from .taxonomy import NUM_CLASSES
from .train import TrainConfig, make_batch_plan, train
from .validation import check_sessions


class BehaviorDetector(BaseEstimator):
    """Per-frame driver behavior detector with a scikit-learn interface.

    Parameters mirror the underlying model and trainer configs; everything
    else (stream shapes, CAN width) is inferred from the training sessions
    at fit time.
    """

    def __init__(
        self,
        variant: str = "fusion-all",
        hidden_size: int = 256,
        can_feature_dim: int = 64,
        reduce_channels: dict[str, int] | None = None,
        segment_length: int = 90,
        n_lanes: int = 4,
        epochs: int = 1,
        lr: float = 5e-4,
        gamma: float = 2.0,
        alpha: float = 0.25,
        seed: int = 0,
        state_reset_on_session_boundary: bool = True,
    ):
        self.variant = variant
        self.hidden_size = hidden_size
        self.can_feature_dim = can_feature_dim
        self.reduce_channels = reduce_channels
        self.segment_length = segment_length
        self.n_lanes = n_lanes
        self.epochs = epochs
        self.lr = lr
        self.gamma = gamma
        self.alpha = alpha
        self.seed = seed
        self.state_reset_on_session_boundary = state_reset_on_session_boundary

    # -- sklearn protocol ---------------------------------------------------

    def fit(self, X, y=None) -> "BehaviorDetector":
        sessions = check_sessions(self._as_sessions(X))
        reference = sessions[0]
        reduce = dict(DEFAULT_REDUCE_CHANNELS)
        if self.reduce_channels:
            reduce.update(self.reduce_channels)
        config = ModelConfig(
            variant=ArchitectureVariant(self.variant),
            stream_shapes=dict(reference.stream_shapes),
            can_dim=reference.can_dim,
            reduce_channels=reduce,
            can_feature_dim=self.can_feature_dim,
            hidden_size=self.hidden_size,
        )
        train_config = TrainConfig(
            segment_length=self.segment_length,
            n_lanes=self.n_lanes,
            epochs=self.epochs,
            lr=self.lr,
            gamma=self.gamma,
            alpha=self.alpha,
            seed=self.seed,
            state_reset_on_session_boundary=self.state_reset_on_session_boundary,
        )
        model = build_model(config, seed=self.seed)
        plan = make_batch_plan(sessions, self.n_lanes, self.segment_length, self.seed)
        log = train(model, sessions, plan, train_config)

        self.model_ = model
        self.config_ = config
        self.train_log_ = log
        self.n_steps_ = len(log)
        self.classes_ = np.arange(NUM_CLASSES)
        return self

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per session: an (n_frames, 12) array of class probabilities."""
        self._check_fitted()
        return [predict_probs(self.model_, s) for s in check_sessions(self._as_sessions(X))]

    def predict(self, X) -> list[np.ndarray]:
        """Per session: the argmax class id per frame."""
        return [p.argmax(axis=1).astype(np.uint8) for p in self.predict_proba(X)]

    def score(self, X, y=None) -> float:
        """Mean per-class average precision over X, as a fraction in [0, 1]."""
        return self.evaluation_report(X).mean_ap / 100.0

    # -- extras -------------------------------------------------------------

    def evaluation_report(self, X) -> EvaluationReport:
        self._check_fitted()
        return evaluate(self.model_, check_sessions(self._as_sessions(X)))

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("this BehaviorDetector has not been fitted yet")

    @staticmethod
    def _as_sessions(X):
        return [X] if isinstance(X, Session) else X
