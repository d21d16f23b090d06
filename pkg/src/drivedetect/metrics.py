"""Per-frame per-class average precision and result-table rendering.

Scoring protocol: for each foreground class, every frame of every eval
session is ranked by that class's softmax probability (descending, ties
broken by position so the ranking is deterministic), and AP is the mean of
precision at each positive frame's rank — the non-interpolated form, which
a brute-force reimplementation can check exactly. Classes with no positive
frames in the split are excluded from the mean and flagged, rather than
scored zero.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import NoPositivesError, ShapeMismatchError
from .model import Model, assemble_segment
from .nn import softmax
from .sessions import Session
from .taxonomy import FOREGROUND_IDS, class_name
from .validation import check_sessions, check_streams

MEAN_ROW = "mean"
ABSENT_CELL = "—"


@dataclass(frozen=True)
class FramePrediction:
    """One frame's class distribution."""

    tick_index: int
    probs: np.ndarray

    def __post_init__(self):
        total = float(np.sum(self.probs))
        if abs(total - 1.0) > 1e-6:
            raise ShapeMismatchError(f"probabilities sum to {total}, not 1")


@dataclass(frozen=True)
class EvaluationReport:
    """Per-class AP in percent; classes absent from the split are listed
    separately and excluded from the mean."""

    per_class_ap: dict[int, float]
    mean_ap: float
    absent_classes: tuple[int, ...] = field(default=())

    @classmethod
    def from_class_aps(
        cls, per_class_ap: Mapping[int, float], absent: Sequence[int] = ()
    ) -> "EvaluationReport":
        if not per_class_ap:
            raise NoPositivesError("report needs at least one scored class")
        aps = dict(sorted(per_class_ap.items()))
        return cls(
            per_class_ap=aps,
            mean_ap=float(np.mean(list(aps.values()))),
            absent_classes=tuple(sorted(absent)),
        )


def average_precision(scores, labels) -> float:
    """Non-interpolated AP of a binary ranking, in [0, 1].

    Frames are ranked by descending score; equal scores keep their input
    order (earlier index ranks higher). AP is the mean of precision at each
    positive's rank.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ShapeMismatchError(f"{s.size} scores vs {y.size} labels")
    y = y.astype(bool)
    if not y.any():
        raise NoPositivesError("no positive labels to rank")
    order = np.lexsort((np.arange(s.size), -s))
    hits = y[order]
    precision_at = np.cumsum(hits) / np.arange(1, s.size + 1)
    return float(precision_at[hits].mean())


def predict_probs(model: Model, session: Session) -> np.ndarray:
    """Monolithic eval-mode forward of one session → (n_frames, 12) probs."""
    batch = assemble_segment([session.frames], model.config)
    logits, _ = model.forward_segment(batch, model.init_state(1))
    return softmax(logits[0])


def predict_frames(model: Model, session: Session) -> list[FramePrediction]:
    probs = predict_probs(model, session)
    return [
        FramePrediction(frame.tick_index, probs[t]) for t, frame in enumerate(session.frames)
    ]


def evaluate(model: Model, sessions: Sequence[Session]) -> EvaluationReport:
    """Score all frames of all sessions; AP per foreground class, in percent."""
    sessions = check_sessions(sessions)
    check_streams(model.config, sessions)
    probs = np.concatenate([predict_probs(model, s) for s in sessions], axis=0)
    labels = np.concatenate([s.labels() for s in sessions])

    per_class: dict[int, float] = {}
    absent: list[int] = []
    for cid in FOREGROUND_IDS:
        positives = labels == cid
        if not positives.any():
            absent.append(cid)
            continue
        per_class[cid] = 100.0 * average_precision(probs[:, cid], positives)
    if not per_class:
        raise NoPositivesError("eval split contains no foreground frames at all")
    return EvaluationReport(
        per_class_ap=per_class,
        mean_ap=float(np.mean(list(per_class.values()))),
        absent_classes=tuple(absent),
    )


def _cell(report: EvaluationReport, cid: int) -> str:
    if cid in report.per_class_ap:
        return f"{report.per_class_ap[cid]:.2f}"
    return ABSENT_CELL


def render_table(reports: Mapping[str, EvaluationReport]) -> str:
    """Aligned text table: one row per behavior class plus a mean row."""
    if not reports:
        raise NoPositivesError("no reports to render")
    names = ["behavior class"] + [class_name(cid) for cid in FOREGROUND_IDS] + [MEAN_ROW]
    columns = [names]
    for variant, report in reports.items():
        cells = [variant]
        cells += [_cell(report, cid) for cid in FOREGROUND_IDS]
        cells += [f"{report.mean_ap:.2f}"]
        columns.append(cells)
    widths = [max(len(c) for c in col) for col in columns]
    lines = []
    for row in range(len(names)):
        left = columns[0][row].ljust(widths[0])
        rest = [col[row].rjust(w) for col, w in zip(columns[1:], widths[1:])]
        lines.append("  ".join([left, *rest]).rstrip())
        if row == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def reports_to_csv(reports: Mapping[str, EvaluationReport]) -> str:
    """Long-format CSV: class,variant,ap_percent; absent cells left empty."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "variant", "ap_percent"])
    for cid in FOREGROUND_IDS:
        for variant, report in reports.items():
            value = report.per_class_ap.get(cid)
            writer.writerow([class_name(cid), variant, "" if value is None else f"{value:.4f}"])
    for variant, report in reports.items():
        writer.writerow([MEAN_ROW, variant, f"{report.mean_ap:.4f}"])
    return buf.getvalue()
