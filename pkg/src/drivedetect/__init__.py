"""Multimodal per-frame driver behavior detection.

Feature streams (visual embeddings, depth, segmentation) and CAN bus
vectors are fused per frame — per-branch reduction, concatenation, batch
normalization — and fed to a stateful LSTM that emits one of 12 behavior
classes per 3 Hz tick. Training uses truncated backpropagation through
time with the focal loss; evaluation reports per-frame per-class average
precision.
"""

from .datagen import GeneratorConfig, generate_dataset
from .errors import DriveDetectError
from .estimator import BehaviorDetector
from .metrics import EvaluationReport, average_precision, evaluate, render_table
from .model import (
    ArchitectureVariant,
    Model,
    ModelConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
)
from .sessions import (
    EventInterval,
    FrameSample,
    Session,
    labels_to_intervals,
    split_dataset,
)
from .session_io import read_session, resample_to_3hz, write_session
from .taxonomy import BACKGROUND_ID, NUM_CLASSES, TAXONOMY, class_id, class_name
from .train import BatchPlan, TrainConfig, make_batch_plan, train
from .verify import run_all_checks

__version__ = "0.1.0"

__all__ = [
    "ArchitectureVariant",
    "BACKGROUND_ID",
    "BatchPlan",
    "BehaviorDetector",
    "DriveDetectError",
    "EvaluationReport",
    "EventInterval",
    "FrameSample",
    "GeneratorConfig",
    "Model",
    "ModelConfig",
    "NUM_CLASSES",
    "Session",
    "TAXONOMY",
    "TrainConfig",
    "average_precision",
    "build_model",
    "class_id",
    "class_name",
    "evaluate",
    "generate_dataset",
    "labels_to_intervals",
    "load_checkpoint",
    "make_batch_plan",
    "read_session",
    "render_table",
    "resample_to_3hz",
    "run_all_checks",
    "save_checkpoint",
    "split_dataset",
    "train",
    "write_session",
    "__version__",
]
