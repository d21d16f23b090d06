"""Shared fixtures: small hand-built sessions and a reusable tiny dataset."""

import numpy as np
import pytest

from drivedetect.datagen import GeneratorConfig, generate_dataset
from drivedetect.sessions import FrameSample, Session

TINY_SHAPES = {"depth": (2, 2, 3), "seg": (2, 2, 3)}
TINY_CAN_DIM = 3


def make_session(session_id: str, n_frames: int = 12, labels=None, seed: int = 0,
                 shapes=None, can_dim: int = TINY_CAN_DIM) -> Session:
    """Random-feature session with a given label sequence."""
    shapes = dict(TINY_SHAPES) if shapes is None else shapes
    rng = np.random.default_rng([seed, hash(session_id) % (2**31)])
    if labels is None:
        labels = [0] * n_frames
    frames = [
        FrameSample(
            tick_index=t,
            features={k: rng.normal(size=v).astype(np.float32) for k, v in shapes.items()},
            can=rng.normal(size=can_dim).astype(np.float32),
            label=int(labels[t]),
        )
        for t in range(n_frames)
    ]
    return Session(session_id=session_id, frames=frames)


@pytest.fixture
def tiny_session():
    return make_session("tiny", n_frames=8, labels=[0, 0, 6, 6, 6, 0, 2, 2])


@pytest.fixture(scope="session")
def small_dataset():
    """Four short generated sessions shared by read-only tests."""
    config = GeneratorConfig(
        seed=17,
        n_sessions=4,
        frames_per_session=120,
        stream_shapes={"depth": (3, 3, 4), "seg": (3, 3, 4)},
        can_dim=4,
        intra_class_variants=2,
    )
    return generate_dataset(config)
