"""Whole-model verification: finite differences and state-carry equivalence.

Complements the per-kernel checks in ``nn.gradcheck`` with three
model-level contracts:

* end-to-end gradients of a one-tick segment match finite differences,
* segment gradients treat the incoming LSTM state as a constant
  (the truncation boundary of truncated backpropagation through time),
* chunked eval-mode forwards with carried state reproduce the monolithic
  forward.
"""

from __future__ import annotations

import numpy as np

from .model import ArchitectureVariant, Model, ModelConfig, ModelState, SegmentBatch
from .nn import (
    CheckResult,
    compare_grads,
    default_alpha,
    focal_loss_batch,
    run_layer_checks,
    softmax,
)
from .nn.gradcheck import DEFAULT_TOLERANCE

STATE_CARRY_TOLERANCE = 1e-6


def _toy_config() -> ModelConfig:
    return ModelConfig(
        variant=ArchitectureVariant.FUSION_ALL,
        stream_shapes={"depth": (2, 2, 3), "seg": (2, 2, 3)},
        can_dim=3,
        reduce_channels={"depth": 2, "seg": 2},
        can_feature_dim=5,
        hidden_size=4,
    )


def _random_batch(
    config: ModelConfig, rng: np.random.Generator, n_lanes: int, seg_t: int
) -> SegmentBatch:
    features = {
        name: rng.standard_normal((n_lanes, seg_t) + tuple(config.stream_shapes[name]))
        for name in config.variant.feature_streams
    }
    can = rng.standard_normal((n_lanes, seg_t, config.can_dim))
    labels = rng.integers(0, config.n_classes, size=(n_lanes, seg_t))
    valid = np.ones((n_lanes, seg_t), dtype=bool)
    return SegmentBatch(features=features, can=can, labels=labels, valid=valid)


def _segment_loss(model: Model, batch: SegmentBatch, state: ModelState, gamma, alpha) -> float:
    logits, _ = model.forward_segment(batch, state)
    model._cache = None
    valid = batch.valid
    losses, _ = focal_loss_batch(
        softmax(logits[valid]), batch.labels[valid], gamma=gamma, alpha=alpha
    )
    return float(losses.sum() / valid.sum())


def end_to_end_gradcheck(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> CheckResult:
    """Finite-difference check of every parameter through a T=1 segment.

    One lane is masked out, so the check also covers the masked-frame path
    (zero loss, state passthrough, exclusion from batch statistics).
    """
    rng = np.random.default_rng([seed, 41])
    config = _toy_config()
    model = Model(config, seed=seed)
    # Keep >= 3 lanes in the batch statistics: with only two, the normalized
    # values saturate at +-1 and finite differences lose accuracy to
    # curvature even though the analytic gradient is right.
    batch = _random_batch(config, rng, n_lanes=4, seg_t=1)
    batch.valid[3, 0] = False
    gamma, alpha = 2.0, default_alpha(config.n_classes)

    h0 = rng.standard_normal((4, config.hidden_size)) * 0.3
    c0 = rng.standard_normal((4, config.hidden_size)) * 0.3

    def make_state() -> ModelState:
        return ModelState(h=h0.copy(), c=c0.copy(), training=True)

    for p in model.params():
        p.zero_grad()
    model.forward_segment(batch, make_state())
    model.backward_segment(gamma=gamma, alpha=alpha)
    analytic = [p.grad.copy() for p in model.params()]

    def loss_fn() -> float:
        return _segment_loss(model, batch, make_state(), gamma, alpha)

    return compare_grads(
        "model_end_to_end_t1",
        loss_fn,
        [p.value for p in model.params()],
        analytic,
        tolerance=tolerance,
    )


def truncation_gradcheck(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> CheckResult:
    """Segment-2 gradients vs finite differences with frozen incoming state.

    The numeric side recomputes only segment 2 from the stored state, which
    is exactly what 'no gradient into the incoming state' asserts.
    """
    rng = np.random.default_rng([seed, 42])
    config = _toy_config()
    model = Model(config, seed=seed + 1)
    batch1 = _random_batch(config, rng, n_lanes=3, seg_t=2)
    batch2 = _random_batch(config, rng, n_lanes=3, seg_t=2)
    gamma, alpha = 2.0, 1.0

    _, state1 = model.forward_segment(batch1, model.init_state(3, training=True))
    model._cache = None
    h1, c1 = state1.h.copy(), state1.c.copy()

    for p in model.params():
        p.zero_grad()
    model.forward_segment(batch2, ModelState(h=h1.copy(), c=c1.copy(), training=True))
    model.backward_segment(gamma=gamma, alpha=alpha)
    analytic = [p.grad.copy() for p in model.params()]

    def loss_fn() -> float:
        frozen = ModelState(h=h1.copy(), c=c1.copy(), training=True)
        return _segment_loss(model, batch2, frozen, gamma, alpha)

    return compare_grads(
        "model_truncation_seg2",
        loss_fn,
        [p.value for p in model.params()],
        analytic,
        tolerance=tolerance,
    )


def state_carry_check(
    seed: int = 0, tolerance: float = STATE_CARRY_TOLERANCE, n_chunkings: int = 4
) -> CheckResult:
    """Eval-mode chunked forward with carried state vs one monolithic pass."""
    rng = np.random.default_rng([seed, 43])
    config = _toy_config()
    model = Model(config, seed=seed + 2)
    # Non-trivial running stats so eval-mode normalization is exercised.
    model.fuse_bn.running_mean = rng.standard_normal(config.fused_width()) * 0.1
    model.fuse_bn.running_var = 1.0 + 0.2 * rng.random(config.fused_width())
    seg_t = 12
    batch = _random_batch(config, rng, n_lanes=1, seg_t=seg_t)

    full, _ = model.forward_segment(batch, model.init_state(1))
    worst = 0.0
    for _ in range(n_chunkings):
        n_cuts = int(rng.integers(1, 4))
        cuts = sorted(rng.choice(np.arange(1, seg_t), size=n_cuts, replace=False).tolist())
        bounds = [0, *cuts, seg_t]
        state = model.init_state(1)
        pieces = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            chunk = SegmentBatch(
                features={k: v[:, lo:hi] for k, v in batch.features.items()},
                can=batch.can[:, lo:hi],
                labels=batch.labels[:, lo:hi],
                valid=batch.valid[:, lo:hi],
            )
            logits, state = model.forward_segment(chunk, state)
            pieces.append(logits)
        chunked = np.concatenate(pieces, axis=1)
        worst = max(worst, float(np.max(np.abs(chunked - full))))
    return CheckResult("model_state_carry", worst, tolerance)


def run_model_checks(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    return [
        end_to_end_gradcheck(seed, tolerance),
        truncation_gradcheck(seed, tolerance),
        state_carry_check(seed),
    ]


def run_all_checks(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    """Kernel checks plus model checks, in reporting order."""
    return run_layer_checks(seed, tolerance) + run_model_checks(seed, tolerance)
