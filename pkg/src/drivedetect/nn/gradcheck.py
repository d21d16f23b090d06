"""Central finite-difference verification of every backward pass.

The check perturbs each scalar input by +-eps, forms the two-sided slope of
a scalar loss, and compares against the analytic gradient. Relative error is
|a - n| / max(|a|, |n|, 1e-8); double precision throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .layers import BatchNorm, Conv1x1, Dense, LstmCell
from .loss import focal_loss, softmax

FD_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` w.r.t. ``x``, perturbed in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * eps)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def compare_grads(
    name: str,
    loss_fn: Callable[[], float],
    arrays: list[np.ndarray],
    analytic: list[np.ndarray],
    tolerance: float = DEFAULT_TOLERANCE,
) -> CheckResult:
    """Check analytic gradients of ``loss_fn`` w.r.t. each array in ``arrays``."""
    worst = 0.0
    for arr, ana in zip(arrays, analytic):
        num = numerical_gradient(loss_fn, arr)
        worst = max(worst, max_relative_error(ana, num))
    return CheckResult(name, worst, tolerance)


def _projection_loss(rng, shape):
    # Fixed random projection turns a tensor-valued op into a scalar loss
    # whose upstream gradient is the projection itself.
    return rng.standard_normal(shape)


def run_layer_checks(seed: int = 0, tolerance: float = DEFAULT_TOLERANCE) -> list[CheckResult]:
    """Finite-difference checks for every kernel; small randomized shapes."""
    rng = np.random.default_rng(seed)
    results = []

    # dense: 4 -> 3, batch of 2
    dense = Dense(4, 3, rng)
    x = rng.standard_normal((2, 4))
    r = _projection_loss(rng, (2, 3))

    def dense_loss():
        y, _ = dense.forward(x)
        return float((y * r).sum())

    y, cache = dense.forward(x)
    dense.w.zero_grad(), dense.b.zero_grad()
    gx = dense.backward(cache, r)
    results.append(
        compare_grads("dense", dense_loss, [x, dense.w.value, dense.b.value],
                      [gx, dense.w.grad.copy(), dense.b.grad.copy()], tolerance)
    )

    # conv1x1: 3x3 spatial, 5 -> 2 channels
    conv = Conv1x1(5, 2, rng)
    xc = rng.standard_normal((3, 3, 5))
    rc = _projection_loss(rng, (3, 3, 2))

    def conv_loss():
        y, _ = conv.forward(xc)
        return float((y * rc).sum())

    y, cache = conv.forward(xc)
    conv.w.zero_grad(), conv.b.zero_grad()
    gx = conv.backward(cache, rc)
    results.append(
        compare_grads("conv1x1", conv_loss, [xc, conv.w.value, conv.b.value],
                      [gx, conv.w.grad.copy(), conv.b.grad.copy()], tolerance)
    )

    # batchnorm in train mode, full batch and masked batch
    for label, mask in (("batchnorm", None), ("batchnorm_masked", np.array([True, True, False, True]))):
        bn = BatchNorm(3)
        bn.gamma.value[:] = rng.standard_normal(3)
        bn.beta.value[:] = rng.standard_normal(3)
        xb = rng.standard_normal((4, 3))
        rb = _projection_loss(rng, (4, 3))

        def bn_loss(bn=bn, xb=xb, rb=rb, mask=mask):
            y, _ = bn.forward(xb, train=True, stat_mask=mask)
            return float((y * rb).sum())

        y, cache = bn.forward(xb, train=True, stat_mask=mask)
        bn.gamma.zero_grad(), bn.beta.zero_grad()
        gx = bn.backward(cache, rb)
        results.append(
            compare_grads(label, bn_loss, [xb, bn.gamma.value, bn.beta.value],
                          [gx, bn.gamma.grad.copy(), bn.beta.grad.copy()], tolerance)
        )

    # lstm cell: 3 inputs, 5 hidden, batch of 2
    lstm = LstmCell(3, 5, rng)
    xl = rng.standard_normal((2, 3))
    h0 = rng.standard_normal((2, 5))
    c0 = rng.standard_normal((2, 5))
    rh = _projection_loss(rng, (2, 5))
    rcell = _projection_loss(rng, (2, 5))

    def lstm_loss():
        h1, c1, _ = lstm.forward(xl, h0, c0)
        return float((h1 * rh).sum() + (c1 * rcell).sum())

    h1, c1, cache = lstm.forward(xl, h0, c0)
    for p in lstm.params():
        p.zero_grad()
    gx, gh, gc = lstm.backward(cache, rh, rcell)
    results.append(
        compare_grads(
            "lstm_cell", lstm_loss,
            [xl, h0, c0, lstm.wx.value, lstm.wh.value, lstm.b.value],
            [gx, gh, gc, lstm.wx.grad.copy(), lstm.wh.grad.copy(), lstm.b.grad.copy()],
            tolerance,
        )
    )

    # composed softmax + focal loss, gamma 0 and 2, random 12-way logits
    for gamma in (0.0, 2.0):
        logits = rng.standard_normal(12)
        target = int(rng.integers(0, 12))
        alpha = rng.uniform(0.25, 1.0, size=12)

        def focal_scalar(logits=logits, target=target, gamma=gamma, alpha=alpha):
            loss, _ = focal_loss(softmax(logits), target, gamma=gamma, alpha=alpha)
            return loss

        _, grad = focal_loss(softmax(logits), target, gamma=gamma, alpha=alpha)
        results.append(
            compare_grads(f"softmax_focal_gamma{gamma:g}", focal_scalar, [logits], [grad], tolerance)
        )

    return results
