"""Classification head math: stable softmax and the focal loss.

Focal loss scales cross-entropy by (1 - p_t)^gamma and a per-class weight
alpha_t, down-weighting the easy, mostly-background frames that dominate
untrimmed recordings. With gamma = 0 and alpha = 1 it reduces exactly to
cross-entropy.
"""

from __future__ import annotations

import numpy as np

from ..errors import BadTargetError
from ..taxonomy import BACKGROUND_ID

# Floor for p_t inside the log; well below every test tolerance.
PT_CLAMP = 1e-12


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction for stability."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def default_alpha(n_classes: int, background: float = 0.25, foreground: float = 1.0) -> np.ndarray:
    """Per-class weights: down-weight background, full weight elsewhere."""
    alpha = np.full(n_classes, foreground, dtype=np.float64)
    alpha[BACKGROUND_ID] = background
    return alpha


def focal_loss(
    probs: np.ndarray,
    target: int,
    gamma: float = 2.0,
    alpha: float | np.ndarray = 1.0,
) -> tuple[float, np.ndarray]:
    """Focal loss of one softmax distribution and the exact logit gradient.

    loss = -alpha_t * (1 - p_t)^gamma * log(p_t)

    The returned gradient is with respect to the logits that produced
    ``probs`` via softmax (the composed softmax+focal derivative), not with
    respect to ``probs`` itself.
    """
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[-1]
    if not 0 <= int(target) < k:
        raise BadTargetError(f"target {target} outside [0, {k})")
    losses, grads = focal_loss_batch(
        probs[None, :], np.array([target]), gamma=gamma, alpha=alpha
    )
    return float(losses[0]), grads[0]


def focal_loss_batch(
    probs: np.ndarray,
    targets: np.ndarray,
    gamma: float = 2.0,
    alpha: float | np.ndarray = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized focal loss over rows of ``probs``; see :func:`focal_loss`."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.intp)
    n, k = probs.shape
    if targets.size and (targets.min() < 0 or targets.max() >= k):
        raise BadTargetError(f"targets outside [0, {k})")
    alpha = np.asarray(alpha, dtype=np.float64)
    alpha_t = alpha[targets] if alpha.ndim == 1 else np.full(n, float(alpha))

    pt = probs[np.arange(n), targets]
    u = 1.0 - pt
    log_pt = np.log(np.maximum(pt, PT_CLAMP))
    losses = -alpha_t * u**gamma * log_pt

    # d loss / d logit_k = -alpha_t * (delta_tk - p_k)
    #                      * [(1-p_t)^gamma - gamma * p_t * (1-p_t)^(gamma-1) * log p_t]
    # The bracket stays finite as p_t -> 1 (the log term vanishes faster than
    # u^(gamma-1) blows up for gamma < 1), so guard that factor explicitly.
    if gamma == 0.0:
        bracket = np.ones(n)
    else:
        safe_u = np.where(u > 0.0, u, 1.0)
        focal_term = np.where(u > 0.0, gamma * pt * safe_u ** (gamma - 1.0) * log_pt, 0.0)
        bracket = u**gamma - focal_term
    delta = np.zeros_like(probs)
    delta[np.arange(n), targets] = 1.0
    grads = -(alpha_t * bracket)[:, None] * (delta - probs)
    return losses, grads
