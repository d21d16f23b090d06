"""Differentiable kernels: dense, 1x1 convolution, batch normalization, LSTM cell.

Each layer exposes ``forward`` returning ``(output, cache)`` and ``backward``
taking that cache plus the upstream gradient. Parameter gradients accumulate
into ``Param.grad``; input gradients are returned. Caches are explicit so one
layer instance can run many timesteps before any backward pass, as truncated
backpropagation through time requires.
"""

from __future__ import annotations

import numpy as np

from ..errors import BatchTooSmallError, ShapeMismatchError
from .params import Param, uniform_init


def _sigmoid(x):
    # Split by sign to avoid overflow in exp.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dense:
    """Affine map y = W x + b, applied row-wise to batches."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, name: str = "dense"):
        self.n_in = n_in
        self.n_out = n_out
        self.w = Param(uniform_init(rng, (n_out, n_in), fan_in=n_in), f"{name}.w")
        self.b = Param(np.zeros(n_out), f"{name}.b")

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        xb = x[None, :] if single else x
        if xb.shape[-1] != self.n_in:
            raise ShapeMismatchError(f"dense: got {xb.shape[-1]} inputs, expected {self.n_in}")
        y = xb @ self.w.value.T + self.b.value
        cache = (xb, single)
        return (y[0] if single else y), cache

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        xb, single = cache
        g = np.asarray(grad_out, dtype=np.float64)
        gb = g[None, :] if single else g
        self.w.grad += gb.T @ xb
        self.b.grad += gb.sum(axis=0)
        gx = gb @ self.w.value
        return gx[0] if single else gx


class Conv1x1:
    """Pointwise convolution: a dense map over channels, shared across positions.

    Input is channel-last, (..., H, W, Cin) -> (..., H, W, Cout).
    """

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, name: str = "conv1x1"):
        self.c_in = c_in
        self.c_out = c_out
        self.w = Param(uniform_init(rng, (c_in, c_out), fan_in=c_in), f"{name}.w")
        self.b = Param(np.zeros(c_out), f"{name}.b")

    def params(self) -> list[Param]:
        return [self.w, self.b]

    def forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.c_in:
            raise ShapeMismatchError(f"conv1x1: got {x.shape[-1]} channels, expected {self.c_in}")
        flat = x.reshape(-1, self.c_in)
        y = (flat @ self.w.value + self.b.value).reshape(x.shape[:-1] + (self.c_out,))
        return y, flat

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        flat = cache
        g = np.asarray(grad_out, dtype=np.float64).reshape(-1, self.c_out)
        self.w.grad += flat.T @ g
        self.b.grad += g.sum(axis=0)
        return (g @ self.w.value.T).reshape(grad_out.shape[:-1] + (self.c_in,))


class BatchNorm:
    """Per-feature batch normalization with running statistics.

    In train mode, statistics come from the batch rows selected by
    ``stat_mask`` (all rows by default); every row is normalized with those
    shared statistics, then the affine gamma/beta is applied, and the running
    estimates are updated with ``momentum``. Eval mode normalizes with the
    running estimates and never mutates them.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-8, name: str = "bn"):
        if not 0 < momentum <= 1:
            raise ShapeMismatchError(f"momentum {momentum} not in (0, 1]")
        if eps <= 0:
            raise ShapeMismatchError(f"eps must be positive, got {eps}")
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(dim), f"{name}.gamma")
        self.beta = Param(np.zeros(dim), f"{name}.beta")
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def params(self) -> list[Param]:
        return [self.gamma, self.beta]

    def forward(self, x: np.ndarray, train: bool, stat_mask: np.ndarray | None = None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeMismatchError(f"batchnorm: expected (B, {self.dim}), got {x.shape}")
        if train:
            rows = np.ones(x.shape[0], dtype=bool) if stat_mask is None else np.asarray(stat_mask, dtype=bool)
            n = int(rows.sum())
            if n < 2:
                raise BatchTooSmallError(f"train-mode batch statistics need >= 2 rows, got {n}")
            mean = x[rows].mean(axis=0)
            var = x[rows].var(axis=0)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean) * inv_std
            self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
            self.running_var = (1 - self.momentum) * self.running_var + self.momentum * var
            cache = ("train", xhat, inv_std, x - mean, rows, n)
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - self.running_mean) * inv_std
            cache = ("eval", xhat, inv_std)
        return xhat * self.gamma.value + self.beta.value, cache

    def backward(self, cache, grad_out: np.ndarray) -> np.ndarray:
        g = np.asarray(grad_out, dtype=np.float64)
        if cache[0] == "eval":
            _, xhat, inv_std = cache
            self.gamma.grad += (g * xhat).sum(axis=0)
            self.beta.grad += g.sum(axis=0)
            return g * self.gamma.value * inv_std
        _, xhat, inv_std, centered, rows, n = cache
        self.gamma.grad += (g * xhat).sum(axis=0)
        self.beta.grad += g.sum(axis=0)
        ghat = g * self.gamma.value
        # All rows see the shared mean/var, but only stat rows produced them:
        # their gradients pick up the mean/var terms from every row's output.
        dvar = (ghat * centered).sum(axis=0) * (-0.5) * inv_std**3
        dmean = (-ghat * inv_std).sum(axis=0)
        gx = ghat * inv_std
        gx[rows] += (dmean + dvar * 2.0 * centered[rows]) / n
        return gx


class LstmCell:
    """Standard LSTM cell over a batch of lanes.

    Gate pre-activations are stacked [input, forget, cell, output]; the
    forget-gate bias starts at +1 so early training does not flush state.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, name: str = "lstm"):
        self.n_in = n_in
        self.hidden = hidden
        self.wx = Param(uniform_init(rng, (4 * hidden, n_in), fan_in=n_in), f"{name}.wx")
        self.wh = Param(uniform_init(rng, (4 * hidden, hidden), fan_in=hidden), f"{name}.wh")
        bias = np.zeros(4 * hidden)
        bias[hidden : 2 * hidden] = 1.0
        self.b = Param(bias, f"{name}.b")

    def params(self) -> list[Param]:
        return [self.wx, self.wh, self.b]

    def forward(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        c = np.asarray(c, dtype=np.float64)
        if x.shape[-1] != self.n_in or h.shape[-1] != self.hidden or c.shape[-1] != self.hidden:
            raise ShapeMismatchError(
                f"lstm_cell: shapes x{x.shape} h{h.shape} c{c.shape} vs "
                f"(n_in={self.n_in}, hidden={self.hidden})"
            )
        a = x @ self.wx.value.T + h @ self.wh.value.T + self.b.value
        H = self.hidden
        i = _sigmoid(a[..., :H])
        f = _sigmoid(a[..., H : 2 * H])
        g = np.tanh(a[..., 2 * H : 3 * H])
        o = _sigmoid(a[..., 3 * H :])
        c_new = f * c + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache = (x, h, c, i, f, g, o, tanh_c)
        return h_new, c_new, cache

    def backward(self, cache, grad_h: np.ndarray, grad_c: np.ndarray):
        x, h, c, i, f, g, o, tanh_c = cache
        grad_h = np.asarray(grad_h, dtype=np.float64)
        grad_c = np.asarray(grad_c, dtype=np.float64)
        dc = grad_c + grad_h * o * (1.0 - tanh_c**2)
        do = grad_h * tanh_c
        di = dc * g
        df = dc * c
        dg = dc * i
        da = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), dg * (1 - g**2), do * o * (1 - o)],
            axis=-1,
        )
        single = da.ndim == 1
        da2 = da[None, :] if single else da
        x2 = x[None, :] if single else x
        h2 = h[None, :] if single else h
        self.wx.grad += da2.T @ x2
        self.wh.grad += da2.T @ h2
        self.b.grad += da2.sum(axis=0)
        gx = da @ self.wx.value
        gh = da @ self.wh.value
        gc = dc * f
        return gx, gh, gc
