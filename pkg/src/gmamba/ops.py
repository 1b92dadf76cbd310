"""Dense numeric primitives: forward passes paired with analytic backward passes.

Every op returns ``(y, backward)`` where ``backward`` maps the upstream
gradient to gradients for each differentiable input, in argument order.
Everything runs in float64; the backward passes are validated against
central finite differences via :func:`grad_check`.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from . import instrument
from .errors import ConfigError, DimensionError


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    instrument.add_flops(instrument.sigmoid_flops(x.size))
    y = expit(x)

    def backward(dy):
        return (dy * y * (1.0 - y),)

    return y, backward


def silu(x):
    """x * sigmoid(x)."""
    x = np.asarray(x, dtype=np.float64)
    instrument.add_flops(instrument.silu_flops(x.size))
    s = expit(x)
    y = x * s

    def backward(dy):
        return (dy * s * (1.0 + x * (1.0 - s)),)

    return y, backward


def softplus(x):
    """log(1 + exp(x)), overflow-safe for large x."""
    x = np.asarray(x, dtype=np.float64)
    instrument.add_flops(instrument.softplus_flops(x.size))
    y = np.logaddexp(0.0, x)

    def backward(dy):
        return (dy * expit(x),)

    return y, backward


def relu(x):
    instrument.add_flops(instrument.relu_flops(x.size))
    y = np.maximum(x, 0.0)

    def backward(dy):
        return (dy * (x > 0.0),)

    return y, backward


def linear(x, w, b=None):
    """y = x @ w + b."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear: x{x.shape} is incompatible with w{w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear: b{b.shape} is incompatible with w{w.shape}")
    instrument.add_flops(instrument.linear_flops(x.shape[0], w.shape[0], w.shape[1]))
    y = x @ w
    if b is not None:
        y = y + b
    instrument.track(y)

    def backward(dy):
        db = dy.sum(axis=0) if b is not None else None
        return dy @ w.T, x.T @ dy, db

    return y, backward


def layer_norm(x, gamma, beta, eps: float = 1e-5):
    """Per-row standardization followed by the affine map gamma*xhat + beta."""
    if x.ndim != 2:
        raise DimensionError(f"layer_norm: expected 2-d input, got {x.shape}")
    instrument.add_flops(instrument.layer_norm_flops(*x.shape))
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gamma * xhat + beta
    instrument.track(y)

    def backward(dy):
        d = x.shape[1]
        dgamma = (dy * xhat).sum(axis=0)
        dbeta = dy.sum(axis=0)
        dxhat = dy * gamma
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        del d
        return dx, dgamma, dbeta

    return y, backward


def causal_dwconv1d(x, kernel, bias):
    """Depthwise causal 1-d convolution along the first axis.

    ``y[t, d] = sum_j kernel[d, j] * x[t - k + 1 + j, d] + bias[d]`` with
    k-1 zeros of left padding, so y[t] never depends on x beyond t.
    """
    length, d = x.shape
    if kernel.ndim != 2 or kernel.shape[0] != d:
        raise DimensionError(f"causal_dwconv1d: kernel{kernel.shape} vs input{x.shape}")
    k = kernel.shape[1]
    instrument.add_flops(instrument.conv1d_flops(length, d, k))
    xp = np.concatenate([np.zeros((k - 1, d)), x], axis=0)
    y = np.zeros_like(x)
    for j in range(k):
        y += kernel[:, j] * xp[j : j + length]
    y += bias
    instrument.track(y)

    def backward(dy):
        dbias = dy.sum(axis=0)
        dkernel = np.empty_like(kernel)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dkernel[:, j] = (dy * xp[j : j + length]).sum(axis=0)
            dxp[j : j + length] += dy * kernel[:, j]
        return dxp[k - 1 :], dkernel, dbias

    return y, backward


def dropout(x, rate: float, rng, training: bool):
    """Inverted dropout; identity at inference or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    instrument.add_flops(instrument.dropout_flops(x.size, rate, training))
    if not training or rate == 0.0:
        def backward(dy):
            return (dy,)

        return x, backward

    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(x.shape) >= rate) * scale
    y = x * mask
    instrument.track(y)

    def backward(dy):
        return (dy * mask,)

    return y, backward


def mlp2(x, w_in, b_in, w_out, b_out):
    """Two-layer MLP: linear (D -> hidden) -> ReLU -> linear (hidden -> out)."""
    h_pre, bwd_in = linear(x, w_in, b_in)
    h, bwd_act = relu(h_pre)
    y, bwd_out = linear(h, w_out, b_out)

    def backward(dy):
        dh, dw_out, db_out = bwd_out(dy)
        (dh_pre,) = bwd_act(dh)
        dx, dw_in, db_in = bwd_in(dh_pre)
        return dx, dw_in, db_in, dw_out, db_out

    return y, backward


def grad_check(f, arrays, grads, eps: float = 1e-6) -> float:
    """Max relative error between central finite differences of ``f`` and ``grads``.

    ``f`` is a zero-argument closure returning a scalar that reads the
    current contents of ``arrays``; entries are perturbed in place and
    restored.  Relative error is |a - n| / max(|a|, |n|, 1e-8).
    """
    worst = 0.0
    for arr, g in zip(arrays, grads):
        flat = arr.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_hi = f()
            flat[i] = orig - eps
            f_lo = f()
            flat[i] = orig
            numeric = (f_hi - f_lo) / (2.0 * eps)
            analytic = gflat[i]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            if err > worst:
                worst = err
    return worst
