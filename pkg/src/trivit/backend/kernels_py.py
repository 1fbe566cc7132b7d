"""Pure-numpy implementations of the hot kernels.

Signature-compatible with the compiled versions in ``kernels_cy``: every
function fills caller-allocated output arrays so the two backends can be
swapped freely (and benchmarked against each other).
"""

import numpy as np

NAME = "py"

# tanh-based GELU constants
_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715


def softmax_fwd(x, out):
    """Row softmax of a 2-d array, max-subtracted for stability."""
    np.subtract(x, x.max(axis=1, keepdims=True), out=out)
    np.exp(out, out=out)
    out /= out.sum(axis=1, keepdims=True)


def softmax_bwd(y, dy, dx):
    dot = (dy * y).sum(axis=1, keepdims=True)
    np.multiply(y, dy - dot, out=dx)


def layernorm_fwd(x, gain, bias, eps, y, xhat, rstd):
    """Per-row normalization; caches xhat and 1/std for the backward pass."""
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=1)
    np.divide(1.0, np.sqrt(var + np.asarray(eps, dtype=x.dtype)), out=rstd)
    np.multiply(xc, rstd[:, None], out=xhat)
    np.multiply(xhat, gain, out=y)
    y += bias


def layernorm_bwd(dy, xhat, rstd, gain, dx, dgain, dbias):
    h = dy * gain
    a = h.mean(axis=1, keepdims=True)
    c = (h * xhat).mean(axis=1, keepdims=True)
    np.multiply(rstd[:, None], h - a - xhat * c, out=dx)
    dgain += (dy * xhat).sum(axis=0)
    dbias += dy.sum(axis=0)


def gelu_fwd(x, out):
    t = np.tanh(_GELU_C0 * (x + _GELU_C1 * x * x * x))
    np.multiply(0.5 * x, 1.0 + t, out=out)


def gelu_bwd(x, dy, dx):
    t = np.tanh(_GELU_C0 * (x + _GELU_C1 * x * x * x))
    dt = (1.0 - t * t) * _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x * x)
    np.multiply(dy, 0.5 * (1.0 + t) + 0.5 * x * dt, out=dx)


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps, weight_decay):
    """Fused in-place Adam step with bias correction (flat views)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    denom = np.sqrt(v / bc2)
    denom += eps
    step = (m / bc1) / denom
    if weight_decay:
        step += weight_decay * p
    p -= lr * step
