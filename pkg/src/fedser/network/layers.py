"""Forward and backward passes for the supported layer kinds.

All spatial tensors are laid out as (B, W, H, C). Every ``*_forward`` returns
``(out, cache)`` and the matching ``*_backward`` takes ``(dout, cache)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5


def conv2d_forward(x, w, b, stride=1):
    # w: (kw, kh, C, F); "same" zero padding of k // 2
    kw, kh, _, f = w.shape
    pw, ph = kw // 2, kh // 2
    xp = np.pad(x, ((0, 0), (pw, pw), (ph, ph), (0, 0)))
    win = sliding_window_view(xp, (kw, kh), axis=(1, 2))[:, ::stride, ::stride]
    bsz, wo, ho = win.shape[:3]
    # (B, Wo, Ho, C, kw, kh) -> rows of (kw, kh, C) patches
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(bsz * wo * ho, -1)
    out = cols @ w.reshape(-1, f) + b
    return out.reshape(bsz, wo, ho, f), (x.shape, cols, w, stride)


def conv2d_backward(dout, cache, input_grad=True):
    x_shape, cols, w, stride = cache
    kw, kh, c, f = w.shape
    pw, ph = kw // 2, kh // 2
    bsz, wo, ho, _ = dout.shape
    d2 = dout.reshape(-1, f)
    dw = (cols.T @ d2).reshape(w.shape)
    db = np.ones(d2.shape[0]) @ d2
    if not input_grad:
        return None, {"w": dw, "b": db}
    dcols = (d2 @ w.reshape(-1, f).T).reshape(bsz, wo, ho, kw, kh, c)
    dxp = np.zeros((bsz, x_shape[1] + 2 * pw, x_shape[2] + 2 * ph, c))
    for i in range(kw):
        for j in range(kh):
            dxp[:, i:i + stride * wo:stride, j:j + stride * ho:stride, :] += dcols[:, :, :, i, j, :]
    dx = dxp[:, pw:pw + x_shape[1], ph:ph + x_shape[2], :]
    return dx, {"w": dw, "b": db}


def dense_forward(x, w, b):
    return x @ w + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w.T, {"w": x.T @ dout, "b": np.ones(len(dout)) @ dout}


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.9):
    """Normalise over every axis but the last.

    Returns ``(out, cache, new_running)`` where ``new_running`` is ``None`` in
    eval mode and a ``(mean, var)`` pair in train mode.
    """
    c = x.shape[-1]
    x2 = x.reshape(-1, c)
    if train:
        n = x2.shape[0]
        mu = np.ones(n) @ x2 / n
        xc = x2 - mu
        var = np.einsum("ij,ij->j", xc, xc) / n
        new_running = (momentum * running_mean + (1.0 - momentum) * mu,
                       momentum * running_var + (1.0 - momentum) * var)
    else:
        xc = x2 - running_mean
        var = running_var
        new_running = None
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    out = xc * (gamma * inv_std)
    out += beta
    return out.reshape(x.shape), (xc, gamma, inv_std, train), new_running


def batchnorm_backward(dout, cache):
    xc, gamma, inv_std, train = cache
    d2 = dout.reshape(xc.shape)
    dbeta = np.ones(d2.shape[0]) @ d2
    # sum(d * xhat) without materialising xhat
    dgamma = np.einsum("ij,ij->j", d2, xc) * inv_std
    if train:
        n = d2.shape[0]
        # dx = gamma * inv_std / n * (n * d - sum(d) - xhat * sum(d * xhat))
        dx = xc * (-(dgamma * inv_std) / n)
        dx += d2
        dx -= dbeta / n
        dx *= gamma * inv_std
    else:
        dx = d2 * (gamma * inv_std)
    return dx.reshape(dout.shape), {"gamma": dgamma, "beta": dbeta}


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask, {}


def _pool_slices(x, size, wo, ho):
    return [x[:, i:wo * size:size, j:ho * size:size, :] for i in range(size) for j in range(size)]


def maxpool_forward(x, size=2):
    wo, ho = x.shape[1] // size, x.shape[2] // size
    slices = _pool_slices(x, size, wo, ho)
    out = slices[0]
    for s in slices[1:]:
        out = np.maximum(out, s)
    return out, (x, out, size)


def maxpool_backward(dout, cache):
    # route each gradient to the first maximal element of its window
    x, out, size = cache
    wo, ho = dout.shape[1], dout.shape[2]
    dx = np.zeros(x.shape)
    free = np.ones(out.shape, dtype=bool)
    for i in range(size):
        for j in range(size):
            hit = free & (x[:, i:wo * size:size, j:ho * size:size, :] == out)
            dx[:, i:wo * size:size, j:ho * size:size, :] = dout * hit
            free &= ~hit
    return dx, {}


def globalavgpool_forward(x):
    return x.mean(axis=(1, 2)), x.shape


def globalavgpool_backward(dout, x_shape):
    scale = 1.0 / (x_shape[1] * x_shape[2])
    return np.broadcast_to(dout[:, None, None, :] * scale, x_shape).copy(), {}


def flatten_forward(x):
    return x.reshape(x.shape[0], -1), x.shape


def flatten_backward(dout, x_shape):
    return dout.reshape(x_shape), {}
