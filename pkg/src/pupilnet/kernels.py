"""Hot numeric kernels: valid-mode cross-correlation and its weight gradient.

Every kernel exists twice, a numba version (``*_nb``) and a numpy version
(``*_np``). The public names dispatch to one of them once, at import time,
according to :data:`pupilnet._accel.USE_NUMBA`. Both variants are always
importable so tests and the benchmark can compare them directly.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit


@njit(fastmath=True)
def conv_forward_nb(X, K, b):
    N, H, W = X.shape
    F, k, _ = K.shape
    oh = H - k + 1
    ow = W - k + 1
    Z = np.empty((N, F, oh, ow))
    for s in range(N):
        for f in range(F):
            for y in range(oh):
                row = Z[s, f, y]
                row[:] = b[f]
                for i in range(k):
                    xr = X[s, y + i]
                    for j in range(k):
                        w = K[f, i, j]
                        for x in range(ow):
                            row[x] += w * xr[x + j]
    return Z


@njit(fastmath=True)
def conv_weight_grad_nb(X, dZ, k):
    N, F, oh, ow = dZ.shape
    dK = np.zeros((F, k, k))
    for s in range(N):
        for f in range(F):
            for y in range(oh):
                g = dZ[s, f, y]
                for i in range(k):
                    xr = X[s, y + i]
                    for j in range(k):
                        acc = 0.0
                        for x in range(ow):
                            acc += g[x] * xr[x + j]
                        dK[f, i, j] += acc
    return dK


def conv_forward_np(X, K, b):
    k = K.shape[1]
    win = sliding_window_view(X, (k, k), axis=(1, 2))  # (N, oh, ow, k, k)
    Z = np.tensordot(win, K, axes=([3, 4], [1, 2]))  # (N, oh, ow, F)
    Z = np.ascontiguousarray(Z.transpose(0, 3, 1, 2))
    Z += b[None, :, None, None]
    return Z


def conv_weight_grad_np(X, dZ, k):
    win = sliding_window_view(X, (k, k), axis=(1, 2))
    return np.tensordot(dZ, win, axes=([0, 2, 3], [0, 1, 2]))


@njit(fastmath=True)
def conv_layer_forward_nb(X, K, b, window, stride):
    N, n, _ = X.shape
    F, k, _ = K.shape
    c = n - k + 1
    s = (c - window) // stride + 1
    A = np.empty((N, F, c, c))
    P = np.zeros((N, F, s, s))
    inv = 1.0 / (window * window)
    for q in range(N):
        for f in range(F):
            a = A[q, f]
            for y in range(c):
                row = a[y]
                row[:] = b[f]
                for i in range(k):
                    xr = X[q, y + i]
                    for j in range(k):
                        w = K[f, i, j]
                        for x in range(c):
                            row[x] += w * xr[x + j]
                for x in range(c):
                    row[x] = 1.0 / (1.0 + np.exp(-row[x]))
            p = P[q, f]
            for u in range(s):
                for v in range(s):
                    acc = 0.0
                    for i in range(window):
                        for j in range(window):
                            acc += a[u * stride + i, v * stride + j]
                    p[u, v] = acc * inv
    return A, P


@njit(fastmath=True)
def conv_layer_backward_nb(X, A, dP, window, stride, k):
    N, F, c, _ = A.shape
    s = dP.shape[2]
    dK = np.zeros((F, k, k))
    db = np.zeros(F)
    dz = np.empty((c, c))
    inv = 1.0 / (window * window)
    for q in range(N):
        for f in range(F):
            dz[:, :] = 0.0
            for u in range(s):
                for v in range(s):
                    g = dP[q, f, u, v] * inv
                    for i in range(window):
                        for j in range(window):
                            dz[u * stride + i, v * stride + j] += g
            a = A[q, f]
            tot = 0.0
            for y in range(c):
                for x in range(c):
                    dz[y, x] *= a[y, x] * (1.0 - a[y, x])
                    tot += dz[y, x]
            db[f] += tot
            for y in range(c):
                g = dz[y]
                for i in range(k):
                    xr = X[q, y + i]
                    for j in range(k):
                        acc = 0.0
                        for x in range(c):
                            acc += g[x] * xr[x + j]
                        dK[f, i, j] += acc
    return dK, db


def conv_layer_forward_np(X, K, b, window, stride):
    A = sigmoid(conv_forward_np(X, K, b))
    return A, pool_forward(A, window, stride)


def conv_layer_backward_np(X, A, dP, window, stride, k):
    dZ = pool_backward(dP, window, stride, A.shape) * A * (1.0 - A)
    return conv_weight_grad_np(X, dZ, k), dZ.sum(axis=(0, 2, 3))


if USE_NUMBA:
    _conv_forward = conv_forward_nb
    _conv_weight_grad = conv_weight_grad_nb
    _layer_forward = conv_layer_forward_nb
    _layer_backward = conv_layer_backward_nb
else:
    _conv_forward = conv_forward_np
    _conv_weight_grad = conv_weight_grad_np
    _layer_forward = conv_layer_forward_np
    _layer_backward = conv_layer_backward_np


def conv_layer_forward(X, K, b, window, stride):
    """Conv + bias + logistic + average pool for a stack of square patches.

    Returns the activations ``(N, F, c, c)`` and the pooled maps.
    """
    return _layer_forward(np.ascontiguousarray(X, dtype=np.float64),
                          np.ascontiguousarray(K, dtype=np.float64),
                          np.ascontiguousarray(b, dtype=np.float64), window, stride)


def conv_layer_backward(X, A, dP, window, stride, k):
    """Kernel and bias gradients of the conv layer, summed over the stack."""
    return _layer_backward(np.ascontiguousarray(X, dtype=np.float64), A,
                           np.ascontiguousarray(dP, dtype=np.float64), window, stride, k)


def conv_forward(X, K, b):
    """Valid cross-correlation of a stack ``X (N, H, W)`` with ``K (F, k, k)``.

    Returns pre-activations ``(N, F, H-k+1, W-k+1)`` including the bias.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _conv_forward(X, np.ascontiguousarray(K, dtype=np.float64),
                         np.ascontiguousarray(b, dtype=np.float64))


def conv_weight_grad(X, dZ, k):
    """Gradient of a loss w.r.t. the kernels, summed over the stack."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _conv_weight_grad(X, np.ascontiguousarray(dZ, dtype=np.float64), k)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def pool_forward(A, window, stride):
    """Average pooling over the last two axes, no padding."""
    if window == stride and A.shape[-1] % window == 0 and A.shape[-2] % window == 0:
        *lead, h, w = A.shape
        r = A.reshape(*lead, h // window, window, w // window, window)
        return r.mean(axis=(-3, -1))
    win = sliding_window_view(A, (window, window), axis=(-2, -1))
    return win[..., ::stride, ::stride, :, :].mean(axis=(-2, -1))


def pool_backward(dP, window, stride, in_shape):
    """Spread pooled gradients evenly back over each pooling window."""
    dA = np.zeros(in_shape)
    s_h, s_w = dP.shape[-2:]
    g = dP / float(window * window)
    for i in range(window):
        for j in range(window):
            dA[..., i:i + stride * (s_h - 1) + 1:stride,
               j:j + stride * (s_w - 1) + 1:stride] += g
    return dA


def box_mean(A, window):
    """Mean over every ``window x window`` block at stride 1 (last two axes)."""
    return sliding_window_view(A, (window, window), axis=(-2, -1)).mean(axis=(-2, -1))
