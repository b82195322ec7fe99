"""Slow reference implementations. Deliberately naive: loops and sums only."""
import math

import numpy as np


def _logistic(z):
    return 1.0 / (1.0 + math.exp(-z))


def forward_oracle(model, patch):
    """Direct-summation forward pass of one patch, one output pixel at a time."""
    cfg = model.config
    k, F = cfg.kernel_size, cfg.num_filters
    c = cfg.conv_side
    conv = np.empty((F, c, c))
    for f in range(F):
        for y in range(c):
            for x in range(c):
                z = np.sum(model.conv_kernels[f] * patch[y:y + k, x:x + k])
                conv[f, y, x] = _logistic(z + model.conv_biases[f])
    w, st, s = cfg.pool_window, cfg.pool_stride, cfg.pooled_side
    pooled = np.empty((F, s, s))
    for f in range(F):
        for u in range(s):
            for v in range(s):
                pooled[f, u, v] = conv[f, u * st:u * st + w, v * st:v * st + w].sum() / (w * w)
    flat = pooled.reshape(-1)
    hidden = [_logistic(float(model.fc_weights[p] @ flat) + model.fc_biases[p])
              for p in range(cfg.num_perceptrons)]
    return _logistic(float(np.dot(model.out_weights, hidden)) + float(model.out_bias))


def darkest_block_scan(pixels, block=5):
    """Center of the darkest block, brute force over every top-left corner."""
    h, w = pixels.shape
    sums = np.zeros((h - block + 1, w - block + 1))
    for dy in range(block):
        for dx in range(block):
            sums += pixels[dy:dy + h - block + 1, dx:dx + w - block + 1]
    top, left = np.unravel_index(np.argmin(sums), sums.shape)
    return left + (block - 1) / 2, top + (block - 1) / 2
