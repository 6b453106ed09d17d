"""Naive loop-nest reference kernels.

Deliberately unvectorized and accumulated in float64 so they can serve as
an independent oracle for :mod:`octchoroid.nnexec.kernels`.  Only usable on
small tensors.
"""

from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x, weight, bias=None, stride=1, padding=0, groups=1):
    x = np.asarray(x, dtype=np.float64)
    weight = np.asarray(weight, dtype=np.float64)
    c_in, h, w = x.shape
    c_out, cg, k, _ = weight.shape
    og = c_out // groups
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for o in range(c_out):
        g = o // og
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0 if bias is None else float(bias[o])
                for c in range(cg):
                    ci = g * cg + c
                    for i in range(k):
                        r = y * stride + i - padding
                        if r < 0 or r >= h:
                            continue
                        for j in range(k):
                            col = xx * stride + j - padding
                            if 0 <= col < w:
                                acc += x[ci, r, col] * weight[o, c, i, j]
                out[o, y, xx] = acc
    return out


def activation_naive(x, kind):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat_in, flat_out = x.ravel(), out.ravel()
    for n, v in enumerate(flat_in):
        r6 = min(max(v + 3.0, 0.0), 6.0)
        if kind == "relu":
            flat_out[n] = max(v, 0.0)
        elif kind == "relu6":
            flat_out[n] = min(max(v, 0.0), 6.0)
        elif kind == "hswish":
            flat_out[n] = v * r6 / 6.0
        elif kind == "hsigmoid":
            flat_out[n] = r6 / 6.0
        else:
            raise ValueError(kind)
    return out


def upsample2x_naive(x):
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    ho, wo = 2 * h, 2 * w
    out = np.zeros((c, ho, wo))
    for ch in range(c):
        for y in range(ho):
            sy = y * (h - 1) / (ho - 1) if h > 1 else 0.0
            y0 = min(int(math.floor(sy)), h - 1)
            y1 = min(y0 + 1, h - 1)
            fy = sy - y0
            for xx in range(wo):
                sx = xx * (w - 1) / (wo - 1) if w > 1 else 0.0
                x0 = min(int(math.floor(sx)), w - 1)
                x1 = min(x0 + 1, w - 1)
                fx = sx - x0
                top = x[ch, y0, x0] * (1 - fx) + x[ch, y0, x1] * fx
                bot = x[ch, y1, x0] * (1 - fx) + x[ch, y1, x1] * fx
                out[ch, y, xx] = top * (1 - fy) + bot * fy
    return out


def global_avg_pool_naive(x):
    x = np.asarray(x, dtype=np.float64)
    c, h, w = x.shape
    out = np.zeros((c, 1, 1))
    for ch in range(c):
        total = 0.0
        for y in range(h):
            for xx in range(w):
                total += x[ch, y, xx]
        out[ch, 0, 0] = total / (h * w)
    return out


def se_block_naive(x, w1, b1, w2, b2):
    pooled = global_avg_pool_naive(x)
    hidden = activation_naive(conv2d_naive(pooled, w1, b1), "relu")
    gate = activation_naive(conv2d_naive(hidden, w2, b2), "hsigmoid")
    return np.asarray(x, dtype=np.float64) * gate


def batchnorm_naive(x, gamma, beta, mean, var, eps):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for ch in range(x.shape[0]):
        out[ch] = (x[ch] - mean[ch]) / math.sqrt(var[ch] + eps) * gamma[ch] + beta[ch]
    return out


def sigmoid_naive(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    for n, v in enumerate(x.ravel()):
        out.ravel()[n] = 1.0 / (1.0 + math.exp(-v)) if v >= 0 else math.exp(v) / (1.0 + math.exp(v))
    return out
