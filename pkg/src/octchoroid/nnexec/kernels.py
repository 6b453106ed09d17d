"""Vectorized CPU forward kernels on ``(C, H, W)`` arrays.

Convolution is cross-correlation with zero padding, as in the mainstream
frameworks whose exported weights this executor consumes.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from ..ingest import bilinear_resize


class ShapeError(ValueError):
    pass


def conv_output_size(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def _check_conv(x, weight, bias, stride, padding, groups):
    if x.ndim != 3:
        raise ShapeError(f"expected C x H x W input, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"expected O x C/g x k x k weight, got shape {weight.shape}")
    c_in = x.shape[0]
    c_out, c_per_group, kh, kw = weight.shape
    if kh != kw:
        raise ShapeError("only square kernels are supported")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"groups={groups} must divide in ({c_in}) and out ({c_out}) channels")
    if c_per_group != c_in // groups:
        raise ShapeError(f"weight expects {c_per_group} channels per group, input gives "
                         f"{c_in // groups}")
    if bias is not None and np.shape(bias) != (c_out,):
        raise ShapeError(f"bias shape {np.shape(bias)} != ({c_out},)")
    if stride < 1 or padding < 0:
        raise ShapeError("stride must be >= 1 and padding >= 0")
    ho = conv_output_size(x.shape[1], kh, stride, padding)
    wo = conv_output_size(x.shape[2], kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")
    return ho, wo


def _shifted(xp, i, j, stride, ho, wo):
    return xp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]


def _dense(xp, weight, stride, ho, wo):
    c_out, c_in, k, _ = weight.shape
    dtype = np.result_type(xp, weight)
    # im2col: one (C_out, C_in*k*k) x (C_in*k*k, H'*W') product
    cols = np.empty((c_in, k, k, ho, wo), dtype=dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = _shifted(xp, i, j, stride, ho, wo)
    out = weight.reshape(c_out, -1).astype(dtype, copy=False) @ cols.reshape(c_in * k * k, -1)
    return out.reshape(c_out, ho, wo)


def _depthwise(xp, weight, stride, ho, wo):
    k = weight.shape[-1]
    out = np.zeros((xp.shape[0], ho, wo), dtype=np.result_type(xp, weight))
    for i in range(k):
        for j in range(k):
            out += weight[:, 0, i, j][:, None, None] * _shifted(xp, i, j, stride, ho, wo)
    return out


def conv2d(x, weight, bias=None, stride=1, padding=0, groups=1):
    """2-D cross-correlation of a ``(C_in, H, W)`` tensor.

    ``weight`` has shape ``(C_out, C_in // groups, k, k)``.  Output spatial
    size is ``(H + 2p - k) // s + 1``.
    """
    x = np.asarray(x)
    weight = np.asarray(weight)
    ho, wo = _check_conv(x, weight, bias, stride, padding, groups)
    k = weight.shape[-1]
    c_in = x.shape[0]
    c_out = weight.shape[0]

    if k == 1 and stride == 1 and padding == 0 and groups == 1:
        out = (weight[:, :, 0, 0] @ x.reshape(c_in, -1)).reshape(c_out, ho, wo)
    else:
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding))) if padding else x
        if groups == 1:
            out = _dense(xp, weight, stride, ho, wo)
        elif groups == c_in == c_out:
            out = _depthwise(xp, weight, stride, ho, wo)
        else:
            cg, og = c_in // groups, c_out // groups
            out = np.concatenate([
                _dense(xp[g * cg:(g + 1) * cg], weight[g * og:(g + 1) * og], stride, ho, wo)
                for g in range(groups)
            ])
    if bias is not None:
        out += np.asarray(bias, dtype=out.dtype)[:, None, None]
    return out


def relu(x):
    return np.maximum(x, 0)


def relu6(x):
    return np.minimum(np.maximum(x, 0), 6)


def hsigmoid(x):
    return relu6(x + 3) / 6


def hswish(x):
    return x * relu6(x + 3) / 6


ACTIVATIONS = {"relu": relu, "relu6": relu6, "hswish": hswish, "hsigmoid": hsigmoid}


def activation(x, kind):
    try:
        fn = ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None
    return fn(np.asarray(x))


def global_avg_pool(x):
    return np.asarray(x).mean(axis=(1, 2), keepdims=True)


def se_gate(x, w1, b1, w2, b2):
    """Per-channel excitation weights in [0, 1], shape ``(C, 1, 1)``."""
    pooled = global_avg_pool(x)
    hidden = relu(conv2d(pooled, w1, b1))
    return hsigmoid(conv2d(hidden, w2, b2))


def se_block(x, w1, b1, w2, b2):
    """Squeeze-excite: pool, 1x1 reduce, relu, 1x1 expand, hard-sigmoid, rescale.

    ``w1`` is ``(C_r, C, 1, 1)`` and ``w2`` is ``(C, C_r, 1, 1)``.
    """
    x = np.asarray(x)
    if w1.shape[1] != x.shape[0] or w2.shape[0] != x.shape[0]:
        raise ShapeError(f"SE weights do not match {x.shape[0]} input channels")
    return x * se_gate(x, w1, b1, w2, b2)


def upsample2x_bilinear(x):
    """Double the spatial size with the corner-aligned bilinear rule used by ingest."""
    x = np.asarray(x)
    return bilinear_resize(x, 2 * x.shape[-2], 2 * x.shape[-1])


def sigmoid(x):
    # float64 and clipped so the result stays strictly inside (0, 1)
    eps = np.finfo(np.float64).eps
    return np.clip(expit(np.asarray(x, dtype=np.float64)), eps, 1.0 - eps)
