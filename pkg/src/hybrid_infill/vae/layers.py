"""Numpy layer primitives with hand-written backward passes.

Images are (N, C, H, W). Convolutions are 3x3, stride 1, zero padding 1.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray) -> np.ndarray:
    """(N, H, W, C*9) patches of the zero-padded input."""
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (N, C, H, W, 3, 3)
    n, c, h, w = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n, h, w, c * 9)


def conv_forward(x, W, b):
    """W: (C_out, C_in, 3, 3). Returns output and the patch cache."""
    cols = _windows(x)
    y = cols @ W.reshape(W.shape[0], -1).T + b
    return y.transpose(0, 3, 1, 2), cols


def conv_backward(dy, cols, W, need_dx: bool = True):
    """Gradients (dx, dW, db) of a convolution given dL/dy."""
    dyt = dy.transpose(0, 2, 3, 1)  # (N, H, W, C_out)
    dW = np.tensordot(dyt, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(W.shape)
    db = dyt.sum(axis=(0, 1, 2))
    dx = None
    if need_dx:
        # dx is the correlation of dy with the flipped, channel-swapped kernel
        Wf = W[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        dx, _ = conv_forward(dy, Wf, 0.0)
    return dx, dW, db


def tconv_kernel(Wt):
    """Stride-1 transposed convolution with Wt (C_in, C_out, 3, 3) as an ordinary convolution."""
    return Wt[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)


def tconv_forward(x, Wt, b):
    return conv_forward(x, tconv_kernel(Wt), b)


def tconv_backward(dy, cols, Wt, need_dx: bool = True):
    dx, dW, db = conv_backward(dy, cols, tconv_kernel(Wt), need_dx)
    return dx, dW.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1], db


def relu_forward(x):
    return np.maximum(x, 0.0)


def relu_backward(dy, x):
    return dy * (x > 0)


def maxpool_forward(x):
    """2x2 max pooling; the cache marks the first maximal entry of each window."""
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool_backward(dy, arg):
    n, c, h2, w2 = dy.shape
    blocks = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(blocks, arg[..., None], dy[..., None], axis=-1)
    return blocks.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def upsample_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_backward(dy):
    n, c, h, w = dy.shape
    return dy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)
