"""Dense tensor operations for the toy classifier, with exact reverse-mode gradients.

All arrays are float64 and channel-first: images are (C, H, W). Convolution uses
the cross-correlation convention (no kernel flip). Every operation is a pure
function of its arguments; backward passes take the forward inputs (plus any
recorded indices) explicitly, so independent images can be processed
concurrently without shared state.
"""

import numpy as np

__all__ = [
    "conv2d",
    "conv2d_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "lrn",
    "lrn_backward",
    "relu",
    "relu_backward",
    "affine",
    "affine_backward",
    "softmax",
    "softmax_backward",
    "softmax_xent",
    "softmax_xent_backward",
]


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def _conv_windows(x, kh, kw, stride, padding):
    """Strided view of all (kh, kw) patches: shape (C, H_out, W_out, kh, kw)."""
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    return win[:, ::stride, ::stride], x


def _conv_out_extent(extent, kernel, stride, padding):
    return (extent + 2 * padding - kernel) // stride + 1


def conv2d(x, kernels, bias, stride=1, padding=0):
    """Cross-correlate a (C_in, H, W) image with (C_out, C_in, kH, kW) kernels.

    Output spatial extent is floor((H + 2*padding - kH) / stride) + 1.
    """
    x, kernels, bias = _f64(x), _f64(kernels), _f64(bias)
    if x.ndim != 3 or kernels.ndim != 4:
        raise ValueError(
            f"conv2d expects image (C,H,W) and kernels (C_out,C_in,kH,kW), "
            f"got shapes {x.shape} and {kernels.shape}"
        )
    c_out, c_in, kh, kw = kernels.shape
    if x.shape[0] != c_in:
        raise ValueError(
            f"channel mismatch: image has {x.shape[0]} channels, "
            f"kernels expect {c_in}"
        )
    if bias.shape != (c_out,):
        raise ValueError(f"bias shape {bias.shape} does not match {c_out} output channels")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    h_out = _conv_out_extent(x.shape[1], kh, stride, padding)
    w_out = _conv_out_extent(x.shape[2], kw, stride, padding)
    if h_out < 1 or w_out < 1:
        raise ValueError(
            f"kernel {kh}x{kw} with stride {stride}, padding {padding} does not fit "
            f"input {x.shape[1]}x{x.shape[2]}"
        )
    win, _ = _conv_windows(x, kh, kw, stride, padding)
    # (C_in, H', W', kh, kw) x (C_out, C_in, kh, kw) -> (H', W', C_out)
    out = np.tensordot(win, kernels, axes=([0, 3, 4], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(2, 0, 1)) + bias[:, None, None]


def conv2d_backward(x, kernels, grad_out, stride=1, padding=0):
    """Gradients of conv2d w.r.t. input, kernels, and bias.

    Returns (grad_x, grad_kernels, grad_bias) for upstream gradient
    grad_out of shape (C_out, H_out, W_out).
    """
    x, kernels, grad_out = _f64(x), _f64(kernels), _f64(grad_out)
    c_out, c_in, kh, kw = kernels.shape
    h_out, w_out = grad_out.shape[1], grad_out.shape[2]
    win, x_padded = _conv_windows(x, kh, kw, stride, padding)

    grad_bias = grad_out.sum(axis=(1, 2))
    # (C_out, H', W') x (C_in, H', W', kh, kw) -> (C_out, C_in, kh, kw)
    grad_kernels = np.tensordot(grad_out, win, axes=([1, 2], [1, 2]))

    grad_x_padded = np.zeros_like(x_padded)
    for ki in range(kh):
        for kj in range(kw):
            # every output cell (oh, ow) touched input (ki + s*oh, kj + s*ow)
            contrib = np.tensordot(kernels[:, :, ki, kj], grad_out, axes=(0, 0))
            grad_x_padded[
                :,
                ki : ki + stride * h_out : stride,
                kj : kj + stride * w_out : stride,
            ] += contrib
    if padding:
        grad_x = grad_x_padded[:, padding : padding + x.shape[1], padding : padding + x.shape[2]]
    else:
        grad_x = grad_x_padded
    return grad_x, grad_kernels, grad_bias


def maxpool2d(x, window, stride=None):
    """Spatial max pooling over (window x window) patches.

    Returns (output, argmax) where argmax holds, per output cell, the flat
    row-major index into the (H, W) plane of the winning input cell. Ties go
    to the first cell in row-major scan order within the window.
    """
    x = _f64(x)
    if x.ndim != 3:
        raise ValueError(f"maxpool2d expects (C,H,W), got shape {x.shape}")
    if stride is None:
        stride = window
    c, h, w = x.shape
    if window < 1 or stride < 1:
        raise ValueError(f"window and stride must be >= 1, got {window}, {stride}")
    if window > h or window > w:
        raise ValueError(f"pool window {window} exceeds input extent {h}x{w}")
    h_out = (h - window) // stride + 1
    w_out = (w - window) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (window, window), axis=(1, 2))
    win = win[:, ::stride, ::stride].reshape(c, h_out, w_out, window * window)
    local = win.argmax(axis=-1)  # first max wins: row-major tie break
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    rows = np.arange(h_out)[None, :, None] * stride + local // window
    cols = np.arange(w_out)[None, None, :] * stride + local % window
    return out, rows * w + cols


def maxpool2d_backward(grad_out, argmax, input_shape):
    """Scatter pooled-output gradients back to the argmax input cells."""
    c, h, w = input_shape
    grad_x = np.zeros((c, h * w))
    chan = np.repeat(np.arange(c), argmax[0].size)
    np.add.at(grad_x, (chan, argmax.reshape(-1)), _f64(grad_out).reshape(-1))
    return grad_x.reshape(c, h, w)


def _channel_window_sum(x, n):
    """Sum over the clipped channel window [c - (n-1)/2, c + (n-1)/2]."""
    c = x.shape[0]
    half = (n - 1) // 2
    cs = np.cumsum(x, axis=0)
    hi = np.minimum(np.arange(c) + half, c - 1)
    lo = np.arange(c) - half - 1
    out = cs[hi].copy()
    has_lo = lo >= 0
    out[has_lo] -= cs[lo[has_lo]]
    return out


def lrn(x, k, alpha, beta, n):
    """Local response normalization across channels.

    out[c] = x[c] / (k + alpha * sum_{c' in window(c, n)} x[c']^2) ** beta,
    with the channel window clipped (not wrapped) at the boundaries.
    """
    x = _f64(x)
    if x.ndim != 3:
        raise ValueError(f"lrn expects (C,H,W), got shape {x.shape}")
    if n < 1 or n % 2 == 0:
        raise ValueError(f"lrn window n must be odd and >= 1, got {n}")
    if k <= 0:
        raise ValueError(f"lrn constant k must be > 0, got {k}")
    denom = (k + alpha * _channel_window_sum(x * x, n)) ** beta
    return x / denom


def lrn_backward(x, grad_out, k, alpha, beta, n):
    """Gradient of lrn w.r.t. its input.

    With D_c = k + alpha * S_c the normalizer of channel c:
    grad[e] = g[e] * D_e^-beta
              - 2*alpha*beta * x[e] * sum_{c in window(e)} g[c] * x[c] * D_c^(-beta-1).
    The window relation is symmetric, so the inner sum is the same clipped
    channel-window sum applied to g * x * D^(-beta-1).
    """
    x, grad_out = _f64(x), _f64(grad_out)
    d = k + alpha * _channel_window_sum(x * x, n)
    t = grad_out * x * d ** (-beta - 1.0)
    return grad_out * d ** (-beta) - 2.0 * alpha * beta * x * _channel_window_sum(t, n)


def relu(x):
    return np.maximum(_f64(x), 0.0)


def relu_backward(x, grad_out):
    """Subgradient 0 at the kink (x == 0)."""
    return _f64(grad_out) * (_f64(x) > 0.0)


def affine(x, weights, bias):
    """weights @ x + bias for a flat input vector."""
    x, weights, bias = _f64(x), _f64(weights), _f64(bias)
    if x.ndim != 1 or weights.ndim != 2:
        raise ValueError(
            f"affine expects vector input and (m,n) weights, got shapes "
            f"{x.shape} and {weights.shape}"
        )
    if weights.shape[1] != x.shape[0] or bias.shape != (weights.shape[0],):
        raise ValueError(
            f"affine dimension mismatch: weights {weights.shape}, "
            f"input {x.shape}, bias {bias.shape}"
        )
    return weights @ x + bias


def affine_backward(x, weights, grad_out):
    """Returns (grad_x, grad_weights, grad_bias)."""
    x, weights, grad_out = _f64(x), _f64(weights), _f64(grad_out)
    return weights.T @ grad_out, np.outer(grad_out, x), grad_out.copy()


def softmax(logits):
    """Numerically stable softmax (max subtraction)."""
    z = _f64(logits)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_backward(probs, grad_out):
    """Jacobian-transpose product of softmax: p * (g - g.p)."""
    probs, grad_out = _f64(probs), _f64(grad_out)
    return probs * (grad_out - grad_out @ probs)


def softmax_xent(logits, label):
    """Softmax probabilities and cross-entropy loss -log p[label].

    The loss is computed as logsumexp(z) - z[label] after max subtraction, so
    it stays finite even when p[label] underflows to zero.
    """
    logits = _f64(logits)
    c = logits.shape[0]
    if logits.ndim != 1 or c < 2:
        raise ValueError(f"softmax_xent expects a logit vector of length >= 2, got shape {logits.shape}")
    if not 0 <= label < c:
        raise ValueError(f"label {label} out of range for {c} classes")
    z = logits - logits.max()
    e = np.exp(z)
    total = e.sum()
    probs = e / total
    loss = np.log(total) - z[label]
    return probs, float(loss)


def softmax_xent_backward(probs, label):
    """Gradient of -log p[label] w.r.t. the logits: p - onehot(label)."""
    grad = _f64(probs).copy()
    grad[label] -= 1.0
    return grad
