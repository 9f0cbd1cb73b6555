"""Dense array kernels with hand-written backward passes.

Arrays are plain numpy ndarrays in channels-first (N, C, H, W) layout.
Every kernel keeps the dtype of its inputs; float64 is used by the tests,
float32 is the runtime default elsewhere in the package.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DimensionError, NonFiniteError

DEFAULT_DTYPE = np.float32


def check_finite(x, what="tensor"):
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {what}")
    return x


def conv_output_size(size, kernel, stride, padding):
    span = size + 2 * padding - kernel
    if stride < 1 or padding < 0:
        raise ConfigError(f"invalid stride={stride} / padding={padding}")
    if span < 0 or span % stride:
        raise ConfigError(
            f"non-integral conv output: ({size} + 2*{padding} - {kernel}) / {stride} + 1"
        )
    return span // stride + 1


def _check_conv_shapes(x, weight):
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be 4-D (N,C,H,W), got shape {x.shape}")
    if weight.ndim != 4:
        raise DimensionError(f"conv2d weight must be 4-D (O,C,kh,kw), got shape {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input has {x.shape[1]}, weight expects {weight.shape[1]}"
        )


def _im2col(x, kh, kw, stride, padding):
    n, c, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # (N, C, Ho, Wo, kh, kw) -> (N*Ho*Wo, C*kh*kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x`` (N,C,H,W) with ``weight`` (O,C,kh,kw)."""
    _check_conv_shapes(x, weight)
    o, _, kh, kw = weight.shape
    if bias is not None and bias.shape != (o,):
        raise DimensionError(f"conv2d bias must have shape ({o},), got {bias.shape}")
    n = x.shape[0]
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    out = cols @ weight.reshape(o, -1).T
    if bias is not None:
        out += bias
    return out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2).copy()


def conv2d_backward(grad_out, x, weight, stride=1, padding=0):
    """Returns (grad_input, grad_weight, grad_bias) for :func:`conv2d`."""
    _check_conv_shapes(x, weight)
    o, c, kh, kw = weight.shape
    n, _, h, w = x.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, padding)
    if grad_out.shape != (n, o, ho, wo):
        raise DimensionError(
            f"conv2d_backward grad_out shape {grad_out.shape} != forward output {(n, o, ho, wo)}"
        )
    g = grad_out.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
    grad_weight = (g.T @ cols).reshape(weight.shape)
    grad_bias = g.sum(axis=0)

    dcols = (g @ weight.reshape(o, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    grad_input = dxp[:, :, padding:padding + h, padding:padding + w].copy()
    return grad_input, grad_weight, grad_bias


def linear(x, weight, bias=None):
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"linear shape mismatch: input {x.shape}, weight {weight.shape}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear bias shape {bias.shape} != ({weight.shape[0]},)")
    out = x @ weight.T
    if bias is not None:
        out += bias
    return out


def linear_backward(grad_out, x, weight):
    """Returns (grad_input, grad_weight, grad_bias) for :func:`linear`."""
    if grad_out.shape != (x.shape[0], weight.shape[0]):
        raise DimensionError(
            f"linear_backward grad_out shape {grad_out.shape} != {(x.shape[0], weight.shape[0])}"
        )
    return grad_out @ weight, grad_out.T @ x, grad_out.sum(axis=0)


def moments(x, axes, keepdims=False):
    """Population mean and biased variance over ``axes`` (two-pass)."""
    if isinstance(axes, (int, np.integer)):
        axes = (axes,)
    axes = tuple(axes)
    if not axes:
        raise ConfigError("moments needs at least one reduction axis")
    if any(not -x.ndim <= a < x.ndim for a in axes):
        raise ConfigError(f"reduction axes {axes} invalid for shape {x.shape}")
    axes = tuple(sorted({a % x.ndim for a in axes}))
    mean = x.mean(axis=axes, keepdims=True)
    var = np.square(x - mean).mean(axis=axes, keepdims=True)
    if not keepdims:
        mean = mean.squeeze(axis=axes)
        var = var.squeeze(axis=axes)
    return mean, var


def _pool_windows(x, size):
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ConfigError(f"max-pool size {size} does not divide spatial shape {(h, w)}")
    win = x.reshape(n, c, h // size, size, w // size, size).transpose(0, 1, 2, 4, 3, 5)
    return win.reshape(n, c, h // size, w // size, size * size)


def maxpool2d(x, size=2):
    """Non-overlapping max pooling; returns (out, argmax) with first-index ties."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d input must be 4-D, got shape {x.shape}")
    win = _pool_windows(x, size)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_backward(grad_out, idx, input_shape, size=2):
    n, c, h, w = input_shape
    if grad_out.shape != (n, c, h // size, w // size):
        raise DimensionError(f"maxpool2d_backward grad shape {grad_out.shape} mismatch")
    gwin = np.zeros(grad_out.shape + (size * size,), dtype=grad_out.dtype)
    np.put_along_axis(gwin, idx[..., None], grad_out[..., None], axis=-1)
    gwin = gwin.reshape(n, c, h // size, w // size, size, size).transpose(0, 1, 2, 4, 3, 5)
    return gwin.reshape(n, c, h, w)
