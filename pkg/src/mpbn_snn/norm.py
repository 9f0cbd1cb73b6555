"""Batch normalization for convolution outputs and for membrane potentials.

Parameters live in :class:`NormParams` at either channel granularity (one
value per channel, shape ``(C,)``) or element granularity (one value per
channel and spatial position, shape ``(C, H, W)``).  Both broadcast against
activations whose trailing axes are ``(C, H, W)``, so the same functions
serve ``(N, C, H, W)`` inputs and time-stacked ``(T, N, C, H, W)`` inputs.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, StateError
from .tensor import moments

GRANULARITIES = ("channel", "element")
DEFAULT_EPS = 1e-5
DEFAULT_MOMENTUM = 0.1


@dataclass
class NormParams:
    lam: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = DEFAULT_EPS
    momentum: float = DEFAULT_MOMENTUM
    granularity: str = "channel"

    def __post_init__(self):
        if self.granularity not in GRANULARITIES:
            raise ConfigError(f"unknown granularity {self.granularity!r}")
        if not self.eps > 0:
            raise ConfigError(f"eps must be positive, got {self.eps}")
        if not 0 < self.momentum <= 1:
            raise ConfigError(f"momentum must lie in (0, 1], got {self.momentum}")
        shapes = {a.shape for a in (self.lam, self.beta, self.running_mean, self.running_var)}
        if len(shapes) != 1:
            raise DimensionError(f"NormParams arrays disagree in shape: {shapes}")
        want = 1 if self.granularity == "channel" else 3
        if self.lam.ndim != want:
            raise DimensionError(
                f"{self.granularity} granularity needs {want}-D parameters, got {self.lam.shape}"
            )
        if np.any(self.running_var < 0):
            raise ConfigError("running_var must be non-negative")

    @classmethod
    def identity(cls, shape, granularity="channel", dtype=np.float32,
                 eps=DEFAULT_EPS, momentum=DEFAULT_MOMENTUM):
        """Scale 1, shift 0, running mean 0, running variance 1."""
        shape = tuple(shape)
        return cls(
            lam=np.ones(shape, dtype=dtype),
            beta=np.zeros(shape, dtype=dtype),
            running_mean=np.zeros(shape, dtype=dtype),
            running_var=np.ones(shape, dtype=dtype),
            eps=eps,
            momentum=momentum,
            granularity=granularity,
        )

    @property
    def shape(self):
        return self.lam.shape

    def broadcastable(self, a):
        """View of a parameter array aligned with trailing (C, H, W) axes."""
        return a.reshape(-1, 1, 1) if self.granularity == "channel" else a

    def copy(self):
        return NormParams(
            self.lam.copy(), self.beta.copy(), self.running_mean.copy(),
            self.running_var.copy(), self.eps, self.momentum, self.granularity,
        )


@dataclass
class NormCache:
    x_hat: np.ndarray
    inv_std: np.ndarray
    axes: tuple
    count: int
    batch_mean: np.ndarray = field(repr=False, default=None)
    batch_var: np.ndarray = field(repr=False, default=None)
    stats_from_input: bool = True


def reduction_axes(ndim, granularity):
    """Axes reduced by batch statistics for an input with ``ndim`` dimensions.

    Channel granularity keeps only the channel axis (third from the end);
    element granularity keeps channel and both spatial axes.
    """
    if ndim < 4:
        raise DimensionError(f"normalization input needs >= 4 dims, got {ndim}")
    if granularity == "channel":
        return tuple(range(ndim - 3)) + (ndim - 2, ndim - 1)
    return tuple(range(ndim - 3))


def _check_shape(x, params):
    if params.granularity == "channel":
        ok = x.shape[-3] == params.shape[0]
    else:
        ok = x.shape[-3:] == params.shape
    if not ok:
        raise DimensionError(
            f"input shape {x.shape} incompatible with {params.granularity} params {params.shape}"
        )


def batch_statistics(x, params):
    _check_shape(x, params)
    axes = reduction_axes(x.ndim, params.granularity)
    mean, var = moments(x, axes, keepdims=True)
    return mean, var, axes


def update_running(params, mean, var):
    """One exponential-moving-average update of the running statistics."""
    m = params.momentum
    mean = np.asarray(mean).reshape(params.shape)
    var = np.asarray(var).reshape(params.shape)
    params.running_mean[...] = (1 - m) * params.running_mean + m * mean
    params.running_var[...] = (1 - m) * params.running_var + m * var


def bn_forward_train(x, params, batch_stats=None, update=True):
    """Normalize with batch statistics; returns ``(out, cache)``.

    ``batch_stats`` defaults to statistics of ``x`` itself over every axis
    except the parameter axes.  Passing a time-stacked ``(T, N, C, H, W)``
    tensor therefore pools the statistics over time as well.  With
    ``update`` the running statistics receive exactly one EMA update.
    """
    from_input = batch_stats is None
    if from_input:
        mean, var, axes = batch_statistics(x, params)
    else:
        _check_shape(x, params)
        axes = reduction_axes(x.ndim, params.granularity)
        mean, var = batch_stats
        mean = params.broadcastable(np.asarray(mean).reshape(params.shape))
        var = params.broadcastable(np.asarray(var).reshape(params.shape))
    inv_std = 1.0 / np.sqrt(var + params.eps)
    x_hat = (x - mean) * inv_std
    out = params.broadcastable(params.lam) * x_hat + params.broadcastable(params.beta)
    if update:
        update_running(params, mean, var)
    count = int(np.prod([x.shape[a] for a in axes]))
    cache = NormCache(x_hat, inv_std.astype(x.dtype, copy=False), axes, count, mean, var, from_input)
    return out, cache


def bn_forward_infer(x, params):
    _check_shape(x, params)
    b = params.broadcastable
    scale = b(params.lam) / np.sqrt(b(params.running_var) + params.eps)
    return (x - b(params.running_mean)) * scale + b(params.beta)


def bn_backward(grad_out, cache, params):
    """Gradient of :func:`bn_forward_train`, batch-statistic dependence included."""
    if cache is None:
        raise StateError("bn_backward needs the cache of a training-mode forward pass")
    if grad_out.shape != cache.x_hat.shape:
        raise DimensionError(f"grad shape {grad_out.shape} != cached shape {cache.x_hat.shape}")
    axes, m, x_hat = cache.axes, cache.count, cache.x_hat
    grad_lam = (grad_out * x_hat).sum(axis=axes).reshape(params.shape)
    grad_beta = grad_out.sum(axis=axes).reshape(params.shape)
    g_hat = grad_out * params.broadcastable(params.lam)
    if not cache.stats_from_input:
        return g_hat * cache.inv_std, grad_lam, grad_beta
    s1 = g_hat.sum(axis=axes, keepdims=True)
    s2 = (g_hat * x_hat).sum(axis=axes, keepdims=True)
    grad_x = cache.inv_std / m * (m * g_hat - s1 - x_hat * s2)
    return grad_x, grad_lam, grad_beta


# MPBN shares the BN contracts; only placement in the neuron differs.
mpbn_forward_train = bn_forward_train
mpbn_forward_infer = bn_forward_infer
mpbn_backward = bn_backward


def pooled_statistics(means, variances):
    """Combine equal-count per-group moments into the moments of the union."""
    means = np.stack(means)
    mean = means.mean(axis=0)
    var = (np.stack(variances) + np.square(means)).mean(axis=0) - np.square(mean)
    return mean, np.maximum(var, 0)
