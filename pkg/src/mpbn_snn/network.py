"""Layer graph, time-unrolled forward pass and spatio-temporal backprop.

A model is an ordered list of :class:`LayerSpec`.  Hidden layers are
``conv_bn_lif`` blocks (convolution, batch norm, LIF neuron with optional
membrane-potential BN) and optional ``pool`` layers; the last layer is a
``linear_out`` head that averages its input over time and never fires.

Activations between layers are stacked over time as ``(T, N, C, H, W)``.
Training mode computes conv-BN statistics jointly over time, batch and
space.  MPBN is applied inside the time loop, so it normalizes each step
with that step's batch statistics; the running statistics are updated once
per forward pass from the pooled moments of all steps.
"""
import copy
from dataclasses import dataclass, field

import numpy as np

from . import tensor as K
from .errors import ConfigError, DimensionError, InputError, StateError
from .neuron import FiringRule, LifConfig, fire, mp_update, surrogate_grad
from .norm import (
    DEFAULT_EPS,
    DEFAULT_MOMENTUM,
    NormParams,
    bn_backward,
    bn_forward_infer,
    bn_forward_train,
    pooled_statistics,
    update_running,
)

LAYER_KINDS = ("conv_bn_lif", "pool", "linear_out")
MPBN_MODES = ("off", "channel", "element")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    padding: int = 1
    lif: LifConfig = field(default_factory=LifConfig)
    mpbn: str = None
    encoder: bool = False
    pool: int = 2
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.mpbn not in (None, "channel", "element"):
            raise ConfigError(f"unknown MPBN granularity {self.mpbn!r}")


@dataclass
class OpCounter:
    """Per-element operation tally filled in by :func:`forward`."""

    norm_ops: int = 0
    neuron_ops: int = 0
    bias_ops: int = 0
    norm_buffers: int = 0

    @property
    def elementwise_ops(self):
        return self.norm_ops + self.neuron_ops + self.bias_ops


@dataclass
class Model:
    specs: list
    input_shape: tuple
    num_classes: int
    params: list
    bn: list
    mpbn: list
    rules: list
    mode: str = "training"
    T: int = 1
    eps: float = DEFAULT_EPS
    momentum: float = DEFAULT_MOMENTUM
    dtype: type = np.float32

    def copy(self):
        return copy.deepcopy(self)

    @property
    def folded(self):
        return self.mode == "folded"

    @property
    def mpbn_mode(self):
        grans = {s.mpbn for s in self.specs if s.kind == "conv_bn_lif"}
        if grans == {None}:
            return "off"
        if len(grans) == 1:
            return grans.pop()
        return "mixed"

    def validate(self):
        if self.mode not in ("training", "folded"):
            raise ConfigError(f"unknown model mode {self.mode!r}")
        n = len(self.specs)
        if not (len(self.params) == len(self.bn) == len(self.mpbn) == len(self.rules) == n):
            raise ConfigError("per-layer lists disagree in length")
        kinds = [s.kind for s in self.specs]
        if kinds.count("linear_out") != 1 or kinds[-1] != "linear_out":
            raise ConfigError("exactly one linear_out layer is required, placed last")
        for i, s in enumerate(self.specs):
            if s.encoder and i != 0:
                raise ConfigError("only the first layer may be the encoder")
            if s.kind != "conv_bn_lif":
                continue
            if self.folded:
                if self.bn[i] is not None or self.mpbn[i] is not None:
                    raise ConfigError(f"folded model carries normalization at layer {i}")
                if self.rules[i] is None:
                    raise ConfigError(f"folded model lacks a firing rule at layer {i}")
            else:
                if self.bn[i] is None:
                    raise ConfigError(f"training model lacks conv BN at layer {i}")
                if (self.mpbn[i] is None) != (s.mpbn is None):
                    raise ConfigError(f"MPBN parameters inconsistent with spec at layer {i}")
        return self


def named_parameters(model):
    """Learnable arrays keyed by ``"<layer>.<name>"``; arrays are live references."""
    out = {}
    for i, spec in enumerate(model.specs):
        for name, arr in model.params[i].items():
            out[f"{i}.{name}"] = arr
        if model.bn[i] is not None:
            out[f"{i}.bn.lam"] = model.bn[i].lam
            out[f"{i}.bn.beta"] = model.bn[i].beta
        if model.mpbn[i] is not None:
            out[f"{i}.mp.lam"] = model.mpbn[i].lam
            out[f"{i}.mp.beta"] = model.mpbn[i].beta
    return out


def parse_arch(arch):
    """Parse ``"8,p,16"`` into hidden-layer tokens: ints are conv widths, ``p`` a 2x2 max-pool."""
    tokens = []
    text = str(arch).replace(" ", "")
    if not text:
        raise ConfigError("empty architecture string")
    for tok in text.split(","):
        if tok.lower() == "p":
            tokens.append("p")
        elif tok.isdigit() and int(tok) > 0:
            tokens.append(int(tok))
        else:
            raise ConfigError(f"bad architecture token {tok!r} in {arch!r}")
    if not tokens or not isinstance(tokens[0], int):
        raise ConfigError(f"architecture must start with a conv width, got {arch!r}")
    return tokens


def build_model(input_shape, arch, num_classes, mpbn="channel", lif=None, seed=0,
                dtype=np.float32, T=1, eps=DEFAULT_EPS, momentum=DEFAULT_MOMENTUM,
                kernel=3):
    """Fresh training-mode model with identity-initialized normalization."""
    if mpbn not in MPBN_MODES:
        raise ConfigError(f"mpbn must be one of {MPBN_MODES}, got {mpbn!r}")
    if num_classes < 2:
        raise ConfigError("need at least two classes")
    lif = lif or LifConfig()
    gran = None if mpbn == "off" else mpbn
    tokens = parse_arch(arch) if isinstance(arch, str) else list(arch)
    rng = np.random.default_rng(seed)
    c, h, w = input_shape
    specs, params, bns, mps = [], [], [], []
    for tok in tokens:
        if tok == "p":
            if h % 2 or w % 2:
                raise ConfigError(f"cannot max-pool spatial shape {(h, w)}")
            specs.append(LayerSpec("pool", in_channels=c, out_channels=c, pool=2))
            params.append({})
            bns.append(None)
            mps.append(None)
            h, w = h // 2, w // 2
            continue
        pad = kernel // 2
        spec = LayerSpec("conv_bn_lif", in_channels=c, out_channels=tok, kernel=kernel,
                         stride=1, padding=pad, lif=lif, mpbn=gran, encoder=not specs)
        h = K.conv_output_size(h, kernel, 1, pad)
        w = K.conv_output_size(w, kernel, 1, pad)
        fan_in = c * kernel * kernel
        weight = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(tok, c, kernel, kernel))
        specs.append(spec)
        params.append({"weight": weight.astype(dtype)})
        bns.append(NormParams.identity((tok,), "channel", dtype, eps, momentum))
        if gran is None:
            mps.append(None)
        else:
            shape = (tok,) if gran == "channel" else (tok, h, w)
            mps.append(NormParams.identity(shape, gran, dtype, eps, momentum))
        c = tok
    features = c * h * w
    specs.append(LayerSpec("linear_out", in_features=features, out_features=num_classes))
    weight = rng.normal(0.0, 1.0 / np.sqrt(features), size=(num_classes, features))
    params.append({"weight": weight.astype(dtype), "bias": np.zeros(num_classes, dtype=dtype)})
    bns.append(None)
    mps.append(None)
    model = Model(specs, tuple(input_shape), num_classes, params, bns, mps,
                  [None] * len(specs), "training", T, eps, momentum, dtype)
    return model.validate()


def _time_stack(x, T, model):
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 4:
        if x.shape[1:] != tuple(model.input_shape):
            raise DimensionError(f"input shape {x.shape[1:]} != model input {model.input_shape}")
        return x, True
    if x.ndim == 5:
        if x.shape[0] != T:
            raise ConfigError(f"time-stacked input has {x.shape[0]} steps, T={T}")
        if x.shape[2:] != tuple(model.input_shape):
            raise DimensionError(f"input shape {x.shape[2:]} != model input {model.input_shape}")
        return x, False
    raise DimensionError(f"input must be (N,C,H,W) or (T,N,C,H,W), got {x.shape}")


def _conv_time(x, static, T, weight, bias, spec):
    if static:
        z = K.conv2d(x, weight, bias, spec.stride, spec.padding)
        return np.broadcast_to(z, (T,) + z.shape)
    t, n = x.shape[:2]
    z = K.conv2d(x.reshape((t * n,) + x.shape[2:]), weight, bias, spec.stride, spec.padding)
    return z.reshape((t, n) + z.shape[1:])


def forward(model, x, T, train=False, counter=None, keep_trace=False):
    """Run ``T`` time steps and return ``(logits, trace)``.

    ``train`` selects batch statistics (and updates running statistics);
    otherwise a training-mode model normalizes with running statistics and a
    folded model uses folded weights and firing rules only.  ``trace`` is a
    list of per-layer dicts, or ``None`` unless ``train`` or ``keep_trace``.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    if train and model.folded:
        raise ConfigError("a folded model has no training path")
    x, static = _time_stack(x, T, model)
    n = x.shape[0] if static else x.shape[1]
    record = train or keep_trace
    trace = [] if record else None
    logits = None
    for i, spec in enumerate(model.specs):
        entry = {"kind": spec.kind}
        if spec.kind == "conv_bn_lif":
            x, entry = _conv_bn_lif_forward(model, i, spec, x, static, T, train, counter, record)
            static = False
        elif spec.kind == "pool":
            flat = x.reshape((T * n,) + x.shape[2:])
            out, idx = K.maxpool2d(flat, spec.pool)
            entry.update(idx=idx, in_shape=flat.shape)
            x = out.reshape((T, n) + out.shape[1:])
            entry["spikes"] = x
        else:
            p = model.params[i]
            if static:
                x = np.broadcast_to(x, (T,) + x.shape)
            xbar = x.reshape(T, n, -1).mean(axis=0)
            logits = K.linear(xbar, p["weight"], p.get("bias"))
            if counter is not None and p.get("bias") is not None:
                counter.bias_ops += logits.size
            entry.update(xbar=xbar)
        if record:
            trace.append(entry)
    return logits, trace


def _conv_bn_lif_forward(model, i, spec, x, static, T, train, counter, record):
    p = model.params[i]
    bias = p.get("bias")
    z = _conv_time(x, static, T, p["weight"], bias, spec)
    entry = {"kind": spec.kind, "input": x, "static": static}
    if counter is not None and bias is not None:
        counter.bias_ops += z.size
    if model.folded:
        c = z
    else:
        bn = model.bn[i]
        if train:
            c, entry["bn_cache"] = bn_forward_train(z, bn)
        else:
            c = bn_forward_infer(z, bn)
        if counter is not None:
            counter.norm_ops += z.size
            counter.norm_buffers += 1
    mp = None if model.folded else model.mpbn[i]
    rule = model.rules[i] if model.folded else None
    v_th = spec.lif.v_th
    tau = spec.lif.tau
    u = np.zeros(c.shape[1:], dtype=c.dtype)
    spikes = np.empty(c.shape, dtype=c.dtype)
    u_pres, normed, caches, means, varis = [], [], [], [], []
    for t in range(T):
        u_pre = mp_update(u, c[t], tau)
        if rule is not None:
            o = fire(u_pre, rule)
            normed_t = u_pre
        elif mp is not None:
            if train:
                normed_t, cache = bn_forward_train(u_pre, mp, update=False)
                caches.append(cache)
                means.append(cache.batch_mean)
                varis.append(cache.batch_var)
            else:
                normed_t = bn_forward_infer(u_pre, mp)
            if counter is not None:
                counter.norm_ops += u_pre.size
            o = (normed_t > v_th).astype(c.dtype)
        else:
            normed_t = u_pre
            o = (u_pre > v_th).astype(c.dtype)
        u = u_pre * (1 - o)
        spikes[t] = o
        if counter is not None:
            # leak multiply, input add, compare, reset multiply
            counter.neuron_ops += 4 * u_pre.size
        if record:
            u_pres.append(u_pre)
            normed.append(normed_t)
    if train and mp is not None:
        update_running(mp, *pooled_statistics(means, varis))
        if counter is not None:
            counter.norm_buffers += 1
    if record:
        entry.update(u_pre=u_pres, normed=normed, mp_caches=caches, spikes=spikes)
    return spikes, entry


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to ``logits``."""
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise InputError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1
    return float(loss), grad / n


def stbp_backward(trace, model, grad_logits, temporal_carry=True):
    """Parameter gradients of a traced training forward pass.

    The spike nonlinearity uses the rectangular surrogate on the firing
    input (MPBN output, or raw membrane without MPBN), re-centred so the
    unit window straddles ``v_th``.  The reset gate ``1 - o`` is held
    constant.  ``temporal_carry=False`` drops the membrane carry between
    steps and exists only for diagnostics.
    """
    if trace is None or len(trace) != len(model.specs):
        raise StateError("stbp_backward needs the trace of a training-mode forward pass")
    if model.folded:
        raise StateError("folded models cannot be differentiated")
    grads = {}
    g = None
    T = None
    for i in range(len(model.specs) - 1, -1, -1):
        spec, entry = model.specs[i], trace[i]
        if spec.kind == "linear_out":
            p = model.params[i]
            g_xbar, grads[f"{i}.weight"], grads[f"{i}.bias"] = K.linear_backward(
                grad_logits, entry["xbar"], p["weight"])
            prev = trace[i - 1]["spikes"]
            T = prev.shape[0]
            g = np.broadcast_to((g_xbar / T).reshape(prev.shape[1:]), prev.shape)
        elif spec.kind == "pool":
            flat = g.reshape((-1,) + g.shape[2:])
            gi = K.maxpool2d_backward(flat, entry["idx"], entry["in_shape"], spec.pool)
            g = gi.reshape(g.shape[:2] + gi.shape[1:])
        else:
            g = _conv_bn_lif_backward(model, i, spec, entry, g, grads, temporal_carry)
    return grads


def _conv_bn_lif_backward(model, i, spec, entry, g_spikes, grads, temporal_carry):
    T = g_spikes.shape[0]
    mp = model.mpbn[i]
    tau, v_th = spec.lif.tau, spec.lif.v_th
    spikes = entry["spikes"]
    g_c = np.empty(g_spikes.shape, dtype=g_spikes.dtype)
    g_u_next = np.zeros(g_spikes.shape[1:], dtype=g_spikes.dtype)
    if mp is not None:
        g_mp_lam = np.zeros_like(mp.lam)
        g_mp_beta = np.zeros_like(mp.beta)
    for t in range(T - 1, -1, -1):
        g_fire = g_spikes[t] * surrogate_grad(entry["normed"][t] - v_th + 0.5)
        if mp is not None:
            g_fire, gl, gb = bn_backward(g_fire, entry["mp_caches"][t], mp)
            g_mp_lam += gl
            g_mp_beta += gb
        g_u_pre = g_fire + g_u_next * (1 - spikes[t])
        g_c[t] = g_u_pre
        g_u_next = tau * g_u_pre if temporal_carry else np.zeros_like(g_u_pre)
    if mp is not None:
        grads[f"{i}.mp.lam"] = g_mp_lam
        grads[f"{i}.mp.beta"] = g_mp_beta
    g_z, grads[f"{i}.bn.lam"], grads[f"{i}.bn.beta"] = bn_backward(
        g_c, entry["bn_cache"], model.bn[i])
    x = entry["input"]
    w = model.params[i]["weight"]
    if entry["static"]:
        g_x, grads[f"{i}.weight"], g_b = K.conv2d_backward(
            g_z.sum(axis=0), x, w, spec.stride, spec.padding)
    else:
        t, n = x.shape[:2]
        g_x, grads[f"{i}.weight"], g_b = K.conv2d_backward(
            g_z.reshape((t * n,) + g_z.shape[2:]), x.reshape((t * n,) + x.shape[2:]),
            w, spec.stride, spec.padding)
        g_x = g_x.reshape(x.shape)
    if "bias" in model.params[i]:
        grads[f"{i}.bias"] = g_b
    return g_x


def predict(model, x, T):
    logits, _ = forward(model, x, T)
    return logits.argmax(axis=1)


def folded_rule_for_baseline(spec, dtype):
    return FiringRule.scalar(spec.lif.v_th, dtype)
