"""Independent oracles and fixtures shared by the test modules."""
import numpy as np

from mpbn_snn.network import build_model, cross_entropy, forward, named_parameters, stbp_backward
from mpbn_snn.train import sgd_step


def rel_err(a, b, floor=0.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    if denom == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def central_fd(f, x, h=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def naive_conv2d(x, w, b=None, stride=1, padding=0):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(o):
            for yi in range(ho):
                for xi in range(wo):
                    acc = 0.0 if b is None else float(b[oi])
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yy = yi * stride + i - padding
                                xx = xi * stride + j - padding
                                if 0 <= yy < h and 0 <= xx < wd:
                                    acc += x[ni, ci, yy, xx] * w[oi, ci, i, j]
                    out[ni, oi, yi, xi] = acc
    return out


def two_pass_moments(x, axes):
    """Mean and biased variance by explicit gather-and-loop over kept positions."""
    keep = [a for a in range(x.ndim) if a not in axes]
    moved = np.moveaxis(x, keep, list(range(len(keep))))
    kept_shape = moved.shape[:len(keep)]
    flat = moved.reshape(kept_shape + (-1,))
    mean = np.empty(kept_shape)
    var = np.empty(kept_shape)
    for idx in np.ndindex(*kept_shape):
        vals = [float(v) for v in flat[idx]]
        m = sum(vals) / len(vals)
        mean[idx] = m
        var[idx] = sum((v - m) ** 2 for v in vals) / len(vals)
    return mean, var


def trained_toy_model(seed, mpbn="channel", arch="3,p,3", input_shape=(1, 4, 4), classes=3,
                      T=4, neg_fraction=0.0, steps=2, dtype=np.float64):
    """Small model trained for a few steps, then given spread-out normalization parameters.

    ``neg_fraction`` of the MPBN scales are forced negative.
    """
    rng = np.random.default_rng(seed)
    model = build_model(input_shape, arch, classes, mpbn=mpbn, seed=seed, dtype=dtype, T=T)
    params = named_parameters(model)
    velocity = {}
    for _ in range(steps):
        x = rng.random((32,) + tuple(input_shape))
        y = rng.integers(0, classes, 32)
        logits, trace = forward(model, x, T, train=True)
        _, g = cross_entropy(logits, y)
        sgd_step(params, stbp_backward(trace, model, g), velocity, 0.05, 0.9)
    for i in range(len(model.specs)):
        bn, mp = model.bn[i], model.mpbn[i]
        if bn is not None:
            bn.lam[...] = rng.uniform(0.5, 2.0, bn.shape)
            bn.beta[...] = rng.normal(0.3, 0.5, bn.shape)
        if mp is not None:
            lam = rng.uniform(0.3, 2.0, mp.shape)
            if neg_fraction:
                k = int(np.ceil(neg_fraction * lam.size))
                flip = rng.permutation(lam.size)[:k]
                lam.reshape(-1)[flip] *= -1
            mp.lam[...] = lam
            mp.beta[...] = rng.normal(0.2, 0.5, mp.shape)
            mp.running_mean[...] = rng.normal(0.3, 0.5, mp.shape)
            mp.running_var[...] = rng.uniform(0.2, 2.0, mp.shape)
    return model
