"""Fold trained normalization into inference-time parameters.

Conv-side BN folds into the convolution weight and a bias.  MPBN folds into
the firing threshold: with running statistics frozen, the decision

    lam * (u - mean) / sqrt(var + eps) + beta > v_th

is equivalent to comparing ``u`` against a per-unit threshold, with the
comparison reversed wherever ``lam < 0``.
"""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateScaleError, UnsupportedGranularityError
from .neuron import FiringRule
from .norm import NormParams

DEGENERACY_TOL = 1e-12


@dataclass
class FoldReport:
    layer_id: int
    granularity: str
    max_threshold: float
    min_threshold: float
    flipped_unit_count: int
    degenerate_unit_count: int
    unit_count: int

    def to_text(self):
        return (
            f"layer {self.layer_id}: {self.granularity} fold over {self.unit_count} units, "
            f"thresholds in [{self.min_threshold:.6g}, {self.max_threshold:.6g}], "
            f"{self.flipped_unit_count} flipped, {self.degenerate_unit_count} degenerate"
        )

    def to_records(self):
        return [f"{k}={v}" for k, v in vars(self).items()]


def fold_mpbn(params: NormParams, v_th, tol=DEGENERACY_TOL):
    """Per-unit :class:`FiringRule` equivalent to firing on ``MPBN(u) > v_th``."""
    lam = params.lam
    bad = np.flatnonzero(np.abs(lam) <= tol)
    if bad.size:
        unit = np.unravel_index(bad[0], lam.shape)
        raise DegenerateScaleError(
            f"MPBN scale {lam[unit]!r} at unit {tuple(int(u) for u in unit)} is below the "
            f"degeneracy tolerance {tol}; the firing decision no longer depends on the membrane",
            unit=tuple(int(u) for u in unit),
        )
    std = np.sqrt(params.running_var + params.eps)
    threshold = (v_th - params.beta) * std / lam + params.running_mean
    direction = np.where(lam > 0, 1, -1).astype(np.int8)
    if params.granularity == "channel":
        threshold = threshold.reshape(-1, 1, 1)
        direction = direction.reshape(-1, 1, 1)
    return FiringRule(threshold.astype(lam.dtype), direction)


def fold_conv_bn(weight, bias, params: NormParams):
    """Absorb a frozen channel BN into the preceding convolution."""
    if params.granularity != "channel":
        raise UnsupportedGranularityError(
            "only channel-granular BN folds into convolution weights; per-position "
            "scales would break weight sharing"
        )
    scale = params.lam / np.sqrt(params.running_var + params.eps)
    folded_weight = weight * scale.reshape(-1, *([1] * (weight.ndim - 1)))
    if bias is None:
        bias = np.zeros(weight.shape[0], dtype=weight.dtype)
    folded_bias = (bias - params.running_mean) * scale + params.beta
    return folded_weight.astype(weight.dtype), folded_bias.astype(weight.dtype)


def fold_report(layer_id, params, rule, tol=DEGENERACY_TOL):
    th = rule.threshold
    return FoldReport(
        layer_id=layer_id,
        granularity=params.granularity if params is not None else "none",
        max_threshold=float(th.max()),
        min_threshold=float(th.min()),
        flipped_unit_count=int((rule.direction < 0).sum()),
        degenerate_unit_count=0 if params is None else int((np.abs(params.lam) <= tol).sum()),
        unit_count=int(th.size),
    )


def fold_model(model, tol=DEGENERACY_TOL):
    """Folded copy of a training-mode model plus one report per LIF layer."""
    if model.folded:
        raise ConfigError("model is already folded")
    model.validate()
    out = model.copy()
    reports = []
    for i, spec in enumerate(model.specs):
        if spec.kind != "conv_bn_lif":
            continue
        p = model.params[i]
        w, b = fold_conv_bn(p["weight"], p.get("bias"), model.bn[i])
        out.params[i] = {"weight": w, "bias": b}
        mp = model.mpbn[i]
        if mp is None:
            rule = FiringRule.scalar(spec.lif.v_th, model.dtype)
        else:
            try:
                rule = fold_mpbn(mp, spec.lif.v_th, tol)
            except DegenerateScaleError as exc:
                raise DegenerateScaleError(
                    f"layer {i}: {exc}", unit=exc.unit, layer=i) from exc
        out.rules[i] = rule
        out.bn[i] = None
        out.mpbn[i] = None
        reports.append(fold_report(i, mp, rule, tol))
    out.mode = "folded"
    return out.validate(), reports
