"""Leaky integrate-and-fire dynamics with hard reset."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

DEFAULT_TAU = 0.25
DEFAULT_V_TH = 0.5


@dataclass(frozen=True)
class LifConfig:
    tau: float = DEFAULT_TAU
    v_th: float = DEFAULT_V_TH

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigError(f"tau must lie in (0, 1), got {self.tau}")
        if not self.v_th > 0.0:
            raise ConfigError(f"v_th must be positive, got {self.v_th}")


@dataclass
class FiringRule:
    """Per-unit threshold and comparator sign.

    A unit fires when ``direction * u_pre > direction * threshold``.  Units
    with ``direction == -1`` therefore fire when the membrane drops *below*
    their threshold.
    """

    threshold: np.ndarray
    direction: np.ndarray = None

    def __post_init__(self):
        self.threshold = np.asarray(self.threshold)
        if self.direction is None:
            self.direction = np.ones(self.threshold.shape, dtype=np.int8)
        self.direction = np.asarray(self.direction, dtype=np.int8)
        if self.direction.shape != self.threshold.shape:
            raise DimensionError(
                f"direction shape {self.direction.shape} != threshold shape {self.threshold.shape}"
            )
        if not np.all(np.isfinite(self.threshold)):
            raise ConfigError("firing thresholds must be finite")
        if not np.all(np.abs(self.direction) == 1):
            raise ConfigError("direction entries must be +1 or -1")

    @classmethod
    def scalar(cls, v_th, dtype=np.float32):
        return cls(np.asarray(v_th, dtype=dtype))

    @property
    def flipped(self):
        return bool(np.any(self.direction < 0))


@dataclass
class LifState:
    u: np.ndarray
    u_pre_history: list = field(default_factory=list)
    spike_history: list = field(default_factory=list)

    @classmethod
    def zeros(cls, shape, dtype=np.float32):
        return cls(np.zeros(shape, dtype=dtype))

    def step(self, c, tau, rule):
        u_pre = mp_update(self.u, c, tau)
        o, self.u = fire_reset(u_pre, rule)
        self.u_pre_history.append(u_pre)
        self.spike_history.append(o)
        return o


def mp_update(state_u, c, tau):
    if state_u.shape != c.shape:
        raise DimensionError(f"membrane shape {state_u.shape} != input shape {c.shape}")
    return tau * state_u + c


def fire(u_pre, rule):
    th = rule.threshold
    try:
        np.broadcast_shapes(th.shape, u_pre.shape)
    except ValueError as exc:
        raise DimensionError(
            f"threshold shape {th.shape} not broadcastable to membrane {u_pre.shape}"
        ) from exc
    if rule.flipped:
        above = np.where(rule.direction > 0, u_pre > th, u_pre < th)
    else:
        above = u_pre > th
    return above.astype(u_pre.dtype)


def fire_reset(u_pre, rule):
    """Spike where the rule's comparison holds, then hard-reset those units."""
    o = fire(u_pre, rule)
    return o, u_pre * (1 - o)


def surrogate_grad(u):
    # rectangular straight-through window, closed on both ends
    return ((u >= 0) & (u <= 1)).astype(u.dtype)
