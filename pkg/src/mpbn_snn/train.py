"""SGD training loop, evaluation, and the 1-D loss-landscape probe."""
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, iterate_batches
from .errors import ConfigError, NonFiniteError
from .network import build_model, cross_entropy, forward, named_parameters, stbp_backward

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    lr0: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    T: int = 2
    mpbn: str = "channel"
    arch: str = "8,p,16"
    dataset: str = "synthetic"
    weight_decay: float = 0.0
    dtype: str = "f32"

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ConfigError(f"lr0 must be positive, got {self.lr0}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.T < 1:
            raise ConfigError("batch_size and T must be >= 1")
        if self.dtype not in ("f32", "f64"):
            raise ConfigError(f"dtype must be f32 or f64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "f32" else np.float64


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_acc: float
    lr: float
    wall_time: float


@dataclass
class RunLog:
    records: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def append(self, rec):
        self.records.append(rec)

    @property
    def accuracies(self):
        return [r.test_acc for r in self.records]

    def epochs_to_fraction(self, fraction=0.95):
        """First epoch (1-based) whose test accuracy reaches ``fraction`` of the final one."""
        acc = self.accuracies
        target = fraction * acc[-1]
        return next(i + 1 for i, a in enumerate(acc) if a >= target)

    def to_csv(self, deterministic=False):
        lines = [f"# {k}={v}" for k, v in self.header.items()]
        lines.append("epoch,train_loss,test_acc,lr,wall_time")
        for r in self.records:
            wall = 0.0 if deterministic else r.wall_time
            lines.append(f"{r.epoch},{r.train_loss!r},{r.test_acc!r},{r.lr!r},{wall:.4f}")
        return "\n".join(lines) + "\n"


def sgd_step(params, grads, velocity, lr, momentum):
    """Heavy-ball SGD, in place: ``v <- m*v + g``; ``p <- p - lr*v``."""
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NonFiniteError(f"gradient {key!r} has {bad} non-finite entries; aborting step")
    for key, g in grads.items():
        p = params[key]
        if p.shape != g.shape:
            raise ConfigError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key!r}")
        v = velocity.get(key)
        if v is None:
            v = velocity[key] = np.zeros_like(p)
        v *= momentum
        v += g
        p -= lr * v
    return params, velocity


def cosine_lr(epoch, epochs, lr0):
    if not 0 <= epoch < epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {epochs})")
    return lr0 * (1 + math.cos(math.pi * epoch / epochs)) / 2


def evaluate(model, dataset, T, batch_size=256, counter=None):
    """Returns (top-1 accuracy, mean loss) using inference statistics."""
    correct, total_loss = 0, 0.0
    for x, y in iterate_batches(dataset, batch_size, shuffle=False):
        logits, _ = forward(model, x, T, counter=counter)
        loss, _ = cross_entropy(logits, y)
        total_loss += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    n = len(dataset)
    return correct / n, total_loss / n


def dataset_loss(model, dataset, T, batch_size=256):
    return evaluate(model, dataset, T, batch_size)[1]


def train(model, config, train_set, test_set, on_epoch=None):
    """Train with SGD + cosine schedule; returns (best-accuracy model, RunLog)."""
    if tuple(train_set.shape) != tuple(model.input_shape):
        raise ConfigError(f"dataset images {train_set.shape} do not match model input {model.input_shape}")
    if train_set.class_count > model.num_classes:
        raise ConfigError("dataset has more classes than the model outputs")
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    params = named_parameters(model)
    velocity = {}
    run = RunLog(header={k: v for k, v in asdict(config).items()})
    best, best_acc = model.copy(), -1.0
    model.T = config.T
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, config.epochs, config.lr0)
        losses = []
        for x, y in iterate_batches(train_set, config.batch_size, rng):
            logits, trace = forward(model, x, config.T, train=True)
            loss, g = cross_entropy(logits, y)
            grads = stbp_backward(trace, model, g)
            if config.weight_decay:
                for k in grads:
                    grads[k] = grads[k] + config.weight_decay * params[k]
            sgd_step(params, grads, velocity, lr, config.momentum)
            losses.append(loss * len(y))
        acc, _ = evaluate(model, test_set, config.T)
        rec = EpochRecord(epoch + 1, float(np.sum(losses) / len(train_set)), acc, lr,
                          time.perf_counter() - t0)
        run.append(rec)
        log.info("epoch %d loss %.4f acc %.4f lr %.4g", rec.epoch, rec.train_loss, acc, lr)
        if on_epoch is not None:
            on_epoch(rec)
        if acc > best_acc:
            best, best_acc = model.copy(), acc
    return best, run


def run_experiment(config, train_set, test_set, **model_kw):
    """Build a fresh model from ``config`` and train it."""
    init_seed = np.random.SeedSequence(config.seed).spawn(2)[0]
    model = build_model(train_set.shape, config.arch, train_set.class_count, mpbn=config.mpbn,
                        seed=init_seed, dtype=config.np_dtype, T=config.T, **model_kw)
    return train(model, config, train_set, test_set)


def filter_normalized_direction(model, seed):
    """Random Gaussian direction with each filter rescaled to the model filter's norm.

    One-dimensional parameters (biases, normalization scale/shift) get a zero
    direction, so the probe only moves weights.
    """
    rng = np.random.default_rng(seed)
    direction = {}
    for key, p in named_parameters(model).items():
        d = rng.standard_normal(p.shape).astype(p.dtype)
        if p.ndim <= 1:
            d[...] = 0
        else:
            axes = tuple(range(1, p.ndim))
            pn = np.sqrt(np.square(p).sum(axis=axes, keepdims=True))
            dn = np.sqrt(np.square(d).sum(axis=axes, keepdims=True))
            d *= pn / np.where(dn > 0, dn, 1)
        direction[key] = d
    return direction


def landscape_1d(model, dataset, n_points=21, radius=1.0, seed=0, T=None, batch_size=256):
    """Loss along ``params + alpha * direction`` for alpha in [-radius, radius]."""
    if model.folded:
        raise ConfigError("the landscape probe needs a training-mode model")
    T = T or model.T
    direction = filter_normalized_direction(model, seed)
    alphas = np.linspace(-radius, radius, n_points)
    if n_points % 2:
        alphas[n_points // 2] = 0.0
    base = {k: v.copy() for k, v in named_parameters(model).items()}
    probe = model.copy()
    live = named_parameters(probe)
    out = []
    for a in alphas:
        for k, p in live.items():
            if a == 0.0:
                p[...] = base[k]
            else:
                p[...] = base[k] + p.dtype.type(a) * direction[k]
        out.append((float(a), dataset_loss(probe, dataset, T, batch_size)))
    return out


def curvature_proxy(points):
    """Mean absolute second difference of the probed losses."""
    losses = np.array([l for _, l in points])
    if len(losses) < 3:
        return 0.0
    return float(np.mean(np.abs(np.diff(losses, 2))))
