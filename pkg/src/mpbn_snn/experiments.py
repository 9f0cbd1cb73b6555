"""Paired-seed desk experiments shared by the acceptance suite and scripts/."""
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import train_test_synthetic
from .train import TrainConfig, curvature_proxy, landscape_1d, run_experiment


@dataclass(frozen=True)
class DeskProtocol:
    """Synthetic desk benchmark at the generator's default signal-to-noise ratio."""

    n_train: int = 256
    n_test: int = 512
    classes: int = 4
    shape: tuple = (1, 8, 8)
    noise: float = 0.3
    seeds: tuple = (0, 1, 2, 3, 4)
    config: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=40, batch_size=64, lr0=0.1, momentum=0.9, T=2, arch="8,p,16"))

    def data(self, seed):
        return train_test_synthetic(seed, self.n_train, self.n_test, self.classes,
                                    self.shape, self.noise)


@dataclass
class SeedResult:
    mode: str
    seed: int
    final_acc: float
    best_acc: float
    epochs_to_95: int
    seconds: float
    accuracies: list
    model: object = None


def run_trend(protocol=None, modes=("off", "channel", "element"), keep_models=False):
    """Train every mode on every seed; a seed shares its data split across modes."""
    protocol = protocol or DeskProtocol()
    results = {m: [] for m in modes}
    for seed in protocol.seeds:
        train_set, test_set = protocol.data(seed)
        for mode in modes:
            cfg = replace(protocol.config, seed=seed, mpbn=mode)
            t0 = time.perf_counter()
            best, run = run_experiment(cfg, train_set, test_set)
            results[mode].append(SeedResult(
                mode, seed, run.accuracies[-1], max(run.accuracies),
                run.epochs_to_fraction(0.95), time.perf_counter() - t0, run.accuracies,
                best if keep_models else None))
    return results


def summarize(results):
    rows = {}
    for mode, rs in results.items():
        rows[mode] = {
            "final_acc": float(np.mean([r.final_acc for r in rs])),
            "best_acc": float(np.mean([r.best_acc for r in rs])),
            "epochs_to_95": float(np.mean([r.epochs_to_95 for r in rs])),
            "seconds": float(np.sum([r.seconds for r in rs])),
        }
    return rows


def curvature_by_mode(results, protocol=None, n_points=21, radius=1.0):
    """Landscape curvature proxy of each kept model on its own training split."""
    protocol = protocol or DeskProtocol()
    out = {}
    for mode, rs in results.items():
        vals = []
        for r in rs:
            if r.model is None:
                raise ValueError("run_trend(keep_models=True) is needed for landscape probes")
            train_set, _ = protocol.data(r.seed)
            pts = landscape_1d(r.model, train_set, n_points, radius, seed=r.seed)
            vals.append(curvature_proxy(pts))
        out[mode] = vals
    return out
