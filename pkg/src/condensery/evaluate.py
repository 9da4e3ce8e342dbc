"""Train-on-synthetic / test-on-real evaluation protocol.

Each run trains a freshly initialized network on the synthetic images with
plain SGD on cross-entropy and reports held-out accuracy. The protocol
repeats over experiments x networks with derived seeds and aggregates
mean and standard deviation; independent runs may execute on worker
threads (capped by CONDENSERY_THREADS).
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import LabeledDataset, SyntheticSet
from .models import ArchSpec, ModelParams, forward, init_params
from .tensor import Tensor

DESK_PROTOCOL = {"n_experiments": 3, "n_nets_per": 5, "epochs": 100}
PAPER_PROTOCOL = {"n_experiments": 5, "n_nets_per": 20, "epochs": 300}


@dataclass
class EvalConfig:
    epochs: int = 100
    lr: float = 0.01
    batch_size: int = 256
    seed: int = 0


@dataclass
class EvalReport:
    accuracies: list
    mean: float
    std: float
    config: dict = field(default_factory=dict)
    wall_clock: float = 0.0

    @staticmethod
    def from_runs(accs: list, config: dict, wall_clock: float) -> "EvalReport":
        arr = np.asarray(accs, dtype=np.float64)
        return EvalReport(list(map(float, accs)), float(arr.mean()),
                          float(arr.std()), config, wall_clock)


def _worker_count() -> int:
    env = os.environ.get("CONDENSERY_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def train_on_synthetic(synth: SyntheticSet, arch_spec: ArchSpec, epochs: int,
                       lr: float, seed: int, batch_size: int = 256) -> ModelParams:
    """SGD on cross-entropy over the synthetic images; fresh init per seed."""
    params = init_params(arch_spec, seed)
    n = len(synth.labels)
    images = synth.images.values   # read-only here; fresh Tensors wrap batches
    rng = np.random.default_rng(seed + 1)
    for _ in range(epochs):
        order = rng.permutation(n) if n > batch_size else np.arange(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pyr = forward(params, Tensor(images[idx]))
            loss = T.softmax_cross_entropy_mean(pyr.logits, synth.labels[idx])
            T.backward(loss)
            T.sgd_step(params.tensors, lr)
    return params


def test_accuracy(params: ModelParams, test_ds: LabeledDataset, chunk: int = 2000) -> float:
    """Argmax accuracy on the held-out split; ties go to the lowest class."""
    correct = 0
    n = len(test_ds)
    for start in range(0, n, chunk):
        batch = Tensor(test_ds.images[start:start + chunk])
        logits = forward(params, batch).logits.values
        correct += int((np.argmax(logits, axis=1) == test_ds.labels[start:start + chunk]).sum())
    return correct / n


def evaluate_protocol(synth: SyntheticSet, arch_spec: ArchSpec, test_ds: LabeledDataset,
                      n_experiments: int, n_nets_per: int, cfg: EvalConfig) -> EvalReport:
    """Train n_experiments x n_nets_per fresh networks, aggregate mean/std."""
    t0 = time.monotonic()
    seeds = [cfg.seed * 1_000_000 + e * 1000 + j
             for e in range(n_experiments) for j in range(n_nets_per)]

    def one(seed: int) -> float:
        params = train_on_synthetic(synth, arch_spec, cfg.epochs, cfg.lr, seed,
                                    cfg.batch_size)
        return test_accuracy(params, test_ds)

    workers = _worker_count()
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(one, seeds))
    else:
        accs = [one(s) for s in seeds]
    snapshot = {"arch": arch_spec.arch, "n_experiments": n_experiments,
                "n_nets_per": n_nets_per, "epochs": cfg.epochs, "lr": cfg.lr,
                "seed": cfg.seed}
    return EvalReport.from_runs(accs, snapshot, time.monotonic() - t0)


def cross_architecture_eval(synth: SyntheticSet, train_arch: ArchSpec,
                            test_archs: list, test_ds: LabeledDataset,
                            n_experiments: int, n_nets_per: int,
                            cfg: EvalConfig) -> list:
    """Evaluate one condensed set on several network architectures."""
    reports = []
    for arch in test_archs:
        rep = evaluate_protocol(synth, arch, test_ds, n_experiments, n_nets_per, cfg)
        rep.config["train_arch"] = train_arch.arch
        reports.append(rep)
    return reports


def record_training_trace(ds: LabeledDataset, arch_spec: ArchSpec, epochs: int,
                          lr: float, seed: int, batch_size: int = 256) -> np.ndarray:
    """Per-sample correctness over one real-data training run ([epochs, n]).

    Feeds the forgetting-events selector.
    """
    params = init_params(arch_spec, seed)
    n = len(ds)
    rng = np.random.default_rng(seed + 1)
    trace = np.zeros((epochs, n), dtype=np.uint8)
    for e in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            pyr = forward(params, Tensor(ds.images[idx]))
            trace[e, idx] = (np.argmax(pyr.logits.values, axis=1) == ds.labels[idx])
            loss = T.softmax_cross_entropy_mean(pyr.logits, ds.labels[idx])
            T.backward(loss)
            T.sgd_step(params.tensors, lr)
    return trace
