"""Dynamic bi-level optimization of the synthetic set.

Outer steps update synthetic pixels against the alignment + discrimination
objective; inner steps fit the network to the current synthetic set with
cross-entropy. Bounded accuracy queues over a real query set decide when
to break each loop: the outer loop breaks once accuracy has stopped moving
(spread below lambda1), the inner loop once it has moved enough (spread
above lambda2). Unconditional loop caps guarantee termination.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .data import LabeledDataset, SyntheticSet, new_synthetic
from .errors import ConfigError, InputError, UsageError
from .losses import LossBreakdown, cwfa, discrimination_logits, discrimination_loss, \
    feature_alignment_loss, total_loss
from .models import ArchSpec, ModelParams, forward, init_params
from .tensor import Tensor


@dataclass
class CondenseConfig:
    ipc: int = 1
    n_per_class: int = 256          # real batch size per class
    m_per_class: Optional[int] = None   # synthetic batch per class; None -> min(ipc, 256)
    beta: float = 1.0
    lambda1: float = 0.05
    lambda2: float = 0.05
    gamma: int = 10                 # queue capacity
    l_out: int = 10                 # outer loop cap
    l_in: int = 50                  # inner loop cap
    outer_lr: float = 0.1
    outer_lr_milestones: tuple = (1200, 1400, 1800)
    max_outer_iters: int = 2000
    inner_lr: float = 0.01
    query_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ConfigError("lambda1 and lambda2 must be positive")
        if self.gamma < 2:
            raise ConfigError("gamma must be >= 2")
        if self.ipc < 1:
            raise ConfigError("ipc must be >= 1")
        if self.m_per_class is None:
            self.m_per_class = min(self.ipc, 256)
        if self.m_per_class > self.ipc:
            raise ConfigError("m_per_class cannot exceed ipc")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")


class AccQueue:
    """Bounded FIFO of query-set accuracies."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.entries: list[float] = []

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def full(self) -> bool:
        return len(self.entries) == self.capacity

    def push(self, acc: float) -> None:
        if len(self.entries) >= self.capacity:
            raise UsageError("push on a full queue without a prior pop")
        self.entries.append(float(acc))

    def pop_oldest(self) -> float:
        return self.entries.pop(0)

    def clear(self) -> None:
        self.entries = []

    def div(self) -> float:
        if not self.entries:
            raise UsageError("div() on empty queue")
        return max(self.entries) - min(self.entries)


def div(q: AccQueue) -> float:
    return q.div()


@dataclass
class CondenseState:
    synthetic: SyntheticSet
    theta: ModelParams
    q_out: AccQueue
    q_in: AccQueue
    lc_out: int
    lc_in: int
    outer_iter: int
    rng: np.random.Generator
    # instrumentation for the counting harness
    total_outer_steps: int = 0
    total_inner_steps: int = 0
    restarts: int = 0
    max_queue_len: int = 0


def outer_lr_at(cfg: CondenseConfig, outer_iter: int) -> float:
    """Learning rate halves at each milestone iteration (global count)."""
    halvings = sum(1 for m in cfg.outer_lr_milestones if m <= outer_iter)
    return cfg.outer_lr * (0.5 ** halvings)


def sample_class_balanced(ds: LabeledDataset, per_class: int, rng: np.random.Generator) -> np.ndarray:
    """per_class indices from each class, without replacement when possible."""
    picks = []
    for k, idx in enumerate(ds.class_indices()):
        if idx.size >= per_class:
            picks.append(rng.choice(idx, size=per_class, replace=False))
        else:
            picks.append(rng.choice(idx, size=per_class, replace=True))
    return np.concatenate(picks)


def init_state(real: LabeledDataset, arch: ArchSpec, cfg: CondenseConfig) -> CondenseState:
    rng = np.random.default_rng(cfg.seed)
    synth = new_synthetic(real.num_classes, cfg.ipc, real.image_shape, rng, real.norm_stats)
    theta = init_params(arch, seed=int(rng.integers(2 ** 31)))
    return CondenseState(synth, theta, AccQueue(cfg.gamma), AccQueue(cfg.gamma),
                         0, 0, 0, rng)


def _synthetic_batch(state: CondenseState, cfg: CondenseConfig) -> tuple[Tensor, np.ndarray]:
    synth = state.synthetic
    m = cfg.m_per_class
    if m == synth.ipc:
        idx = np.arange(len(synth.labels))
    else:
        idx = np.concatenate([
            state.rng.choice(synth.class_indices(k), size=m, replace=False)
            for k in range(synth.num_classes)])
    return T.take_rows(synth.images, idx), synth.labels[idx]


def outer_step(state: CondenseState, real: LabeledDataset, arch: ArchSpec,
               cfg: CondenseConfig) -> LossBreakdown:
    """One synthetic-pixel update at the scheduled learning rate."""
    K = real.num_classes
    real_idx = sample_class_balanced(real, cfg.n_per_class, state.rng)
    real_batch = Tensor(real.images[real_idx])
    real_labels = real.labels[real_idx]
    synth_batch, synth_labels = _synthetic_batch(state, cfg)

    real_pyr = forward(state.theta, real_batch)
    synth_pyr = forward(state.theta, synth_batch)
    real_means = cwfa(real_pyr, real_labels, K)
    synth_means = cwfa(synth_pyr, synth_labels, K)
    l_f = feature_alignment_loss(synth_means, real_means)
    logits = discrimination_logits(real_pyr.per_layer[-1], synth_means.centers_matrix(-1))
    l_d = discrimination_loss(logits, real_labels)
    breakdown = total_loss(l_f, l_d, cfg.beta)

    T.backward(breakdown.total)
    lr = outer_lr_at(cfg, state.outer_iter)
    T.sgd_step([state.synthetic.images], lr)
    state.theta.zero_grads()

    state.lc_out += 1
    state.outer_iter += 1
    state.total_outer_steps += 1
    return breakdown


def inner_step(state: CondenseState, cfg: CondenseConfig) -> float:
    """One SGD step fitting the network to the synthetic set."""
    if len(state.synthetic.labels) == 0:
        raise InputError("synthetic set is empty")
    synth_batch, synth_labels = _synthetic_batch(state, cfg)
    pyr = forward(state.theta, synth_batch)
    loss = T.softmax_cross_entropy_mean(pyr.logits, synth_labels)
    T.backward(loss)
    T.sgd_step(state.theta.tensors, cfg.inner_lr)
    state.synthetic.images.zero_grad()
    state.lc_in += 1
    state.total_inner_steps += 1
    return loss.item()


def query_accuracy(theta: ModelParams, real: LabeledDataset, cfg: CondenseConfig,
                   rng: np.random.Generator) -> float:
    """Accuracy on a class-balanced random query set; argmax ties go to the
    lowest class index."""
    per_class = max(1, cfg.query_size // real.num_classes)
    idx = sample_class_balanced(real, per_class, rng)
    logits = forward(theta, Tensor(real.images[idx])).logits.values
    pred = np.argmax(logits, axis=1)
    return float(np.mean(pred == real.labels[idx]))


MetricsHook = Callable[[CondenseState, LossBreakdown, float], None]


def run_condense(real: LabeledDataset, arch: ArchSpec, cfg: CondenseConfig,
                 metrics_path=None, hook: Optional[MetricsHook] = None) -> SyntheticSet:
    """Full dynamic bi-level loop; returns the learned synthetic set.

    The metrics CSV stream gets one row per outer iteration:
    iter, l_f, l_d, total, query_acc, lc_out, lc_in, lr.
    """
    state = init_state(real, arch, cfg)
    writer = None
    fh = None
    if metrics_path is not None:
        fh = open(metrics_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(fh)
        writer.writerow(["iter", "l_f", "l_d", "total", "query_acc", "lc_out", "lc_in", "lr"])
    try:
        while state.outer_iter < cfg.max_outer_iters:
            # restart: fresh network, empty queues, zeroed counters
            state.theta = init_params(arch, seed=int(state.rng.integers(2 ** 31)))
            state.q_out.clear()
            state.q_in.clear()
            state.lc_out = 0
            state.lc_in = 0
            state.restarts += 1
            while state.outer_iter < cfg.max_outer_iters:
                lr = outer_lr_at(cfg, state.outer_iter)
                breakdown = outer_step(state, real, arch, cfg)
                acc = query_accuracy(state.theta, real, cfg, state.rng)
                state.q_out.push(acc)
                state.max_queue_len = max(state.max_queue_len, len(state.q_out))
                if writer is not None:
                    lf, ld, tot = breakdown.as_floats()
                    writer.writerow([state.outer_iter, repr(lf), repr(ld), repr(tot),
                                     repr(acc), state.lc_out, state.lc_in, repr(lr)])
                if hook is not None:
                    hook(state, breakdown, acc)
                if (state.q_out.full and state.q_out.div() < cfg.lambda1) \
                        or state.lc_out >= cfg.l_out:
                    state.lc_out = 0
                    state.q_out.clear()
                    break
                if state.q_out.full:
                    state.q_out.pop_oldest()
                # inner loop: fit the network until its accuracy moves
                while True:
                    inner_step(state, cfg)
                    acc_in = query_accuracy(state.theta, real, cfg, state.rng)
                    state.q_in.push(acc_in)
                    state.max_queue_len = max(state.max_queue_len, len(state.q_in))
                    if (state.q_in.full and state.q_in.div() > cfg.lambda2) \
                            or state.lc_in >= cfg.l_in:
                        state.lc_in = 0
                        state.q_in.clear()
                        break
                    if state.q_in.full:
                        state.q_in.pop_oldest()
    finally:
        if fh is not None:
            fh.close()
    return state.synthetic
