"""Condensation objective: class-wise feature averaging, layer-wise
alignment, discrimination through synthetic class centers, and the
weighted total.

The alignment term sums squared L2 gaps over classes and layers (sums,
not means); the discrimination term classifies individual real samples by
inner product with synthetic class centers at the last tap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, InputError
from .models import FeaturePyramid
from .tensor import Tensor


@dataclass
class ClassMeans:
    """per_layer_per_class[l][k] is the mean feature row [1, C'_l]."""
    per_layer_per_class: list
    num_classes: int

    @property
    def num_layers(self) -> int:
        return len(self.per_layer_per_class)

    def centers_matrix(self, layer: int = -1) -> Tensor:
        """Class centers at one layer stacked into [K, C']."""
        return T.concat_rows(self.per_layer_per_class[layer])


@dataclass
class LossBreakdown:
    l_f: Tensor
    l_d: Tensor
    total: Tensor
    beta: float

    def as_floats(self) -> tuple[float, float, float]:
        return self.l_f.item(), self.l_d.item(), self.total.item()


def cwfa(pyramid: FeaturePyramid, labels, num_classes: int) -> ClassMeans:
    """Per-layer, per-class arithmetic mean of flattened features.

    Every class must be present in the batch; means stay on the tape so
    gradients flow back into the features.
    """
    labels = np.asarray(labels, dtype=np.intp)
    class_idx = []
    for k in range(num_classes):
        idx = np.nonzero(labels == k)[0]
        if idx.size == 0:
            raise InputError(f"class {k} has no samples in the batch")
        class_idx.append(idx)
    per_layer = []
    for feats in pyramid.per_layer:
        row = [T.mean_rows(T.take_rows(feats, idx)) for idx in class_idx]
        per_layer.append(row)
    return ClassMeans(per_layer, num_classes)


def feature_alignment_loss(synth: ClassMeans, real: ClassMeans) -> Tensor:
    """Sum over classes and layers of squared L2 gaps between mean rows."""
    if synth.num_layers != real.num_layers or synth.num_classes != real.num_classes:
        raise DimensionError(
            f"class means disagree: L {synth.num_layers} vs {real.num_layers}, "
            f"K {synth.num_classes} vs {real.num_classes}")
    acc = None
    for l in range(real.num_layers):
        for k in range(real.num_classes):
            s = synth.per_layer_per_class[l][k]
            r = real.per_layer_per_class[l][k]
            if s.shape != r.shape:
                raise DimensionError(f"layer {l} width mismatch: {s.shape} vs {r.shape}")
            d = T.sub(s, r)
            term = T.sum_all(T.mul(d, d))
            acc = term if acc is None else T.add(acc, term)
    return acc


def discrimination_logits(real_last: Tensor, synth_centers: Tensor) -> Tensor:
    """O = real_last @ synth_centers.T; gradients flow to both operands."""
    if real_last.shape[1] != synth_centers.shape[1]:
        raise DimensionError(
            f"feature width mismatch: real {real_last.shape} vs centers {synth_centers.shape}")
    return T.matmul(real_last, T.transpose2d(synth_centers))


def discrimination_loss(logits: Tensor, labels) -> Tensor:
    return T.softmax_cross_entropy_mean(logits, labels)


def total_loss(l_f: Tensor, l_d: Tensor, beta: float) -> LossBreakdown:
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")
    total = T.add(l_f, T.scale(l_d, beta))
    return LossBreakdown(l_f, l_d, total, float(beta))
