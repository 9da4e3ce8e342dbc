"""Dataset ingestion, normalization, the CND binary container, and the
2-D PCA projection export.

IDX files (big-endian headers) cover MNIST/FashionMNIST; Gaussian blob
datasets provide a desk-scale oracle. All loaded datasets live in
normalized space with per-channel mean 0 / std 1 computed on the training
split.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, InputError, ParseError
from .models import ArchSpec, ConvNetSpec, MLPSpec, ModelParams
from .tensor import Tensor

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

CND_MAGIC = b"CND1"
CND_VERSION = 1


@dataclass
class NormStats:
    mean: np.ndarray   # per channel
    std: np.ndarray    # per channel, eps-guarded

    @staticmethod
    def from_raw(images: np.ndarray, eps: float = 1e-8) -> "NormStats":
        mean = images.mean(axis=(0, 2, 3))
        std = images.std(axis=(0, 2, 3))
        return NormStats(mean, np.maximum(std, eps))


@dataclass
class LabeledDataset:
    images: np.ndarray            # [n, C, H, W], normalized space
    labels: np.ndarray            # [n] int
    num_classes: int
    norm_stats: NormStats
    _class_idx: Optional[list] = field(default=None, repr=False)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_indices(self) -> list:
        if self._class_idx is None:
            self._class_idx = [np.nonzero(self.labels == k)[0] for k in range(self.num_classes)]
            for k, idx in enumerate(self._class_idx):
                if idx.size == 0:
                    raise InputError(f"dataset has no samples of class {k}")
        return self._class_idx


@dataclass
class SyntheticSet:
    """Learnable images with fixed class-major labels, ipc per class."""
    images: Tensor                # [K*ipc, C, H, W]
    labels: np.ndarray
    ipc: int
    num_classes: int
    norm_stats: Optional[NormStats] = None

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def class_indices(self, k: int) -> np.ndarray:
        return np.arange(k * self.ipc, (k + 1) * self.ipc)


def new_synthetic(num_classes: int, ipc: int, image_shape: tuple, rng: np.random.Generator,
                  norm_stats: Optional[NormStats] = None) -> SyntheticSet:
    """Synthetic set initialized from standard Gaussian noise."""
    images = Tensor(rng.standard_normal((num_classes * ipc, *image_shape)))
    labels = np.repeat(np.arange(num_classes), ipc)
    return SyntheticSet(images, labels, ipc, num_classes, norm_stats)


# ---------------------------------------------------------------------------
# normalization


def normalize(raw: np.ndarray, stats: Optional[NormStats] = None) -> tuple[np.ndarray, NormStats]:
    """Per-channel (x - mean) / std. Stats are computed if not given."""
    if stats is None:
        stats = NormStats.from_raw(raw)
    out = (raw - stats.mean[None, :, None, None]) / stats.std[None, :, None, None]
    return out, stats


def denormalize(img: np.ndarray, stats: NormStats) -> np.ndarray:
    if img.ndim == 3:
        return img * stats.std[:, None, None] + stats.mean[:, None, None]
    return img * stats.std[None, :, None, None] + stats.mean[None, :, None, None]


def make_dataset(raw: np.ndarray, labels: np.ndarray, num_classes: int,
                 stats: Optional[NormStats] = None) -> LabeledDataset:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InputError(f"label out of range [0, {num_classes})")
    imgs, stats = normalize(raw, stats)
    return LabeledDataset(imgs, labels, num_classes, stats)


# ---------------------------------------------------------------------------
# IDX parsing


def _read_exact(f, n: int, what: str, offset: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ParseError(f"truncated {what}: wanted {n} bytes, got {len(data)}", offset)
    return data


def load_idx(images_path, labels_path, num_classes: Optional[int] = None,
             stats: Optional[NormStats] = None) -> LabeledDataset:
    """Parse an IDX image/label file pair into a normalized dataset.

    Pixels are scaled to [0, 1] before per-channel normalization. Pass
    the training split's ``stats`` when loading a test split.
    """
    with open(images_path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, "image magic", 0))[0]
        if magic != IDX_IMAGES_MAGIC:
            raise ParseError(f"bad IDX image magic 0x{magic:08x} in {images_path}", 0)
        n, rows, cols = struct.unpack(">III", _read_exact(f, 12, "image header", 4))
        payload = f.read()
        if len(payload) != n * rows * cols:
            raise ParseError(
                f"image payload length {len(payload)} != {n}*{rows}*{cols}", 16)
        images = np.frombuffer(payload, dtype=np.uint8).reshape(n, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic = struct.unpack(">I", _read_exact(f, 4, "label magic", 0))[0]
        if magic != IDX_LABELS_MAGIC:
            raise ParseError(f"bad IDX label magic 0x{magic:08x} in {labels_path}", 0)
        n_lab = struct.unpack(">I", _read_exact(f, 4, "label header", 4))[0]
        payload = f.read()
        if len(payload) != n_lab:
            raise ParseError(f"label payload length {len(payload)} != {n_lab}", 8)
        labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)
    if n != n_lab:
        raise ParseError(f"image count {n} != label count {n_lab}")
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    raw = images.astype(np.float64) / 255.0
    return make_dataset(raw, labels, k, stats)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write raw [0,255] uint8 images and labels as an IDX pair (fixtures)."""
    n, _, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Gaussian blob oracle datasets


def make_blobs(num_classes: int, n_per_class: int, shape: tuple, spread: float = 0.1,
               separation: float = 5.0, seed: int = 0,
               stats: Optional[NormStats] = None) -> LabeledDataset:
    """Isotropic Gaussian clusters around well-separated random means."""
    if num_classes < 2:
        raise InputError(f"need at least 2 classes, got {num_classes}")
    rng = np.random.default_rng(seed)
    dim = int(np.prod(shape))
    means = rng.standard_normal((num_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    raw = np.repeat(means, n_per_class, axis=0) + spread * rng.standard_normal(
        (num_classes * n_per_class, dim))
    labels = np.repeat(np.arange(num_classes), n_per_class)
    return make_dataset(raw.reshape(-1, *shape), labels, num_classes, stats)


def make_blob_split(num_classes: int, n_train: int, n_test: int, shape: tuple,
                    spread: float = 0.1, separation: float = 5.0,
                    seed: int = 0) -> tuple[LabeledDataset, LabeledDataset]:
    """Train/test blob pair sharing class means and train-split stats."""
    rng = np.random.default_rng(seed)
    dim = int(np.prod(shape))
    means = rng.standard_normal((num_classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n_per):
        raw = np.repeat(means, n_per, axis=0) + spread * rng.standard_normal(
            (num_classes * n_per, dim))
        return raw.reshape(-1, *shape), np.repeat(np.arange(num_classes), n_per)

    raw_tr, lab_tr = draw(n_train)
    raw_te, lab_te = draw(n_test)
    train = make_dataset(raw_tr, lab_tr, num_classes)
    test = make_dataset(raw_te, lab_te, num_classes, train.norm_stats)
    return train, test


# ---------------------------------------------------------------------------
# CND container


def _pack_sections(sections: list[tuple[str, bytes]]) -> bytes:
    out = b""
    for tag, payload in sections:
        out += tag.encode("ascii").ljust(8) + struct.pack("<Q", len(payload)) + payload
    return out


def _write_container(path, num_classes: int, ipc: int, shape: tuple,
                     sections: list[tuple[str, bytes]]) -> None:
    C, H, W = shape
    header = CND_MAGIC + struct.pack("<7I", CND_VERSION, num_classes, ipc, C, H, W, len(sections))
    with open(path, "wb") as f:
        f.write(header)
        f.write(_pack_sections(sections))


def _read_container(path) -> tuple[dict, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CND_MAGIC:
        raise ParseError(f"bad container magic {data[:4]!r}, expected {CND_MAGIC!r}", 0)
    if len(data) < 32:
        raise ParseError("truncated container header", 4)
    version, K, ipc, C, H, W, nsec = struct.unpack("<7I", data[4:32])
    if version != CND_VERSION:
        raise ParseError(f"unsupported container version {version}, expected {CND_VERSION}", 4)
    header = {"num_classes": K, "ipc": ipc, "shape": (C, H, W)}
    sections = {}
    off = 32
    for _ in range(nsec):
        if off + 16 > len(data):
            raise ParseError("truncated section header", off)
        tag = data[off:off + 8].decode("ascii").strip()
        length = struct.unpack("<Q", data[off + 8:off + 16])[0]
        off += 16
        if off + length > len(data):
            raise ParseError(f"truncated section {tag!r}: declared {length} bytes", off)
        sections[tag] = data[off:off + length]
        off += length
    return header, sections


def _stats_sections(stats: Optional[NormStats]) -> list[tuple[str, bytes]]:
    if stats is None:
        return []
    return [("normstat", np.concatenate([stats.mean, stats.std]).astype("<f8").tobytes())]


def save_synthetic(synth: SyntheticSet, path) -> None:
    sections = [
        ("images", synth.images.values.astype("<f8").tobytes()),
        ("labels", synth.labels.astype("<u4").tobytes()),
    ]
    sections += _stats_sections(synth.norm_stats)
    _write_container(path, synth.num_classes, synth.ipc, synth.image_shape, sections)


def load_synthetic(path) -> SyntheticSet:
    header, sections = _read_container(path)
    K, ipc = header["num_classes"], header["ipc"]
    C, H, W = header["shape"]
    n = K * ipc
    if "images" not in sections or "labels" not in sections:
        raise ParseError("container missing images/labels sections")
    img = np.frombuffer(sections["images"], dtype="<f8")
    if img.size != n * C * H * W:
        raise ParseError(f"images section holds {img.size} values, expected {n * C * H * W}")
    labels = np.frombuffer(sections["labels"], dtype="<u4").astype(np.int64)
    if labels.size != n:
        raise ParseError(f"labels section holds {labels.size} values, expected {n}")
    stats = None
    if "normstat" in sections:
        arr = np.frombuffer(sections["normstat"], dtype="<f8")
        if arr.size != 2 * C:
            raise ParseError(f"normstat section holds {arr.size} values, expected {2 * C}")
        stats = NormStats(arr[:C].copy(), arr[C:].copy())
    images = Tensor(img.reshape(n, C, H, W).copy())
    return SyntheticSet(images, labels, ipc, K, stats)


def _spec_to_json(spec: ArchSpec) -> dict:
    if isinstance(spec, ConvNetSpec):
        return {"arch": "convnet", "blocks": spec.blocks, "channels": spec.channels,
                "input_shape": list(spec.input_shape), "num_classes": spec.num_classes}
    return {"arch": "mlp", "hidden": list(spec.hidden),
            "input_shape": list(spec.input_shape), "num_classes": spec.num_classes}


def spec_from_json(d: dict) -> ArchSpec:
    if d["arch"] == "convnet":
        return ConvNetSpec(d["blocks"], d["channels"], tuple(d["input_shape"]), d["num_classes"])
    if d["arch"] == "mlp":
        return MLPSpec(tuple(d["input_shape"]), tuple(d["hidden"]), d["num_classes"])
    raise ParseError(f"unknown architecture {d['arch']!r} in params section")


def save_params(params: ModelParams, path) -> None:
    """Parameter checkpoint: a CND container with a params section."""
    spec = params.spec
    meta = _spec_to_json(spec)
    meta["shapes"] = [list(t.shape) for t in params.tensors]
    head = json.dumps(meta).encode("utf-8")
    payload = struct.pack("<I", len(head)) + head
    payload += b"".join(t.values.astype("<f8").tobytes() for t in params.tensors)
    shape = tuple(spec.input_shape) if len(spec.input_shape) == 3 else (1, 1, spec.input_shape[0])
    _write_container(path, spec.num_classes, 0, shape, [("params", payload)])


def load_params(path) -> ModelParams:
    _, sections = _read_container(path)
    if "params" not in sections:
        raise ParseError("container has no params section")
    payload = sections["params"]
    (hlen,) = struct.unpack("<I", payload[:4])
    meta = json.loads(payload[4:4 + hlen].decode("utf-8"))
    spec = spec_from_json(meta)
    data = np.frombuffer(payload[4 + hlen:], dtype="<f8")
    tensors = []
    off = 0
    for shape in meta["shapes"]:
        size = int(np.prod(shape))
        if off + size > data.size:
            raise ParseError("params section shorter than declared tensor shapes")
        tensors.append(Tensor(data[off:off + size].reshape(shape).copy()))
        off += size
    return ModelParams(meta["arch"], spec, tensors)


# ---------------------------------------------------------------------------
# PCA projection export


def pca_fit(feats: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Top-k principal axes of ``feats`` via SVD; returns (mean, components)."""
    if feats.shape[0] < 2:
        raise InputError("need at least 2 samples to fit a projection")
    mean = feats.mean(axis=0)
    _, _, vt = np.linalg.svd(feats - mean, full_matrices=False)
    return mean, vt[:k]


def export_projection_csv(real_feats: np.ndarray, synth_feats: np.ndarray,
                          real_labels, synth_labels, path) -> None:
    """Fit 2-D PCA on real features, project both sets, write a CSV."""
    if real_feats.shape[1] != synth_feats.shape[1]:
        raise DimensionError(
            f"feature widths differ: {real_feats.shape[1]} vs {synth_feats.shape[1]}")
    mean, comps = pca_fit(real_feats, 2)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["set", "class", "pc1", "pc2"])
        for tag, feats, labels in (("real", real_feats, real_labels),
                                   ("synthetic", synth_feats, synth_labels)):
            proj = (feats - mean) @ comps.T
            for row, lab in zip(proj, np.asarray(labels)):
                w.writerow([tag, int(lab), repr(float(row[0])), repr(float(row[1]))])
