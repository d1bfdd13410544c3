"""Labeled datasets: Gaussian mixtures, long-tailed and balanced resampling, CIFAR-10 binary files."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import ContractError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


class InsufficientDataError(ValueError):
    pass


class FormatError(ValueError):
    pass


@dataclass
class LabeledSet:
    """Features (N x ...) with integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or len(self.labels) != len(self.features):
            raise ContractError("need one label per feature row")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(self.features)):
            raise ContractError("features must be finite")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_counts(self) -> np.ndarray:
        return class_counts(self)

    def subset(self, index) -> "LabeledSet":
        index = np.asarray(index, dtype=np.int64)
        return LabeledSet(self.features[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class ImbalanceProfile:
    imbalance_ratio: float
    kind: str = "exponential"

    def __post_init__(self):
        if self.imbalance_ratio < 1:
            raise ContractError("imbalance ratio must be >= 1")
        if self.kind not in ("exponential", "two-class"):
            raise ContractError(f"unknown imbalance profile {self.kind!r}")

    def counts(self, n_max: int, num_classes: int) -> list[int]:
        """Per-class target counts, head (index 0) first."""
        r = self.imbalance_ratio
        if self.kind == "two-class":
            # head block keeps n_max; remaining classes get n_max / r
            return [n_max] + [math.floor(n_max / r)] * (num_classes - 1)
        if num_classes == 1:
            return [n_max]
        return [math.floor(n_max * r ** (-c / (num_classes - 1)) + 1e-9) for c in range(num_classes)]


def class_counts(data: LabeledSet) -> np.ndarray:
    return np.bincount(data.labels, minlength=data.num_classes).astype(np.int64)


def sample_gaussian_binary(r: float, eta: float, n_dim: int, n_samples: int, seed: int = 0) -> LabeledSet:
    """Binary mixture: y=+1 w.p. r/(r+1), coordinates i.i.d. N(eta*y, 1).

    y=+1 (head) is class 1, y=-1 (tail) is class 0.
    """
    if r < 1 or eta <= 0 or n_dim < 1 or n_samples < 1:
        raise ContractError("need r >= 1, eta > 0, n_dim >= 1, n_samples >= 1")
    rng = np.random.default_rng(seed)
    head = rng.random(n_samples) < r / (r + 1)
    sign = np.where(head, 1.0, -1.0)
    x = rng.standard_normal((n_samples, n_dim)) + eta * sign[:, None]
    return LabeledSet(x, head.astype(np.int64), 2)


def simplex_means(num_classes: int, dim: int, eta: float) -> np.ndarray:
    """Regular-simplex class means with norm ``eta`` in the first C coordinates."""
    if dim < num_classes:
        raise ContractError("dim must be >= num_classes for simplex means")
    centred = np.eye(num_classes) - 1.0 / num_classes
    means = np.zeros((num_classes, dim))
    means[:, :num_classes] = centred * eta / np.linalg.norm(centred[0])
    return means


def sample_gaussian_mixture(num_classes: int, dim: int, eta: float, per_class: int, seed: int = 0) -> LabeledSet:
    """Balanced isotropic unit-variance mixture around simplex means."""
    rng = np.random.default_rng(seed)
    means = simplex_means(num_classes, dim, eta)
    labels = np.repeat(np.arange(num_classes), per_class)
    x = means[labels] + rng.standard_normal((len(labels), dim))
    return LabeledSet(x, labels, num_classes)


def make_long_tailed(base: LabeledSet, profile: ImbalanceProfile, seed: int = 0, n_max: int | None = None) -> LabeledSet:
    """Keep ``floor(n_max * r**(-c/(C-1)))`` samples of class c, drawn without replacement.

    ``n_max`` defaults to the largest class count of ``base``.
    """
    counts = class_counts(base)
    n_max = int(counts.max()) if n_max is None else n_max
    targets = profile.counts(n_max, base.num_classes)
    rng = np.random.default_rng(seed)
    keep = []
    for c, target in enumerate(targets):
        idx = np.flatnonzero(base.labels == c)
        if len(idx) < target:
            raise InsufficientDataError(f"class {c} has {len(idx)} samples, needs {target}")
        keep.append(np.sort(rng.choice(idx, size=target, replace=False)))
    return base.subset(np.concatenate(keep))


def balanced_indices(labels: np.ndarray, num_classes: int, gamma: float, seed: int = 0) -> np.ndarray:
    """Indices of a resampled set with ``floor(gamma * n_min)`` per class."""
    counts = np.bincount(labels, minlength=num_classes)
    if counts.min() == 0:
        raise ContractError(f"class {int(counts.argmin())} is empty")
    per_class = math.floor(gamma * counts.min() + 1e-9)
    if per_class < 1:
        raise ContractError("gamma * n_min must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        out.append(rng.choice(idx, size=per_class, replace=len(idx) < per_class))
    return np.concatenate(out)


def make_balanced_subset(lt: LabeledSet, gamma: float, seed: int = 0) -> LabeledSet:
    """Down-sample head classes (without replacement) and up-sample tail
    classes (with replacement) to ``floor(gamma * n_min)`` samples each."""
    if gamma <= 1:
        raise ContractError("gamma must be > 1")
    return lt.subset(balanced_indices(lt.labels, lt.num_classes, gamma, seed))


def load_cifar10_binary(path) -> LabeledSet:
    """Parse CIFAR-10 binary records: label byte then 3072 R, G, B plane bytes."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        whole = len(raw) // CIFAR_RECORD * CIFAR_RECORD
        raise FormatError(f"{path}: truncated record at byte offset {whole} "
                          f"(length {len(raw)} is not a multiple of {CIFAR_RECORD})")
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if len(bad):
        raise FormatError(f"{path}: record {int(bad[0])} has label byte {int(labels[bad[0]])}")
    pixels = records[:, 1:].reshape(-1, *CIFAR_SHAPE).astype(np.float64) / 255.0
    return LabeledSet(pixels, labels, 10)


def cifar10_bytes(data: LabeledSet) -> bytes:
    """Serialize an image LabeledSet back to CIFAR-10 binary records."""
    pixels = np.rint(data.features.reshape(len(data), -1) * 255.0)
    if pixels.shape[1] != CIFAR_RECORD - 1 or pixels.min(initial=0) < 0 or pixels.max(initial=0) > 255:
        raise ContractError("features must be 3x32x32 images in [0, 1]")
    records = np.empty((len(data), CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = data.labels
    records[:, 1:] = pixels.astype(np.uint8)
    return records.tobytes()


def make_flagship_task(seed: int = 0, num_classes: int = 10, dim: int = 16, eta: float = 2.5,
                       n_max: int = 1000, imbalance_ratio: float = 10.0,
                       test_per_class: int = 1000) -> tuple[LabeledSet, LabeledSet]:
    """Long-tailed simplex Gaussian mixture and a balanced test set from the same means."""
    base = sample_gaussian_mixture(num_classes, dim, eta, n_max, seed=[seed, 0])
    lt = make_long_tailed(base, ImbalanceProfile(imbalance_ratio), seed=seed)
    test = sample_gaussian_mixture(num_classes, dim, eta, test_per_class, seed=[seed, 1])
    return lt, test
