"""Feature tables: CSV ingest, standardization, synthetic generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


@dataclass
class FeatureTable:
    ids: list[str]
    features: np.ndarray
    labels: np.ndarray
    splits: np.ndarray
    num_classes: int
    # generating cluster per row; only set by make_synthetic
    cluster: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.splits = np.asarray(self.splits, dtype=object)
        n = len(self.ids)
        if n < 2:
            raise DataError("a feature table needs at least 2 samples")
        if self.features.shape[0] != n or self.labels.shape != (n,) or self.splits.shape != (n,):
            raise DataError("ids, features, labels and splits disagree on sample count")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise DataError("label outside [0, num_classes)")
        missing = set(range(self.num_classes)) - set(self.labels[self.train_mask].tolist())
        if missing:
            raise DataError(f"classes {sorted(missing)} have no train samples")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        return self.splits == split

    @property
    def train_mask(self) -> np.ndarray:
        return self.mask("train")


def standardize(features: np.ndarray, train_mask: np.ndarray) -> np.ndarray:
    """Z-score every column with train-split statistics; constant columns become 0."""
    x = np.asarray(features, dtype=np.float64)
    ref = x[train_mask]
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    const = std == 0
    out = (x - mean) / np.where(const, 1.0, std)
    out[:, const] = 0.0
    return out


def load_table(path: str | Path, num_classes: int | None = None) -> FeatureTable:
    """Read a ``id,label,split,f0..f{D-1}`` CSV and standardize its features."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if header[:3] != ["id", "label", "split"]:
        raise DataError(f"{path}: header must start with id,label,split (got {header[:3]})")
    dim = len(header) - 3
    if dim < 1 or header[3:] != [f"f{j}" for j in range(dim)]:
        raise DataError(f"{path}: feature columns must be named f0..f{{D-1}}")

    ids, labels, splits, feats = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(f"{path}: row {lineno}: expected {len(header)} columns, got {len(row)}")
        ids.append(row[0])
        try:
            label = int(row[1])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: label {row[1]!r} is not an integer") from None
        if label < 0 or (num_classes is not None and label >= num_classes):
            raise DataError(f"{path}: row {lineno}: label {label} out of range")
        labels.append(label)
        split = row[2].strip()
        if split not in SPLITS:
            raise DataError(
                f"{path}: row {lineno}: unknown split {split!r}; allowed {{train,val,test}}"
            )
        splits.append(split)
        try:
            vals = [float(v) for v in row[3:]]
        except ValueError as exc:
            raise DataError(f"{path}: row {lineno}: {exc}") from None
        if not all(np.isfinite(vals)):
            raise DataError(f"{path}: row {lineno}: non-finite feature value")
        feats.append(vals)

    if not ids:
        raise DataError(f"{path}: no data rows")
    splits_arr = np.array(splits, dtype=object)
    train = splits_arr == "train"
    if not train.any():
        raise DataError(f"{path}: train split is empty")
    k = num_classes if num_classes is not None else max(labels) + 1
    x = standardize(np.array(feats, dtype=np.float64), train)
    return FeatureTable(ids, x, np.array(labels), splits_arr, k)


def save_table(table: FeatureTable, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label", "split"] + [f"f{j}" for j in range(table.dim)])
        for i in range(table.n):
            w.writerow(
                [table.ids[i], int(table.labels[i]), table.splits[i]]
                + [repr(float(v)) for v in table.features[i]]
            )


@dataclass
class SynthSpec:
    num_classes: int = 2
    samples_per_class: int | Sequence[int] = 50
    dim: int = 8
    cluster_spread: float = 0.3
    cross_class_overlap: float = 0.0
    seed: int = 0

    def counts(self) -> list[int]:
        spc = self.samples_per_class
        if isinstance(spc, int):
            return [spc] * self.num_classes
        spc = [int(c) for c in spc]
        if len(spc) == 1:
            return spc * self.num_classes
        if len(spc) != self.num_classes:
            raise DataError(f"{len(spc)} per-class counts given for {self.num_classes} classes")
        return spc


def stratified_split(labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """60/20/20 split per class with at least one sample in each split."""
    splits = np.empty(len(labels), dtype=object)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        n = len(idx)
        n_val = max(1, round(0.2 * n))
        n_test = max(1, round(0.2 * n))
        n_train = n - n_val - n_test
        splits[idx[:n_train]] = "train"
        splits[idx[n_train:n_train + n_val]] = "val"
        splits[idx[n_train + n_val:]] = "test"
    return splits


def _spread_centers(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    radius = np.sqrt(d)
    min_gap = radius
    centers: list[np.ndarray] = []
    tries = 0
    while len(centers) < k:
        c = rng.standard_normal(d)
        c *= radius / np.linalg.norm(c)
        if all(np.linalg.norm(c - o) >= min_gap for o in centers):
            centers.append(c)
            tries = 0
            continue
        tries += 1
        if tries == 200:
            min_gap *= 0.9
            tries = 0
    return np.array(centers)


def make_synthetic(spec: SynthSpec) -> FeatureTable:
    """Gaussian class clusters with optional label noise.

    Centers lie on the sphere of radius ``sqrt(dim)``, kept at least that
    radius apart where the dimension allows it.  A fraction
    ``cross_class_overlap`` of rows (exactly ``floor(overlap * N)``) draws its
    features from a different class's cluster while keeping its label.
    """
    counts = spec.counts()
    if spec.num_classes < 2:
        raise DataError("need at least 2 classes")
    if min(counts) < 3:
        raise DataError("samples_per_class must be >= 3 so every split gets a sample")
    if spec.cluster_spread <= 0:
        raise DataError("cluster_spread must be positive")
    if not 0 <= spec.cross_class_overlap < 0.5:
        raise DataError("cross_class_overlap must lie in [0, 0.5)")

    rng = np.random.default_rng(spec.seed)
    k, d = spec.num_classes, spec.dim
    centers = _spread_centers(k, d, rng)

    labels = np.repeat(np.arange(k), counts)
    n = len(labels)
    cluster = labels.copy()
    n_noisy = int(np.floor(spec.cross_class_overlap * n))
    noisy = rng.choice(n, size=n_noisy, replace=False)
    for i in noisy:
        others = [c for c in range(k) if c != labels[i]]
        cluster[i] = others[rng.integers(len(others))]
    x = centers[cluster] + spec.cluster_spread * rng.standard_normal((n, d))
    splits = stratified_split(labels, rng)
    ids = [f"s{i:05d}" for i in range(n)]
    x = standardize(x, splits == "train")
    return FeatureTable(ids, x, labels, splits, k, cluster=cluster)
