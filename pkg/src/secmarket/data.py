"""Datasets: the 8x8 digits set, a synthetic Gaussian mixture, and a text format.

Text format: one sample per line, comma-separated float features followed
by an integer label.  Blank lines and lines starting with ``#`` are skipped.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .fl import Dataset


def load_digits() -> Dataset:
    from sklearn.datasets import load_digits as _load

    d = _load()
    return Dataset(d.data / 16.0, d.target, owner="digits", n_classes=10)


def gaussian_mixture(n: int = 4000, dim: int = 64, n_classes: int = 10, seed: int = 0,
                     spread: float = 1.0) -> Dataset:
    rng = np.random.default_rng(seed)
    centers = rng.normal(0.0, 1.0, size=(n_classes, dim))
    y = rng.integers(0, n_classes, size=n)
    X = centers[y] + spread * rng.normal(size=(n, dim))
    return Dataset(X, y, owner="gaussian", n_classes=n_classes)


def load_text(path: str | Path, dim: int | None = None, n_classes: int | None = None) -> Dataset:
    rows, labels = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            feats = [float(p) for p in parts[:-1]]
            label = int(parts[-1])
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        if dim is None:
            dim = len(feats)
        if len(feats) != dim:
            raise DataError(f"{path}:{lineno}: expected {dim} features, got {len(feats)}")
        if label < 0:
            raise DataError(f"{path}:{lineno}: negative label {label}")
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise DataError(f"{path}: no samples")
    y = np.array(labels, dtype=np.int64)
    k = n_classes if n_classes is not None else int(y.max()) + 1
    if y.max() >= k:
        raise DataError(f"{path}: label {int(y.max())} >= n_classes {k}")
    return Dataset(np.array(rows), y, owner=str(path), n_classes=k)


def save_text(data: Dataset, path: str | Path) -> None:
    with open(path, "w") as fh:
        for x, label in zip(data.X, data.y):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(label)}\n")


def load_dataset(spec: str, seed: int = 0) -> Dataset:
    """``digits``, ``gaussian`` or a path to a text dataset."""
    if spec == "digits":
        return load_digits()
    if spec == "gaussian":
        return gaussian_mixture(seed=seed)
    return load_text(spec)


@dataclass
class Partition:
    owners: list[Dataset]
    model_owner: Dataset
    test: Dataset


def partition_iid(data: Dataset, n_owners: int, m0: int, seed: int,
                  mo_size: int | None = None, test_size: int | None = None) -> Partition:
    """Seeded shuffle, then disjoint slices: M0 points per data owner, the model owner, the rest as test."""
    mo_size = max(1, m0 // 2) if mo_size is None else mo_size
    if mo_size >= m0:
        raise DataError(f"model-owner share {mo_size} must be smaller than a data-owner share {m0}")
    need = n_owners * m0 + mo_size
    available_test = len(data) - need
    if test_size is None:
        test_size = available_test
    if available_test < max(test_size, 1):
        raise DataError(
            f"{len(data)} samples cannot cover {n_owners}x{m0} + {mo_size} + {max(test_size, 1)} test"
        )
    order = np.random.default_rng(seed).permutation(len(data))
    owners = [data.subset(order[i * m0:(i + 1) * m0], owner=f"do{i:03d}") for i in range(n_owners)]
    off = n_owners * m0
    mo = data.subset(order[off:off + mo_size], owner="MO")
    test = data.subset(order[off + mo_size:off + mo_size + test_size], owner="test")
    return Partition(owners, mo, test)
