"""CSV datasets, standardization, splits and k-fold cross-validation."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError

TASKS = ("regression", "binary", "multiclass")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    task: str = "regression"
    feature_names: Optional[tuple] = None
    target_name: Optional[str] = None
    classes: Optional[tuple] = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise DataError("features must be a 2-d matrix")
        y = np.asarray(self.targets)
        if y.shape[0] != X.shape[0]:
            raise DataError("features and targets disagree on the number of rows")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain non-finite values")
        if self.task == "regression":
            y = y.astype(np.float64)
            if not np.all(np.isfinite(y)):
                raise DataError("targets contain non-finite values")
        else:
            y = y.astype(np.int64)
            k = len(self.classes) if self.classes is not None else int(y.max(initial=-1)) + 1
            if np.any(y < 0) or np.any(y >= max(k, 1)):
                raise DataError(f"class indices must lie in [0, {k})")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "targets", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        if self.task == "regression":
            return 0
        if self.classes is not None:
            return len(self.classes)
        return int(self.targets.max()) + 1

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return replace(self, features=self.features[idx], targets=self.targets[idx])


def _num(cell: str, line: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise DataError(f"line {line}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not np.isfinite(v):
        raise DataError(f"line {line}, column {col!r}: non-finite value {cell!r}")
    return v


def load_csv(path, target_column, has_header: bool = True, task: str = "regression") -> Dataset:
    """Read a comma-separated numeric table.

    ``target_column`` is a header name or a 0-based index.  Class labels for
    classification tasks may be any strings; they are numbered in order of
    first appearance.  Errors name the offending line and column.
    """
    if task not in TASKS:
        raise ConfigError(f"task must be one of {TASKS}, got {task!r}")
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    first = 0
    while first < len(rows) and not rows[first]:
        first += 1
    if first >= len(rows):
        raise DataError(f"{path} is empty")
    if has_header:
        header = [h.strip() for h in rows[first]]
        body_start = first + 1
    else:
        header = [str(i) for i in range(len(rows[first]))]
        body_start = first
    if isinstance(target_column, str) and target_column in header:
        t = header.index(target_column)
    else:
        try:
            t = int(target_column)
        except (TypeError, ValueError):
            raise DataError(f"target column {target_column!r} not found in {header}") from None
        if not 0 <= t < len(header):
            raise DataError(f"target column index {t} out of range for {len(header)} columns")
    feats, targets, classes = [], [], {}
    for lineno, row in enumerate(rows[body_start:], start=body_start + 1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        feats.append([_num(c, lineno, header[j]) for j, c in enumerate(row) if j != t])
        cell = row[t].strip()
        if task == "regression":
            targets.append(_num(cell, lineno, header[t]))
        else:
            targets.append(classes.setdefault(cell, len(classes)))
    if not feats:
        raise DataError(f"{path} has no data rows")
    names = tuple(h for j, h in enumerate(header) if j != t)
    return Dataset(
        np.array(feats, dtype=np.float64),
        np.array(targets),
        task,
        feature_names=names,
        target_name=header[t],
        classes=tuple(classes) if task != "regression" else None,
    )


def write_csv(dataset: Dataset, path, target_name: Optional[str] = None) -> None:
    """Write features then the target as the last column, floats in ``%.17g``."""
    names = dataset.feature_names or tuple(f"x{i}" for i in range(dataset.d))
    tname = target_name or dataset.target_name or "y"
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + [tname])
        for x, y in zip(dataset.features, dataset.targets):
            if dataset.task == "regression":
                ycell = f"{float(y):.17g}"
            else:
                ycell = dataset.classes[int(y)] if dataset.classes else str(int(y))
            w.writerow([f"{v:.17g}" for v in x] + [ycell])


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    STD_FLOOR = 1e-12

    @classmethod
    def fit(cls, train: Dataset) -> "Standardizer":
        """Fit on the training split only."""
        X = train.features
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), cls.STD_FLOOR))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * self.std + self.mean

    def apply(self, dataset: Dataset) -> Dataset:
        return replace(dataset, features=self.transform(dataset.features))

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, doc: dict) -> "Standardizer":
        return cls(np.array(doc["mean"], dtype=np.float64), np.array(doc["std"], dtype=np.float64))


def split_indices(n: int, fractions, seed: int):
    """Shuffled ``(train, val, test)`` index arrays.

    Sizes are ``floor(f * n)`` for train and validation; the test split takes
    the remainder when the fractions sum to one, otherwise ``round(f * n)``.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError("fractions must give (train, val, test)")
    if any(f < 0 for f in fractions) or fractions[0] <= 0:
        raise ConfigError("fractions must be nonnegative with a positive training share")
    total = sum(fractions)
    if total > 1 + 1e-9:
        raise ConfigError(f"fractions sum to {total} > 1")
    perm = np.random.default_rng(seed).permutation(n)
    n_tr = int(np.floor(fractions[0] * n + 1e-9))
    n_va = int(np.floor(fractions[1] * n + 1e-9))
    if abs(total - 1) <= 1e-9:
        n_te = n - n_tr - n_va
    else:
        n_te = min(int(round(fractions[2] * n)), n - n_tr - n_va)
    return perm[:n_tr], perm[n_tr : n_tr + n_va], perm[n_tr + n_va : n_tr + n_va + n_te]


def split(dataset: Dataset, fractions, seed: int):
    tr, va, te = split_indices(dataset.n, fractions, seed)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


def kfold(n_or_dataset, k: int, seed: int):
    """``k`` ``(train_idx, val_idx)`` pairs; validation folds partition the
    shuffled indices with sizes differing by at most one."""
    n = n_or_dataset.n if isinstance(n_or_dataset, Dataset) else int(n_or_dataset)
    if k < 2:
        raise ConfigError("k must be at least 2")
    if k > n:
        raise ConfigError(f"k={k} exceeds the number of samples {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    return [(np.concatenate(folds[:i] + folds[i + 1 :]), folds[i]) for i in range(k)]


def indices_to_json(parts: dict) -> str:
    return json.dumps({k: [int(i) for i in v] for k, v in parts.items()}, sort_keys=True)


def synthetic_polynomial(n: int, d: int, degree: int, seed: int, noise: float = 0.0, n_terms: int = 8) -> Dataset:
    """Regression data ``y = sum_k c_k (a_k . x + s_k)^degree + noise`` on
    ``x ~ U[-1, 1]^d``, rescaled so the noiseless target has unit variance."""
    if degree < 1 or n < 2 or d < 1:
        raise ConfigError("need degree >= 1, n >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n_terms, d)) / np.sqrt(d)
    s = rng.normal(scale=0.5, size=n_terms)
    c = rng.normal(size=n_terms)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    y = ((X @ A.T + s) ** degree) @ c
    y = (y - y.mean()) / y.std()
    y = y + noise * rng.normal(size=n)
    return Dataset(X, y, "regression", tuple(f"x{i + 1}" for i in range(d)), "y")
