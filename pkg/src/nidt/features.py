"""Extra-trees feature importance, top-k selection and min-max scaling."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import FeatureMatrix
from .fileio import atomic_open, format_float, read_kv, write_kv


@dataclass(frozen=True)
class ExtraTreesConfig:
    n_trees: int = 100
    max_features: int | None = None  # None -> ceil(sqrt(d))
    min_samples_split: int = 2
    seed: int = 42
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")


@dataclass(frozen=True)
class ImportanceReport:
    scores: Mapping[str, float]
    tree_count: int
    seed: int
    degenerate: bool = False  # True when no tree could split at all

    def ranked(self) -> list[tuple[str, float]]:
        return sorted(self.scores.items(), key=lambda kv: (-kv[1], kv[0]))

    def to_csv(self, path: str | os.PathLike) -> None:
        with atomic_open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["feature", "score"])
            for name, score in self.ranked():
                w.writerow([name, repr(float(score))])


def _node_impurity(n, pos):
    # n * gini(node) for a binary node with `pos` positives
    return 2.0 * pos * (n - pos) / n


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, n_candidates: int, min_samples_split: int) -> np.ndarray:
    """Grow one extremely randomized tree to purity; return summed impurity decrease per feature.

    Decreases are in units of samples (n_node * gini), so dividing by n gives the
    usual sample-weighted fraction.
    """
    n, d = X.shape
    gain = np.zeros(d)
    yf = y.astype(np.float64)
    stack = [np.arange(n)]
    while stack:
        idx = stack.pop()
        m = idx.size
        if m < min_samples_split:
            continue
        yn = yf[idx]
        pos = yn.sum()
        if pos == 0 or pos == m:
            continue
        feats = rng.choice(d, size=n_candidates, replace=False)
        sub = X[np.ix_(idx, feats)]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        valid = hi > lo
        u = rng.random(n_candidates)
        if not valid.any():
            continue
        thr = np.where(valid, lo + u * (hi - lo), lo)
        # keep the cut strictly below the max so both children are non-empty
        thr = np.where(valid, np.minimum(thr, np.nextafter(hi, lo)), thr)
        left = sub <= thr
        n_left = left.sum(axis=0).astype(np.float64)
        pos_left = yn @ left
        n_right = m - n_left
        pos_right = pos - pos_left
        with np.errstate(divide="ignore", invalid="ignore"):
            child = (
                np.where(n_left > 0, 2.0 * pos_left * (n_left - pos_left) / n_left, 0.0)
                + np.where(n_right > 0, 2.0 * pos_right * (n_right - pos_right) / n_right, 0.0)
            )
        decrease = _node_impurity(m, pos) - child
        decrease = np.where(valid, decrease, -np.inf)
        best = int(np.argmax(decrease))
        gain[feats[best]] += max(decrease[best], 0.0)
        go_left = left[:, best]
        stack.append(idx[~go_left])
        stack.append(idx[go_left])
    return gain


def fit_importance(X: FeatureMatrix, y: np.ndarray, config: ExtraTreesConfig = ExtraTreesConfig()) -> ImportanceReport:
    """Score features by total Gini decrease over an extra-trees ensemble.

    Every tree sees the full sample (no bootstrap). At each node ``max_features``
    candidates are drawn without replacement, each gets one uniform cut-point
    inside its node range, and the best Gini decrease wins. A node whose
    candidates are all constant becomes a leaf. Tree ``t`` draws from the stream
    seeded by ``(seed, t)``, so results do not depend on ``n_jobs``.
    """
    values = np.asarray(X.values, dtype=np.float64)
    y = np.asarray(y)
    n, d = values.shape
    if n != y.shape[0]:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]} labels")
    if n < 2:
        raise ValueError("need at least 2 rows to score features")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0/1")
    k = config.max_features if config.max_features is not None else math.ceil(math.sqrt(d))
    k = min(k, d)
    values = np.asfortranarray(values)

    def one(t: int) -> np.ndarray:
        rng = np.random.default_rng([config.seed, t])
        return _grow_tree(values, y, rng, k, config.min_samples_split)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            gains = list(pool.map(one, range(config.n_trees)))
    else:
        gains = [one(t) for t in range(config.n_trees)]
    total = np.zeros(d)
    for g in gains:  # fixed reduction order
        total += g
    s = total.sum()
    degenerate = not s > 0
    scores = np.zeros(d) if degenerate else total / s
    return ImportanceReport(
        {name: float(v) for name, v in zip(X.columns, scores)}, config.n_trees, config.seed, degenerate
    )


@dataclass(frozen=True)
class FeatureSelection:
    kept: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.kept)) != len(self.kept):
            raise ValueError("selection contains duplicate feature names")

    @property
    def k(self) -> int:
        return len(self.kept)

    def save(self, path: str | os.PathLike) -> None:
        items: dict[str, object] = {"k": self.k}
        items.update({f"feature_{i}": name for i, name in enumerate(self.kept)})
        write_kv(path, items, comment="feature selection, importance-descending")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FeatureSelection":
        kv = read_kv(path)
        k = int(kv["k"])
        return cls(tuple(kv[f"feature_{i}"] for i in range(k)))


def select_top_k(report: ImportanceReport, k: int) -> FeatureSelection:
    if not 1 <= k <= len(report.scores):
        raise ValueError(f"k must be in [1, {len(report.scores)}], got {k}")
    return FeatureSelection(tuple(name for name, _ in report.ranked()[:k]))


@dataclass(frozen=True)
class ScalerParams:
    columns: tuple[str, ...]
    x_min: np.ndarray
    x_max: np.ndarray

    def __post_init__(self):
        if not (len(self.columns) == self.x_min.shape[0] == self.x_max.shape[0]):
            raise ValueError("scaler columns and bounds differ in length")
        if np.any(self.x_min > self.x_max):
            raise ValueError("scaler has x_min > x_max")

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "x_min": [float(v) for v in self.x_min],
            "x_max": [float(v) for v in self.x_max],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScalerParams":
        return cls(tuple(d["columns"]), np.asarray(d["x_min"], dtype=np.float64), np.asarray(d["x_max"], dtype=np.float64))

    def save(self, path: str | os.PathLike) -> None:
        items: dict[str, object] = {}
        for name, lo, hi in zip(self.columns, self.x_min, self.x_max):
            items[f"{name}.min"] = format_float(float(lo))
            items[f"{name}.max"] = format_float(float(hi))
        write_kv(path, items, comment="min-max scaler fitted on training rows")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ScalerParams":
        kv = read_kv(path)
        names = [k[: -len(".min")] for k in kv if k.endswith(".min")]
        return cls(
            tuple(names),
            np.array([float(kv[f"{n}.min"]) for n in names]),
            np.array([float(kv[f"{n}.max"]) for n in names]),
        )


def _column_indices(X: FeatureMatrix, names: Sequence[str]) -> list[int]:
    idx = []
    for name in names:
        try:
            idx.append(X.columns.index(name))
        except ValueError:
            raise KeyError(f"selected column {name!r} is missing from the feature matrix") from None
    return idx


def fit_scaler(X_train: FeatureMatrix, selection: FeatureSelection) -> ScalerParams:
    if len(X_train) == 0:
        raise ValueError("cannot fit a scaler on zero rows")
    cols = X_train.values[:, _column_indices(X_train, selection.kept)]
    return ScalerParams(selection.kept, cols.min(axis=0), cols.max(axis=0))


def transform(X: FeatureMatrix, selection: FeatureSelection, scaler: ScalerParams, clip: bool = True) -> FeatureMatrix:
    """Min-max rescale the selected columns into [0, 1].

    Out-of-range values are clamped unless ``clip=False``; constant columns
    (x_max == x_min) map to 0.
    """
    if tuple(scaler.columns) != tuple(selection.kept):
        lookup = {c: i for i, c in enumerate(scaler.columns)}
        missing = [c for c in selection.kept if c not in lookup]
        if missing:
            raise KeyError(f"scaler has no bounds for column {missing[0]!r}")
        order = [lookup[c] for c in selection.kept]
        lo, hi = scaler.x_min[order], scaler.x_max[order]
    else:
        lo, hi = scaler.x_min, scaler.x_max
    cols = X.values[:, _column_indices(X, selection.kept)]
    span = hi - lo
    flat = span == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (cols - lo) / np.where(flat, 1.0, span)
    out[:, flat] = 0.0
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return FeatureMatrix(out, tuple(selection.kept))
