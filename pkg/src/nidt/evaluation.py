"""Accuracy, confusion counts, TPR/FPR, ROC/AUC and inference speed measurement.

The positive class is attack (label 1).
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fileio import atomic_open


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def grid(self) -> str:
        """2x2 text grid, rows = actual class, columns = predicted class."""
        w = max(len(str(v)) for v in (self.tp, self.fp, self.tn, self.fn, "predicted"))
        lines = [
            f"{'':>14} {'pred normal':>{w + 2}} {'pred attack':>{w + 2}}",
            f"{'actual normal':>14} {self.tn:>{w + 2}} {self.fp:>{w + 2}}",
            f"{'actual attack':>14} {self.fn:>{w + 2}} {self.tp:>{w + 2}}",
        ]
        return "\n".join(lines) + "\n"


def _binary(a, name: str) -> np.ndarray:
    arr = np.asarray(a)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0 and 1")
    return arr.astype(bool)


def confusion(labels, predictions) -> ConfusionMatrix:
    y = _binary(labels, "labels")
    p = _binary(predictions, "predictions")
    if y.shape != p.shape:
        raise ValueError(f"labels ({y.size}) and predictions ({p.size}) differ in length")
    return ConfusionMatrix(
        tp=int(np.sum(y & p)), fp=int(np.sum(~y & p)), tn=int(np.sum(~y & ~p)), fn=int(np.sum(y & ~p))
    )


def ratio(num: int, den: int) -> tuple[float, bool]:
    """``(num / den, False)``, or ``(0.0, True)`` when the denominator is zero."""
    return (num / den, False) if den > 0 else (0.0, True)


def accuracy(cm: ConfusionMatrix) -> float:
    """Percentage of correct predictions."""
    return 100.0 * ratio(cm.tp + cm.tn, cm.total)[0]


def tpr(cm: ConfusionMatrix) -> float:
    return ratio(cm.tp, cm.tp + cm.fn)[0]


def fpr(cm: ConfusionMatrix) -> float:
    return ratio(cm.fp, cm.fp + cm.tn)[0]


def fnr(cm: ConfusionMatrix) -> float:
    return ratio(cm.fn, cm.fn + cm.tp)[0]


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    degenerate: bool = False  # labels held a single class

    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))

    def to_csv(self, path: str | os.PathLike) -> None:
        with atomic_open(path) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "fpr", "tpr"])
            for f, t, thr in self.points():
                w.writerow([repr(thr), repr(f), repr(t)])


def roc(labels, scores) -> RocCurve:
    """One point per distinct score (predict attack when ``score >= threshold``),
    preceded by an infinite threshold giving (0, 0)."""
    y = _binary(labels, "labels")
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ValueError("labels and scores differ in length")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.diff(s_sorted) != 0) if s.size else np.empty(0, dtype=np.int64)
    ends = np.r_[ends, s.size - 1] if s.size else ends
    tps = np.cumsum(y_sorted)[ends] if s.size else np.empty(0)
    fps = (ends + 1) - tps
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    degenerate = n_pos == 0 or n_neg == 0
    tp_rate = np.r_[0.0, tps / n_pos] if n_pos else np.zeros(ends.size + 1)
    fp_rate = np.r_[0.0, fps / n_neg] if n_neg else np.zeros(ends.size + 1)
    thresholds = np.r_[np.inf, s_sorted[ends]]
    if tp_rate[-1] != 1.0 or fp_rate[-1] != 1.0:
        # force the (1, 1) endpoint (empty or single-class input)
        tp_rate = np.r_[tp_rate, 1.0]
        fp_rate = np.r_[fp_rate, 1.0]
        thresholds = np.r_[thresholds, -np.inf]
    return RocCurve(fp_rate, tp_rate, thresholds, degenerate)


def auc(curve: RocCurve) -> float:
    """Trapezoidal area under the curve; NaN when the curve is degenerate."""
    if curve.degenerate:
        return float("nan")
    return float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))


@dataclass(frozen=True)
class BenchmarkResult:
    wall_seconds: float
    records_per_second: float
    thread_count: int
    record_count: int

    def csv_row(self, model: str, domain: str) -> list[str]:
        return [model, domain, str(self.thread_count), repr(self.wall_seconds), repr(self.records_per_second)]


BENCHMARK_LOG_HEADER = ["model", "domain", "threads", "wall_seconds", "records_per_second"]


@dataclass
class EvalReport:
    accuracy: float
    confusion: ConfusionMatrix
    tpr: float
    fpr_pct: float
    fnr_pct: float
    fpr_overall_pct: float
    fnr_overall_pct: float
    auc: float
    threshold: float = 0.5
    degenerate: list[str] = field(default_factory=list)
    timing: BenchmarkResult | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"]["total"] = self.confusion.total
        if not np.isfinite(self.auc):
            d["auc"] = None
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        cm = self.confusion
        lines = [
            f"records            {cm.total}",
            f"threshold          {self.threshold:g}",
            f"accuracy           {self.accuracy:.2f}%",
            f"TPR                {self.tpr:.4f}",
            f"FPR (of normals)   {self.fpr_pct:.2f}%",
            f"FNR (of attacks)   {self.fnr_pct:.2f}%",
            f"FPR (of all)       {self.fpr_overall_pct:.2f}%",
            f"FNR (of all)       {self.fnr_overall_pct:.2f}%",
            f"AUC                {'undefined' if not np.isfinite(self.auc) else f'{self.auc:.4f}'}",
        ]
        if self.degenerate:
            lines.append(f"degenerate         {', '.join(self.degenerate)}")
        if self.timing is not None:
            t = self.timing
            lines.append(f"test speed         {t.wall_seconds:.3f}s ({t.records_per_second:.1f} records/s, {t.thread_count} threads)")
        return "\n".join(lines) + "\n\nconfusion matrix\n" + cm.grid()


def evaluate(labels, scores, threshold: float = 0.5) -> tuple[EvalReport, RocCurve]:
    scores = np.asarray(scores)
    preds = (scores >= threshold).astype(np.int64)
    cm = confusion(labels, preds)
    degenerate = []
    _, d = ratio(cm.tp + cm.tn, cm.total)
    if d:
        degenerate.append("accuracy")
    rate_tpr, d = ratio(cm.tp, cm.tp + cm.fn)
    if d:
        degenerate += ["tpr", "fnr"]
    rate_fpr, d = ratio(cm.fp, cm.fp + cm.tn)
    if d:
        degenerate.append("fpr")
    curve = roc(labels, scores)
    if curve.degenerate:
        degenerate.append("auc")
    report = EvalReport(
        accuracy=accuracy(cm),
        confusion=cm,
        tpr=rate_tpr,
        fpr_pct=100.0 * rate_fpr,
        fnr_pct=100.0 * fnr(cm),
        fpr_overall_pct=100.0 * ratio(cm.fp, cm.total)[0],
        fnr_overall_pct=100.0 * ratio(cm.fn, cm.total)[0],
        auc=auc(curve),
        threshold=threshold,
        degenerate=degenerate,
    )
    return report, curve


def benchmark(engine, records: Sequence, threads: int = 1) -> BenchmarkResult:
    """Time one full scoring pass (preprocessing + network) after an untimed warm-up."""
    if len(records) == 0:
        raise ValueError("benchmark needs at least one record")
    engine.score(records, threads=threads)
    t0 = time.perf_counter()
    engine.score(records, threads=threads)
    wall = time.perf_counter() - t0
    return BenchmarkResult(wall, len(records) / wall, threads, len(records))


def append_benchmark_log(path: str | os.PathLike, result: BenchmarkResult, model: str, domain: str) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(BENCHMARK_LOG_HEADER)
        w.writerow(result.csv_row(model, domain))
