"""Pixel-level parsing metrics: accuracy, foreground accuracy and macro P/R/F1."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

COLUMNS = ("accuracy", "fg_accuracy", "avg_precision", "avg_recall", "avg_f1")


@dataclass
class Confusion:
    """(K+1) x (K+1) pixel counts; rows are ground truth, columns prediction."""

    K: int
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.K + 1, self.K + 1), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "Confusion") -> "Confusion":
        if other.K != self.K:
            raise ValueError("confusions have different label counts")
        return Confusion(self.K, self.counts + other.counts)


def accumulate(conf: Confusion, pred: np.ndarray, gt: np.ndarray) -> Confusion:
    """Add the pixel pairs of one image; returns ``conf`` (updated in place)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in size")
    n = conf.K + 1
    if max(int(pred.max(initial=0)), int(gt.max(initial=0))) >= n:
        raise ValueError(f"label values must lie in 0..{conf.K}")
    pairs = gt.astype(np.int64).ravel() * n + pred.astype(np.int64).ravel()
    conf.counts += np.bincount(pairs, minlength=n * n).reshape(n, n)
    return conf


def confusion_of(pred: np.ndarray, gt: np.ndarray, K: int) -> Confusion:
    return accumulate(Confusion(K), pred, gt)


@dataclass(frozen=True)
class Report:
    accuracy: float
    fg_accuracy: float | None  # None when ground truth holds no foreground
    avg_precision: float
    avg_recall: float
    avg_f1: float
    precision: np.ndarray  # per label 0..K
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray  # ground-truth pixel count per label

    def row(self) -> dict[str, float | None]:
        return {c: getattr(self, c) for c in COLUMNS}


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape)
    np.divide(num, den, out=out, where=den > 0)
    return out


def metrics(conf: Confusion, include_background: bool = False) -> Report:
    """Metrics from a confusion matrix.

    Averages are unweighted means over the labels that occur in the ground
    truth; background is left out of them unless ``include_background``.
    """
    C = conf.counts.astype(np.float64)
    total = C.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    diag = np.diag(C)
    rows = C.sum(axis=1)
    cols = C.sum(axis=0)
    precision = _ratio(diag, cols)
    recall = _ratio(diag, rows)
    f1 = _ratio(2 * precision * recall, precision + recall)
    fg_rows = rows[1:].sum()
    fg_acc = float(diag[1:].sum() / fg_rows) if fg_rows > 0 else None
    first = 0 if include_background else 1
    present = np.flatnonzero(rows[first:] > 0) + first
    if present.size:
        avg_p, avg_r, avg_f = (float(v[present].mean()) for v in (precision, recall, f1))
    else:
        avg_p = avg_r = avg_f = math.nan
    return Report(float(diag.sum() / total), fg_acc, avg_p, avg_r, avg_f, precision, recall, f1, rows.astype(np.int64))


def _fmt(value: float | None) -> str:
    return "-" if value is None or (isinstance(value, float) and math.isnan(value)) else f"{100 * value:.2f}"


def format_table(rows: dict[str, Report]) -> str:
    """Plain-text table, one line per method, columns in percent."""
    names = list(rows)
    width = max([len("method")] + [len(n) for n in names])
    head = ["method".ljust(width)] + [c.rjust(13) for c in COLUMNS]
    lines = [" ".join(head)]
    for name in names:
        r = rows[name].row()
        lines.append(" ".join([name.ljust(width)] + [_fmt(r[c]).rjust(13) for c in COLUMNS]))
    return "\n".join(lines)


def format_per_label(report: Report, names) -> str:
    lines = [f"{'label':15s} {'support':>9s} {'precision':>9s} {'recall':>9s} {'f1':>9s}"]
    for k, name in enumerate(names):
        lines.append(
            f"{name:15s} {report.support[k]:9d} {_fmt(report.precision[k]):>9s} "
            f"{_fmt(report.recall[k]):>9s} {_fmt(report.f1[k]):>9s}"
        )
    return "\n".join(lines)


def format_csv(rows: dict[str, Report]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method",) + COLUMNS)
    for name, rep in rows.items():
        r = rep.row()
        writer.writerow([name] + ["" if r[c] is None else f"{r[c]:.6f}" for c in COLUMNS])
    return buf.getvalue()
