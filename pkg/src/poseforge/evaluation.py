"""Classification and pose-error metrics.

Precision, recall and F-measure are computed one-vs-rest per class.  Pose
errors compare an estimated and a true :class:`CameraPose`: ``E_T`` is the
Euclidean distance between the ``t_BC`` vectors, ``E_R = 2 acos(z_s)`` with
``z = q_true ⊗ conj(q_est)`` taken without sign canonicalization, so it can
exceed 180 degrees; the folded value ``min(E_R, 360 - E_R)`` is reported
alongside.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .posespace import CameraPose, PoseLabel, label_pose
from .rotmath import hamilton_product

STAT_NAMES = ("mean", "min", "max", "std")


@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    total: int

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    @property
    def num_classes(self) -> int:
        return len(self.tp)


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    fm: np.ndarray

    @property
    def macro_precision(self) -> float:
        return float(np.mean(self.precision))

    @property
    def macro_recall(self) -> float:
        return float(np.mean(self.recall))

    @property
    def macro_fm(self) -> float:
        return float(np.mean(self.fm))


@dataclass(frozen=True)
class PoseErrors:
    E_T: float
    E_R: float

    @property
    def E_R_folded(self) -> float:
        return min(self.E_R, 360.0 - self.E_R)


def confusion(preds, truth, num_classes: int) -> ConfusionCounts:
    preds = np.asarray(preds, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if preds.shape != truth.shape or preds.ndim != 1:
        raise ValueError("predictions and truth must be equal-length 1-D sequences")
    if preds.size and (min(preds.min(), truth.min()) < 0 or max(preds.max(), truth.max()) >= num_classes):
        raise ValueError(f"label id outside [0, {num_classes})")
    hit = preds == truth
    tp = np.bincount(truth[hit], minlength=num_classes)
    fp = np.bincount(preds[~hit], minlength=num_classes)
    fn = np.bincount(truth[~hit], minlength=num_classes)
    return ConfusionCounts(tp, fp, fn, int(preds.size))


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=float)
    np.divide(num, den, out=out, where=den > 0)
    return out


def precision_recall_fm(counts: ConfusionCounts) -> ClassScores:
    """Per-class precision, recall and F-measure; zero denominators give 0."""
    tp = counts.tp.astype(float)
    precision = _safe_ratio(tp, tp + counts.fp)
    recall = _safe_ratio(tp, tp + counts.fn)
    fm = _safe_ratio(2.0 * precision * recall, precision + recall)
    return ClassScores(precision, recall, fm)


def f_measure(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def label_to_pose_estimate(label: PoseLabel) -> CameraPose:
    """Pose implied by a predicted label: its attitude, target on the boresight at its range."""
    return label_pose(label)


def pose_errors(est: CameraPose, true: CameraPose) -> PoseErrors:
    e_t = float(np.linalg.norm(np.asarray(est.position) - np.asarray(true.position)))
    conj_est = est.attitude.as_array() * np.array([1.0, -1.0, -1.0, -1.0])
    z = hamilton_product(true.attitude.as_array(), conj_est)
    z = z / np.linalg.norm(z)
    e_r = math.degrees(2.0 * math.atan2(float(np.linalg.norm(z[1:])), float(z[0])))
    return PoseErrors(e_t, e_r)


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {k: float("nan") for k in STAT_NAMES}
    return {"mean": float(v.mean()), "min": float(v.min()), "max": float(v.max()), "std": float(v.std())}


@dataclass
class SubsetMetrics:
    count: int
    accuracy: float
    E_R: dict
    E_R_folded: dict
    E_T: dict


@dataclass
class MetricsReport:
    """Accuracy, P/R/FM and pose-error statistics for one evaluation.

    ``all`` covers every sample, ``high_confidence`` only those whose top-2
    probability ratio exceeded 2.  Standard deviations are population (ddof=0).
    """

    total: int
    accuracy: float
    scores: ClassScores
    availability: float
    all: SubsetMetrics
    high_confidence: SubsetMetrics
    samples: list = field(default_factory=list, repr=False)

    def rows(self) -> list[tuple[str, float, float]]:
        """(metric, all solutions, high-confidence) rows in report order."""
        out = []
        for name, key in (("E_R (deg)", "E_R"), ("E_T (m)", "E_T")):
            for stat in STAT_NAMES:
                out.append((f"{stat.capitalize()} {name}", getattr(self.all, key)[stat], getattr(self.high_confidence, key)[stat]))
        for stat in STAT_NAMES:
            out.append((f"{stat.capitalize()} E_R folded (deg)", self.all.E_R_folded[stat], self.high_confidence.E_R_folded[stat]))
        out.append(("Classification Accuracy (%)", self.all.accuracy, self.high_confidence.accuracy))
        out.append(("Solution Availability (%)", 100.0, self.availability))
        out.append(("Macro Precision", self.scores.macro_precision, float("nan")))
        out.append(("Macro Recall", self.scores.macro_recall, float("nan")))
        out.append(("Macro F-Measure", self.scores.macro_fm, float("nan")))
        out.append(("Samples", float(self.all.count), float(self.high_confidence.count)))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "all", "high_confidence"])
        for name, a, h in self.rows():
            w.writerow([name, _fmt(a), _fmt(h)])
        return buf.getvalue()

    def to_text(self, title: str = "") -> str:
        rows = [(n, _fmt(a, 4), _fmt(h, 4)) for n, a, h in self.rows()]
        return format_table(["Metric", "all", "high conf."], rows, title)

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "precision", "recall", "fm"])
        for c, (p, r, f) in enumerate(zip(self.scores.precision, self.scores.recall, self.scores.fm)):
            w.writerow([c, _fmt(p), _fmt(r), _fmt(f)])
        return buf.getvalue()

    def samples_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_COLUMNS)
        for s in self.samples:
            w.writerow([s["image"], s["true_label"], s["pred_label"], _fmt(s["confidence_ratio"]), _fmt(s["E_R"]), _fmt(s["E_R_folded"]), _fmt(s["E_T"])])
        return buf.getvalue()


SAMPLE_COLUMNS = ["image", "true_label", "pred_label", "confidence_ratio", "E_R", "E_R_folded", "E_T"]


def _fmt(x, digits: int | None = None) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan" if digits is None else "-"
    if digits is None:
        return repr(x)
    return f"{x:.{digits}f}"


def format_table(header: Sequence[str], rows, title: str = "") -> str:
    cols = [list(header)] + [list(r) for r in rows]
    widths = [max(len(str(r[i])) for r in cols) for i in range(len(header))]
    lines = []
    if title:
        lines.append(title)
    def line(r):
        return "  ".join(str(c).ljust(widths[0]) if i == 0 else str(c).rjust(widths[i]) for i, c in enumerate(r))
    lines.append(line(header))
    lines.append("  ".join("-" * w for w in widths))
    lines += [line(r) for r in rows]
    return "\n".join(lines) + "\n"


def _subset(samples: list[dict]) -> SubsetMetrics:
    n = len(samples)
    acc = 100.0 * sum(s["true_label"] == s["pred_label"] for s in samples) / n if n else float("nan")
    return SubsetMetrics(
        n,
        acc,
        _stats([s["E_R"] for s in samples]),
        _stats([s["E_R_folded"] for s in samples]),
        _stats([s["E_T"] for s in samples]),
    )


def report_from_samples(samples: list[dict], num_classes: int) -> MetricsReport:
    """Aggregate per-sample records (the :data:`SAMPLE_COLUMNS` fields)."""
    if not samples:
        raise ValueError("cannot report on an empty test split")
    truth = [s["true_label"] for s in samples]
    preds = [s["pred_label"] for s in samples]
    counts = confusion(preds, truth, num_classes)
    high = [s for s in samples if s["confidence_ratio"] > 2.0]
    return MetricsReport(
        total=len(samples),
        accuracy=100.0 * float(counts.tp.sum()) / len(samples),
        scores=precision_recall_fm(counts),
        availability=100.0 * len(high) / len(samples),
        all=_subset(samples),
        high_confidence=_subset(high),
        samples=list(samples),
    )


def report(entries, predictions, labels: Sequence[PoseLabel], label_set: str | None = None) -> MetricsReport:
    """Score predictions against manifest entries.

    ``entries`` are manifest entries (the test split), ``predictions`` the
    matching :class:`~poseforge.classifier.PredictionResult` list and
    ``labels`` the label set the classifier outputs.
    """
    entries = list(entries)
    predictions = list(predictions)
    if not entries:
        raise ValueError("cannot report on an empty test split")
    if len(entries) != len(predictions):
        raise ValueError("one prediction per entry is required")
    samples = []
    for e, p in zip(entries, predictions):
        truth = e.labels[label_set] if label_set else next(iter(e.labels.values()))
        err = pose_errors(label_to_pose_estimate(labels[p.top_label]), e.pose)
        samples.append(
            {
                "image": e.image,
                "true_label": int(truth),
                "pred_label": int(p.top_label),
                "confidence_ratio": float(p.confidence_ratio),
                "E_R": err.E_R,
                "E_R_folded": err.E_R_folded,
                "E_T": err.E_T,
            }
        )
    return report_from_samples(samples, len(labels))


def read_samples_csv(path) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "image": row["image"],
                    "true_label": int(row["true_label"]),
                    "pred_label": int(row["pred_label"]),
                    "confidence_ratio": float(row["confidence_ratio"]),
                    "E_R": float(row["E_R"]),
                    "E_R_folded": float(row["E_R_folded"]),
                    "E_T": float(row["E_T"]),
                }
            )
    return out


def compare_table(reports: dict[str, MetricsReport], high_confidence_too: bool = True) -> str:
    """Side-by-side table, one column per run (and its high-confidence subset)."""
    header = ["Metric"]
    columns = []
    for name, rep in reports.items():
        header.append(name)
        columns.append((rep, "all"))
        if high_confidence_too:
            header.append(f"{name} (high conf.)")
            columns.append((rep, "high"))
    names = [r[0] for r in next(iter(reports.values())).rows()]
    rows = []
    for i, metric in enumerate(names):
        row = [metric]
        for rep, which in columns:
            _, a, h = rep.rows()[i]
            row.append(_fmt(a if which == "all" else h, 3))
        rows.append(row)
    return format_table(header, rows)
