"""Confusion matrices and localization error statistics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import GtClass, InvalidParameterError, PointCloud, Pose, SemanticLabel, rotation_angle

GT_ROWS = [c.name.lower().replace("_", "-") for c in GtClass]
LABEL_COLS = [lab.name for lab in SemanticLabel]


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (7, 5): groundtruth class x semantic label

    @property
    def rates(self) -> np.ndarray:
        """Row-normalized counts; empty rows stay zero."""
        totals = self.counts.sum(axis=1, keepdims=True)
        return np.divide(self.counts, totals, out=np.zeros(self.counts.shape), where=totals > 0)

    def recall(self, gt: GtClass, label: SemanticLabel) -> float:
        row = self.counts[int(gt)]
        return float(row[int(label)] / row.sum()) if row.sum() else float("nan")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_dict(self) -> dict:
        return {
            "rows": GT_ROWS,
            "cols": LABEL_COLS,
            "counts": self.counts.tolist(),
            "rates": [[round(float(v), 12) for v in row] for row in self.rates],
        }


def confusion(labeled: Sequence[PointCloud], groundtruth: Sequence[PointCloud]) -> ConfusionMatrix:
    """Count (groundtruth class, label) pairs over matching frames."""
    if len(labeled) != len(groundtruth):
        raise InvalidParameterError(f"{len(labeled)} labeled frames vs {len(groundtruth)} groundtruth frames")
    counts = np.zeros((len(GtClass), len(SemanticLabel)), dtype=np.int64)
    for k, (lab, gt) in enumerate(zip(labeled, groundtruth)):
        if lab.labels is None or gt.gt_class is None:
            raise InvalidParameterError(f"frame {k} lacks labels or groundtruth classes")
        if len(lab) != len(gt):
            raise InvalidParameterError(f"frame {k}: {len(lab)} labeled vs {len(gt)} groundtruth points")
        flat = gt.gt_class.astype(np.int64) * len(SemanticLabel) + lab.labels
        counts += np.bincount(flat, minlength=counts.size).reshape(counts.shape)
    return ConfusionMatrix(counts)


@dataclass
class LocalizationReport:
    translation: np.ndarray
    rotation: np.ndarray

    def stats(self, values: np.ndarray) -> dict:
        if len(values) == 0:
            return {k: float("nan") for k in ("median", "mean", "max", "q1", "q3")}
        q1, med, q3 = np.percentile(values, [25, 50, 75])
        return {
            "median": float(med),
            "mean": float(values.mean()),
            "max": float(values.max()),
            "q1": float(q1),
            "q3": float(q3),
        }

    @property
    def median_translation(self) -> float:
        return self.stats(self.translation)["median"]

    def to_dict(self) -> dict:
        return {
            "n_frames": int(len(self.translation)),
            "translation": self.stats(self.translation),
            "rotation": self.stats(self.rotation),
            "per_frame_translation": [float(v) for v in self.translation],
            "per_frame_rotation": [float(v) for v in self.rotation],
        }


def localization_error(estimated: Sequence[Pose | None], groundtruth: Sequence[Pose]) -> LocalizationReport:
    """Per-frame translation distance and geodesic rotation angle.

    Frames without an estimate are left out of the statistics.
    """
    if len(estimated) != len(groundtruth):
        raise InvalidParameterError(f"trajectory lengths differ: {len(estimated)} vs {len(groundtruth)}")
    tr, rot = [], []
    for est, gt in zip(estimated, groundtruth):
        if est is None:
            continue
        tr.append(np.linalg.norm(est.translation - gt.translation))
        rot.append(rotation_angle(gt.rotation.T @ est.rotation))
    return LocalizationReport(np.asarray(tr, dtype=np.float64), np.asarray(rot, dtype=np.float64))


def write_json(data: dict, path) -> None:
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def write_confusion_csv(cm: ConfusionMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["gt_class"] + LABEL_COLS)
        for name, row in zip(GT_ROWS, cm.rates):
            w.writerow([name] + [f"{v:.6f}" for v in row])


def write_boxplot_data(reports: dict[str, LocalizationReport], path) -> None:
    """Whitespace-separated per-frame errors, one column block per series (gnuplot-friendly)."""
    with open(path, "w") as f:
        for name, rep in reports.items():
            f.write(f"# {name}\n")
            for t, r in zip(rep.translation, rep.rotation):
                f.write(f"{t:.9f} {r:.9f}\n")
            f.write("\n\n")
