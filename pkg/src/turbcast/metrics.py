"""Classification metrics over labeled cells and report rendering.

Cells labeled -1 are skipped everywhere. The headline numbers pool all
evaluated cells; a per-horizon-step breakdown is attached when the inputs
carry a step axis. Weighted metrics weight per-class scores by true-class
support, so weighted recall equals accuracy whenever every labeled cell
gets a prediction; that identity is asserted on every report.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateInputError, ShapeError, ValidationError
from .grids import CLASS_NAMES, NUM_CLASSES, UNKNOWN


def confusion_matrix(predictions: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """4x4 counts over labeled cells; rows are true classes, columns predicted."""
    if predictions.shape != labels.shape:
        raise ShapeError(f"predictions {predictions.shape} vs labels {labels.shape}")
    mask = labels != UNKNOWN
    true = labels[mask].astype(np.int64)
    pred = predictions[mask].astype(np.int64)
    if pred.size and (pred.min() < 0 or pred.max() >= NUM_CLASSES):
        raise ValidationError(f"predicted classes outside 0..{NUM_CLASSES - 1}")
    if true.size and true.max() >= NUM_CLASSES:
        raise ValidationError(f"labels outside -1..{NUM_CLASSES - 1}")
    flat = np.bincount(true * NUM_CLASSES + pred, minlength=NUM_CLASSES * NUM_CLASSES)
    return flat.reshape(NUM_CLASSES, NUM_CLASSES)


def _safe_div(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, bool]:
    hit_zero = bool((den == 0).any())
    out = np.divide(num, den, out=np.zeros_like(num, dtype=np.float64), where=den != 0)
    return out, hit_zero


def _scores(confusion: np.ndarray) -> dict:
    support = confusion.sum(axis=1)
    total = int(support.sum())
    if total == 0:
        raise DegenerateInputError("no labeled cells to evaluate")
    correct = np.diag(confusion).astype(np.float64)
    precision, div_p = _safe_div(correct, confusion.sum(axis=0).astype(np.float64))
    recall, div_r = _safe_div(correct, support.astype(np.float64))
    f1, div_f = _safe_div(2.0 * precision * recall, precision + recall)
    weights = support / total
    accuracy = float(correct.sum() / total)
    weighted_recall = float((weights * recall).sum())
    assert abs(weighted_recall - accuracy) < 1e-9, "support-weighted recall must equal accuracy"
    return {
        "support": support.astype(int),
        "accuracy": accuracy,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "weighted_precision": float((weights * precision).sum()),
        "weighted_recall": weighted_recall,
        "weighted_f1": float((weights * f1).sum()),
        "zero_division": div_p or div_r or div_f,
    }


@dataclass
class EvalReport:
    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    weighted_precision: float
    weighted_recall: float
    weighted_f1: float
    support: np.ndarray
    zero_division: bool
    per_horizon: list[dict] = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "per_class": {
                name: {
                    "precision": float(self.precision[i]),
                    "recall": float(self.recall[i]),
                    "f1": float(self.f1[i]),
                    "support": int(self.support[i]),
                }
                for i, name in enumerate(CLASS_NAMES)
            },
            "weighted_precision": self.weighted_precision,
            "weighted_recall": self.weighted_recall,
            "weighted_f1": self.weighted_f1,
            "zero_division": self.zero_division,
            "per_horizon": self.per_horizon,
            "config_echo": self.config_echo,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_text(self) -> str:
        lines = [
            f"labeled cells: {int(self.support.sum())}",
            f"accuracy           {self.accuracy:8.4f}",
            f"weighted precision {self.weighted_precision:8.4f}",
            f"weighted recall    {self.weighted_recall:8.4f}",
            f"weighted f1        {self.weighted_f1:8.4f}",
            "",
            f"{'class':<10} {'prec':>8} {'recall':>8} {'f1':>8} {'support':>8}",
        ]
        for i, name in enumerate(CLASS_NAMES):
            lines.append(
                f"{name:<10} {self.precision[i]:8.4f} {self.recall[i]:8.4f} "
                f"{self.f1[i]:8.4f} {int(self.support[i]):8d}"
            )
        lines.append("")
        lines.append("confusion (rows true, cols predicted):")
        header = " " * 10 + "".join(f"{name[:8]:>9}" for name in CLASS_NAMES)
        lines.append(header)
        for i, name in enumerate(CLASS_NAMES):
            row = "".join(f"{int(v):9d}" for v in self.confusion[i])
            lines.append(f"{name:<10}{row}")
        if self.zero_division:
            lines.append("")
            lines.append("note: at least one precision/recall denominator was 0 (score set to 0)")
        return "\n".join(lines) + "\n"


def report_from_confusion(confusion: np.ndarray, config_echo: dict | None = None) -> EvalReport:
    s = _scores(confusion)
    return EvalReport(
        confusion=confusion,
        accuracy=s["accuracy"],
        precision=s["precision"],
        recall=s["recall"],
        f1=s["f1"],
        weighted_precision=s["weighted_precision"],
        weighted_recall=s["weighted_recall"],
        weighted_f1=s["weighted_f1"],
        support=s["support"],
        zero_division=s["zero_division"],
        config_echo=config_echo or {},
    )


def evaluate(predictions: np.ndarray, labels: np.ndarray,
             horizon_axis: int | None = None, config_echo: dict | None = None) -> EvalReport:
    """Pooled metrics over labeled cells, with optional per-step breakdown.

    ``horizon_axis`` names the forecast-step axis of both arrays; each step's
    own headline metrics are then attached under ``per_horizon`` (steps with
    no labeled cell are recorded with null metrics).
    """
    report = report_from_confusion(confusion_matrix(predictions, labels), config_echo)
    if horizon_axis is not None:
        steps = predictions.shape[horizon_axis]
        for j in range(steps):
            pred_j = np.take(predictions, j, axis=horizon_axis)
            lab_j = np.take(labels, j, axis=horizon_axis)
            try:
                sub = report_from_confusion(confusion_matrix(pred_j, lab_j))
                report.per_horizon.append(
                    {
                        "step": j + 1,
                        "accuracy": sub.accuracy,
                        "weighted_precision": sub.weighted_precision,
                        "weighted_recall": sub.weighted_recall,
                        "weighted_f1": sub.weighted_f1,
                        "labeled_cells": int(sub.support.sum()),
                    }
                )
            except DegenerateInputError:
                report.per_horizon.append(
                    {
                        "step": j + 1,
                        "accuracy": None,
                        "weighted_precision": None,
                        "weighted_recall": None,
                        "weighted_f1": None,
                        "labeled_cells": 0,
                    }
                )
    return report


def plot_horizon_metrics(report: EvalReport, path: str | Path) -> None:
    """Line plot of the headline metrics against forecast step."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [h["step"] for h in report.per_horizon if h["accuracy"] is not None]
    if not steps:
        return
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1"):
        ax.plot(steps, [h[key] for h in report.per_horizon if h["accuracy"] is not None],
                marker="o", label=key)
    ax.set_xlabel("forecast step (hours ahead)")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_training_curves(log_records: list[dict], path: str | Path) -> None:
    """Loss and validation metrics against epoch from the JSON-lines log."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    if not log_records:
        return
    epochs = [r["epoch"] for r in log_records]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    axes[0].plot(epochs, [r["L"] for r in log_records], label="total")
    axes[0].plot(epochs, [r["L_s"] for r in log_records], label="supervised")
    axes[0].plot(epochs, [r["L_u"] for r in log_records], label="unsupervised")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("loss")
    axes[0].legend(fontsize=8)
    axes[1].plot(epochs, [r["val_accuracy"] for r in log_records], label="val accuracy")
    axes[1].plot(epochs, [r["val_weighted_f1"] for r in log_records], label="val weighted f1")
    axes[1].set_xlabel("epoch")
    axes[1].set_ylim(0, 1.05)
    axes[1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
