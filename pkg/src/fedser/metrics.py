"""Classification metrics, significance testing and the run-log CSV schema."""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

CONDITIONS = ("original", "randomised", "adversarial", "randomised_adversarial")
RUN_LOG_COLUMNS = ("round", "condition", "attack", "uar", "accuracy",
                   "mean_perturbation_norm", "attack_success_rate")


def confusion_matrix(y_true, y_pred, num_classes) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in length")
    for name, y in (("y_true", y_true), ("y_pred", y_pred)):
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise ValueError(f"{name} holds labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _check_cm(cm):
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.size == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got shape {cm.shape}")
    if np.any(cm < 0):
        raise ValueError("confusion matrix has negative counts")
    return cm


def uar(cm) -> float:
    """Unweighted average recall: the mean of per-class recalls."""
    cm = _check_cm(cm)
    support = cm.sum(axis=1)
    empty = np.flatnonzero(support == 0)
    if empty.size:
        raise ValueError(f"class {empty[0]} has no samples; recall undefined")
    return float(np.mean(np.diag(cm) / support))


def accuracy(cm) -> float:
    cm = _check_cm(cm)
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix is empty")
    return float(np.trace(cm) / total)


def normal_sf(z):
    """Upper tail of the standard normal."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def one_tailed_z_test(successes_a, n_a, successes_b, n_b):
    """Pooled two-proportion z-test of H1: p_b > p_a.

    Returns ``(z, p)``. With a degenerate pooled proportion (0 or 1) the
    variance vanishes and ``p`` is 1 if the proportions are equal, else 0.
    """
    if n_a <= 0 or n_b <= 0:
        raise ValueError("sample sizes must be positive")
    if not (0 <= successes_a <= n_a and 0 <= successes_b <= n_b):
        raise ValueError("successes must lie in [0, n]")
    pa, pb = successes_a / n_a, successes_b / n_b
    pooled = (successes_a + successes_b) / (n_a + n_b)
    var = pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b)
    if var == 0.0:
        return 0.0, (1.0 if pa == pb else 0.0)
    z = (pb - pa) / math.sqrt(var)
    return z, normal_sf(z)


@dataclass
class MetricsRecord:
    round: int
    condition: str
    attack: str
    uar: float
    accuracy: float
    confusion: np.ndarray
    mean_perturbation_norm: Optional[float] = None
    attack_success_rate: Optional[float] = None

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        for name in ("uar", "accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def row(self):
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        return [str(self.round), self.condition, self.attack, f"{self.uar:.6f}", f"{self.accuracy:.6f}",
                fmt(self.mean_perturbation_norm), fmt(self.attack_success_rate)]


def evaluate_predictions(round_, condition, attack, y_true, y_pred, num_classes, **extra) -> MetricsRecord:
    cm = confusion_matrix(y_true, y_pred, num_classes)
    return MetricsRecord(round_, condition, attack, uar(cm), accuracy(cm), cm, **extra)


def write_run_log(path, records, append=False):
    """Write (or append) run-log rows; the header is written for a new file."""
    new = not append
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RUN_LOG_COLUMNS)
        for r in records:
            w.writerow(r.row())


def read_run_log(path):
    """Parse a run-log CSV into a list of dicts, validating the schema."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RUN_LOG_COLUMNS:
            raise ValueError(f"{path}: expected columns {RUN_LOG_COLUMNS}, got {reader.fieldnames}")
        rows = []
        for lineno, raw in enumerate(reader, start=2):
            try:
                row = {"round": int(raw["round"]), "condition": raw["condition"], "attack": raw["attack"],
                       "uar": float(raw["uar"]), "accuracy": float(raw["accuracy"])}
                for k in ("mean_perturbation_norm", "attack_success_rate"):
                    row[k] = float(raw[k]) if raw[k] else None
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row ({exc})") from exc
            for k in ("uar", "accuracy"):
                if not 0.0 <= row[k] <= 1.0:
                    raise ValueError(f"{path}:{lineno}: {k}={row[k]} outside [0, 1]")
            if row["condition"] not in CONDITIONS:
                raise ValueError(f"{path}:{lineno}: unknown condition {row['condition']!r}")
            rows.append(row)
    return rows


def write_confusion(path, cm, class_names=None):
    cm = _check_cm(cm)
    names = class_names or [str(i) for i in range(len(cm))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["true\\pred"] + list(names))
        for name, row in zip(names, cm):
            w.writerow([name] + [int(v) for v in row])
