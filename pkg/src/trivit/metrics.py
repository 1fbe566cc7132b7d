"""Evaluation metrics for both tasks plus the attention-quality measures."""

from dataclasses import dataclass

import numpy as np


def mae(pred, labels):
    pred, labels = np.asarray(pred, dtype=np.float64), np.asarray(labels, dtype=np.float64)
    return float(np.abs(pred - labels).mean())


def r_squared(pred, labels):
    """1 - SS_res/SS_tot; constant labels give 1.0 for exact fits, else 0.0."""
    pred, labels = np.asarray(pred, dtype=np.float64), np.asarray(labels, dtype=np.float64)
    ss_res = float(((pred - labels) ** 2).sum())
    ss_tot = float(((labels - labels.mean()) ** 2).sum())
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def constant_baseline_mae(labels):
    """MAE of the constant mean predictor, straight from label statistics."""
    labels = np.asarray(labels, dtype=np.float64)
    return float(np.abs(labels - labels.mean()).mean())


def accuracy(pred_classes, true_classes):
    pred_classes, true_classes = np.asarray(pred_classes), np.asarray(true_classes)
    return float((pred_classes == true_classes).mean())


def detection_accuracy(pred_classes, true_classes):
    """Binary severity detection: healthy (class 0) vs any disease (1-3)."""
    pred_classes, true_classes = np.asarray(pred_classes), np.asarray(true_classes)
    return float(((pred_classes > 0) == (true_classes > 0)).mean())


def in_mask_fraction(spatial_attn, inside):
    """Mean share of spatial attention falling on in-union patches.

    spatial_attn: (..., K, T, S); inside: (..., K, S) coarse union bits.
    Averaged over every frame of every view (and any leading batch dims).
    """
    spatial_attn = np.asarray(spatial_attn, dtype=np.float64)
    inside = np.asarray(inside, dtype=np.float64)
    mass = (spatial_attn * inside[..., None, :]).sum(axis=-1)
    return float(mass.mean())


def edes_mass(temporal_attn, ed_index, es_index):
    """Mean attention mass on the ED and ES frames.

    temporal_attn: (..., K, T); ed/es indices shaped (..., K).
    """
    temporal_attn = np.asarray(temporal_attn, dtype=np.float64)
    ed = np.take_along_axis(temporal_attn, np.asarray(ed_index)[..., None], axis=-1)
    es = np.take_along_axis(temporal_attn, np.asarray(es_index)[..., None], axis=-1)
    return float((ed + es).mean())


@dataclass
class MetricsReport:
    task: str
    count: int
    mae: float | None = None
    r2: float | None = None
    baseline_mae: float | None = None
    accuracy: float | None = None
    detection: float | None = None
    in_mask_fraction: float | None = None
    edes_mass: float | None = None
    loss: float | None = None

    def to_dict(self):
        out = {"task": self.task, "count": self.count}
        for key in ("mae", "r2", "baseline_mae", "accuracy", "detection", "in_mask_fraction", "edes_mass", "loss"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        return out
