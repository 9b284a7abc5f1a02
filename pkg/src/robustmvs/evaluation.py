"""Point-cloud and depth-map evaluation metrics.

Distance metrics follow the DTU protocol (accuracy = reconstruction to
reference, completeness = reference to reconstruction, overall = their mean)
plus threshold precision/recall/f-score as used for percentage metrics.
Nearest neighbors come from an exact KD-tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class CloudMetrics:
    accuracy_mean: float
    accuracy_median: float
    completeness_mean: float
    completeness_median: float
    overall: float
    thresholds: tuple[float, ...]
    precision: tuple[float, ...]  # percent
    recall: tuple[float, ...]     # percent
    f_score: tuple[float, ...]    # percent

    def lines(self) -> list[str]:
        out = [
            f"accuracy_mean = {self.accuracy_mean:.9g}",
            f"accuracy_median = {self.accuracy_median:.9g}",
            f"completeness_mean = {self.completeness_mean:.9g}",
            f"completeness_median = {self.completeness_median:.9g}",
            f"overall = {self.overall:.9g}",
        ]
        for t, p, r, f in zip(self.thresholds, self.precision, self.recall, self.f_score):
            out += [
                f"precision_at_{t:g} = {p:.9g}",
                f"recall_at_{t:g} = {r:.9g}",
                f"f_score_at_{t:g} = {f:.9g}",
            ]
        return out


class DepthMetrics(NamedTuple):
    l1_error: float
    pct_within_1: float
    pct_within_3: float
    pct_within_3rel: float
    valid_pixels: int


def _as_points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=np.float64).reshape(-1, 3)


def cloud_distance_metrics(
    reconstruction,
    reference,
    thresholds: Sequence[float] = (1.0, 2.0, 3.0),
) -> CloudMetrics:
    """Bidirectional nearest-neighbor distance metrics between two clouds."""
    recon = _as_points(reconstruction)
    ref = _as_points(reference)
    if recon.shape[0] == 0:
        raise ValueError("reconstruction cloud is empty")
    if ref.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    d_acc, _ = cKDTree(ref).query(recon)
    d_comp, _ = cKDTree(recon).query(ref)
    acc_mean = float(d_acc.mean())
    comp_mean = float(d_comp.mean())
    precision = []
    recall = []
    f_score = []
    for t in thresholds:
        p = 100.0 * float(np.mean(d_acc < t))
        r = 100.0 * float(np.mean(d_comp < t))
        f = 2.0 * p * r / (p + r) if (p + r) > 0 else 0.0
        precision.append(p)
        recall.append(r)
        f_score.append(f)
    return CloudMetrics(
        accuracy_mean=acc_mean,
        accuracy_median=float(np.median(d_acc)),
        completeness_mean=comp_mean,
        completeness_median=float(np.median(d_comp)),
        overall=0.5 * (acc_mean + comp_mean),
        thresholds=tuple(float(t) for t in thresholds),
        precision=tuple(precision),
        recall=tuple(recall),
        f_score=tuple(f_score),
    )


def depth_validation_metrics(predicted: np.ndarray, truth: np.ndarray) -> DepthMetrics:
    """Depth errors over the pixels where the truth map is valid (> 0)."""
    pred = np.asarray(predicted, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: predicted {pred.shape} vs truth {gt.shape}")
    valid = gt > 0
    n = int(valid.sum())
    if n == 0:
        raise ValueError("truth depth map has no valid pixels")
    diff = np.abs(pred[valid] - gt[valid])
    return DepthMetrics(
        l1_error=float(diff.mean()),
        pct_within_1=100.0 * float(np.mean(diff <= 1.0)),
        pct_within_3=100.0 * float(np.mean(diff <= 3.0)),
        pct_within_3rel=100.0 * float(np.mean(diff / gt[valid] <= 0.03)),
        valid_pixels=n,
    )
