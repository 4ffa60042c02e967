"""Replication percentage of generated samples against a training set.

A generated sample replicates at threshold ``alpha`` when its nearest
training sample is within Euclidean distance ``alpha`` (inclusive).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import knn
from .intrinsic_dim import IdConfig, estimate_id
from .vecstore import SpaceTag, VectorDataset, downscale, infer_image_shape

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 8000.0
DEFAULT_N_GENERATED = 1024
# the default threshold is calibrated for raw 0..255 pixels at 128x128x3
DEFAULT_ALPHA_DIM = 128 * 128 * 3


@dataclass(frozen=True)
class SampleMatch:
    generated_id: str
    min_distance: float
    nearest_training_id: str


@dataclass
class ReplicationReport:
    alpha: float
    n_generated: int
    percentage: float
    per_sample: list

    def summary(self) -> dict:
        return {"alpha": self.alpha, "n_generated": self.n_generated,
                "percentage": self.percentage}


@dataclass
class AlphaSweep:
    points: list  # (alpha, percentage) pairs

    @property
    def alphas(self):
        return [a for a, _ in self.points]

    @property
    def percentages(self):
        return [p for _, p in self.points]


@dataclass(frozen=True)
class ReplicationPoint:
    mu1: float
    mu2: int
    percentage: float


def default_alpha_allowed(ds: VectorDataset) -> bool:
    return ds.space_tag == SpaceTag.PIXEL_RAW_0_255 and ds.dim == DEFAULT_ALPHA_DIM


def percentage_within(distances: np.ndarray, alpha: float) -> float:
    return 100.0 * int(np.count_nonzero(distances <= alpha)) / len(distances)


def _nearest(generated: VectorDataset, training: VectorDataset, workers):
    return knn.min_distances(generated, training, workers=workers)


def report_from_distances(result: knn.MinDistanceResult, generated: VectorDataset,
                          training: VectorDataset, alpha: float) -> ReplicationReport:
    per_sample = [
        SampleMatch(generated.row_id(i), d, training.row_id(j))
        for i, (d, j) in enumerate(zip(result.distances.tolist(), result.indices.tolist()))
    ]
    return ReplicationReport(float(alpha), generated.count,
                             percentage_within(result.distances, alpha), per_sample)


def replication_percentage(generated: VectorDataset, training: VectorDataset,
                           alpha: float = DEFAULT_ALPHA, workers=None) -> ReplicationReport:
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return report_from_distances(_nearest(generated, training, workers), generated, training, alpha)


def check_alphas(alphas: Sequence[float]):
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ValueError("alpha sweep is empty")
    if any(a < 0 for a in alphas):
        raise ValueError("alphas must be >= 0")
    if any(b <= a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("alphas must be strictly ascending")
    return alphas


def sweep_from_distances(distances: np.ndarray, alphas: Sequence[float]) -> AlphaSweep:
    alphas = check_alphas(alphas)
    return AlphaSweep([(a, percentage_within(distances, a)) for a in alphas])


def alpha_sweep(generated: VectorDataset, training: VectorDataset, alphas, workers=None) -> AlphaSweep:
    """Replication percentage at several thresholds from one distance pass."""
    alphas = check_alphas(alphas)
    return sweep_from_distances(_nearest(generated, training, workers).distances, alphas)


def id_view(ds: VectorDataset, id_resolution: Optional[int]) -> VectorDataset:
    """The dataset as seen by ID estimation: pixel images downscaled to ``id_resolution``."""
    if id_resolution is None or ds.space_tag == SpaceTag.EXTERNAL_EMBEDDING:
        return ds
    side, _ = infer_image_shape(ds.dim)
    if side <= id_resolution:
        return ds
    return downscale(ds, id_resolution)


def sample_replication_points(experiment, alpha: Optional[float] = None,
                              id_config: IdConfig = IdConfig(),
                              id_resolution: Optional[int] = 32,
                              workers=None, warnings: Optional[list] = None):
    """One ``ReplicationPoint`` per subset level.

    Parameters
    ----------
    experiment : iterable of (training, generated, alpha)
        ``alpha`` may be None to use the ``alpha`` argument.
    """
    points = []
    for training, generated, level_alpha in experiment:
        a = level_alpha if level_alpha is not None else alpha
        if a is None:
            raise ValueError("no replication threshold given")
        if generated.count < DEFAULT_N_GENERATED:
            msg = f"only {generated.count} generated samples (expected {DEFAULT_N_GENERATED})"
            logger.info(msg)
            if warnings is not None:
                warnings.append(msg)
        est = estimate_id(id_view(training, id_resolution), id_config, workers=workers)
        if warnings is not None:
            warnings.extend(est.warnings)
        rep = replication_percentage(generated, training, a, workers=workers)
        points.append(ReplicationPoint(est.value, training.count, rep.percentage))
    return points


def write_report_csv(report: ReplicationReport, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["generated_id", "nearest_training_id", "min_distance", "is_replication"])
        for m in report.per_sample:
            w.writerow([m.generated_id, m.nearest_training_id, f"{m.min_distance:.6g}",
                        int(m.min_distance <= report.alpha)])


def write_summary_json(report: ReplicationReport, path):
    with open(path, "w") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")


def write_sweep_csv(sweep: AlphaSweep, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "percentage"])
        for a, p in sweep.points:
            w.writerow([f"{a:.6g}", f"{p:.6g}"])


def write_montage_manifest(report: ReplicationReport, path, only_replications: bool = True):
    """Pairs of (generated, nearest training) ids for external image-grid tools."""
    pairs = [
        {"generated": m.generated_id, "training": m.nearest_training_id,
         "distance": m.min_distance}
        for m in report.per_sample
        if not only_replications or m.min_distance <= report.alpha
    ]
    with open(path, "w") as fh:
        json.dump({"alpha": report.alpha, "pairs": pairs}, fh, indent=2)
        fh.write("\n")
