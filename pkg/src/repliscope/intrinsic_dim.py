"""Maximum-likelihood intrinsic dimensionality (Levina-Bickel).

For a point with sorted neighbour distances ``T_1 <= ... <= T_k``::

    m_k = [ 1/(k-1) * sum_{j<k} ln(T_k / T_j) ]^-1

and the dataset estimate is the plain average of ``m_k`` over every point
and every ``k`` in ``[k1, k2]``.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import knn
from .vecstore import VectorDataset

logger = logging.getLogger(__name__)


class DuplicatePolicy(str, enum.Enum):
    DEDUPLICATE_WARN = "deduplicate_warn"
    ERROR = "error"


class DuplicateRowsError(ValueError):
    def __init__(self, pairs):
        self.pairs = pairs
        shown = ", ".join(f"({i}, {j})" for i, j in pairs[:10])
        more = "" if len(pairs) <= 10 else f" and {len(pairs) - 10} more"
        super().__init__(f"dataset contains duplicate rows: {shown}{more}")


class DegenerateNeighborhoodError(ValueError):
    """Every neighbour sits at the same distance, so the log-sum is zero."""


@dataclass(frozen=True)
class IdConfig:
    k1: int = 10
    k2: int = 20
    duplicate_policy: DuplicatePolicy = DuplicatePolicy.DEDUPLICATE_WARN

    def __post_init__(self):
        if not 2 <= self.k1 <= self.k2:
            raise ValueError(f"need 2 <= k1 <= k2, got k1={self.k1}, k2={self.k2}")
        object.__setattr__(self, "duplicate_policy", DuplicatePolicy(self.duplicate_policy))


@dataclass
class IdEstimate:
    value: float
    config: IdConfig
    n_used: int
    per_point: Optional[np.ndarray] = None
    kept_indices: Optional[np.ndarray] = None
    warnings: list = field(default_factory=list)


def mk_hat(T, k: int) -> float:
    """Single-point MLE from the ``k`` smallest neighbour distances."""
    T = np.asarray(T, dtype=np.float64)
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(T) < k:
        raise ValueError(f"need {k} distances, got {len(T)}")
    T = T[:k]
    if np.any(T <= 0):
        raise DuplicateRowsError([])
    log_sum = np.sum(np.log(T[-1] / T[:-1]))
    if log_sum <= 0:
        raise DegenerateNeighborhoodError("all neighbour distances are equal")
    return float((k - 1) / log_sum)


def mk_hat_table(distances: np.ndarray, k1: int, k2: int) -> np.ndarray:
    """``m_k`` for every row of a sorted distance table, ``k = k1..k2``.

    Returns an ``(n, k2 - k1 + 1)`` array.
    """
    logs = np.log(distances[:, :k2])
    csum = np.cumsum(logs, axis=1)
    out = np.empty((distances.shape[0], k2 - k1 + 1))
    for col, k in enumerate(range(k1, k2 + 1)):
        # sum_{j<k} ln(T_k/T_j) = (k-1) ln T_k - sum_{j<k} ln T_j
        log_sum = (k - 1) * logs[:, k - 1] - csum[:, k - 2]
        with np.errstate(divide="ignore"):
            out[:, col] = (k - 1) / log_sum
    return out


def find_duplicates(values: np.ndarray):
    """Bitwise-equal rows as ``(first_index, duplicate_index)`` pairs."""
    seen = {}
    pairs = []
    keep = []
    for i, row in enumerate(values):
        key = row.tobytes()
        if key in seen:
            pairs.append((seen[key], i))
        else:
            seen[key] = i
            keep.append(i)
    return np.asarray(keep, dtype=np.int64), pairs


def estimate_id(ds: VectorDataset, cfg: IdConfig = IdConfig(), workers=None) -> IdEstimate:
    """Intrinsic dimensionality of ``ds`` from a self-excluded k-NN table."""
    warnings = []
    keep, pairs = find_duplicates(ds.values)
    if pairs:
        if cfg.duplicate_policy == DuplicatePolicy.ERROR:
            raise DuplicateRowsError(pairs)
        msg = f"removed {len(pairs)} duplicate rows before ID estimation"
        logger.warning(msg)
        warnings.append(msg)
        ds = ds.take(keep)
    if ds.count < cfg.k2 + 1:
        raise ValueError(
            f"ID estimation with k2={cfg.k2} needs at least {cfg.k2 + 1} distinct points, "
            f"got {ds.count}"
        )
    table = knn.knn_table(ds, cfg.k2, exclude_self=True, workers=workers)
    m = mk_hat_table(table.distances, cfg.k1, cfg.k2)
    bad = ~np.isfinite(m) | (m <= 0)
    if bad.any():
        raise DegenerateNeighborhoodError(
            f"{int(bad.any(axis=1).sum())} points have all neighbours at one distance"
        )
    value = float(m.sum() / (ds.count * (cfg.k2 - cfg.k1 + 1)))
    return IdEstimate(value, cfg, ds.count, m.mean(axis=1), keep, warnings)


def write_per_point_csv(est: IdEstimate, ds: VectorDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "m_hat_mean"])
        for i, v in zip(est.kept_indices.tolist(), est.per_point.tolist()):
            w.writerow([ds.row_id(i), f"{v:.6g}"])
