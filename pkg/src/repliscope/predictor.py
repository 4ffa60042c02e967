"""Few-shot prediction of replication curves and leave-one-combination-out CV.

The decay base ``a`` and translation ``c`` of ``f1`` are roughly shared
across GAN/dataset combinations. Averaging them over other combinations
leaves only ``b`` to estimate for a new one, which can be done from its
smallest subset level alone.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .decay_models import (CompositeModel, DecayFit, GrowthFit, eval_f1, eval_f2,
                           fit_f1, fit_g, invert_f2, r_squared)

logger = logging.getLogger(__name__)


class Mode(str, enum.Enum):
    ONE_SHOT = "one_shot"
    TWO_SHOT = "two_shot"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        return cls(str(value).replace("-", "_"))


@dataclass
class ComboRecord:
    name: str
    points: list
    decay: Optional[DecayFit] = None
    growth: Optional[GrowthFit] = None

    def __post_init__(self):
        if not self.points:
            raise ValueError(f"combo {self.name!r} has no points")
        self.points = sorted(self.points, key=lambda p: p.mu2)
        sizes = [p.mu2 for p in self.points]
        if any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError(f"combo {self.name!r}: subset sizes must be strictly increasing")

    @property
    def mu1(self):
        return np.array([p.mu1 for p in self.points], dtype=np.float64)

    @property
    def mu2(self):
        return np.array([p.mu2 for p in self.points], dtype=np.float64)

    @property
    def percent(self):
        return np.array([p.percentage for p in self.points], dtype=np.float64)

    def fitted(self) -> "ComboRecord":
        if self.decay is None:
            self.decay = fit_f1([(p.mu1, p.percentage) for p in self.points])
        if self.growth is None:
            self.growth = fit_g([(p.mu1, p.mu2) for p in self.points])
        return self


@dataclass
class PredictionReport:
    held_out: str
    mode: Mode
    predicted_fit: DecayFit
    r_squared: float
    mae_f1: float
    mae_f2: float
    mae_f2_inv: float
    points_used: int
    warnings: list = field(default_factory=list)


def median_abs_error(predicted, observed) -> float:
    """Median of ``|predicted - observed|``; even counts average the middle pair."""
    p = np.asarray(predicted, dtype=np.float64)
    o = np.asarray(observed, dtype=np.float64)
    if p.shape != o.shape:
        raise ValueError("predicted and observed differ in length")
    if p.size == 0:
        raise ValueError("median absolute error of an empty sequence")
    return float(np.median(np.abs(p - o)))


def pool_shared_params(fits: Sequence[DecayFit]):
    """Arithmetic means of ``a`` and ``c`` over the given fits."""
    if not fits:
        raise ValueError("cannot pool an empty list of fits")
    a = math.fsum(f.a for f in fits) / len(fits)
    c = math.fsum(f.c for f in fits) / len(fits)
    return a, c


def _log_target(a: float, c: float, percentage: float) -> float:
    if not 0.0 < a < 1.0:
        raise ValueError(f"a must lie in (0, 1), got {a}")
    if percentage <= 0:
        raise ValueError(
            f"replication percentage {percentage} is not positive; log_a is undefined"
        )
    return math.log(percentage) / math.log(a) + c


def one_shot_b(a: float, c: float, point) -> float:
    """The ``b`` for which ``a ** (b mu1 - c)`` passes through ``point = (mu1, pct)``."""
    mu1, pct = point
    if mu1 == 0:
        raise ValueError("mu1 must be non-zero")
    return _log_target(a, c, pct) / mu1


def two_shot_b(a: float, c: float, p1, p2) -> float:
    """Least-squares slope through the origin of ``(mu1, log_a(pct) + c)``."""
    if p1[0] == p2[0]:
        raise ValueError("two-shot estimation needs distinct mu1")
    x = np.array([p1[0], p2[0]], dtype=np.float64)
    y = np.array([_log_target(a, c, p1[1]), _log_target(a, c, p2[1])])
    return float(np.dot(x, y) / np.dot(x, x))


def _safe_r2(observed, predicted, warnings, label):
    try:
        return r_squared(observed, predicted)
    except ValueError as exc:
        warnings.append(f"{label}: {exc}")
        return float("nan")


def _predict_fold(held: ComboRecord, others: Sequence[ComboRecord], mode: Mode) -> PredictionReport:
    warnings = []
    if mode == Mode.FULL:
        fit = held.fitted().decay
        used = len(held.points)
    else:
        a_bar, c_bar = pool_shared_params([o.fitted().decay for o in others])
        pts = [(p.mu1, p.percentage) for p in held.points]
        if mode == Mode.ONE_SHOT:
            b = one_shot_b(a_bar, c_bar, pts[0])
            used = 1
        else:
            b = two_shot_b(a_bar, c_bar, pts[0], pts[1])
            used = 2
        fit = DecayFit(a_bar, b, c_bar, n_points=used)

    obs = held.percent
    pred_f1 = eval_f1(fit, held.mu1)
    r2 = _safe_r2(obs, pred_f1, warnings, held.name)
    fit = DecayFit(fit.a, fit.b, fit.c, r2, fit.n_points)

    growth = held.fitted().growth
    model = CompositeModel(fit, growth)
    mae_f2 = median_abs_error(eval_f2(model, held.mu2), obs)
    positive = obs > 0
    if positive.any():
        mae_inv = median_abs_error(invert_f2(model, obs[positive]), held.mu2[positive])
    else:
        mae_inv = float("nan")
        warnings.append(f"{held.name}: no positive replication levels for size prediction")
    if not positive.all():
        warnings.append(
            f"{held.name}: {int((~positive).sum())} zero-replication levels left out of MAE_f2_inv"
        )
    return PredictionReport(held.name, mode, fit, r2,
                            median_abs_error(pred_f1, obs), mae_f2, mae_inv, used, warnings)


def check_loocv_inputs(combos: Sequence[ComboRecord], mode: Mode):
    if len(combos) < 2:
        raise ValueError(f"LOOCV needs at least 2 combos, got {len(combos)}")
    names = [c.name for c in combos]
    if len(set(names)) != len(names):
        raise ValueError("combo names must be unique")
    for c in combos:
        if len(c.points) < 2:
            raise ValueError(
                f"combo {c.name!r} has {len(c.points)} level(s); every combo needs >= 2 "
                "so it can be fitted when others are held out"
            )
        if mode == Mode.ONE_SHOT and c.points[0].percentage <= 0:
            raise ValueError(f"combo {c.name!r}: smallest level has zero replication")
        if mode == Mode.TWO_SHOT and any(p.percentage <= 0 for p in c.points[:2]):
            raise ValueError(f"combo {c.name!r}: one of the two smallest levels has zero replication")


def loocv(combos: Sequence[ComboRecord], mode=Mode.ONE_SHOT) -> list:
    """Hold out each combo in turn and predict its curve from the rest.

    MAE values are medians of absolute errors over the held-out combo's
    levels: ``mae_f1`` and ``mae_f2`` in percentage points (from ID and from
    size), ``mae_f2_inv`` in samples (size predicted from replication).
    """
    mode = Mode.parse(mode)
    check_loocv_inputs(combos, mode)
    reports = []
    for i, held in enumerate(combos):
        others = [c for j, c in enumerate(combos) if j != i]
        rep = _predict_fold(held, others, mode)
        for w in rep.warnings:
            logger.warning(w)
        reports.append(rep)
    return reports


def _nanmedian(values):
    arr = np.asarray(values, dtype=np.float64)
    arr = arr[~np.isnan(arr)]
    return float(np.median(arr)) if arr.size else float("nan")


def write_loocv_csv(reports: Sequence[PredictionReport], path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["combo", "mode", "r_squared", "mae_f1_pct", "mae_f2_pct", "mae_f2inv_samples"])
        for r in reports:
            w.writerow([r.held_out, r.mode.value, f"{r.r_squared:.6g}", f"{r.mae_f1:.6g}",
                        f"{r.mae_f2:.6g}", f"{r.mae_f2_inv:.6g}"])
        if reports:
            w.writerow([
                "median", reports[0].mode.value,
                f"{_nanmedian([r.r_squared for r in reports]):.6g}",
                f"{_nanmedian([r.mae_f1 for r in reports]):.6g}",
                f"{_nanmedian([r.mae_f2 for r in reports]):.6g}",
                f"{_nanmedian([r.mae_f2_inv for r in reports]):.6g}",
            ])
