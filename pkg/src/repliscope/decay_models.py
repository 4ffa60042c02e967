"""Exponential models linking dataset complexity, size and replication.

* ``f1``: replication % as a function of intrinsic dimensionality,
  ``a ** (b * mu1 - c)``.
* ``g``: dataset size as a function of intrinsic dimensionality,
  ``s * exp(beta * mu1)``.
* ``f2 = f1(g^-1(size))`` and its inverse, which gives the dataset size
  expected to reach a given replication percentage.

``f1`` is over-parameterised. Only ``B = b ln a`` and ``C = -c ln a`` are
determined by data, since ``f1(mu1) = exp(B mu1 + C)``. Stand-alone fits
fix ``c`` (100 by default) and solve ``a`` and ``b`` from ``(B, C)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CANONICAL_C = 100.0
MAX_ITER = 200
REL_TOL = 1e-10


class DegenerateFitError(ValueError):
    pass


@dataclass(frozen=True)
class DecayFit:
    a: float
    b: float
    c: float
    r_squared: float = float("nan")
    n_points: int = 0

    def __post_init__(self):
        if not 0.0 < self.a < 1.0:
            raise ValueError(f"decay base a must lie in (0, 1), got {self.a}")

    @property
    def B(self) -> float:
        return self.b * math.log(self.a)

    @property
    def C(self) -> float:
        return -self.c * math.log(self.a)

    @classmethod
    def from_identifiable(cls, B: float, C: float, c: float = CANONICAL_C, **kw) -> "DecayFit":
        """Decompose ``exp(B mu1 + C)`` with the translation pinned to ``c``."""
        if c <= 0 or C <= 0:
            raise DegenerateFitError(
                f"intercept C={C:.6g} cannot be written as a**(-c) with a in (0, 1) and c={c}"
            )
        ln_a = -C / c
        return cls(math.exp(ln_a), B / ln_a, c, **kw)

    def to_dict(self) -> dict:
        return {"model": "f1", "a": self.a, "b": self.b, "c": self.c, "B": self.B,
                "C": self.C, "r_squared": self.r_squared, "n_points": self.n_points}


@dataclass(frozen=True)
class GrowthFit:
    s: float
    beta: float
    r_squared: float = float("nan")
    n_points: int = 0

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"scale s must be positive, got {self.s}")

    def __call__(self, mu1):
        return self.s * np.exp(self.beta * np.asarray(mu1, dtype=np.float64))

    def inverse(self, size):
        return np.log(np.asarray(size, dtype=np.float64) / self.s) / self.beta

    def to_dict(self) -> dict:
        return {"model": "g", "s": self.s, "beta": self.beta,
                "r_squared": self.r_squared, "n_points": self.n_points}


@dataclass(frozen=True)
class CompositeModel:
    decay: DecayFit
    growth: GrowthFit
    r_squared: float = float("nan")

    def to_dict(self) -> dict:
        d = self.decay
        return {"model": "f2", "a": d.a, "b": d.b, "c": d.c, "B": d.B, "C": d.C,
                "s": self.growth.s, "beta": self.growth.beta,
                "r_squared": self.r_squared, "n_points": d.n_points}


def eval_f1(fit: DecayFit, mu1):
    """Replication percentage predicted from intrinsic dimensionality."""
    out = np.exp(math.log(fit.a) * (fit.b * np.asarray(mu1, dtype=np.float64) - fit.c))
    return float(out) if out.ndim == 0 else out


def eval_f2(model: CompositeModel, size):
    """Replication percentage predicted from dataset size."""
    size = np.asarray(size, dtype=np.float64)
    if np.any(size <= 0):
        raise ValueError("dataset size must be positive")
    if model.growth.beta == 0:
        raise ValueError("growth rate beta is zero; g is not invertible")
    d, g = model.decay, model.growth
    out = np.exp(math.log(d.a) * ((d.b / g.beta) * np.log(size / g.s) - d.c))
    return float(out) if out.ndim == 0 else out


def invert_f2(model: CompositeModel, percent):
    """Dataset size at which the model predicts ``percent`` replication."""
    percent = np.asarray(percent, dtype=np.float64)
    if np.any(percent <= 0):
        raise ValueError("replication percentage must be positive (log of a non-positive value)")
    d, g = model.decay, model.growth
    if d.b == 0 or g.beta == 0:
        raise ValueError("b and beta must be non-zero")
    log_a_p = np.log(percent) / math.log(d.a)
    out = g.s * np.exp((g.beta / d.b) * (log_a_p + d.c))
    return float(out) if out.ndim == 0 else out


def r_squared(observed, predicted) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``; negative when worse than the mean."""
    y = np.asarray(observed, dtype=np.float64)
    yhat = np.asarray(predicted, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1 or len(y) < 2:
        raise ValueError("observed and predicted must be 1-D with equal length >= 2")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("observed values are all equal; R^2 is undefined")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def _loglinear_ols(x: np.ndarray, y: np.ndarray):
    """Slope and intercept of ``ln y = slope * x + intercept``."""
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return float(slope), float(intercept)


def _refine_exponential(x, y, B, C):
    """Gauss-Newton on ``sum (exp(B x + C) - y)^2`` with step halving."""
    theta = np.array([B, C])

    def ssr(t):
        return float(np.sum((np.exp(t[0] * x + t[1]) - y) ** 2))

    current = ssr(theta)
    for _ in range(MAX_ITER):
        pred = np.exp(theta[0] * x + theta[1])
        J = np.column_stack([x * pred, pred])
        step, *_ = np.linalg.lstsq(J, y - pred, rcond=None)
        t = 1.0
        while t > 1e-12:
            cand = theta + t * step
            value = ssr(cand)
            if value < current:
                break
            t *= 0.5
        else:
            break
        change = np.max(np.abs(cand - theta) / np.maximum(np.abs(theta), 1e-300))
        theta, current = cand, value
        if change < REL_TOL:
            break
    return float(theta[0]), float(theta[1])


def fit_identifiable(mu1, percent):
    """Least-squares ``(B, C)`` for ``percent ~ exp(B mu1 + C)``."""
    x = np.asarray(mu1, dtype=np.float64)
    y = np.asarray(percent, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("mu1 and percent must be 1-D with equal length")
    if np.any(y < 0):
        raise ValueError("replication percentages must be >= 0")
    if len(np.unique(x)) < 2:
        raise ValueError("need at least 2 points with distinct mu1")
    pos = y > 0
    if len(np.unique(x[pos])) < 2:
        raise DegenerateFitError("need at least 2 positive percentages at distinct mu1")
    if np.all(y == y[0]):
        raise DegenerateFitError("all percentages are equal; slope is zero")
    B, C = _loglinear_ols(x[pos], y[pos])
    return _refine_exponential(x, y, B, C)


def fit_f1(points, c: float = CANONICAL_C) -> DecayFit:
    """Fit ``a ** (b mu1 - c)`` to ``(mu1, percent)`` pairs.

    The log-linear regression over positive percentages seeds an
    original-space least-squares refinement. R^2 is reported in percentage
    space.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise ValueError("need at least 2 points with distinct mu1")
    B, C = fit_identifiable(pts[:, 0], pts[:, 1])
    pred = np.exp(B * pts[:, 0] + C)
    return DecayFit.from_identifiable(
        B, C, c, r_squared=r_squared(pts[:, 1], pred), n_points=len(pts)
    )


def fit_g(points) -> GrowthFit:
    """OLS of ``ln size`` on ``mu1``; R^2 is computed in log space."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2 or len(np.unique(pts[:, 0])) < 2:
        raise ValueError("need at least 2 points with distinct mu1")
    if np.any(pts[:, 1] <= 0):
        raise ValueError("dataset sizes must be positive")
    beta, ln_s = _loglinear_ols(pts[:, 0], pts[:, 1])
    log_size = np.log(pts[:, 1])
    pred = beta * pts[:, 0] + ln_s
    if np.all(log_size == log_size[0]):
        r2 = float("nan")
    elif len(pts) == 2:
        r2 = 1.0
    else:
        r2 = r_squared(log_size, pred)
    return GrowthFit(math.exp(ln_s), beta, r2, len(pts))


def compose(decay: DecayFit, growth: GrowthFit, sizes=None, percent=None) -> CompositeModel:
    """Build ``f2``; with observations given, also record its R^2 in percentage space."""
    model = CompositeModel(decay, growth)
    if sizes is not None and percent is not None:
        pred = eval_f2(model, np.asarray(sizes, dtype=np.float64))
        model = CompositeModel(decay, growth, r_squared(percent, pred))
    return model
