"""Survival curves from a hazard classifier trained on stacked data.

A hazard classifier is anything mapping a ``(m, d+1)`` array whose last
column is time to ``m`` values in ``[0, 1]``: a model exposing
``predict_proba`` or a plain vectorized callable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np
import pandas as pd

from .core import StepFunction, SurvivalCurve, SurvivalDataset


class HazardClassifier(Protocol):
    def predict_proba(self, Z: np.ndarray) -> np.ndarray: ...


def as_hazard(f) -> Callable[[np.ndarray], np.ndarray]:
    if hasattr(f, "predict_proba"):
        return f.predict_proba
    if callable(f):
        return f
    raise TypeError(f"{f!r} is neither callable nor exposes predict_proba")


@dataclass(frozen=True)
class PredictionConfig:
    n_mc: int = 64
    seed: int | None = 0
    grid: tuple = ()
    stratified: bool = True

    def __post_init__(self):
        if self.n_mc < 1:
            raise ValueError("n_mc must be >= 1")
        g = np.asarray(self.grid, dtype=float)
        if g.size and (g[0] <= 0 or np.any(np.diff(g) <= 0)):
            raise ValueError("grid must be strictly increasing and positive")


def _draws(lo, hi, n, rng, stratified):
    """``n`` times in ``(lo, hi]``; one per equal sub-interval when stratified."""
    u = 1.0 - rng.random(n)  # (0, 1]
    if stratified:
        u = (np.arange(n) + u) / n
    return lo + (hi - lo) * u


def _augment(X, s):
    """Every row of X paired with every time in s: shape (len(X)*len(s), d+1)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p, m = X.shape[0], s.size
    return np.column_stack([np.repeat(X, m, axis=0), np.tile(s, p)])


def predict_cumulative_hazard(f, x, t: float, config: PredictionConfig = PredictionConfig()) -> float:
    """Monte Carlo estimate ``(t/n) * sum_i f(x || t_i)`` with ``t_i`` in ``(0, t]``."""
    if not t > 0:
        raise ValueError(f"prediction time must be > 0, got {t}")
    rng = np.random.default_rng(config.seed)
    s = _draws(0.0, float(t), config.n_mc, rng, config.stratified)
    vals = as_hazard(f)(_augment(x, s))
    return max(float(t) * float(np.mean(vals)), 0.0)


def predict_survival_mc(f, x, t: float, config: PredictionConfig = PredictionConfig()) -> float:
    if t == 0:
        return 1.0
    return float(np.exp(-predict_cumulative_hazard(f, x, t, config)))


def predict_survival_discrete(f, x, t: float, event_times) -> float:
    """Product estimator ``prod_{t_k <= t} (1 - f(x || t_k))`` over training event times."""
    ev = np.asarray(event_times, dtype=float)
    ev = ev[ev <= t]
    if ev.size == 0:
        return 1.0
    h = np.clip(as_hazard(f)(_augment(x, ev)), 0.0, 1.0)
    return float(np.prod(1.0 - h))


def cumulative_hazard_curves(f, X, config: PredictionConfig) -> np.ndarray:
    """Cumulative hazard for each row of ``X`` at each grid time.

    The grid cells ``(t_{k-1}, t_k]`` each get ``n_mc`` draws from one
    seeded stream and their contributions are accumulated, so the result is
    non-decreasing along the grid and exact for time-constant hazards.
    """
    grid = np.asarray(config.grid, dtype=float)
    if grid.size == 0:
        raise ValueError("PredictionConfig.grid is empty")
    rng = np.random.default_rng(config.seed)
    h = as_hazard(f)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = config.n_mc
    lo = np.concatenate([[0.0], grid[:-1]])
    s = np.concatenate([_draws(a, b, n, rng, config.stratified) for a, b in zip(lo, grid)])
    vals = np.asarray(h(_augment(X, s)), dtype=float).reshape(X.shape[0], grid.size, n)
    inc = np.maximum(vals.mean(axis=2), 0.0) * (grid - lo)
    return np.cumsum(inc, axis=1)


def survival_curves(f, X, config: PredictionConfig) -> np.ndarray:
    return np.exp(-cumulative_hazard_curves(f, X, config))


def survival_curve(f, x, config: PredictionConfig) -> SurvivalCurve:
    probs = survival_curves(f, np.atleast_2d(x), config)[0]
    return SurvivalCurve(np.asarray(config.grid, float), probs)


def discrete_survival_curves(f, X, grid, event_times) -> np.ndarray:
    """Vectorized product estimator on a grid, shape ``(len(X), len(grid))``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    grid = np.asarray(grid, dtype=float)
    ev = np.asarray(event_times, dtype=float)
    ev = ev[ev <= grid[-1]]
    if ev.size == 0:
        return np.ones((X.shape[0], grid.size))
    h = np.clip(as_hazard(f)(_augment(X, ev)), 0.0, 1.0).reshape(X.shape[0], ev.size)
    with np.errstate(divide="ignore"):
        logs = np.cumsum(np.log1p(-h), axis=1)
    k = np.searchsorted(ev, grid, side="right")
    logs = np.concatenate([np.zeros((X.shape[0], 1)), logs], axis=1)
    return np.exp(logs[:, k])


def discrete_tail_product(support, probs, t: float) -> float:
    """``prod_{t_i <= t} (1 - P(T=t_i) / P(T>=t_i))`` for a finite distribution."""
    support = np.asarray(support, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
        raise ValueError("probabilities must be non-negative and sum to 1")
    if np.any(np.diff(support) <= 0):
        raise ValueError("support must be sorted and distinct")
    at_risk = probs[::-1].cumsum()[::-1]
    out = 1.0
    for p, r, s in zip(probs, at_risk, support):
        if s > t:
            break
        if r <= 0:
            return 0.0
        out *= 1.0 - min(p / r, 1.0)
    return out


def event_intensity(dataset: SurvivalDataset, n_bins: int | None = None) -> StepFunction:
    """Piecewise-constant estimate of the cohort's event rate per unit time.

    Bins hold equal numbers of event times; the last rate is carried forward.
    """
    ev = np.sort(dataset.time[dataset.event])
    K = ev.size
    if K == 0:
        raise ValueError("no events to estimate an intensity from")
    if n_bins is None:
        n_bins = int(np.clip(K // 40, 1, 32))
    edges = np.quantile(ev, np.linspace(0, 1, n_bins + 1))
    edges[0] = 0.0
    edges = np.unique(edges)
    if edges.size < 2:
        edges = np.array([0.0, max(ev[-1], 1e-12)])
    counts = np.histogram(ev, bins=edges)[0]
    rate = counts / np.diff(edges)
    return StepFunction(edges[:-1], rate, value_before_first_knot=rate[0])


@dataclass(frozen=True)
class CalibratedHazard:
    """Hazard rate recovered from a classifier fit on subsampled stacked data.

    A classifier trained on stacked rows estimates, at each risk-set time,
    the odds that a given at-risk record is the one failing, inflated by
    ``1/gamma``. Undoing the subsampling prior shift and multiplying by the
    cohort's event intensity gives a hazard per unit time.
    """

    classifier: object
    gamma: float
    intensity: StepFunction

    def __call__(self, Z):
        p = np.clip(as_hazard(self.classifier)(Z), 0.0, 1.0 - 1e-12)
        share = self.gamma * p / (1.0 - p + self.gamma * p)
        return share * self.intensity(np.asarray(Z)[:, -1])

    def discrete_hazard(self, Z):
        """Per-event-time hazard with the subsampling shift removed."""
        p = np.clip(as_hazard(self.classifier)(Z), 0.0, 1.0 - 1e-12)
        return self.gamma * p / (1.0 - p + self.gamma * p)


def calibrate(classifier, gamma: float, train: SurvivalDataset, n_bins=None) -> CalibratedHazard:
    return CalibratedHazard(classifier, gamma, event_intensity(train, n_bins))


def curves_to_frame(grid, probabilities, patient_ids=None) -> pd.DataFrame:
    probs = np.atleast_2d(probabilities)
    grid = np.asarray(grid, dtype=float)
    ids = np.arange(probs.shape[0]) if patient_ids is None else np.asarray(patient_ids)
    return pd.DataFrame({
        "patient_id": np.repeat(ids, grid.size),
        "time": np.tile(grid, probs.shape[0]),
        "survival_prob": probs.ravel(),
    })
