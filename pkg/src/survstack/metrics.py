"""Time-dependent AUC and Brier score with inverse-probability-of-censoring weights."""
from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import SurvivalDataset, censoring_kaplan_meier, kaplan_meier

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def default_grid(test: SurvivalDataset, n: int = 21, lo_q: float = 0.1, hi_q: float = 0.9):
    """Equally spaced times between percentiles of the observed test event times."""
    ev = test.time[test.event]
    if ev.size == 0:
        raise MetricError("test set has no events")
    lo, hi = np.quantile(ev, [lo_q, hi_q])
    return np.linspace(lo, hi, n)


def _censoring(train, test, use_test_censoring):
    return censoring_kaplan_meier(test if use_test_censoring else train)


def _pairwise_margin(case_scores, control_scores):
    """For each case: #controls strictly below minus #controls strictly above."""
    c = np.sort(control_scores)
    below = np.searchsorted(c, case_scores, side="left")
    above = c.size - np.searchsorted(c, case_scores, side="right")
    return (below - above).astype(float)


def cumulative_dynamic_auc(train: SurvivalDataset, test: SurvivalDataset, risk_scores, times,
                           use_test_censoring: bool = False, weighting: str = "event"):
    """IPCW cumulative/dynamic AUC.

    ``risk_scores`` is ``(n,)`` or ``(n, len(times))``; higher means riskier.
    Returns ``(auc_per_time, mean_auc)``; times without cases or controls give
    NaN and are left out of the mean. ``weighting="event"`` weights each time
    by the drop of the test-set Kaplan-Meier curve, ``"mean"`` averages.
    """
    times = np.atleast_1d(np.asarray(times, float))
    scores = np.asarray(risk_scores, float)
    if scores.ndim == 1:
        scores = np.repeat(scores[:, None], times.size, axis=1)
    if scores.shape != (len(test), times.size):
        raise MetricError(f"risk_scores shape {scores.shape} does not match "
                          f"({len(test)}, {times.size})")
    if not np.isfinite(scores).all():
        raise MetricError("risk scores must be finite")
    G = _censoring(train, test, use_test_censoring)
    T, E = test.time, test.event
    auc = np.full(times.size, np.nan)
    for k, t in enumerate(times):
        cases = (T <= t) & E
        controls = T > t
        if not cases.any() or not controls.any():
            warnings.warn(f"AUC at t={t:g} omitted: {cases.sum()} cases, {controls.sum()} controls")
            continue
        g = G.left_limit(T[cases])
        if np.any(g <= 0):
            raise MetricError(f"censoring survival is 0 before t={T[cases][g <= 0][0]:g}")
        w = 1.0 / g
        # (wins - losses) / #controls per case, so all-ties gives exactly 0.5
        margin = _pairwise_margin(scores[cases, k], scores[controls, k]) / controls.sum()
        auc[k] = float(0.5 + 0.5 * np.sum(w * margin) / np.sum(w))
    ok = np.isfinite(auc)
    if not ok.any():
        raise MetricError("no evaluation time has both cases and controls")
    if weighting == "mean" or ok.sum() == 1:
        return auc, float(auc[ok].mean())
    if weighting != "event":
        raise MetricError(f"unknown weighting {weighting!r}")
    s = np.atleast_1d(kaplan_meier(test)(times[ok]))
    drop = -np.diff(np.concatenate([[1.0], s]))
    if np.sum(drop) <= 0:
        return auc, float(auc[ok].mean())
    return auc, float(np.sum(auc[ok] * drop) / np.sum(drop))


def brier_score(train: SurvivalDataset, test: SurvivalDataset, predicted_survival, t: float,
                use_test_censoring: bool = False) -> float:
    """IPCW Brier score at ``t``; records censored before ``t`` contribute zero."""
    S = np.asarray(predicted_survival, float).ravel()
    if S.size != len(test):
        raise MetricError("one prediction per test record required")
    if np.any((S < 0) | (S > 1)):
        raise MetricError("predicted survival must lie in [0, 1]")
    G = _censoring(train, test, use_test_censoring)
    T, E = test.time, test.event
    cases = (T <= t) & E
    controls = T > t
    # one term per record, zero when censored before t
    terms = np.zeros(S.size)
    if cases.any():
        g = G.left_limit(T[cases])
        if np.any(g <= 0):
            raise MetricError(f"censoring weight is 0 at t={T[cases][g <= 0][0]:g}; "
                              "choose evaluation times before the censoring tail")
        terms[cases] = S[cases] ** 2 / g
    if controls.any():
        gt = G(t)
        if gt <= 0:
            raise MetricError(f"censoring weight is 0 at t={t:g}; "
                              "choose evaluation times before the censoring tail")
        terms[controls] = (1.0 - S[controls]) ** 2 / gt
    return float(np.sum(terms) / len(test))


def brier_scores(train, test, survival_matrix, times, use_test_censoring=False) -> np.ndarray:
    S = np.asarray(survival_matrix, float)
    return np.array([brier_score(train, test, S[:, k], t, use_test_censoring)
                     for k, t in enumerate(np.atleast_1d(times))])


def integrate_brier_values(times, values) -> float:
    """Trapezoidal mean of Brier values over ``[times[0], times[-1]]``."""
    times = np.asarray(times, float)
    values = np.asarray(values, float)
    if times.size < 2 or times[-1] <= times[0]:
        raise MetricError("integration range has zero length")
    return float(np.trapezoid(values, times) / (times[-1] - times[0]))


def integrated_brier(train, test, curves, grid=None, time_range=None,
                     use_test_censoring=False) -> float:
    """Integrated Brier score from per-record curves sharing one grid.

    ``curves`` is either a list of :class:`~survstack.core.SurvivalCurve` or a
    ``(n, len(grid))`` matrix. Only grid points inside ``time_range`` are used.
    """
    if grid is None:
        grid = curves[0].times
        S = np.vstack([c.probabilities for c in curves])
    else:
        S = np.asarray(curves, float)
    grid = np.asarray(grid, float)
    lo, hi = time_range if time_range is not None else (grid[0], grid[-1])
    if hi <= lo:
        raise MetricError("integration range has zero length")
    keep = (grid >= lo) & (grid <= hi)
    bs = brier_scores(train, test, S[:, keep], grid[keep], use_test_censoring)
    return integrate_brier_values(grid[keep], bs)


@dataclass
class EvaluationReport:
    times: list
    auc: list
    mean_auc: float
    brier: list
    integrated_brier: float
    censoring_weights: str = "train"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["auc"] = [None if not np.isfinite(a) else float(a) for a in self.auc]
        return d


def evaluate(train, test, survival_matrix, times, risk_scores=None,
             use_test_censoring=False) -> EvaluationReport:
    """AUC (risk = ``1 - S(t|x)`` unless scores are given) and Brier on one grid."""
    S = np.asarray(survival_matrix, float)
    times = np.asarray(times, float)
    scores = 1.0 - S if risk_scores is None else risk_scores
    auc, mean_auc = cumulative_dynamic_auc(train, test, scores, times, use_test_censoring)
    bs = brier_scores(train, test, S, times, use_test_censoring)
    return EvaluationReport([float(t) for t in times], [float(a) for a in auc], mean_auc,
                            [float(b) for b in bs], integrate_brier_values(times, bs),
                            "test" if use_test_censoring else "train")
