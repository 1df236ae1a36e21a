"""Survival data containers, risk sets and Kaplan-Meier estimators."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

TIME_COL = "time"
EVENT_COL = "event"


class DatasetError(ValueError):
    """Raised when survival data violates a structural invariant."""


@dataclass(frozen=True)
class SurvivalRecord:
    covariates: np.ndarray
    time: float
    event: bool


@dataclass(frozen=True, eq=False)
class SurvivalDataset:
    """Right-censored survival data ``(X, T, delta)``.

    ``X`` may still contain NaN before preprocessing; fitting routines call
    :meth:`require_finite` before touching it.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    feature_names: tuple[str, ...] = ()
    feature_kinds: tuple[str, ...] = ()

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(len(self.time), 0)
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).astype(bool).ravel()
        if X.ndim != 2 or X.shape[0] != time.shape[0] or event.shape[0] != time.shape[0]:
            raise DatasetError(
                f"ragged dataset: X {X.shape}, time {time.shape}, event {event.shape}"
            )
        bad = np.flatnonzero(~np.isfinite(time) | (time < 0))
        if bad.size:
            i = int(bad[0])
            raise DatasetError(f"row {i}: time must be finite and >= 0, got {time[i]!r}")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        kinds = tuple(self.feature_kinds) or ("continuous",) * X.shape[1]
        if len(names) != X.shape[1] or len(kinds) != X.shape[1]:
            raise DatasetError("feature_names/feature_kinds must match covariate dimension")
        X.setflags(write=False)
        time.setflags(write=False)
        event.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "feature_kinds", kinds)

    def __len__(self):
        return self.time.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    @property
    def n_censored(self) -> int:
        return len(self) - self.n_events

    @property
    def prevalence(self) -> float:
        return self.n_events / len(self) if len(self) else 0.0

    @property
    def has_missing(self) -> bool:
        return bool(np.isnan(self.X).any())

    def records(self) -> list[SurvivalRecord]:
        return [SurvivalRecord(self.X[i], float(self.time[i]), bool(self.event[i]))
                for i in range(len(self))]

    def subset(self, idx) -> "SurvivalDataset":
        idx = np.asarray(idx)
        return SurvivalDataset(self.X[idx], self.time[idx], self.event[idx],
                               self.feature_names, self.feature_kinds)

    def select_features(self, columns: Sequence[int]) -> "SurvivalDataset":
        cols = list(columns)
        return SurvivalDataset(self.X[:, cols], self.time, self.event,
                               tuple(self.feature_names[j] for j in cols),
                               tuple(self.feature_kinds[j] for j in cols))

    def event_times(self) -> np.ndarray:
        """Sorted distinct times at which at least one event occurred."""
        return np.unique(self.time[self.event])

    def require_events(self):
        if self.n_events == 0:
            raise DatasetError("degenerate dataset: no events")
        return self

    def require_finite(self):
        if not np.isfinite(self.X).all():
            rows = np.flatnonzero(~np.isfinite(self.X).all(axis=1))
            raise DatasetError(
                f"row {int(rows[0])}: covariates contain missing or non-finite values; "
                "preprocess the data first"
            )
        return self

    def summary(self) -> dict:
        return {"n": len(self), "events": self.n_events, "censored": self.n_censored,
                "prevalence": self.prevalence}

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(np.asarray(self.X), columns=list(self.feature_names))
        df[TIME_COL] = self.time
        df[EVENT_COL] = self.event.astype(int)
        return df


def read_table(path) -> pd.DataFrame:
    """Read comma-separated survival data; empty fields become NaN."""
    try:
        return pd.read_csv(path, keep_default_na=False, na_values=[""])
    except pd.errors.ParserError as exc:
        raise DatasetError(f"parse error in {path}: {exc}") from exc


def _as_frame(raw) -> pd.DataFrame:
    if isinstance(raw, pd.DataFrame):
        return raw
    if isinstance(raw, dict):
        return pd.DataFrame(raw)
    rows = list(raw)
    if not rows:
        raise DatasetError("empty table")
    header, body = list(rows[0]), rows[1:]
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DatasetError(f"parse error: row {i} has {len(row)} fields, expected {len(header)}")
    return pd.DataFrame(body, columns=header)


def validate_dataset(raw, require_events: bool = True) -> SurvivalDataset:
    """Build a :class:`SurvivalDataset` from a table with ``time``/``event`` columns.

    ``raw`` may be a DataFrame, a dict of columns, or a list of rows whose
    first entry is the header. All other columns must be numeric (NaN allowed);
    categorical columns go through :mod:`survstack.preprocess` first.
    """
    df = _as_frame(raw)
    for col in (TIME_COL, EVENT_COL):
        if col not in df.columns:
            raise DatasetError(f"missing required column {col!r}")
    time = pd.to_numeric(df[TIME_COL], errors="coerce").to_numpy(dtype=float)
    event_raw = pd.to_numeric(df[EVENT_COL], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(time) | (time < 0))
    if bad.size:
        i = int(bad[0])
        raise DatasetError(f"row {i}: time must be finite and >= 0, got {df[TIME_COL].iloc[i]!r}")
    bad = np.flatnonzero(~np.isin(event_raw, (0.0, 1.0)))
    if bad.size:
        i = int(bad[0])
        raise DatasetError(f"row {i}: event must be 0 or 1, got {df[EVENT_COL].iloc[i]!r}")
    features = [c for c in df.columns if c not in (TIME_COL, EVENT_COL)]
    cols = []
    for c in features:
        try:
            cols.append(pd.to_numeric(df[c]).to_numpy(dtype=float))
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"column {c!r} is not numeric; one-hot encode it first") from exc
    X = np.column_stack(cols) if cols else np.empty((len(df), 0))
    ds = SurvivalDataset(X, time, event_raw.astype(bool), tuple(map(str, features)))
    if require_events:
        ds.require_events()
    return ds


def risk_set(dataset: SurvivalDataset, t: float) -> np.ndarray:
    """Indices ``j`` with ``T_j >= t`` regardless of event status."""
    return np.flatnonzero(dataset.time >= t)


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous step function: ``values[k]`` on ``[knots[k], knots[k+1])``."""

    knots: np.ndarray
    values: np.ndarray
    value_before_first_knot: float = 1.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float).ravel()
        values = np.asarray(self.values, dtype=float).ravel()
        if knots.shape != values.shape:
            raise ValueError("knots and values must have equal length")
        if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] < 0):
            raise ValueError("knots must be strictly increasing and non-negative")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "value_before_first_knot", float(self.value_before_first_knot))

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.knots, t, side="right") - 1
        ext = np.concatenate([[self.value_before_first_knot], self.values])
        out = ext[k + 1]
        return out if out.ndim else float(out)

    def left_limit(self, t):
        """Value just before ``t``."""
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.knots, t, side="left") - 1
        ext = np.concatenate([[self.value_before_first_knot], self.values])
        out = ext[k + 1]
        return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class SurvivalCurve:
    times: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "probabilities", np.asarray(self.probabilities, dtype=float))


def _event_table(time: np.ndarray, event: np.ndarray):
    """Distinct event times with event counts and risk-set sizes."""
    ev_times, d = np.unique(time[event], return_counts=True)
    sorted_t = np.sort(time)
    n_at_risk = len(time) - np.searchsorted(sorted_t, ev_times, side="left")
    return ev_times, d, n_at_risk


def _product_limit(time, event) -> StepFunction:
    t, d, n = _event_table(np.asarray(time, float), np.asarray(event, bool))
    return StepFunction(t, np.cumprod(1.0 - d / n), 1.0)


def kaplan_meier(dataset: SurvivalDataset) -> StepFunction:
    """Product-limit estimate of ``S(t)``; censored ties stay in the risk set."""
    return _product_limit(dataset.time, dataset.event)


def censoring_kaplan_meier(dataset: SurvivalDataset) -> StepFunction:
    """Kaplan-Meier estimate of the censoring survival ``G(t)`` (event flag flipped)."""
    return _product_limit(dataset.time, ~dataset.event)


def nelson_aalen(dataset: SurvivalDataset) -> StepFunction:
    t, d, n = _event_table(dataset.time, dataset.event)
    return StepFunction(t, np.cumsum(d / n), 0.0)
