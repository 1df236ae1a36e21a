"""Survival stacking: risk-set expansion into binary classification rows."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .core import SurvivalDataset

STACK_TIME_COL = "stack_time"
LABEL_COL = "label"


@dataclass(frozen=True)
class StackingConfig:
    gamma: float = 0.01
    seed: int | None = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")


@dataclass(frozen=True, eq=False)
class StackedDataset:
    """Rows are ``covariates || risk-set time``; the time column is last and unscaled."""

    rows: np.ndarray
    labels: np.ndarray
    source: np.ndarray
    risk_time: np.ndarray
    feature_names: tuple[str, ...] = ()
    gamma: float = 1.0

    def __len__(self):
        return self.labels.shape[0]

    @property
    def n_positive(self) -> int:
        return int(self.labels.sum())

    @property
    def n_negative(self) -> int:
        return len(self) - self.n_positive

    @property
    def time(self) -> np.ndarray:
        return self.rows[:, -1]

    def to_frame(self) -> pd.DataFrame:
        names = list(self.feature_names) or [f"x{j}" for j in range(self.rows.shape[1] - 1)]
        df = pd.DataFrame(self.rows[:, :-1], columns=names)
        df[STACK_TIME_COL] = self.rows[:, -1]
        df[LABEL_COL] = self.labels.astype(int)
        return df

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.10g")

    @classmethod
    def from_frame(cls, df: pd.DataFrame, gamma: float = 1.0) -> "StackedDataset":
        feats = [c for c in df.columns if c not in (STACK_TIME_COL, LABEL_COL)]
        rows = np.column_stack([df[feats].to_numpy(float), df[STACK_TIME_COL].to_numpy(float)])
        n = len(df)
        return cls(rows, df[LABEL_COL].to_numpy(int), np.full(n, -1), rows[:, -1].copy(),
                   tuple(feats), gamma)


def stack(dataset: SurvivalDataset, config: StackingConfig = StackingConfig()) -> StackedDataset:
    """Expand survival data over the risk sets of its distinct event times.

    For each event time ``t``: every record with an event at ``t`` gives a
    positive row, and each record with ``T > t`` is kept as a negative row
    with probability ``gamma``. Both kinds carry ``t`` as the time feature.
    Each event time draws from its own child seed, so the output does not
    depend on evaluation order.
    """
    dataset.require_events().require_finite()
    X, T, E = dataset.X, dataset.time, dataset.event
    n = len(dataset)
    order = np.argsort(T, kind="stable")
    T_sorted = T[order]
    ev_times = dataset.event_times()
    gamma = config.gamma
    if gamma < 1:
        streams = np.random.SeedSequence(config.seed).spawn(len(ev_times))
    src_parts, time_parts, lab_parts = [], [], []
    for k, t in enumerate(ev_times):
        pos = np.flatnonzero((T == t) & E)
        start = np.searchsorted(T_sorted, t, side="right")
        m = n - start
        if gamma >= 1:
            neg = np.sort(order[start:])
        elif m:
            rng = np.random.default_rng(streams[k])
            c = rng.binomial(m, gamma)
            neg = np.sort(order[start + rng.choice(m, size=c, replace=False)])
        else:
            neg = np.empty(0, dtype=int)
        src_parts += [pos, neg]
        time_parts.append(np.full(pos.size + neg.size, t))
        lab_parts += [np.ones(pos.size, np.int8), np.zeros(neg.size, np.int8)]
    src = np.concatenate(src_parts).astype(np.intp)
    times = np.concatenate(time_parts)
    rows = np.column_stack([X[src], times])
    return StackedDataset(rows, np.concatenate(lab_parts), src, times,
                          dataset.feature_names, gamma)


def expected_size(dataset: SurvivalDataset, gamma: float) -> tuple[int, float]:
    """(number of positive rows, expected number of negative rows)."""
    T = np.sort(dataset.time)
    ev = dataset.event_times()
    beyond = len(T) - np.searchsorted(T, ev, side="right")
    return dataset.n_events, float(gamma * beyond.sum())
