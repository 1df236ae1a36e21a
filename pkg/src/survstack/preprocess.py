"""Standardization, mean imputation, one-hot encoding and train/test splits."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .core import DatasetError, SurvivalDataset

log = logging.getLogger(__name__)


class PreprocessError(DatasetError):
    pass


@dataclass(frozen=True)
class PreprocessModel:
    """Fitted column transform.

    ``continuous`` maps column -> (mean, sd) over observed entries;
    ``categorical`` maps column -> sorted category labels.
    """

    columns: tuple[str, ...]
    continuous: dict
    categorical: dict
    fitted: bool = True

    @property
    def output_names(self) -> tuple[str, ...]:
        names = []
        for c in self.columns:
            if c in self.categorical:
                names.extend(f"{c}={v}" for v in self.categorical[c])
            else:
                names.append(c)
        return tuple(names)

    @property
    def output_kinds(self) -> tuple[str, ...]:
        kinds = []
        for c in self.columns:
            if c in self.categorical:
                kinds.extend(f"onehot:{c}" for _ in self.categorical[c])
            else:
                kinds.append("continuous")
        return tuple(kinds)

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "continuous": {c: [float(m), float(s)] for c, (m, s) in self.continuous.items()},
            "categorical": {c: list(v) for c, v in self.categorical.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessModel":
        return cls(tuple(d["columns"]),
                   {c: tuple(v) for c, v in d["continuous"].items()},
                   {c: tuple(v) for c, v in d["categorical"].items()})


def _is_categorical(s: pd.Series) -> bool:
    if pd.api.types.is_numeric_dtype(s) or pd.api.types.is_bool_dtype(s):
        return False
    return pd.to_numeric(s.dropna(), errors="coerce").isna().any()


def fit_preprocess(frame: pd.DataFrame, categorical=None) -> PreprocessModel:
    """Learn means/sds from observed entries and category lists.

    Columns are treated as categorical when listed in ``categorical`` or when
    they hold non-numeric values.
    """
    if not isinstance(frame, pd.DataFrame):
        raise PreprocessError("fit_preprocess expects a DataFrame of raw features")
    categorical = set(categorical or ())
    cont, cat = {}, {}
    for c in frame.columns:
        s = frame[c]
        if c in categorical or _is_categorical(s):
            cat[c] = tuple(sorted(str(v) for v in s.dropna().unique()))
            continue
        v = pd.to_numeric(s, errors="coerce").to_numpy(dtype=float)
        obs = v[np.isfinite(v)]
        if obs.size == 0:
            raise PreprocessError(f"feature {c!r} has no observed entries")
        mean = float(obs.mean())
        sd = float(obs.std())
        if not sd > 0:
            log.warning("feature %r has zero variance; using sd=1", c)
            sd = 1.0
        cont[c] = (mean, sd)
    return PreprocessModel(tuple(map(str, frame.columns)), cont, cat)


def transform(model: PreprocessModel, frame: pd.DataFrame) -> np.ndarray:
    """Apply a fitted model. Missing -> 0 after scaling; unseen category -> zeros."""
    if not isinstance(frame, pd.DataFrame):
        raise PreprocessError("transform expects the raw feature DataFrame it was fit on "
                              "(already-transformed arrays are rejected)")
    if tuple(map(str, frame.columns)) != model.columns:
        raise PreprocessError(
            f"schema mismatch: expected columns {list(model.columns)}, got {list(frame.columns)}"
        )
    blocks = []
    for c in model.columns:
        s = frame[c]
        if c in model.categorical:
            cats = model.categorical[c]
            vals = s.map(lambda v: None if pd.isna(v) else str(v)).to_numpy()
            blocks.append(np.column_stack([(vals == k).astype(float) for k in cats])
                          if cats else np.empty((len(frame), 0)))
        else:
            mean, sd = model.continuous[c]
            v = pd.to_numeric(s, errors="coerce").to_numpy(dtype=float)
            z = (v - mean) / sd
            z[~np.isfinite(z)] = 0.0
            blocks.append(z[:, None])
    return np.hstack(blocks) if blocks else np.empty((len(frame), 0))


def split_indices(event, test_fraction: float, seed=None, max_retries: int = 20):
    """Stratified shuffle split of row indices; both sides keep at least one event."""
    if not 0 < test_fraction < 1:
        raise PreprocessError(f"test_fraction must be in (0, 1), got {test_fraction}")
    event = np.asarray(event, dtype=bool)
    n = event.size
    n_test = int(round(test_fraction * n))
    if n_test < 1 or n_test >= n:
        raise PreprocessError(f"cannot split {n} rows with test_fraction={test_fraction}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        test = []
        # allocate test slots to each stratum in proportion, largest remainder
        strata = [np.flatnonzero(event == v) for v in (True, False)]
        quotas = np.array([len(s) * n_test / n for s in strata])
        k = np.floor(quotas).astype(int)
        rem = n_test - k.sum()
        k[np.argsort(-(quotas - k), kind="stable")[:rem]] += 1
        for s, ki in zip(strata, k):
            test.append(rng.permutation(s)[:ki])
        test = np.sort(np.concatenate(test))
        mask = np.zeros(n, bool)
        mask[test] = True
        if event[mask].any() and event[~mask].any():
            return np.flatnonzero(~mask), test
    raise PreprocessError(f"could not produce a split with events on both sides "
                          f"after {max_retries} attempts")


def train_test_split(dataset: SurvivalDataset, test_fraction: float = 0.2, seed=None,
                     max_retries: int = 20):
    tr, te = split_indices(dataset.event, test_fraction, seed, max_retries)
    return dataset.subset(tr), dataset.subset(te)
