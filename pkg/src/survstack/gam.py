"""Additive logistic model with pairwise interactions, fit by cyclic boosting.

Features are quantile-binned once. Each boosting round visits the features
in a fixed order and fits a small partition of that feature's bins (at most
two cuts, i.e. three contiguous leaves) to the log-loss gradient, taking a
shrunken Newton step per leaf. A second stage picks the strongest pairs on
the stage-one residuals and boosts 2-D tables for them. Finally mass is
moved out of the interaction tables into the main effects, and out of the
main effects into the intercept, so every term is centered on the training
distribution.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, logit

log = logging.getLogger(__name__)

SCHEMA = "survstack.gam/v1"


class GamError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class BinnedMatrix:
    """Bin index per cell; feature ``j`` has ``len(cuts[j]) + 1`` bins."""

    bins: np.ndarray
    cuts: tuple

    @property
    def n_bins(self) -> tuple[int, ...]:
        return tuple(len(c) + 1 for c in self.cuts)

    @property
    def shape(self):
        return self.bins.shape

    def counts(self, j: int) -> np.ndarray:
        return np.bincount(self.bins[:, j], minlength=self.n_bins[j])


def _feature_cuts(x: np.ndarray, max_bins: int) -> np.ndarray:
    u = np.unique(x)
    if u.size <= max_bins:
        return (u[:-1] + u[1:]) / 2.0
    q = np.quantile(x, np.linspace(0.0, 1.0, max_bins + 1)[1:-1])
    cuts = np.unique(q)
    # a cut equal to the maximum would leave an empty top bin
    return cuts[cuts < u[-1]]


def apply_cuts(X, cuts) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(cuts):
        raise GamError(f"expected {len(cuts)} features, got {X.shape[1]}")
    out = np.empty(X.shape, dtype=np.intp)
    for j, c in enumerate(cuts):
        out[:, j] = np.searchsorted(c, X[:, j], side="right")
    return out


def bin_features(X, max_bins: int = 64) -> BinnedMatrix:
    """Quantile cut points per feature; few-valued features get one bin per value."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise GamError("cannot bin an empty matrix")
    if max_bins < 2:
        raise GamError("max_bins must be >= 2")
    if not np.isfinite(X).all():
        raise GamError("matrix contains non-finite values")
    cuts = tuple(_feature_cuts(X[:, j], max_bins) for j in range(X.shape[1]))
    return BinnedMatrix(apply_cuts(X, cuts), cuts)


@dataclass(frozen=True)
class GamConfig:
    learning_rate: float = 0.05
    max_rounds: int = 5000
    n_interactions: int = 20
    validation_fraction: float = 0.15
    early_stop_patience: int = 50
    early_stop_tol: float = 1e-7
    max_cuts: int = 2
    min_samples_leaf: int = 2
    interaction_sample: int = 50_000
    max_bins: int = 64
    n_bags: int = 1
    seed: int | None = 0


@dataclass(eq=False)
class GamModel:
    intercept: float
    cuts: tuple
    main_effects: list
    pairs: list
    interactions: list
    feature_names: tuple = ()
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.cuts)

    @property
    def term_names(self) -> list[str]:
        names = list(self.feature_names) or [f"x{j}" for j in range(self.n_features)]
        return names + [f"{names[i]} x {names[j]}" for i, j in self.pairs]

    def bin(self, X) -> np.ndarray:
        return apply_cuts(X, self.cuts)

    def term_contributions_binned(self, B: np.ndarray) -> np.ndarray:
        """Per-row, per-term log-odds contributions, shape ``(n, d + n_pairs)``."""
        cols = [f[B[:, j]] for j, f in enumerate(self.main_effects)]
        cols += [t[B[:, i], B[:, j]] for (i, j), t in zip(self.pairs, self.interactions)]
        return np.column_stack(cols) if cols else np.empty((B.shape[0], 0))

    def term_contributions(self, X) -> np.ndarray:
        return self.term_contributions_binned(self.bin(X))

    def decision_function_binned(self, B: np.ndarray) -> np.ndarray:
        s = np.full(B.shape[0], self.intercept)
        for j, f in enumerate(self.main_effects):
            s += f[B[:, j]]
        for (i, j), t in zip(self.pairs, self.interactions):
            s += t[B[:, i], B[:, j]]
        return s

    def decision_function(self, X) -> np.ndarray:
        return self.decision_function_binned(self.bin(X))

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "intercept": float(self.intercept),
            "feature_names": list(self.feature_names),
            "cuts": [c.tolist() for c in self.cuts],
            "main_effects": [f.tolist() for f in self.main_effects],
            "pairs": [list(p) for p in self.pairs],
            "interactions": [t.tolist() for t in self.interactions],
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GamModel":
        if d.get("schema") != SCHEMA:
            raise GamError(f"unsupported model schema {d.get('schema')!r}")
        return cls(
            float(d["intercept"]),
            tuple(np.asarray(c, float) for c in d["cuts"]),
            [np.asarray(f, float) for f in d["main_effects"]],
            [tuple(p) for p in d["pairs"]],
            [np.asarray(t, float).reshape(len(d["cuts"][i]) + 1, len(d["cuts"][j]) + 1)
             for (i, j), t in zip(d["pairs"], d["interactions"])],
            tuple(d.get("feature_names", ())),
            dict(d.get("metadata", {})),
        )


def log_loss(scores, y) -> float:
    return float(np.mean(np.logaddexp(0.0, scores) - y * scores))


def logloss_gradient(scores, y):
    """Negative gradient ``y - p`` and hessian ``p (1 - p)`` of the per-row log-loss."""
    p = expit(scores)
    return y - p, p * (1.0 - p)


def best_partition(G, H, counts, max_cuts: int = 2, min_samples_leaf: int = 1):
    """Contiguous partition of bins into at most ``max_cuts + 1`` leaves.

    Maximizes ``sum_leaf G^2 / H``; ties go to the lowest cut index.
    Returns the leaf id of every bin and the Newton value of every leaf.
    """
    B = G.size
    cG = np.concatenate([[0.0], np.cumsum(G)])
    cH = np.concatenate([[0.0], np.cumsum(H)])
    cN = np.concatenate([[0], np.cumsum(counts)])

    def score(lo, hi):
        g = cG[hi] - cG[lo]
        h = cH[hi] - cH[lo]
        n = cN[hi] - cN[lo]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(h > 0, g * g / h, 0.0)
        return np.where((n >= min_samples_leaf) | (hi == lo), s, -np.inf)

    if B == 1 or max_cuts == 0:
        cut_a, cut_b = B, B
    elif max_cuts == 1:
        a = np.arange(1, B)
        gains = score(0, a) + score(a, B)
        k = int(np.argmax(gains))
        cut_a, cut_b = (int(a[k]), B) if np.isfinite(gains[k]) else (B, B)
    else:
        a = np.arange(1, B)[:, None]
        b = np.arange(2, B + 1)[None, :]
        gains = np.where(b > a, score(0, a) + score(a, b) + score(b, B), -np.inf)
        k = int(np.argmax(gains))
        if np.isfinite(gains.flat[k]):
            cut_a, cut_b = int(a[k // gains.shape[1], 0]), int(b[0, k % gains.shape[1]])
        else:
            cut_a, cut_b = B, B
    bounds = [0, cut_a, cut_b, B]
    leaf = np.zeros(B, dtype=np.intp)
    leaf[cut_a:] = 1
    leaf[cut_b:] = 2
    values = np.zeros(3)
    for k in range(3):
        lo, hi = bounds[k], bounds[k + 1]
        h = cH[hi] - cH[lo]
        if hi > lo and h > 0:
            values[k] = (cG[hi] - cG[lo]) / h
    return leaf, values


def best_quadrants(G2, H2, N2, min_samples_leaf: int = 1):
    """Best single cut on each axis of a 2-D table; returns cuts, gain and 2x2 values."""
    bi, bj = G2.shape
    if bi < 2 or bj < 2:
        return None
    cG = np.zeros((bi + 1, bj + 1))
    cH = np.zeros_like(cG)
    cN = np.zeros_like(cG)
    cG[1:, 1:] = G2.cumsum(0).cumsum(1)
    cH[1:, 1:] = H2.cumsum(0).cumsum(1)
    cN[1:, 1:] = N2.cumsum(0).cumsum(1)
    a = np.arange(1, bi)[:, None]
    b = np.arange(1, bj)[None, :]

    def rect(c, r0, r1, c0, c1):
        return c[r1, c1] - c[r0, c1] - c[r1, c0] + c[r0, c0]

    quads = [(0, a, 0, b), (0, a, b, bj), (a, bi, 0, b), (a, bi, b, bj)]
    total = np.zeros((bi - 1, bj - 1))
    ok = np.ones_like(total, dtype=bool)
    for q in quads:
        g, h, n = rect(cG, *q), rect(cH, *q), rect(cN, *q)
        with np.errstate(divide="ignore", invalid="ignore"):
            total = total + np.where(h > 0, g * g / h, 0.0)
        ok &= n >= min_samples_leaf
    H = cH[-1, -1]
    base = cG[-1, -1] ** 2 / H if H > 0 else 0.0
    gain = np.where(ok, total - base, -np.inf)
    k = int(np.argmax(gain))
    if not np.isfinite(gain.flat[k]):
        return None
    ca, cb = k // (bj - 1) + 1, k % (bj - 1) + 1
    vals = np.zeros((2, 2))
    for qi, (r0, r1) in enumerate(((0, ca), (ca, bi))):
        for qj, (c0, c1) in enumerate(((0, cb), (cb, bj))):
            h = rect(cH, r0, r1, c0, c1)
            vals[qi, qj] = rect(cG, r0, r1, c0, c1) / h if h > 0 else 0.0
    return ca, cb, float(gain.flat[k]), vals


def interaction_strengths(B, g, h, pairs, min_samples_leaf=1):
    """Gain of the best 2x2 split of each pair's residual table."""
    n_bins = B.max(axis=0) + 1
    out = []
    for i, j in pairs:
        key = B[:, i] * n_bins[j] + B[:, j]
        size = n_bins[i] * n_bins[j]
        G2 = np.bincount(key, g, size).reshape(n_bins[i], n_bins[j])
        H2 = np.bincount(key, h, size).reshape(n_bins[i], n_bins[j])
        N2 = np.bincount(key, minlength=size).reshape(n_bins[i], n_bins[j])
        res = best_quadrants(G2, H2, N2, min_samples_leaf)
        out.append(0.0 if res is None else res[2])
    return np.asarray(out)


class _Booster:
    """Mutable state for one cyclic-boosting fit on train/validation rows."""

    def __init__(self, B, y, tr, va, intercept, n_bins, config):
        self.B, self.y, self.tr, self.va = B, y, tr, va
        self.cfg = config
        self.n_bins = n_bins
        self.s_tr = np.full(tr.size, intercept)
        self.s_va = np.full(va.size, intercept)
        self.y_tr, self.y_va = y[tr], y[va]
        self.loss = log_loss(self.s_tr, self.y_tr)
        self.history = [self.loss]

    def val_loss(self):
        return log_loss(self.s_va, self.y_va) if self.va.size else self.loss

    def step(self, delta_tr, delta_va):
        """Apply a proposed score change, halving it until training loss does not rise."""
        for _ in range(31):
            new = self.s_tr + delta_tr
            loss = log_loss(new, self.y_tr)
            if loss <= self.loss + 1e-13:
                self.s_tr = new
                self.s_va = self.s_va + delta_va
                self.loss = loss
                return 1.0
            delta_tr = delta_tr * 0.5
            delta_va = delta_va * 0.5
        return 0.0

    def run(self, terms, update):
        """Cyclic rounds over ``terms`` with early stopping on validation loss."""
        cfg = self.cfg
        best, best_round, best_state, stall = self.val_loss(), 0, None, 0
        state = None
        rounds = 0
        for r in range(cfg.max_rounds):
            for term in terms:
                state = update(term)
            rounds = r + 1
            self.history.append(self.loss)
            if not np.isfinite(self.loss):
                raise GamError(f"non-finite training loss at round {rounds}")
            if self.va.size == 0:
                continue
            v = self.val_loss()
            if v < best - cfg.early_stop_tol:
                best, best_round, stall = v, rounds, 0
                best_state = self.snapshot()
            else:
                stall += 1
                if stall >= cfg.early_stop_patience:
                    break
        if self.va.size and best_state is not None and best_round < rounds:
            self.restore(best_state)
            del self.history[len(self.history) - (rounds - best_round):]
        elif self.va.size and best_state is None and rounds:
            # no round improved on held-out loss
            self.restore(self.initial)
            del self.history[len(self.history) - rounds:]
        return best_round if self.va.size else rounds


def _fit_one(B, y, config: GamConfig, rng, n_bins, intercept):
    n = y.size
    if config.validation_fraction > 0:
        n_va = int(round(config.validation_fraction * n))
        perm = rng.permutation(n)
        va, tr = np.sort(perm[:n_va]), np.sort(perm[n_va:])
    else:
        va, tr = np.empty(0, dtype=np.intp), np.arange(n)
    d = B.shape[1]
    lr = config.learning_rate
    booster = _Booster(B, y, tr, va, intercept, n_bins, config)
    Btr, Bva = B[tr], B[va]
    counts = [np.bincount(Btr[:, j], minlength=n_bins[j]) for j in range(d)]
    effects = [np.zeros(k) for k in n_bins]

    def snapshot():
        return ([e.copy() for e in effects], booster.s_tr.copy(), booster.s_va.copy(), booster.loss)

    def restore(state):
        es, s_tr, s_va, loss = state
        for e, saved in zip(effects, es):
            e[:] = saved
        booster.s_tr, booster.s_va, booster.loss = s_tr, s_va, loss

    booster.snapshot, booster.restore = snapshot, restore
    booster.initial = snapshot()

    def update_main(j):
        g, h = logloss_gradient(booster.s_tr, booster.y_tr)
        bj = Btr[:, j]
        G = np.bincount(bj, g, n_bins[j])
        H = np.bincount(bj, h, n_bins[j])
        leaf, vals = best_partition(G, H, counts[j], config.max_cuts, config.min_samples_leaf)
        delta = lr * vals[leaf]
        scale = booster.step(delta[bj], delta[Bva[:, j]])
        effects[j] += scale * delta

    main_rounds = booster.run(range(d), update_main) if config.max_rounds > 0 else 0
    main_history = list(booster.history)

    pairs, tables, inter_rounds = [], [], 0
    n_pairs = min(config.n_interactions, d * (d - 1) // 2)
    if n_pairs > 0 and config.max_rounds > 0:
        g, h = logloss_gradient(booster.s_tr, booster.y_tr)
        sub = np.arange(tr.size)
        if tr.size > config.interaction_sample:
            sub = np.sort(rng.choice(tr.size, config.interaction_sample, replace=False))
        cand = list(itertools.combinations(range(d), 2))
        strength = interaction_strengths(Btr[sub], g[sub], h[sub], cand, config.min_samples_leaf)
        order = np.argsort(-strength, kind="stable")[:n_pairs]
        pairs = [cand[k] for k in order if strength[k] > 0]
        tables = [np.zeros((n_bins[i], n_bins[j])) for i, j in pairs]
        keys_tr = [Btr[:, i] * n_bins[j] + Btr[:, j] for i, j in pairs]
        ncounts = [np.bincount(k, minlength=n_bins[i] * n_bins[j]).reshape(n_bins[i], n_bins[j])
                   for k, (i, j) in zip(keys_tr, pairs)]

        def snapshot2():
            return ([t.copy() for t in tables], booster.s_tr.copy(), booster.s_va.copy(), booster.loss)

        def restore2(state):
            ts, s_tr, s_va, loss = state
            for t, saved in zip(tables, ts):
                t[:] = saved
            booster.s_tr, booster.s_va, booster.loss = s_tr, s_va, loss

        booster.snapshot, booster.restore = snapshot2, restore2
        booster.initial = snapshot2()

        def update_pair(k):
            i, j = pairs[k]
            g, h = logloss_gradient(booster.s_tr, booster.y_tr)
            size = n_bins[i] * n_bins[j]
            G2 = np.bincount(keys_tr[k], g, size).reshape(n_bins[i], n_bins[j])
            H2 = np.bincount(keys_tr[k], h, size).reshape(n_bins[i], n_bins[j])
            res = best_quadrants(G2, H2, ncounts[k], config.min_samples_leaf)
            if res is None:
                return
            ca, cb, _, vals = res
            delta = np.empty((n_bins[i], n_bins[j]))
            delta[:ca, :cb], delta[:ca, cb:] = vals[0, 0], vals[0, 1]
            delta[ca:, :cb], delta[ca:, cb:] = vals[1, 0], vals[1, 1]
            delta *= lr
            scale = booster.step(delta[Btr[:, i], Btr[:, j]], delta[Bva[:, i], Bva[:, j]])
            tables[k] += scale * delta

        if pairs:
            inter_rounds = booster.run(range(len(pairs)), update_pair)
    return {
        "effects": effects, "pairs": pairs, "tables": tables,
        "main_rounds": main_rounds, "interaction_rounds": inter_rounds,
        "history": main_history + booster.history[len(main_history):],
        "main_history_len": len(main_history),
    }


def purify(intercept, main_effects, pairs, tables, B, tol=1e-13, max_iter=1000):
    """Center every term on the empirical bin distribution of ``B``.

    Weighted row and column means of each interaction table are moved into
    the matching main effects until both vanish, then main-effect means move
    into the intercept. Training-row predictions are unchanged.
    """
    n = B.shape[0]
    main_effects = [f.copy() for f in main_effects]
    tables = [t.copy() for t in tables]
    for (i, j), t in zip(pairs, tables):
        W = np.zeros(t.shape)
        np.add.at(W, (B[:, i], B[:, j]), 1.0)
        rw, cw = W.sum(1), W.sum(0)
        for _ in range(max_iter):
            with np.errstate(invalid="ignore", divide="ignore"):
                rm = np.where(rw > 0, (W * t).sum(1) / rw, 0.0)
            t -= rm[:, None]
            main_effects[i] += rm
            with np.errstate(invalid="ignore", divide="ignore"):
                cm = np.where(cw > 0, (W * t).sum(0) / cw, 0.0)
            t -= cm[None, :]
            main_effects[j] += cm
            if max(np.abs(rm).max(), np.abs(cm).max()) < tol:
                break
    for j, f in enumerate(main_effects):
        m = np.bincount(B[:, j], minlength=f.size) @ f / n
        f -= m
        intercept += m
    return intercept, main_effects, tables


def fit_gam(binned, labels, config: GamConfig = GamConfig(), feature_names=()) -> GamModel:
    """Fit the additive model; ``binned`` may also be a raw matrix (binned here)."""
    if not isinstance(binned, BinnedMatrix):
        binned = bin_features(binned, config.max_bins)
    y = np.asarray(labels, dtype=float).ravel()
    if y.size != binned.bins.shape[0]:
        raise GamError("labels and matrix row counts differ")
    if not np.isin(y, (0.0, 1.0)).all():
        raise GamError("labels must be 0/1")
    prev = y.mean()
    if prev in (0.0, 1.0):
        raise GamError("labels contain a single class")
    B = binned.bins
    n_bins = binned.n_bins
    intercept0 = float(logit(prev))
    seeds = np.random.SeedSequence(config.seed).spawn(max(config.n_bags, 1))
    fits = [_fit_one(B, y, config, np.random.default_rng(s), n_bins, intercept0) for s in seeds]
    # bag average: tables for a pair absent from a bag count as zero
    effects = [np.mean([f["effects"][j] for f in fits], axis=0) for j in range(len(n_bins))]
    all_pairs = sorted({p for f in fits for p in f["pairs"]},
                       key=lambda p: min(f["pairs"].index(p) if p in f["pairs"] else 1 << 30
                                         for f in fits))
    tables = []
    for p in all_pairs:
        acc = np.zeros((n_bins[p[0]], n_bins[p[1]]))
        for f in fits:
            if p in f["pairs"]:
                acc += f["tables"][f["pairs"].index(p)]
        tables.append(acc / len(fits))
    intercept, effects, tables = purify(intercept0, effects, all_pairs, tables, B)
    meta = {
        "learning_rate": config.learning_rate,
        "max_rounds": config.max_rounds,
        "main_rounds": [f["main_rounds"] for f in fits],
        "interaction_rounds": [f["interaction_rounds"] for f in fits],
        "n_bags": len(fits),
        "train_loss_history": fits[0]["history"],
    }
    return GamModel(intercept, binned.cuts, effects, all_pairs, tables,
                    tuple(feature_names), meta)


def predict_probability(model: GamModel, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.size != model.n_features:
            raise GamError(f"expected {model.n_features} features, got {x.size}")
        return float(model.predict_proba(x[None, :])[0])
    return model.predict_proba(x)


def bin_edges(model: GamModel, j: int):
    c = model.cuts[j]
    return np.concatenate([[-np.inf], c]), np.concatenate([c, [np.inf]])


def shape_function(model: GamModel, j: int):
    """``(lower bin edges, upper bin edges, centered per-bin contribution)``."""
    if not 0 <= j < model.n_features:
        raise IndexError(f"feature index {j} out of range")
    lo, hi = bin_edges(model, j)
    return lo, hi, model.main_effects[j].copy()


def feature_importance(model: GamModel, binned) -> dict:
    """Mean absolute contribution of every term over the given rows, descending."""
    B = binned.bins if isinstance(binned, BinnedMatrix) else model.bin(binned)
    imp = np.abs(model.term_contributions_binned(B)).mean(axis=0)
    names = model.term_names
    order = np.argsort(-imp, kind="stable")
    return {names[k]: float(imp[k]) for k in order}


def shapes_frame(model: GamModel) -> pd.DataFrame:
    rows = []
    for j, name in enumerate(model.term_names[:model.n_features]):
        lo, hi, f = shape_function(model, j)
        rows += [(name, a, b, v) for a, b, v in zip(lo, hi, f)]
    return pd.DataFrame(rows, columns=["term", "bin_low", "bin_high", "contribution"])
