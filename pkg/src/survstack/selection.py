"""Feature selection by LASSO-pruning a forest of shallow trees (ControlBurn-style).

Trees are grown by bagged boosting with an increasing depth schedule; each
tree's prediction vector on the selection set becomes a column of a LASSO
design. Features that survive are those used by trees with nonzero weight.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import DatasetError, SurvivalDataset
from .gam import BinnedMatrix, bin_features

log = logging.getLogger(__name__)


class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 3
    bag_fraction: float = 0.5
    learning_rate: float = 1.0
    min_samples_leaf: int = 5
    max_bins: int = 32
    seed: int | None = 0


@dataclass(frozen=True, eq=False)
class Tree:
    """Binary tree on binned features. Node ``k`` goes left when ``bin <= cut[k]``."""

    feature: np.ndarray
    cut: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, B: np.ndarray) -> np.ndarray:
        node = np.zeros(B.shape[0], dtype=np.intp)
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return self.value[node]
            rows = np.flatnonzero(inner)
            go_left = B[rows, f[rows]] <= self.cut[node[rows]]
            node[rows] = np.where(go_left, self.left[node[rows]], self.right[node[rows]])

    @property
    def features(self) -> frozenset:
        return frozenset(int(f) for f in self.feature if f >= 0)

    @property
    def depth(self) -> int:
        def walk(k):
            return 0 if self.feature[k] < 0 else 1 + max(walk(self.left[k]), walk(self.right[k]))
        return walk(0)


def _best_split(B, r, n_bins, min_leaf):
    """Best (feature, cut, gain) by squared-error reduction; ties -> lowest feature, cut."""
    n = r.size
    total = r.sum()
    base = total * total / n
    best = (-1, -1, 0.0)
    for j in range(B.shape[1]):
        nb = n_bins[j]
        if nb < 2:
            continue
        s = np.cumsum(np.bincount(B[:, j], r, nb))[:-1]
        c = np.cumsum(np.bincount(B[:, j], minlength=nb))[:-1]
        ok = (c >= min_leaf) & (n - c >= min_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(ok, s * s / c + (total - s) ** 2 / (n - c) - base, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[2] + 1e-12:
            best = (j, k, float(gain[k]))
    return best


def fit_tree(B, r, n_bins, max_depth, min_samples_leaf=5) -> Tree:
    feature, cut, left, right, value = [], [], [], [], []

    def grow(idx, depth):
        k = len(feature)
        feature.append(-1); cut.append(-1); left.append(-1); right.append(-1)
        value.append(float(r[idx].mean()) if idx.size else 0.0)
        if depth >= max_depth or idx.size < 2 * min_samples_leaf:
            return k
        j, c, gain = _best_split(B[idx], r[idx], n_bins, min_samples_leaf)
        if j < 0:
            return k
        mask = B[idx, j] <= c
        feature[k], cut[k] = j, c
        left[k] = grow(idx[mask], depth + 1)
        right[k] = grow(idx[~mask], depth + 1)
        return k

    grow(np.arange(r.size), 0)
    return Tree(np.array(feature), np.array(cut), np.array(left), np.array(right),
                np.array(value))


@dataclass(eq=False)
class Forest:
    trees: list
    predictions: np.ndarray  # (m, n_trees), columns centered
    feature_sets: list
    binned: BinnedMatrix
    depths: list = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _check_labels(y):
    y = np.asarray(y, float).ravel()
    if np.unique(y).size < 2:
        raise SelectionError("labels contain a single class")
    return y


def grow_forest(X, labels, config: ForestConfig = ForestConfig()) -> Forest:
    """Bagged boosting over depths 1..max_depth.

    Depth ``k`` gets its share of ``n_trees``, each fit on a row subsample to
    the residual left by the shallower stages.
    """
    y = _check_labels(labels)
    binned = X if isinstance(X, BinnedMatrix) else bin_features(np.asarray(X, float), config.max_bins)
    B = binned.bins
    n = y.size
    n_bins = binned.n_bins
    rng = np.random.default_rng(config.seed)
    per_depth = np.full(config.max_depth, config.n_trees // config.max_depth)
    per_depth[: config.n_trees % config.max_depth] += 1
    pred = np.full(n, y.mean())
    bag = max(2 * config.min_samples_leaf, int(round(config.bag_fraction * n)))
    trees, cols, depths = [], [], []
    for depth, count in enumerate(per_depth, start=1):
        # one stage per depth: a bag of trees on the same residual, then one boosting step
        resid = y - pred
        stage = []
        for _ in range(count):
            idx = np.sort(rng.choice(n, size=min(bag, n), replace=False))
            tree = fit_tree(B[idx], resid[idx], n_bins, depth, config.min_samples_leaf)
            p = tree.predict(B)
            trees.append(tree)
            cols.append(p)
            depths.append(depth)
            stage.append(p)
        if stage:
            pred = pred + config.learning_rate * np.mean(stage, axis=0)
    P = np.column_stack(cols)
    P = P - P.mean(axis=0)
    return Forest(trees, P, [t.features for t in trees], binned, depths)


def lasso_objective(P, yc, w, lam) -> float:
    r = yc - P @ w
    return float(r @ r / (2 * yc.size) + lam * np.abs(w).sum())


def lasso_lambda_max(P, yc, nonnegative=False) -> float:
    c = P.T @ yc / yc.size
    return float(c.max() if nonnegative else np.abs(c).max())


def lasso_cd(P, yc, lam, w0=None, nonnegative=False, tol=1e-7, max_sweeps=10_000):
    """Cyclic coordinate descent for ``(1/2m)|y - P w|^2 + lam |w|_1``.

    Returns ``(w, objective_per_sweep)``; raises if the largest coordinate
    update is still above ``tol`` after ``max_sweeps``.
    """
    m, p = P.shape
    w = np.zeros(p) if w0 is None else np.array(w0, float)
    sq = (P * P).sum(axis=0) / m
    r = yc - P @ w
    # slack so lam == lasso_lambda_max zeroes everything despite dot-product rounding
    thr = lam * (1.0 + 1e-12)
    history = [lasso_objective(P, yc, w, lam)]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            if sq[j] == 0.0:
                if w[j] != 0.0:
                    w[j] = 0.0
                continue
            rho = P[:, j] @ r / m + sq[j] * w[j]
            if nonnegative:
                new = (rho - lam) / sq[j] if rho > thr else 0.0
            else:
                new = np.sign(rho) * (abs(rho) - lam) / sq[j] if abs(rho) > thr else 0.0
            delta = new - w[j]
            if delta != 0.0:
                r -= delta * P[:, j]
                w[j] = new
                max_delta = max(max_delta, abs(delta))
        history.append(lasso_objective(P, yc, w, lam))
        if max_delta < tol:
            return w, history
    raise SelectionError(f"coordinate descent did not converge in {max_sweeps} sweeps; "
                         f"last max update {max_delta:.3g}")


def lasso_prune(forest: Forest, labels, lam: float, nonnegative: bool = False, w0=None,
                tol: float = 1e-7, max_sweeps: int = 10_000) -> np.ndarray:
    """Tree weights minimizing ``(1/2m)|y_c - P w|^2 + lam |w|_1``."""
    if lam < 0:
        raise SelectionError("lambda must be >= 0")
    y = np.asarray(labels, float).ravel()
    w, _ = lasso_cd(forest.predictions, y - y.mean(), lam, w0, nonnegative, tol, max_sweeps)
    return w


@dataclass
class SelectionResult:
    selected: list  # column indices
    selected_groups: list
    weights: np.ndarray
    lam: float
    scores: dict
    feature_names: tuple = ()

    def to_dict(self) -> dict:
        names = self.feature_names
        return {
            "selected": [int(j) for j in self.selected],
            "selected_names": [names[j] for j in self.selected] if names else [],
            "selected_groups": list(self.selected_groups),
            "lambda": float(self.lam),
            "tree_weights": [float(w) for w in self.weights],
            "group_scores": {str(k): float(v) for k, v in self.scores.items()},
        }


def groups_from_kinds(kinds, names):
    """Group label per column: the source column for one-hot outputs, else the name."""
    out = []
    for j, k in enumerate(kinds):
        out.append(k.split(":", 1)[1] if k.startswith("onehot:") else names[j])
    return out


def _search_lambda(P, yc, k, support, nonnegative, n_bisect, min_ratio):
    """Largest lambda (to bisection precision) whose support holds >= k groups."""
    lam_max = lasso_lambda_max(P, yc, nonnegative)
    # walk down a warm-started path until k groups survive, then bisect the last gap
    hi, lo, w, w_lo = lam_max, None, None, None
    lam = lam_max
    while lam > lam_max * min_ratio:
        lam *= 0.5
        w = lasso_cd(P, yc, lam, w0=w, nonnegative=nonnegative)[0]
        if len(support(w)) >= k:
            lo, w_lo = lam, w.copy()
            break
        hi = lam
    if lo is None:
        raise SelectionError(f"cannot reach k={k} features for lambda down to "
                             f"{min_ratio:g} * lambda_max; increase n_trees")
    w = w_lo
    for _ in range(n_bisect):
        mid = np.sqrt(lo * hi)
        w = lasso_cd(P, yc, mid, w0=w, nonnegative=nonnegative)[0]
        if len(support(w)) >= k:
            lo, w_lo = mid, w.copy()
        else:
            hi = mid
        if hi / lo < 1 + 1e-4:
            break
    return lo, w_lo


def _group_index(groups, d, k):
    groups = list(groups) if groups is not None else list(range(d))
    if len(groups) != d:
        raise SelectionError("one group label per column required")
    uniq = list(dict.fromkeys(groups))
    if not 1 <= k <= len(uniq):
        raise SelectionError(f"k={k} must be between 1 and the number of features ({len(uniq)})")
    gid = {g: i for i, g in enumerate(uniq)}
    return uniq, np.array([gid[g] for g in groups], dtype=int)


def _finish(score, alive, k, uniq, col_group, w, lam, feature_names):
    chosen = sorted(sorted(alive, key=lambda g: (-score[g], g))[:k])
    keep = set(chosen)
    cols = [j for j in range(col_group.size) if col_group[j] in keep]
    log.info("selected %d groups at lambda=%.4g", len(chosen), lam)
    return SelectionResult(cols, [uniq[g] for g in chosen], w, lam,
                           {uniq[g]: float(score[g]) for g in sorted(alive)},
                           tuple(feature_names))


def select_features(X, labels, k: int, config: ForestConfig = ForestConfig(), groups=None,
                    feature_names=(), nonnegative: bool = False, n_bisect: int = 40,
                    min_lambda_ratio: float = 1e-3):
    """Select exactly ``k`` features (or one-hot groups) from a pruned forest.

    Bisection on lambda finds the largest value whose surviving trees still
    use at least ``k`` groups; ties beyond ``k`` are broken by each group's
    share of split usage weighted by ``|tree weight|``.
    """
    X = np.asarray(X, float)
    uniq, col_group = _group_index(groups, X.shape[1], k)
    y = _check_labels(labels)
    forest = grow_forest(X, y, config)
    tree_groups = [frozenset(int(col_group[f]) for f in fs) for fs in forest.feature_sets]
    usage = np.zeros((forest.n_trees, len(uniq)))
    for t, tree in enumerate(forest.trees):
        f = tree.feature[tree.feature >= 0]
        if f.size:
            np.add.at(usage[t], col_group[f], 1.0 / f.size)
    reachable = set().union(*tree_groups) if tree_groups else set()
    if len(reachable) < k:
        raise SelectionError(f"forest uses only {len(reachable)} features, fewer than k={k}; "
                             "increase n_trees or max_depth")
    P, yc = forest.predictions, y - y.mean()

    def support(w):
        alive = np.flatnonzero(w != 0)
        return set().union(*(tree_groups[t] for t in alive)) if alive.size else set()

    best_lam, best_w = _search_lambda(P, yc, k, support, nonnegative, n_bisect, min_lambda_ratio)
    score = np.abs(best_w) @ usage
    return _finish(score, support(best_w), k, uniq, col_group, best_w, best_lam, feature_names)


def select_features_linear(X, labels, k: int, groups=None, feature_names=(),
                           n_bisect: int = 40, min_lambda_ratio: float = 1e-3):
    """Baseline selection: LASSO directly on standardized columns."""
    X = np.asarray(X, float)
    uniq, col_group = _group_index(groups, X.shape[1], k)
    y = _check_labels(labels)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    P = (X - X.mean(axis=0)) / sd

    def support(w):
        return {int(col_group[j]) for j in np.flatnonzero(w != 0)}

    lam, w = _search_lambda(P, y - y.mean(), k, support, False, n_bisect, min_lambda_ratio)
    score = np.zeros(len(uniq))
    np.add.at(score, col_group, np.abs(w))
    return _finish(score, support(w), k, uniq, col_group, w, lam, feature_names)


def fixed_horizon_labels(dataset: SurvivalDataset, horizon: float):
    """Binary proxy at ``horizon``: event by then -> 1, still at risk -> 0, else dropped."""
    if not horizon > 0:
        raise SelectionError("horizon must be > 0")
    T, E = dataset.time, dataset.event
    pos = E & (T <= horizon)
    neg = T > horizon
    keep = np.flatnonzero(pos | neg)
    if keep.size == 0:
        raise DatasetError(f"every record is censored before horizon {horizon:g}")
    return keep, pos[keep].astype(int)
