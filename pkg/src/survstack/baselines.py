"""Cox proportional hazards (Breslow ties) and an L2 logistic hazard classifier."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .core import StepFunction, SurvivalDataset

COX_SCHEMA = "survstack.cox/v1"
LOGISTIC_SCHEMA = "survstack.logistic/v1"


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class CoxConfig:
    ridge: float = 1e-6
    max_iter: int = 100
    tol: float = 1e-9
    max_halvings: int = 30
    max_coef: float = 20.0


@dataclass(eq=False)
class CoxModel:
    beta: np.ndarray
    baseline_cumhaz: StepFunction
    diagnostics: dict = field(default_factory=dict)
    feature_names: tuple = ()

    def risk_score(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, float)) @ self.beta

    def survival(self, X, times) -> np.ndarray:
        """``S(t|x)`` for each row of ``X`` and each time, shape ``(n, m)``."""
        H0 = np.atleast_1d(self.baseline_cumhaz(np.asarray(times, float)))
        return np.exp(-np.exp(self.risk_score(X))[:, None] * H0[None, :])

    def to_dict(self) -> dict:
        return {
            "schema": COX_SCHEMA,
            "beta": self.beta.tolist(),
            "baseline_knots": self.baseline_cumhaz.knots.tolist(),
            "baseline_values": self.baseline_cumhaz.values.tolist(),
            "feature_names": list(self.feature_names),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CoxModel":
        if d.get("schema") != COX_SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        return cls(np.asarray(d["beta"], float),
                   StepFunction(d["baseline_knots"], d["baseline_values"], 0.0),
                   dict(d.get("diagnostics", {})), tuple(d.get("feature_names", ())))


class _RiskSets:
    """Rows sorted by descending time so ``R(T_i)`` is a prefix (ties share it)."""

    def __init__(self, X, time, event):
        order = np.argsort(-time, kind="stable")
        self.X = X[order]
        self.time = time[order]
        self.event = event[order]
        asc = self.time[::-1]
        self.end = len(time) - np.searchsorted(asc, self.time, side="left")

    def sums(self, beta):
        eta = self.X @ beta
        m = eta.max() if eta.size else 0.0
        w = np.exp(eta - m)
        S0 = np.cumsum(w)[self.end - 1]
        S1 = np.cumsum(w[:, None] * self.X, axis=0)[self.end - 1]
        return eta, m, w, S0, S1


def cox_log_partial_likelihood(beta, X, time, event, ridge=0.0) -> float:
    """Breslow log partial likelihood minus ``ridge/2 * |beta|^2``."""
    rs = _RiskSets(np.asarray(X, float), np.asarray(time, float), np.asarray(event, bool))
    return _loglik(rs, np.asarray(beta, float), ridge)


def _loglik(rs, beta, ridge):
    eta, m, _, S0, _ = rs.sums(beta)
    e = rs.event
    return float(np.sum(eta[e] - m - np.log(S0[e])) - 0.5 * ridge * beta @ beta)


def cox_gradient(beta, X, time, event, ridge=0.0) -> np.ndarray:
    rs = _RiskSets(np.asarray(X, float), np.asarray(time, float), np.asarray(event, bool))
    return _derivs(rs, np.asarray(beta, float), ridge)[1]


def _derivs(rs, beta, ridge):
    eta, m, w, S0, S1 = rs.sums(beta)
    e = rs.event
    mean = S1[e] / S0[e][:, None]
    ll = float(np.sum(eta[e] - m - np.log(S0[e])) - 0.5 * ridge * beta @ beta)
    grad = (rs.X[e] - mean).sum(axis=0) - ridge * beta
    # sum_i S2_i / S0_i == X' diag(w * c) X with c_r = sum over events whose risk set holds r
    acc = np.zeros(len(w))
    np.add.at(acc, rs.end[e] - 1, 1.0 / S0[e])
    c = np.cumsum(acc[::-1])[::-1]
    second = (rs.X * (w * c)[:, None]).T @ rs.X
    hess = -(second - mean.T @ mean) - ridge * np.eye(beta.size)
    return ll, grad, hess


def breslow_cumulative_hazard(dataset: SurvivalDataset, beta) -> StepFunction:
    """``Lambda_0(t) = sum_{t_i <= t} d_i / sum_{j in R(t_i)} exp(x_j beta)``."""
    X = np.asarray(dataset.X, float)
    w = np.exp(X @ np.asarray(beta, float))
    ev_t, d = np.unique(dataset.time[dataset.event], return_counts=True)
    order = np.argsort(dataset.time)
    t_sorted = dataset.time[order]
    tail = np.cumsum(w[order][::-1])[::-1]
    first = np.searchsorted(t_sorted, ev_t, side="left")
    return StepFunction(ev_t, np.cumsum(d / tail[first]), 0.0)


def fit_cox(dataset: SurvivalDataset, config: CoxConfig = CoxConfig()) -> CoxModel:
    """Newton-Raphson with step halving on the ridge-penalized Breslow likelihood."""
    dataset.require_events().require_finite()
    X = np.asarray(dataset.X, float)
    rs = _RiskSets(X, dataset.time, dataset.event)
    beta = np.zeros(X.shape[1])
    ll, grad, hess = _derivs(rs, beta, config.ridge)
    history = [ll]
    it = 0
    for it in range(1, config.max_iter + 1):
        if np.max(np.abs(grad), initial=0.0) < config.tol:
            it -= 1
            break
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-hess, grad, rcond=None)[0]
        for _ in range(config.max_halvings + 1):
            cand = beta + step
            ll_new = _loglik(rs, cand, config.ridge)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        else:
            raise ConvergenceError(
                f"line search failed at iteration {it}; gradient norm {np.abs(grad).max():.3g}")
        beta = cand
        if np.abs(beta).max(initial=0.0) > config.max_coef:
            raise ConvergenceError(
                f"coefficients diverging (|beta| = {np.abs(beta).max():.3g}); the data look "
                "separable (monotone likelihood), set ridge > 0")
        ll, grad, hess = _derivs(rs, beta, config.ridge)
        history.append(ll)
    else:
        if np.max(np.abs(grad), initial=0.0) >= config.tol:
            raise ConvergenceError(
                f"no convergence in {config.max_iter} iterations; gradient norm "
                f"{np.abs(grad).max():.3g}")
    diag = {"iterations": it, "loglik": ll, "grad_norm": float(np.abs(grad).max(initial=0.0)),
            "ridge": config.ridge, "loglik_history": history}
    return CoxModel(beta, breslow_cumulative_hazard(dataset, beta), diag, dataset.feature_names)


def cox_survival(model: CoxModel, x, t) -> float:
    return float(model.survival(np.atleast_2d(x), [t])[0, 0])


def cox_risk_score(model: CoxModel, x) -> float | np.ndarray:
    x = np.asarray(x, float)
    return float(x @ model.beta) if x.ndim == 1 else x @ model.beta


@dataclass(frozen=True)
class LogisticConfig:
    l2: float = 1.0
    max_iter: int = 100
    tol: float = 1e-8


@dataclass(eq=False)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    l2: float
    feature_names: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def decision_function(self, Z) -> np.ndarray:
        return np.atleast_2d(np.asarray(Z, float)) @ self.weights + self.intercept

    def predict_proba(self, Z) -> np.ndarray:
        return expit(self.decision_function(Z))

    def to_dict(self) -> dict:
        return {"schema": LOGISTIC_SCHEMA, "weights": self.weights.tolist(),
                "intercept": float(self.intercept), "l2": self.l2,
                "feature_names": list(self.feature_names), "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> "LogisticModel":
        if d.get("schema") != LOGISTIC_SCHEMA:
            raise ValueError(f"unsupported model schema {d.get('schema')!r}")
        return cls(np.asarray(d["weights"], float), float(d["intercept"]), float(d["l2"]),
                   tuple(d.get("feature_names", ())), dict(d.get("diagnostics", {})))


def logistic_objective(w, b, Z, y, l2) -> float:
    s = Z @ w + b
    return float(np.sum(np.logaddexp(0.0, s) - y * s) + 0.5 * l2 * w @ w)


def fit_logistic_matrix(Z, y, config: LogisticConfig = LogisticConfig(), feature_names=()):
    """Newton iterations on ``sum log-loss + l2/2 |w|^2`` (intercept unpenalized)."""
    Z = np.asarray(Z, float)
    y = np.asarray(y, float)
    if y.min() == y.max():
        raise ValueError("logistic regression needs both classes")
    n, d = Z.shape
    A = np.column_stack([Z, np.ones(n)])
    theta = np.zeros(d + 1)
    p0 = y.mean()
    theta[-1] = np.log(p0 / (1 - p0))
    pen = np.full(d + 1, config.l2)
    pen[-1] = 0.0
    obj = logistic_objective(theta[:-1], theta[-1], Z, y, config.l2)
    for it in range(1, config.max_iter + 1):
        p = expit(A @ theta)
        grad = A.T @ (p - y) + pen * theta
        if np.abs(grad).max() < config.tol * max(1.0, n):
            break
        H = (A * (p * (1 - p))[:, None]).T @ A + np.diag(pen)
        step = np.linalg.solve(H + 1e-12 * np.eye(d + 1), grad)
        for _ in range(31):
            cand = theta - step
            new = logistic_objective(cand[:-1], cand[-1], Z, y, config.l2)
            if new <= obj + 1e-12 * abs(obj):
                break
            step /= 2
        theta, obj = cand, new
    else:
        raise ConvergenceError(f"logistic fit did not converge in {config.max_iter} iterations")
    return LogisticModel(theta[:-1].copy(), float(theta[-1]), config.l2, tuple(feature_names),
                         {"iterations": it, "objective": obj})


def fit_logistic(stacked, config: LogisticConfig = LogisticConfig()) -> LogisticModel:
    names = tuple(stacked.feature_names) + ("stack_time",)
    return fit_logistic_matrix(stacked.rows, stacked.labels, config, names)
