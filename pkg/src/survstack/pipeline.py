"""End-to-end workflow: split, preprocess, select, stack, fit, predict, evaluate.

Every stage runs under :func:`stage` so a failure surfaces as
:class:`StageError` naming the stage. Outputs are plain JSON/CSV written with
fixed formatting so identical configs give byte-identical files.
"""
from __future__ import annotations

import json
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from . import metrics
from .baselines import (CoxConfig, CoxModel, LogisticConfig, LogisticModel, fit_cox,
                        fit_logistic)
from .core import (EVENT_COL, TIME_COL, DatasetError, StepFunction, SurvivalDataset,
                   read_table, validate_dataset)
from .gam import GamConfig, GamModel, feature_importance, fit_gam, shapes_frame
from .prediction import (CalibratedHazard, PredictionConfig, curves_to_frame,
                         discrete_survival_curves, event_intensity, survival_curves)
from .preprocess import PreprocessModel, fit_preprocess, split_indices, transform
from .selection import (ForestConfig, fixed_horizon_labels, groups_from_kinds, select_features,
                        select_features_linear)
from .stacking import StackingConfig, expected_size, stack
from .synth import SyntheticSpec, TruthOracle, generate

log = logging.getLogger(__name__)

BUNDLE_SCHEMA = "survstack.bundle/v1"
MODELS = ("gam", "logistic", "cox")
SELECTORS = ("none", "controlburn", "lasso-linear")


class ConfigError(ValueError):
    """Invalid or unreadable configuration (a usage error, not a stage failure)."""


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    log.info("stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is reported with its stage
        raise StageError(name, exc) from exc


# (field, comment) in file order; comments end up in the written template
_COMMENTS = {
    "data": "input CSV with `time`, `event` and feature columns; empty -> generate from `synth`",
    "synth": "synthetic-data spec used when `data` is empty (see survstack.synth.SyntheticSpec)",
    "out_dir": "output directory for reports, model bundle and exports",
    "model_path": "model bundle file name inside out_dir",
    "seed": "master seed; split, subsampling, boosting and Monte Carlo seeds derive from it",
    "test_fraction": "held-out fraction, stratified on the event indicator",
    "categorical": "columns forced to one-hot encoding (non-numeric columns always are)",
    "model": "hazard model: gam | logistic | cox (cox skips stacking)",
    "gamma": "negative subsampling probability for stacking; 0.01 is a chosen default, not fixed by the method",
    "selection": "feature selection: none | controlburn | lasso-linear",
    "k": "number of features (one-hot groups count once) to keep",
    "selection_horizon": "fixed-horizon proxy time; null -> median training event time",
    "selection_row_budget": "select on stacked rows when their expected count is below this, "
                            "else on the fixed-horizon proxy",
    "n_trees": "selection forest size",
    "max_depth": "deepest tree in the incremental-depth schedule",
    "bag_fraction": "row fraction per selection tree",
    "learning_rate": "GAM boosting step; 0.05 is a chosen default, not fixed by the method",
    "max_rounds": "GAM boosting round cap",
    "n_interactions": "GAM pairwise terms; 20 is a chosen default, not fixed by the method",
    "max_bins": "GAM histogram bins per feature; 64 is a chosen default, not fixed by the method",
    "validation_fraction": "GAM early-stopping holdout",
    "early_stop_patience": "GAM rounds without validation improvement before stopping",
    "n_bags": "GAM outer bags averaged into the final model",
    "logistic_l2": "L2 strength of the logistic hazard classifier",
    "cox_ridge": "ridge penalty of the Cox baseline (guards against separation)",
    "n_mc": "Monte Carlo time draws per grid cell; 64 is a chosen default, not fixed by the method",
    "stratified": "one Monte Carlo draw per equal sub-interval instead of plain uniform",
    "calibrate": "convert classifier output to a hazard rate (undo subsampling, "
                 "scale by event intensity) before integrating",
    "grid": "evaluation times; empty -> `grid_points` between the 10th and 90th percentile "
            "of test event times",
    "grid_points": "size of the default evaluation grid",
    "compare_time": "time at which compare-estimators contrasts the two survival estimators",
    "compare_bins": "histogram bins on [0, 1] for compare-estimators",
    "threads": "cap on BLAS worker threads",
}


@dataclass(frozen=True)
class PipelineConfig:
    data: str = ""
    synth: dict = field(default_factory=dict)
    out_dir: str = "out"
    model_path: str = "model.json"
    seed: int = 0
    test_fraction: float = 0.2
    categorical: tuple = ()
    model: str = "gam"
    gamma: float = 0.01
    selection: str = "none"
    k: int = 10
    selection_horizon: float | None = None
    selection_row_budget: int = 5_000_000
    n_trees: int = 100
    max_depth: int = 3
    bag_fraction: float = 0.5
    learning_rate: float = 0.05
    max_rounds: int = 5000
    n_interactions: int = 20
    max_bins: int = 64
    validation_fraction: float = 0.15
    early_stop_patience: int = 50
    n_bags: int = 1
    logistic_l2: float = 1.0
    cox_ridge: float = 1e-6
    n_mc: int = 64
    stratified: bool = True
    calibrate: bool = True
    grid: tuple = ()
    grid_points: int = 21
    compare_time: float = 5.0
    compare_bins: int = 20
    threads: int = 1

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.selection not in SELECTORS:
            raise ConfigError(f"selection must be one of {SELECTORS}, got {self.selection!r}")
        if not 0 < self.gamma <= 1:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.n_mc < 1 or self.k < 1 or self.grid_points < 2 or self.threads < 1:
            raise ConfigError("n_mc, k, threads must be >= 1 and grid_points >= 2")
        object.__setattr__(self, "categorical", tuple(self.categorical))
        object.__setattr__(self, "grid", tuple(float(t) for t in self.grid))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["categorical"] = list(self.categorical)
        d["grid"] = list(self.grid)
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "PipelineConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_yaml(self) -> str:
        """YAML text with one comment line per key."""
        out = ["# survstack pipeline configuration"]
        for key, value in self.to_dict().items():
            out.append(f"# {_COMMENTS[key]}")
            text = yaml.safe_dump(value, default_flow_style=True, width=10_000)
            out.append(f"{key}: {text.removesuffix(chr(10) + '...' + chr(10)).strip()}")
        return "\n".join(out) + "\n"

    def check_paths(self):
        if self.data and not Path(self.data).is_file():
            raise ConfigError(f"data file not found: {self.data}")

    def seeds(self) -> dict:
        names = ("split", "stack", "select", "model", "predict")
        kids = np.random.SeedSequence(self.seed).spawn(len(names))
        return {n: int(k.generate_state(1)[0]) for n, k in zip(names, kids)}

    def gam_config(self, seed) -> GamConfig:
        return GamConfig(learning_rate=self.learning_rate, max_rounds=self.max_rounds,
                         n_interactions=self.n_interactions, max_bins=self.max_bins,
                         validation_fraction=self.validation_fraction,
                         early_stop_patience=self.early_stop_patience, n_bags=self.n_bags,
                         seed=seed)


def load_config(path) -> PipelineConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path} must hold a mapping of settings")
    return PipelineConfig.from_dict(raw)


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(frame: pd.DataFrame, path):
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


# ---------------------------------------------------------------- data


@dataclass
class Prepared:
    train: SurvivalDataset
    test: SurvivalDataset
    preprocess: PreprocessModel
    oracle: TruthOracle | None = None
    counts: dict = field(default_factory=dict)
    test_raw: np.ndarray | None = None  # unscaled test covariates, for the oracle


def load_frame(config: PipelineConfig):
    """Raw table and (for synthetic data) the truth oracle."""
    if config.data:
        return read_table(config.data), None
    spec = SyntheticSpec.from_dict({**config.synth, "seed": config.synth.get("seed", config.seed)})
    ds, oracle = generate(spec)
    return ds.to_frame(), oracle


def frame_to_dataset(model: PreprocessModel, frame: pd.DataFrame) -> SurvivalDataset:
    base = validate_dataset(frame[[TIME_COL, EVENT_COL]], require_events=False)
    X = transform(model, frame.drop(columns=[TIME_COL, EVENT_COL]))
    return SurvivalDataset(X, base.time, base.event, model.output_names, model.output_kinds)


def prepare(config: PipelineConfig, seeds: dict) -> Prepared:
    with stage("load"):
        frame, oracle = load_frame(config)
        missing = [c for c in (TIME_COL, EVENT_COL) if c not in frame.columns]
        if missing:
            raise DatasetError(f"missing required column(s) {missing}")
        base = validate_dataset(frame[[TIME_COL, EVENT_COL]])
    with stage("split"):
        tr, te = split_indices(base.event, config.test_fraction, seeds["split"])
    with stage("preprocess"):
        feats = frame.drop(columns=[TIME_COL, EVENT_COL])
        pp = fit_preprocess(feats.iloc[tr].reset_index(drop=True), config.categorical)
        train = frame_to_dataset(pp, frame.iloc[tr].reset_index(drop=True))
        test = frame_to_dataset(pp, frame.iloc[te].reset_index(drop=True))
        train.require_events()
    counts = {"n_total": len(base), "n_train": len(train), "n_test": len(test),
              "train_events": train.n_events, "test_events": test.n_events,
              "n_features": train.n_features}
    log.info("rows: %d train (%d events), %d test (%d events), %d features",
             len(train), train.n_events, len(test), test.n_events, train.n_features)
    raw = None
    if oracle is not None:
        raw = frame.drop(columns=[TIME_COL, EVENT_COL]).iloc[te].to_numpy(float)
    return Prepared(train, test, pp, oracle, counts, raw)


# ---------------------------------------------------------------- stages


def run_selection(config: PipelineConfig, train: SurvivalDataset, seed: int):
    """Selection on stacked rows if they fit the row budget, else on the horizon proxy."""
    groups = groups_from_kinds(train.feature_kinds, train.feature_names)
    n_pos, n_neg = expected_size(train, config.gamma)
    if n_pos + n_neg <= config.selection_row_budget:
        st = stack(train, StackingConfig(config.gamma, seed))
        X, y, source = st.rows[:, :-1], st.labels, "stacked"
    else:
        horizon = config.selection_horizon or float(np.median(train.time[train.event]))
        keep, y = fixed_horizon_labels(train, horizon)
        X, source = train.X[keep], f"fixed_horizon@{horizon:g}"
    log.info("selection data: %s, %d rows", source, len(y))
    if config.selection == "controlburn":
        fc = ForestConfig(n_trees=config.n_trees, max_depth=config.max_depth,
                          bag_fraction=config.bag_fraction, seed=seed)
        res = select_features(X, y, config.k, fc, groups, train.feature_names)
    else:
        res = select_features_linear(X, y, config.k, groups, train.feature_names)
    report = res.to_dict()
    report.update({"method": config.selection, "data": source, "rows": int(len(y))})
    return res.selected, report


def stacked_size_check(train, st, gamma) -> dict:
    """Stacked row count against its expectation; deviations over 5 sd are logged."""
    n_pos, e_neg = expected_size(train, gamma)
    tol = 5.0 * math.sqrt(max(e_neg, 1.0))
    ok = st.n_positive == n_pos and abs(st.n_negative - e_neg) <= tol
    log.info("stacked %d rows: %d positive (expected %d), %d negative (expected %.1f +- %.1f)",
             len(st), st.n_positive, n_pos, st.n_negative, e_neg, tol)
    if not ok:
        log.warning("stacked size outside the 5-sd band of its expectation")
    return {"rows": len(st), "positive": st.n_positive, "negative": st.n_negative,
            "expected_positive": n_pos, "expected_negative": e_neg, "within_band": bool(ok)}


@dataclass(eq=False)
class Bundle:
    """Everything needed to go from a raw feature table to survival curves."""

    model_type: str
    model: object
    preprocess: PreprocessModel
    selected: list
    feature_names: tuple
    gamma: float
    calibrate: bool
    intensity: StepFunction | None
    event_times: np.ndarray
    n_mc: int = 64
    stratified: bool = True

    def features(self, frame: pd.DataFrame) -> np.ndarray:
        feats = frame.drop(columns=[c for c in (TIME_COL, EVENT_COL) if c in frame.columns])
        return transform(self.preprocess, feats)[:, self.selected]

    def features_with_time(self, frame: pd.DataFrame) -> np.ndarray:
        """Rows ``x || t`` at each record's observed time (median event time if absent)."""
        X = self.features(frame)
        if TIME_COL in frame.columns:
            t = pd.to_numeric(frame[TIME_COL]).to_numpy(float)
        else:
            t = np.full(len(frame), float(np.median(self.event_times)))
        return np.column_stack([X, t])

    def dataset(self, frame: pd.DataFrame) -> SurvivalDataset:
        ds = frame_to_dataset(self.preprocess, frame)
        return ds.select_features(self.selected)

    @property
    def stacked(self) -> bool:
        return self.model_type != "cox"

    def hazard(self, corrected=None):
        corrected = self.calibrate if corrected is None else corrected
        if corrected:
            return CalibratedHazard(self.model, self.gamma, self.intensity)
        return self.model

    def survival(self, X, grid, seed=0, corrected=None) -> np.ndarray:
        grid = np.asarray(grid, float)
        if not self.stacked:
            return self.model.survival(X, grid)
        cfg = PredictionConfig(self.n_mc, seed, tuple(grid), self.stratified)
        return survival_curves(self.hazard(corrected), X, cfg)

    def default_grid(self, n=21) -> np.ndarray:
        lo, hi = np.quantile(self.event_times, [0.1, 0.9])
        return np.linspace(lo, hi, n)

    def to_dict(self) -> dict:
        d = {"schema": BUNDLE_SCHEMA, "model_type": self.model_type,
             "model": self.model.to_dict(), "preprocess": self.preprocess.to_dict(),
             "selected_columns": [int(j) for j in self.selected],
             "feature_names": list(self.feature_names), "gamma": self.gamma,
             "calibrate": self.calibrate, "event_times": self.event_times.tolist(),
             "n_mc": self.n_mc, "stratified": self.stratified}
        if self.intensity is not None:
            d["intensity"] = {"knots": self.intensity.knots.tolist(),
                              "rates": self.intensity.values.tolist(),
                              "before": self.intensity.value_before_first_knot}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Bundle":
        if d.get("schema") != BUNDLE_SCHEMA:
            raise ValueError(f"unsupported bundle schema {d.get('schema')!r}")
        loader = {"gam": GamModel, "logistic": LogisticModel, "cox": CoxModel}[d["model_type"]]
        inten = d.get("intensity")
        return cls(d["model_type"], loader.from_dict(d["model"]),
                   PreprocessModel.from_dict(d["preprocess"]), list(d["selected_columns"]),
                   tuple(d["feature_names"]), float(d["gamma"]), bool(d["calibrate"]),
                   StepFunction(inten["knots"], inten["rates"], inten["before"]) if inten else None,
                   np.asarray(d["event_times"], float), int(d.get("n_mc", 64)),
                   bool(d.get("stratified", True)))

    def save(self, path):
        dump_json(self.to_dict(), path)

    @classmethod
    def load(cls, path) -> "Bundle":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_bundle(config: PipelineConfig, train: SurvivalDataset, preprocess: PreprocessModel,
               seeds: dict, info: dict | None = None) -> tuple[Bundle, SurvivalDataset]:
    """Optional selection, stacking and model fitting. Returns the bundle and the
    (column-selected) training set it was fit on."""
    info = {} if info is None else info
    selected = list(range(train.n_features))
    if config.selection != "none":
        with stage("select"):
            selected, info["selection"] = run_selection(config, train, seeds["select"])
            train = train.select_features(selected)
    intensity = None
    if config.model == "cox":
        log.info("model=cox: stacking skipped")
        with stage("fit"):
            model = fit_cox(train, CoxConfig(ridge=config.cox_ridge))
    else:
        with stage("stack"):
            st = stack(train, StackingConfig(config.gamma, seeds["stack"]))
            info["stacking"] = stacked_size_check(train, st, config.gamma)
        with stage("fit"):
            names = train.feature_names + ("stack_time",)
            if config.model == "gam":
                model = fit_gam(st.rows, st.labels, config.gam_config(seeds["model"]), names)
            else:
                model = fit_logistic(st, LogisticConfig(l2=config.logistic_l2))
            intensity = event_intensity(train)
    bundle = Bundle(config.model, model, preprocess, selected, train.feature_names,
                    config.gamma, config.calibrate, intensity, train.event_times(),
                    config.n_mc, config.stratified)
    return bundle, train


def evaluation_grid(config: PipelineConfig, test: SurvivalDataset) -> np.ndarray:
    if config.grid:
        return np.asarray(config.grid, float)
    return metrics.default_grid(test, config.grid_points)


def evaluate_bundle(bundle: Bundle, train, test, grid, seed) -> tuple[dict, np.ndarray]:
    """Report dict and the primary survival matrix for the test set."""
    S = bundle.survival(test.X, grid, seed)
    report = metrics.evaluate(train, test, S, grid).to_dict()
    if bundle.stacked:
        # Brier with and without the subsampling-offset correction
        S_raw = bundle.survival(test.X, grid, seed, corrected=False)
        S_cor = S if bundle.calibrate else bundle.survival(test.X, grid, seed, corrected=True)
        for key, M in (("uncorrected", S_raw), ("corrected", S_cor)):
            report["extra"][f"integrated_brier_{key}"] = metrics.integrate_brier_values(
                grid, metrics.brier_scores(train, test, M, grid))
        report["extra"]["survival_estimator"] = "corrected" if bundle.calibrate else "uncorrected"
    else:
        report["extra"]["survival_estimator"] = "breslow"
    return report, S


# ---------------------------------------------------------------- commands


def run(config: PipelineConfig, out_dir=None) -> dict:
    """Full pipeline; returns the paths written."""
    out = Path(out_dir or config.out_dir)
    config.check_paths()
    out.mkdir(parents=True, exist_ok=True)
    seeds = config.seeds()
    prep = prepare(config, seeds)
    info = {"counts": prep.counts}
    bundle, train = fit_bundle(config, prep.train, prep.preprocess, seeds, info)
    test = prep.test.select_features(bundle.selected)
    with stage("predict"):
        grid = evaluation_grid(config, test)
    with stage("evaluate"):
        report, S = evaluate_bundle(bundle, train, test, grid, seeds["predict"])
    report["extra"].update(info)
    report["extra"]["model"] = config.model
    if prep.oracle is not None:
        truth = prep.oracle.survival(prep.test_raw, grid)
        report["extra"]["curve_mae_vs_truth"] = float(np.abs(S - truth).mean())
    paths = {"report": out / "report.json", "model": out / config.model_path,
             "curves": out / "curves.csv"}
    with stage("write"):
        dump_json(report, paths["report"])
        bundle.save(paths["model"])
        write_csv(curves_to_frame(grid, S), paths["curves"])
        if "selection" in info:
            paths["selection"] = out / "selection.json"
            dump_json(info["selection"], paths["selection"])
        if config.model == "gam":
            paths["shapes"] = out / "shapes.csv"
            write_csv(shapes_frame(bundle.model), paths["shapes"])
        else:
            log.info("model=%s has no shape functions; shape export skipped", config.model)
    return paths


def explain(bundle: Bundle, frame: pd.DataFrame | None = None) -> tuple[pd.DataFrame | None, dict]:
    """Shape table (GAM only) and per-term importances."""
    m = bundle.model
    if bundle.model_type == "gam":
        imp = feature_importance(m, bundle.features_with_time(frame)) if frame is not None else {}
        return shapes_frame(m), imp
    coef = m.beta if bundle.model_type == "cox" else m.weights
    names = list(m.feature_names) or [f"x{j}" for j in range(coef.size)]
    order = np.argsort(-np.abs(coef), kind="stable")
    return None, {names[j]: float(coef[j]) for j in order}




def estimator_distributions(classifier, hazard, X, t: float, event_times, n_mc=64, seed=0,
                            bins=20, stratified=True) -> dict:
    """Distributions of ``S(t|x)`` over the rows of ``X`` from the discrete
    product estimator and the Monte Carlo integral estimator."""
    if not t > 0:
        raise ValueError("compare time must be > 0")
    prod = discrete_survival_curves(classifier, X, [t], event_times)[:, 0]
    cfg = PredictionConfig(n_mc, seed, (float(t),), stratified)
    integ = survival_curves(hazard, X, cfg)[:, 0]
    edges = np.linspace(0.0, 1.0, bins + 1)
    qs = (0.05, 0.25, 0.5, 0.75, 0.95)

    def summary(v):
        return {"histogram": np.histogram(v, bins=edges)[0].astype(int).tolist(),
                "quantiles": {f"{q:g}": float(np.quantile(v, q)) for q in qs},
                "median": float(np.median(v)), "mean": float(v.mean())}

    return {"time": float(t), "bin_edges": edges.tolist(), "n": int(len(prod)),
            "n_event_times": int(np.sum(np.asarray(event_times) <= t)),
            "product": summary(prod), "integral": summary(integ)}


def compare_estimators(config: PipelineConfig, out_dir=None) -> dict:
    if config.model == "cox":
        raise ConfigError("compare-estimators needs a stacked hazard classifier (gam or logistic)")
    out = Path(out_dir or config.out_dir)
    config.check_paths()
    out.mkdir(parents=True, exist_ok=True)
    seeds = config.seeds()
    prep = prepare(config, seeds)
    bundle, train = fit_bundle(config, prep.train, prep.preprocess, seeds)
    test = prep.test.select_features(bundle.selected)
    with stage("compare"):
        classifier = bundle.hazard(corrected=False)
        rep = estimator_distributions(classifier, bundle.hazard(), test.X, config.compare_time,
                                      bundle.event_times, config.n_mc, seeds["predict"],
                                      config.compare_bins, config.stratified)
        rep["integral_estimator"] = "corrected" if config.calibrate else "uncorrected"
        if prep.oracle is not None:
            truth = prep.oracle.survival(prep.test_raw, [config.compare_time])[:, 0]
            rep["true_median"] = float(np.median(truth))
        dump_json(rep, out / "compare.json")
    return rep
