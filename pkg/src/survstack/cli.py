"""``survstack`` command line.

Exit codes: 0 success, 1 a pipeline stage failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml
from threadpoolctl import threadpool_limits

from . import pipeline as pl
from .core import read_table, validate_dataset
from .stacking import StackingConfig, stack
from .synth import SyntheticSpec, generate

log = logging.getLogger("survstack")

EXIT_OK, EXIT_STAGE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config(args) -> pl.PipelineConfig:
    cfg = pl.load_config(args.config) if args.config else pl.PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    threadpool_limits(limits=cfg.threads)
    return cfg


def _out(args, cfg, default_name=None) -> Path:
    out = Path(args.out or cfg.out_dir)
    if default_name and out.suffix:
        out.parent.mkdir(parents=True, exist_ok=True)
        return out
    out.mkdir(parents=True, exist_ok=True)
    return out / default_name if default_name else out


def _table(path):
    if not path:
        raise UsageError("--data is required")
    if not Path(path).is_file():
        raise UsageError(f"data file not found: {path}")
    return read_table(path)


def cmd_synth(args) -> int:
    if not args.config:
        raise UsageError("synth needs --config pointing at a synthetic spec file")
    p = Path(args.config)
    if not p.is_file():
        raise UsageError(f"spec file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text()) or {}
        if args.seed is not None:
            raw["seed"] = args.seed
        spec = SyntheticSpec.from_dict(raw)
    except (yaml.YAMLError, TypeError, ValueError, AttributeError) as exc:
        raise UsageError(f"invalid synthetic spec {p}: {exc}") from exc
    out = Path(args.out or "synth")
    out.mkdir(parents=True, exist_ok=True)
    with pl.stage("synth"):
        ds, oracle = generate(spec)
        pl.write_csv(ds.to_frame(), out / "dataset.csv")
        truth = {"spec": spec.to_dict(), "censoring_fraction": oracle.censoring_fraction,
                 **ds.summary()}
        pl.dump_json(truth, out / "truth.json")
    log.info("wrote %d records (%.1f%% censored) to %s", len(ds),
             100 * oracle.censoring_fraction, out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    paths = pl.run(cfg, args.out)
    for k, v in paths.items():
        log.info("%s -> %s", k, v)
    return EXIT_OK


def cmd_stack(args) -> int:
    cfg = _config(args)
    frame = _table(args.data)
    with pl.stage("stack"):
        ds = validate_dataset(frame)
        st = stack(ds, StackingConfig(cfg.gamma, cfg.seeds()["stack"]))
        pl.stacked_size_check(ds, st, cfg.gamma)
        pl.write_csv(st.to_frame(), _out(args, cfg, "stacked.csv"))
    return EXIT_OK


def _fit_all(cfg, frame):
    """Preprocessing fit on every row of ``frame`` and the transformed dataset."""
    with pl.stage("preprocess"):
        feats = frame.drop(columns=[c for c in ("time", "event") if c in frame.columns])
        pp = pl.fit_preprocess(feats, cfg.categorical)
        ds = pl.frame_to_dataset(pp, frame).require_events()
    return pp, ds


def cmd_select(args) -> int:
    cfg = _config(args)
    if cfg.selection == "none":
        cfg = replace(cfg, selection="controlburn")
    frame = _table(args.data)
    _, ds = _fit_all(cfg, frame)
    with pl.stage("select"):
        _, report = pl.run_selection(cfg, ds, cfg.seeds()["select"])
        pl.dump_json(report, _out(args, cfg, "selection.json"))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    frame = _table(args.data)
    pp, ds = _fit_all(cfg, frame)
    bundle, _ = pl.fit_bundle(cfg, ds, pp, cfg.seeds())
    with pl.stage("write"):
        bundle.save(_out(args, cfg, cfg.model_path))
    return EXIT_OK


def _bundle(args) -> pl.Bundle:
    if not args.model:
        raise UsageError("--model is required")
    if not Path(args.model).is_file():
        raise UsageError(f"model file not found: {args.model}")
    with pl.stage("load"):
        return pl.Bundle.load(args.model)


def _grid(cfg, bundle):
    return np.asarray(cfg.grid, float) if cfg.grid else bundle.default_grid(cfg.grid_points)


def cmd_predict(args) -> int:
    cfg = _config(args)
    bundle = _bundle(args)
    frame = _table(args.data)
    with pl.stage("predict"):
        X = bundle.features(frame)
        grid = _grid(cfg, bundle)
        S = bundle.survival(X, grid, cfg.seeds()["predict"])
        pl.write_csv(pl.curves_to_frame(grid, S), _out(args, cfg, "curves.csv"))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    bundle = _bundle(args)
    if not args.train:
        raise UsageError("evaluate needs --train (censoring weights come from training data)")
    train_frame, test_frame = _table(args.train), _table(args.data)
    with pl.stage("evaluate"):
        train, test = bundle.dataset(train_frame), bundle.dataset(test_frame)
        grid = np.asarray(cfg.grid, float) if cfg.grid else \
            pl.metrics.default_grid(test, cfg.grid_points)
        report, _ = pl.evaluate_bundle(bundle, train, test, grid, cfg.seeds()["predict"])
        pl.dump_json(report, _out(args, cfg, "report.json"))
    return EXIT_OK


def cmd_explain(args) -> int:
    cfg = _config(args)
    bundle = _bundle(args)
    frame = _table(args.data) if args.data else None
    out = _out(args, cfg)
    with pl.stage("explain"):
        shapes, importance = pl.explain(bundle, frame)
        if shapes is not None:
            pl.write_csv(shapes, out / "shapes.csv")
        pl.dump_json(importance, out / "importance.json")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    rep = pl.compare_estimators(cfg, args.out)
    log.info("median S(%g|x): product %.4f, integral %.4f", rep["time"],
             rep["product"]["median"], rep["integral"]["median"])
    return EXIT_OK


def cmd_init_config(args) -> int:
    text = _config(args).to_yaml()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (pipeline config; synth: a data spec)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (or file for single-output commands)")
    common.add_argument("--threads", type=int, help="cap BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="survstack", description="Survival stacking pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, data=False, model=False, train=False):
        sp = sub.add_parser(name, parents=[common], help=help_)
        if data:
            sp.add_argument("--data", help="input CSV with time/event columns")
        if model:
            sp.add_argument("--model", help="model bundle written by train or run")
        if train:
            sp.add_argument("--train", help="training CSV (for censoring weights)")
        sp.set_defaults(func=fn)

    add("synth", cmd_synth, "generate a synthetic dataset and truth sidecar")
    add("run", cmd_run, "split, select, stack, fit, predict and evaluate")
    add("stack", cmd_stack, "expand survival data into classification rows", data=True)
    add("select", cmd_select, "select k features", data=True)
    add("train", cmd_train, "fit a model bundle on all rows", data=True)
    add("predict", cmd_predict, "survival curves for new records", data=True, model=True)
    add("evaluate", cmd_evaluate, "AUC and Brier on a test CSV", data=True, model=True,
        train=True)
    add("explain", cmd_explain, "shape functions and importances", data=True, model=True)
    add("compare-estimators", cmd_compare, "product vs integral survival estimators")
    add("init-config", cmd_init_config, "write the default config with comments")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, pl.ConfigError) as exc:
        print(f"survstack: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pl.StageError as exc:
        print(f"survstack: error: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
