"""Command-line interface.

Subcommands: simulate, train, predict, evaluate, recommend, impact.
Each run prints a single JSON summary to stdout; diagnostics go to stderr.

Exit codes: 0 success, 2 usage/configuration error, 3 data or validation
error, 4 numeric or fitting error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (TRUTH_PREFIX, CsvSchema, DGP_IDS, format_float,
                      generate_synthetic, load_csv, read_table,
                      read_numeric_column, stratified_split, write_csv)
from .errors import ConfigError, DataError, FitError
from .learners import KINDS, LearnerSpec
from .meta import (METHODS, ate_from_cate, fit_cate, ipw_ate, naive_ate_report,
                   predict_cate, recommend_from_scores, top_k_from_scores)
from .metrics import emit_curve, pehe, uplift_curve
from .persistence import load_model, model_to_json
from .uplift_forest import CRITERIA, UpliftForestSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_FIT = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _add_common(p):
    p.add_argument("--config", help="JSON file of option defaults; explicit flags win")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-jobs", type=int, default=1,
                   help="worker threads for forests and bootstrap draws")


def _add_schema(p):
    p.add_argument("--data", required=True, help="input CSV")
    p.add_argument("--treatment-col", default="w")
    p.add_argument("--control-label", default="0")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--feature-cols", default=None,
                   help="comma-separated; default: all other non-__ columns")
    p.add_argument("--propensity-col", default=None)
    p.add_argument("--outcome-kind", choices=("auto", "continuous", "binary"),
                   default="auto")


def _add_estimator(p):
    p.add_argument("--method", choices=METHODS, default="t")
    p.add_argument("--clip", type=float, default=0.01, help="propensity clip epsilon")
    g = p.add_argument_group("base learner")
    g.add_argument("--base", choices=KINDS, default="ridge")
    g.add_argument("--ridge-lambda", type=float, default=1e-3)
    g.add_argument("--n-trees", type=int, default=100)
    g.add_argument("--max-depth", type=int, default=6)
    g.add_argument("--min-leaf", type=int, default=5)
    g.add_argument("--feature-subsample", type=float, default=1.0)
    g.add_argument("--max-iter", type=int, default=100)
    g.add_argument("--tol", type=float, default=1e-8)
    f = p.add_argument_group("uplift forest")
    f.add_argument("--criterion", choices=CRITERIA, default="kl")
    f.add_argument("--forest-trees", type=int, default=100)
    f.add_argument("--forest-depth", type=int, default=5)
    f.add_argument("--min-leaf-per-group", type=int, default=10)
    f.add_argument("--forest-subsample", type=float, default=None)
    f.add_argument("--no-bootstrap", action="store_true")
    f.add_argument("--delta", type=float, default=1e-6)


def build_parser():
    parser = _Parser(prog="upliftkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic experiment CSV")
    _add_common(p)
    p.add_argument("--dgp", choices=DGP_IDS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-truth", action="store_true", help="omit the __tau column")

    p = sub.add_parser("train", help="fit a CATE model and save it as JSON")
    _add_common(p)
    _add_schema(p)
    _add_estimator(p)
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--test-fraction", type=float, default=None,
                   help="hold out this fraction (per arm) before fitting")
    p.add_argument("--holdout-out", default=None, help="CSV for the held-out rows")

    p = sub.add_parser("predict", help="per-arm CATE predictions")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate", help="uplift/Qini curve and PEHE")
    _add_common(p)
    _add_schema(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--scores-col")
    p.add_argument("--arm", default=None, help="arm label (default: first arm)")
    p.add_argument("--out", required=True, help="curve table path")
    p.add_argument("--format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("recommend", help="best arm per row and top-k targeting")
    _add_common(p)
    _add_schema(p)
    p.add_argument("--model", required=True)
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("impact", help="naive, IPW and CATE-mean ATE reports")
    _add_common(p)
    _add_schema(p)
    _add_estimator(p)
    p.add_argument("--bootstrap-b", type=int, default=200)
    p.add_argument("--out", required=True, help="JSON report")
    return parser, sub


def parse_args(argv):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("no subcommand given; see upliftkit --help")
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read --config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("--config must hold a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - set(vars(args)))
        if unknown:
            raise ConfigError(f"unknown --config keys: {', '.join(unknown)}")
        sub.choices[args.command].set_defaults(**cfg)
        args = parser.parse_args(argv)
    return args


def _schema(args):
    kind = None if args.outcome_kind == "auto" else args.outcome_kind
    feats = None
    if args.feature_cols:
        feats = tuple(c.strip() for c in args.feature_cols.split(",") if c.strip())
    return CsvSchema(treatment=args.treatment_col, outcome=args.outcome_col,
                     control=args.control_label, features=feats,
                     propensity=args.propensity_col, outcome_kind=kind)


def _specs(args):
    base = LearnerSpec(kind=args.base, ridge_lambda=args.ridge_lambda,
                       n_trees=args.n_trees, max_depth=args.max_depth,
                       min_leaf=args.min_leaf,
                       feature_subsample=args.feature_subsample,
                       max_iter=args.max_iter, tol=args.tol)
    forest = UpliftForestSpec(criterion=args.criterion, n_trees=args.forest_trees,
                              max_depth=args.forest_depth,
                              min_leaf_per_group=args.min_leaf_per_group,
                              feature_subsample=args.forest_subsample,
                              bootstrap=not args.no_bootstrap, delta=args.delta)
    return base, forest


def _write(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _model_frame(model, frame):
    if tuple(frame.feature_names) != model.feature_names:
        missing = [f for f in model.feature_names if f not in frame.feature_names]
        if missing:
            raise DataError(f"data lacks model feature column(s): {', '.join(missing)}")
        idx = [frame.feature_names.index(f) for f in model.feature_names]
        return frame.features[:, idx]
    return frame.features


def cmd_simulate(args):
    frame, truth = generate_synthetic(args.dgp, args.n, args.d, args.seed)
    write_csv(frame, args.out, truth=None if args.no_truth else truth)
    return {"command": "simulate", "dgp": args.dgp, "n": frame.n, "d": frame.d,
            "seed": args.seed, "out": str(args.out),
            "mean_tau": float(truth.tau.mean())}


def cmd_train(args):
    if args.test_fraction is not None and not args.holdout_out:
        raise ConfigError("--test-fraction requires --holdout-out")
    base, forest = _specs(args)
    frame = load_csv(args.data, _schema(args))
    summary = {"command": "train", "method": args.method, "seed": args.seed}
    holdout = None
    if args.test_fraction is not None:
        frame, holdout = stratified_split(frame, args.test_fraction, args.seed)
        summary["n_holdout"] = holdout.n
    model = fit_cate(frame, args.method, base, forest, args.seed, args.clip,
                     n_jobs=args.n_jobs)
    text = model_to_json(model)
    _write(args.out, text)
    if holdout is not None:
        write_csv(holdout, args.holdout_out, args.treatment_col, args.outcome_col,
                  args.propensity_col or "propensity")
    summary.update(n_train=frame.n, arms=list(model.arm_labels[1:]), out=str(args.out))
    return summary


def cmd_predict(args):
    model = load_model(args.model)
    frame = load_csv(args.data, _schema(args))
    tau = predict_cate(model, _model_frame(model, frame))
    lines = [",".join(f"tau_{lab}" for lab in model.arm_labels[1:])]
    lines += [",".join(format_float(v) for v in row) for row in tau]
    _write(args.out, "\n".join(lines) + "\n")
    return {"command": "predict", "n": frame.n, "arms": list(model.arm_labels[1:]),
            "mean_tau": [float(v) for v in tau.mean(axis=0)], "out": str(args.out)}


def _truth_column(path, frame, arm_k):
    header, _ = read_table(path)
    names = [TRUTH_PREFIX] if frame.n_arms == 1 else []
    names.append(f"{TRUTH_PREFIX}_{frame.arm_labels[arm_k]}")
    for name in names:
        if name in header:
            return read_numeric_column(path, name)
    return None


def cmd_evaluate(args):
    frame = load_csv(args.data, _schema(args))
    k = frame.arm_index(args.arm) if args.arm is not None else 1
    if args.model:
        model = load_model(args.model)
        label = frame.arm_labels[k]
        if label not in model.arm_labels:
            raise DataError(f"model has no arm {label!r}")
        scores = predict_cate(model, _model_frame(model, frame))[
            :, model.arm_labels.index(label) - 1]
    else:
        scores = read_numeric_column(args.data, args.scores_col)
    table = uplift_curve(scores, frame, k)
    summary = {"command": "evaluate", "arm": frame.arm_labels[k], "n": table.n,
               "auuc": table.auuc, "qini_coefficient": table.qini_coefficient}
    tau = _truth_column(args.data, frame, k)
    if tau is not None:
        summary["pehe"] = pehe(scores, tau)
    files = emit_curve(table, args.out, args.format)
    summary["out"] = [str(f) for f in files]
    return summary


def cmd_recommend(args):
    if not 0 < args.fraction <= 1:
        raise ConfigError(f"--fraction must lie in (0, 1], got {args.fraction}")
    model = load_model(args.model)
    frame = load_csv(args.data, _schema(args))
    tau = predict_cate(model, _model_frame(model, frame))
    arms = recommend_from_scores(tau, args.threshold)
    top = top_k_from_scores(tau.max(axis=1), args.fraction)
    flag = np.zeros(frame.n, dtype=int)
    flag[top] = 1
    lines = ["row,recommended,targeted"]
    lines += [f"{i},{model.arm_labels[a]},{flag[i]}" for i, a in enumerate(arms)]
    _write(args.out, "\n".join(lines) + "\n")
    counts = {lab: int(np.sum(arms == j)) for j, lab in enumerate(model.arm_labels)}
    return {"command": "recommend", "n": frame.n, "n_targeted": int(flag.sum()),
            "recommended_counts": counts, "out": str(args.out)}


def cmd_impact(args):
    if args.bootstrap_b < 10:
        raise ConfigError(f"--bootstrap-b must be >= 10, got {args.bootstrap_b}")
    base, forest = _specs(args)
    frame = load_csv(args.data, _schema(args))
    model = fit_cate(frame, args.method, base, forest, args.seed, args.clip,
                     n_jobs=args.n_jobs)
    reports = []
    cate = ate_from_cate(model, frame, args.bootstrap_b, args.seed, args.n_jobs)
    for k in range(1, frame.n_arms + 1):
        reports.append(naive_ate_report(frame, k, args.bootstrap_b, args.seed,
                                        args.n_jobs).to_dict())
        reports.append(ipw_ate(frame, k, args.clip, args.bootstrap_b, args.seed,
                               args.n_jobs).to_dict())
        reports.append(cate[k - 1].to_dict())
    _write(args.out, json.dumps({"reports": reports, "cate_method": args.method,
                                 "seed": args.seed}, sort_keys=True, indent=2) + "\n")
    return {"command": "impact", "reports": reports, "out": str(args.out)}


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "predict": cmd_predict,
            "evaluate": cmd_evaluate, "recommend": cmd_recommend, "impact": cmd_impact}


def run(argv=None, stdout=None, stderr=None):
    """Execute one CLI invocation and return its exit code."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = parse_args(list(sys.argv[1:] if argv is None else argv))
        summary = COMMANDS[args.command](args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=stderr)
        return EXIT_DATA
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"fit error: {exc}", file=stderr)
        return EXIT_FIT
    print(json.dumps(summary, sort_keys=True), file=stdout)
    return EXIT_OK


def main():
    return run()
