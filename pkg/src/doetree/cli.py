"""Command-line interface: ``doetree {analyze, tree, simulate, datasets}``.

Exit codes: 0 success, 2 input validation, 3 numerical failure, 4
configuration error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import datasets as _datasets
from .classic import (
    MC_DRAWS,
    DEFAULT_MC_SEED,
    estimate_effects,
    select_eer,
    select_ier,
    select_lenth,
    stepwise_aic,
)
from .design import DataError, Dataset, term_label
from .glm import ConvergenceError
from .io import CsvSchema, dataset_to_csv, emit_plot_data, format_number, parse_csv, render_tree
from .simulation import MODEL_KINDS, run_study
from .tree import TreeConfig, cv_select, grow_tree, to_polynomial

__all__ = ["main", "main_exit", "build_parser"]

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4

_TREE_KINDS = {"constant": "constant", "simple": "best_simple", "multiple": "multiple", "stepwise": "stepwise"}
_DEFAULT_ALPHA = {"ier": 0.05, "eer": 0.10, "aic": None, "lenth-ier": 0.05, "lenth-eer": 0.10}


class ConfigError(Exception):
    """Invalid command-line configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_input(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="CSV file with a header row")
    src.add_argument("--dataset", help="embedded dataset id (see `datasets --list`)")
    p.add_argument("--response", default="y", help="response column (default: y)")
    p.add_argument("--n-column", default=None, help="binomial denominator column")
    p.add_argument("--factors", default=None, help="comma-separated factor columns (default: all others)")
    p.add_argument(
        "--ordinal",
        action="append",
        default=[],
        metavar="NAME[:s1,s2,...]",
        help="treat a factor as ordinal, optionally with level scores; repeatable",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="doetree", description="Model selection and regression trees for factorial experiments.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("analyze", help="classical effect selection on a two-level factorial")
    _add_input(a)
    a.add_argument("--method", required=True, choices=sorted(_DEFAULT_ALPHA))
    a.add_argument("--alpha", type=float, default=None)
    a.add_argument("--seed", type=int, default=DEFAULT_MC_SEED, help="seed of the Lenth Monte Carlo critical values")
    a.add_argument("--format", choices=("text", "json"), default="text")
    a.add_argument("--plot-data", default=None, metavar="FILE", help="write half-normal plot data as CSV")

    t = sub.add_parser("tree", help="grow and prune a regression tree")
    _add_input(t)
    t.add_argument("--model", choices=sorted(_TREE_KINDS), default="constant")
    t.add_argument("--family", choices=("gaussian", "poisson", "binomial"), default="gaussian")
    t.add_argument("--folds", type=int, default=10, help="cross-validation folds; 0 skips pruning")
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--max-depth", type=int, default=6)
    t.add_argument("--min-node-size", type=int, default=None)
    t.add_argument("--bootstrap", type=int, default=50, help="bootstrap resamples for p-value calibration")
    t.add_argument("--regressors", default=None, help="comma-separated factors allowed in node models")
    t.add_argument("--no-interactions", action="store_true", help="skip pairwise interaction tests")
    t.add_argument("--format", choices=("text", "json"), default="text")
    t.add_argument("--plot-data", default=None, metavar="FACTOR:FILE", help="write fitted-vs-factor lines as CSV")

    s = sub.add_parser("simulate", help="Monte Carlo PMSE comparison of selection methods")
    s.add_argument("--design", choices=("replicated", "unreplicated"), default="replicated")
    s.add_argument("--trials", type=int, default=1000)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--kinds", default=",".join(MODEL_KINDS), help="comma-separated simulation models")
    s.add_argument("--oracles", action="store_true", help="also report saturated and intercept-only fits")
    s.add_argument("--format", choices=("text", "json", "csv"), default="text")
    s.add_argument("--plot-data", default=None, metavar="FILE", help="write relative PMSE plot data as CSV")

    d = sub.add_parser("datasets", help="list or export embedded datasets")
    g = d.add_mutually_exclusive_group(required=True)
    g.add_argument("--list", action="store_true")
    g.add_argument("--export", metavar="ID")
    d.add_argument("--output", default=None, help="file to write (default: stdout)")
    return parser


def _schema(args, family: str = "gaussian") -> CsvSchema:
    ordinal = {}
    for spec in args.ordinal:
        name, _, scores = spec.partition(":")
        try:
            ordinal[name] = tuple(float(v) for v in scores.split(",")) if scores else None
        except ValueError:
            raise ConfigError(f"bad ordinal scores in {spec!r}") from None
    kind = {"gaussian": "gaussian", "poisson": "count", "binomial": "proportion"}[family]
    if family == "binomial" and not args.n_column:
        raise ConfigError("binomial family needs --n-column")
    return CsvSchema(
        response=args.response,
        factors=None if args.factors is None else tuple(f.strip() for f in args.factors.split(",")),
        n_column=args.n_column,
        response_kind=kind,
        ordinal=ordinal,
    )


def _load(args, family: str = "gaussian") -> Dataset:
    if args.dataset:
        try:
            return _datasets.load(args.dataset).dataset
        except KeyError as e:
            raise ConfigError(str(e.args[0])) from None
    path = Path(args.input)
    if not path.is_file():
        raise DataError(f"input file {str(path)!r} not found")
    try:
        return parse_csv(path, _schema(args, family))
    except UnicodeDecodeError:
        raise DataError("input is not valid UTF-8") from None


def _write(path: str, text: str):
    Path(path).write_text(text, encoding="utf-8")


# ----------------------------------------------------------------------
# analyze
# ----------------------------------------------------------------------


def _cmd_analyze(args, out) -> int:
    data = _load(args)
    method = args.method
    alpha = args.alpha if args.alpha is not None else _DEFAULT_ALPHA[method]
    if alpha is not None and not 0 < alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    table = estimate_effects(data)
    replicated = table.common_se is not None
    if method in ("ier", "eer", "aic") and not replicated:
        raise ConfigError(f"{method} needs a replicated design; use lenth-ier or lenth-eer")
    if method == "ier":
        model = select_ier(table, alpha)
    elif method == "eer":
        model = select_eer(table, alpha)
    elif method == "aic":
        model = stepwise_aic(data)
    else:
        model = select_lenth(table, method.split("-")[1].upper(), alpha, MC_DRAWS, args.seed)
    names = data.factor_names
    selected = sorted(model.terms, key=lambda t: (len(t), sorted(t)))
    coefs = model.fitted.coefficients
    if args.plot_data:
        _write(args.plot_data, emit_plot_data("half_normal", table))
    if args.format == "json":
        doc = {
            "method": method,
            "alpha": alpha,
            "n": data.n,
            "replicates": data.replicates(),
            "common_se": table.common_se,
            "dof": table.dof,
            "critical_value": model.critical_value,
            "aic": model.aic,
            "effects": [
                {"term": term_label(t, names), "estimate": float(e)} for t, e in zip(table.terms, table.estimates)
            ],
            "selected": [term_label(t, names) for t in selected],
            "fitted": [{"term": term_label(t, names), "coef": coefs[t]} for t in model.fitted.terms],
        }
        out.write(json.dumps(doc, indent=2) + "\n")
        return EXIT_OK
    lines = [f"method: {method}" + ("" if alpha is None else f" (alpha = {format_number(alpha)})")]
    lines.append(f"rows: {data.n}, replicates: {data.replicates()}")
    if table.common_se is not None:
        lines.append(f"common standard error: {format_number(table.common_se)} on {table.dof} df")
    if model.critical_value is not None:
        lines.append(f"critical value: {format_number(model.critical_value)}")
    if model.aic is not None:
        lines.append(f"AIC: {format_number(model.aic)}")
    lines.append("effects:")
    width = max(len(term_label(t, names)) for t in table.terms)
    for t, e in zip(table.terms, table.estimates):
        mark = " *" if t in model.terms else ""
        lines.append(f"  {term_label(t, names):<{width}}  {format_number(e):>12}{mark}")
    lines.append("selected: " + (", ".join(term_label(t, names) for t in selected) or "(none)"))
    lines.append("fitted: y = " + model.fitted.format(names, digits=6))
    out.write("\n".join(lines) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------------
# tree
# ----------------------------------------------------------------------


def _cmd_tree(args, out) -> int:
    data = _load(args, args.family)
    if args.folds == 1 or args.folds < 0:
        raise ConfigError("--folds must be 0 (no pruning) or at least 2")
    try:
        config = TreeConfig(
            kind=_TREE_KINDS[args.model],
            family=args.family,
            min_node_size=args.min_node_size,
            max_depth=args.max_depth,
            n_bootstrap=args.bootstrap,
            interactions=not args.no_interactions,
            regressors=None if args.regressors is None else tuple(r.strip() for r in args.regressors.split(",")),
        )
    except ValueError as e:
        raise ConfigError(str(e)) from None
    if args.folds == 0:
        tree = grow_tree(data, config, rng=np.random.default_rng(args.seed))
    else:
        if data.n < args.folds:
            raise ConfigError("fewer rows than cross-validation folds")
        tree = cv_select(data, config, folds=args.folds, seed=args.seed)
    if args.plot_data:
        var, _, path = args.plot_data.partition(":")
        if not path:
            raise ConfigError("--plot-data expects FACTOR:FILE")
        if var not in data.factor_names:
            raise ConfigError(f"unknown factor {var!r}")
        _write(path, emit_plot_data("fitted_vs_x", (tree, var)))
    if args.format == "json":
        out.write(render_tree(tree, "json"))
        return EXIT_OK
    text = render_tree(tree, "text")
    if tree.family.kind == "gaussian" and data.all_two_level:
        poly = to_polynomial(tree).pruned(1e-12)
        text += "expanded: y = " + poly.format(data.factor_names, digits=6) + "\n"
    out.write(text)
    return EXIT_OK


# ----------------------------------------------------------------------
# simulate
# ----------------------------------------------------------------------


def _cmd_simulate(args, out) -> int:
    if args.trials < 1:
        raise ConfigError("--trials must be positive")
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad or not kinds:
        raise ConfigError(f"unknown simulation models {bad}; choose from {MODEL_KINDS}")
    report = run_study(args.design, args.trials, args.seed, kinds=kinds, oracles=args.oracles)
    if args.plot_data:
        _write(args.plot_data, emit_plot_data("relative_pmse", report))
    if args.format == "json":
        out.write(report.to_json() + "\n")
    elif args.format == "csv":
        out.write(report.to_csv())
    else:
        lines = [f"design: {report.design}, trials: {report.trials}, seed: {report.seed}"]
        lines.append(f"{'model':<6} {'method':<16} {'pmse':>12} {'mc_se':>12} {'relative':>10}")
        for r in report.rows:
            rel = "" if math.isnan(r.relative) else format_number(r.relative)
            lines.append(f"{r.kind:<6} {r.method:<16} {format_number(r.pmse):>12} {format_number(r.mc_se):>12} {rel:>10}")
        out.write("\n".join(lines) + "\n")
    return EXIT_OK


# ----------------------------------------------------------------------
# datasets
# ----------------------------------------------------------------------


def _cmd_datasets(args, out) -> int:
    if args.list:
        for key in sorted(_datasets.REGISTRY):
            nd = _datasets.load(key)
            ds = nd.dataset
            out.write(f"{key}: {ds.n} rows, factors {', '.join(ds.factor_names)}\n    {nd.provenance}\n")
        return EXIT_OK
    try:
        nd = _datasets.load(args.export)
    except KeyError as e:
        raise ConfigError(str(e.args[0])) from None
    text = dataset_to_csv(nd.dataset)
    if args.output:
        _write(args.output, text)
    else:
        out.write(text)
    return EXIT_OK


_COMMANDS = {"analyze": _cmd_analyze, "tree": _cmd_tree, "simulate": _cmd_simulate, "datasets": _cmd_datasets}


def main(argv=None, out=None) -> int:
    """Run the CLI; returns the exit code."""
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args, out)
    except ConfigError as e:
        print(f"doetree: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as e:
        print(f"doetree: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except DataError as e:
        print(f"doetree: invalid input: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as e:
        print(f"doetree: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def main_exit():  # pragma: no cover
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_exit()
