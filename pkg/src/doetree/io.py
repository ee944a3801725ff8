"""CSV ingestion, tree rendering and serialization, and plot-data export."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .classic import EffectTable, half_normal
from .design import DataError, Dataset, Factor
from .glm import Family
from .simulation import PmseReport
from .tree import CVPath, NodeModel, Split, Tree, TreeConfig, TreeNode

__all__ = [
    "CsvSchema",
    "parse_csv",
    "read_csv_text",
    "dataset_to_csv",
    "render_tree",
    "tree_to_dict",
    "tree_from_dict",
    "tree_from_json",
    "emit_plot_data",
    "format_number",
]

TREE_FORMAT = "doetree-tree"
TREE_VERSION = 1


def format_number(x: float, digits: int = 6) -> str:
    """Text-mode number: ``digits`` significant digits."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "NA"
    return f"{float(x):.{digits}g}"


# ----------------------------------------------------------------------
# CSV
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    """How CSV columns map onto a :class:`Dataset`.

    Parameters
    ----------
    response : str
        Response column.
    factors : sequence of str, optional
        Factor columns; defaults to every column other than the response
        and ``n_column``.
    n_column : str, optional
        Binomial denominators; implies a proportion response.
    response_kind : str, optional
        ``"gaussian"``, ``"count"`` or ``"proportion"``; inferred from
        ``n_column`` when omitted.
    levels : mapping, optional
        Explicit level order per factor; otherwise first-appearance order.
    ordinal : mapping, optional
        Factors to treat as ordinal, mapped to their level scores or to
        ``None`` to read the scores from numeric labels.
    """

    response: str = "y"
    factors: tuple | None = None
    n_column: str | None = None
    response_kind: str | None = None
    levels: Mapping[str, Sequence[str]] = field(default_factory=dict)
    ordinal: Mapping[str, Sequence[float] | None] = field(default_factory=dict)


def parse_csv(path, schema: CsvSchema | None = None, name: str = "") -> Dataset:
    """Read a UTF-8 CSV file with a header row into a :class:`Dataset`.

    Raises
    ------
    DataError
        On missing columns or cells, non-numeric responses, non-integer
        counts, or successes exceeding the denominator.
    """
    text = Path(path).read_text(encoding="utf-8")
    return read_csv_text(text, schema, name or Path(path).stem)


def _ordinal_scores(labels: Sequence[str], scores) -> tuple[list[str], tuple]:
    if scores is not None:
        return list(labels), tuple(float(s) for s in scores)
    try:
        values = [float(v) for v in labels]
    except ValueError:
        return list(labels), tuple(float(i + 1) for i in range(len(labels)))
    order = sorted(range(len(labels)), key=lambda i: values[i])
    return [labels[i] for i in order], tuple(values[i] for i in order)


def read_csv_text(text: str, schema: CsvSchema | None = None, name: str = "") -> Dataset:
    """Parse CSV text; see :func:`parse_csv`."""
    schema = schema or CsvSchema()
    reader = csv.reader(io.StringIO(text.lstrip("﻿")))
    rows = [r for r in reader if r and not (len(r) == 1 and not r[0].strip()) and not r[0].startswith("#")]
    if not rows:
        raise DataError("CSV file is empty")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError("CSV file has a header but no data rows")
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    col = {h: i for i, h in enumerate(header)}
    for needed in [schema.response] + ([schema.n_column] if schema.n_column else []):
        if needed not in col:
            raise DataError(f"column {needed!r} not found")
    factor_names = list(schema.factors) if schema.factors is not None else [
        h for h in header if h not in (schema.response, schema.n_column)
    ]
    for f in factor_names:
        if f not in col:
            raise DataError(f"column {f!r} not found")
    if not factor_names:
        raise DataError("no factor columns")
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise DataError(f"line {i}: expected {len(header)} cells, found {len(r)}")
        if any(not c.strip() for c in r):
            raise DataError(f"line {i}: missing cell")

    def numbers(column: str) -> np.ndarray:
        out = []
        for i, r in enumerate(body, start=2):
            try:
                out.append(float(r[col[column]]))
            except ValueError:
                raise DataError(f"line {i}: {column!r} is not numeric") from None
        return np.array(out)

    factors, codes = [], []
    for f in factor_names:
        cells = [r[col[f]].strip() for r in body]
        if f in schema.levels:
            labels = [str(v) for v in schema.levels[f]]
            unknown = sorted(set(cells) - set(labels))
            if unknown:
                raise DataError(f"factor {f!r}: levels {unknown} not in the declared order")
        else:
            labels = list(dict.fromkeys(cells))
        if len(labels) < 2:
            raise DataError(f"factor {f!r} has a single level")
        if f in schema.ordinal:
            if f in schema.levels:
                scores = schema.ordinal[f]
                scores = tuple(float(s) for s in scores) if scores is not None else _ordinal_scores(labels, None)[1]
            else:
                labels, scores = _ordinal_scores(labels, schema.ordinal[f])
            fac = Factor(f, tuple(labels), "ordinal", scores)
        else:
            fac = Factor(f, tuple(labels))
        index = {lab: i for i, lab in enumerate(labels)}
        factors.append(fac)
        codes.append([index[c] for c in cells])
    y = numbers(schema.response)
    n_trials = numbers(schema.n_column) if schema.n_column else None
    kind = schema.response_kind or ("proportion" if n_trials is not None else "gaussian")
    if kind in ("count", "proportion") and np.any(y != np.round(y)):
        raise DataError("count responses must be integers")
    if n_trials is not None and np.any(n_trials != np.round(n_trials)):
        raise DataError("binomial denominators must be integers")
    if n_trials is not None and np.any(y > n_trials):
        raise DataError("response exceeds its binomial denominator")
    return Dataset(tuple(factors), np.array(codes, dtype=np.int64).T, y, n_trials, kind, name)


def dataset_to_csv(dataset: Dataset, response: str = "y", n_column: str = "n") -> str:
    """CSV text of a dataset: factor level labels, response and optional denominators."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = dataset.factor_names + [response] + ([n_column] if dataset.n_trials is not None else [])
    w.writerow(header)
    for codes, y, n in dataset.rows():
        cells = [f.levels[c] for f, c in zip(dataset.factors, codes)]
        yv = repr(y) if dataset.response_kind == "gaussian" else str(int(round(y)))
        w.writerow(cells + [yv] + ([str(n)] if n is not None else []))
    return buf.getvalue()


def schema_for(dataset: Dataset, response: str = "y", n_column: str = "n") -> CsvSchema:
    """Schema that reads :func:`dataset_to_csv` output back into an equal dataset."""
    return CsvSchema(
        response=response,
        factors=tuple(dataset.factor_names),
        n_column=n_column if dataset.n_trials is not None else None,
        response_kind=dataset.response_kind,
        levels={f.name: f.levels for f in dataset.factors},
        ordinal={f.name: f.scores for f in dataset.factors if f.kind == "ordinal"},
    )


# ----------------------------------------------------------------------
# Tree rendering
# ----------------------------------------------------------------------

_LINK_LHS = {"identity": "y", "log": "log(mu)", "logit": "logit(p)"}


def _equation(model: NodeModel, factors, digits: int) -> str:
    labels = model.labels(factors)
    parts = [format_number(model.coefficients[0], digits)]
    for lab, c in zip(labels[1:], model.coefficients[1:]):
        sign = "-" if c < 0 else "+"
        parts.append(f"{sign} {format_number(abs(c), digits)}*{lab}")
    return f"{_LINK_LHS[model.family.link]} = " + " ".join(parts)


def _render_text(tree: Tree, digits: int) -> str:
    lines = [
        f"tree: {tree.config.kind} node models, {tree.family.kind} family, {tree.n_leaves} leaves",
    ]
    if tree.cv is not None:
        lines.append(f"cross-validation: {tree.cv.folds} folds, subtree {tree.cv.chosen} of {len(tree.cv.alphas)}")

    def visit(node: TreeNode, indent: str, condition: str):
        head = f"{indent}{condition}node {node.node_id}"
        if node.is_leaf:
            lines.append(f"{head}: leaf n={node.n} mean={format_number(node.mean, digits)}")
            lines.append(f"{indent}    {_equation(node.model, tree.factors, digits)}")
            return
        fac = tree.factors[node.split.variable]
        lines.append(f"{head}: n={node.n} split on {fac.name}")
        cond = node.split.describe(fac)
        visit(node.left, indent + "  ", f"[{cond}] ")
        visit(node.right, indent + "  ", f"[not {cond}] ")

    visit(tree.root, "", "")
    return "\n".join(lines) + "\n"


def _num(x) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def _node_to_dict(node: TreeNode, factors) -> dict:
    m = node.model
    out = {
        "id": node.node_id,
        "depth": node.depth,
        "n": node.n,
        "mean": _num(node.mean),
        "deviance": _num(node.deviance),
        "terms": m.labels(factors),
        "columns": [[f, lev] for f, lev in m.columns],
        "coefs": [_num(c) for c in m.coefficients],
        "se": [_num(s) for s in m.std_errors],
        "model_deviance": _num(m.deviance),
    }
    if node.pvalues:
        pv = node.pvalues
        tests = {
            "curvature": [[factors[j].name, _num(p)] for j, p in sorted(pv.get("curvature", {}).items())],
            "interaction": [
                [factors[u].name, factors[v].name, _num(p)] for (u, v), p in sorted(pv.get("interaction", {}).items())
            ],
        }
        if "via_interaction" in pv:
            tests["via_interaction"] = [factors[j].name for j in pv["via_interaction"]]
        out["tests"] = tests
    if node.is_leaf:
        return out
    s = node.split
    fac = factors[s.variable]
    split = {"var": fac.name, "default_left": bool(s.default_left), "seen": [fac.levels[i] for i in sorted(s.seen)]}
    if s.kind == "threshold":
        split.update(op="<=", value=fac.levels[s.threshold])
    else:
        split.update(op="in", subset=[fac.levels[i] for i in sorted(s.subset)])
    out["split"] = split
    out["left"] = _node_to_dict(node.left, factors)
    out["right"] = _node_to_dict(node.right, factors)
    return out


def tree_to_dict(tree: Tree) -> dict:
    """Lossless nested-dict form of a tree (floats at full precision)."""
    cfg = tree.config
    out = {
        "format": TREE_FORMAT,
        "version": TREE_VERSION,
        "family": tree.family.kind,
        "config": {
            "kind": cfg.kind,
            "family": cfg.family,
            "min_node_size": cfg.min_node_size,
            "max_depth": cfg.max_depth,
            "n_bootstrap": cfg.n_bootstrap,
            "interactions": cfg.interactions,
            "regressors": None if cfg.regressors is None else list(cfg.regressors),
        },
        "factors": [
            {"name": f.name, "levels": list(f.levels), "kind": f.kind, "scores": None if f.scores is None else list(f.scores)}
            for f in tree.factors
        ],
        "root": _node_to_dict(tree.root, tree.factors),
    }
    if tree.cv is not None:
        cv = tree.cv
        out["cv"] = {
            "alphas": [_num(a) for a in cv.alphas],
            "betas": [_num(b) for b in cv.betas],
            "errors": [_num(e) for e in cv.errors],
            "std_errors": [_num(e) for e in cv.std_errors],
            "chosen": cv.chosen,
            "folds": cv.folds,
            "se_rule": cv.se_rule,
        }
    return out


def _float(x, missing=math.nan) -> float:
    return missing if x is None else float(x)


def _node_from_dict(d: dict, factors, family: Family) -> TreeNode:
    cols = tuple((int(f), None if lev is None else int(lev)) for f, lev in d["columns"])
    model = NodeModel(
        cols,
        np.array([_float(c) for c in d["coefs"]]),
        np.array([_float(s) for s in d["se"]]),
        _float(d.get("model_deviance", d.get("deviance"))),
        family,
    )
    names = [f.name for f in factors]
    pvalues = {}
    if "tests" in d:
        t = d["tests"]
        pvalues = {
            "curvature": {names.index(nm): _float(p) for nm, p in t.get("curvature", [])},
            "interaction": {(names.index(u), names.index(v)): _float(p) for u, v, p in t.get("interaction", [])},
        }
        if "via_interaction" in t:
            pvalues["via_interaction"] = tuple(names.index(nm) for nm in t["via_interaction"])
    args = (model, int(d["n"]), _float(d["mean"]), _float(d["deviance"]), int(d.get("depth", 0)), int(d["id"]))
    if "split" not in d:
        return TreeNode(*args, pvalues=pvalues)
    s = d["split"]
    j = names.index(s["var"])
    fac = factors[j]
    seen = frozenset(fac.levels.index(v) for v in s.get("seen", fac.levels))
    if s["op"] == "<=":
        split = Split(j, "threshold", threshold=fac.levels.index(s["value"]), seen=seen, default_left=bool(s["default_left"]))
    elif s["op"] == "in":
        subset = frozenset(fac.levels.index(v) for v in s["subset"])
        split = Split(j, "subset", subset=subset, seen=seen, default_left=bool(s["default_left"]))
    else:
        raise DataError(f"unknown split operator {s['op']!r}")
    return TreeNode(
        *args,
        split=split,
        left=_node_from_dict(d["left"], factors, family),
        right=_node_from_dict(d["right"], factors, family),
        pvalues=pvalues,
    )


def tree_from_dict(d: dict) -> Tree:
    """Inverse of :func:`tree_to_dict`."""
    if d.get("format") != TREE_FORMAT:
        raise DataError("not a serialized tree")
    factors = tuple(
        Factor(f["name"], tuple(f["levels"]), f["kind"], None if f.get("scores") is None else tuple(f["scores"]))
        for f in d["factors"]
    )
    c = d["config"]
    config = TreeConfig(
        kind=c["kind"],
        family=c["family"],
        min_node_size=c["min_node_size"],
        max_depth=c["max_depth"],
        n_bootstrap=c["n_bootstrap"],
        interactions=c["interactions"],
        regressors=None if c["regressors"] is None else tuple(c["regressors"]),
    )
    family = Family.of(d["family"])
    cv = None
    if "cv" in d:
        v = d["cv"]
        cv = CVPath(
            tuple(_float(a) for a in v["alphas"]),
            tuple(_float(b, math.inf) for b in v["betas"]),
            tuple(_float(e) for e in v["errors"]),
            int(v["chosen"]),
            int(v["folds"]),
            tuple(_float(e) for e in v.get("std_errors", [])),
            float(v.get("se_rule", 0.0)),
        )
    return Tree(_node_from_dict(d["root"], factors, family), factors, family, config, cv)


def tree_from_json(text: str) -> Tree:
    return tree_from_dict(json.loads(text))


def render_tree(tree: Tree, format: str = "text", digits: int = 6) -> str:
    """Render a tree as indented text or as JSON.

    Text lists each internal node's split condition and each leaf's size,
    mean and fitted equation, with ``digits`` significant digits. JSON is
    lossless; see :func:`tree_from_json`.
    """
    if format == "text":
        return _render_text(tree, digits)
    if format == "json":
        return json.dumps(tree_to_dict(tree), indent=2) + "\n"
    raise ValueError("format must be 'text' or 'json'")


# ----------------------------------------------------------------------
# Plot data
# ----------------------------------------------------------------------

_PLOT_TITLES = {
    "half_normal": "half-normal quantile plot of absolute effect estimates",
    "relative_pmse": "relative PMSE of each method by simulation model",
    "fitted_vs_x": "fitted values versus one factor, one line per leaf",
}


def _csv(title: str, header: list, rows: list) -> str:
    buf = io.StringIO()
    buf.write(f"# {title}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _leaf_conditions(tree: Tree):
    out = []

    def visit(node, conds):
        if node.is_leaf:
            out.append((node, conds))
            return
        fac = tree.factors[node.split.variable]
        cond = node.split.describe(fac)
        visit(node.left, conds + [cond])
        visit(node.right, conds + [f"not {cond}"])

    visit(tree.root, [])
    return out


def emit_plot_data(kind: str, payload) -> str:
    """Column-stable CSV for a plot, headed by a comment naming the plot.

    ``half_normal`` takes an :class:`EffectTable` or a sequence of
    estimates; ``relative_pmse`` a :class:`PmseReport`; ``fitted_vs_x`` a
    ``(tree, factor index or name)`` pair and writes, per leaf, the
    fitted line over the factor's two values with other regressors at 0.
    """
    if kind not in _PLOT_TITLES:
        raise ValueError(f"kind must be one of {tuple(_PLOT_TITLES)}")
    title = _PLOT_TITLES[kind]
    if kind == "half_normal":
        names = None
        if isinstance(payload, EffectTable):
            names = [f"x{i + 1}" for i in range(payload.k)]
        rows = []
        for i, (q, a, term) in enumerate(half_normal(payload), start=1):
            label = "" if term is None else ":".join(names[j] for j in sorted(term))
            rows.append([i, repr(q), repr(a), label])
        return _csv(title, ["rank", "half_normal_quantile", "abs_effect", "term"], rows)
    if kind == "relative_pmse":
        if not isinstance(payload, PmseReport):
            raise TypeError("relative_pmse needs a PmseReport")
        rows = [
            [payload.design, r.kind, r.method, repr(r.pmse), repr(r.mc_se), repr(r.relative)]
            for r in payload.rows
            if not math.isnan(r.relative)
        ]
        return _csv(title, ["design", "model", "method", "pmse", "mc_se", "relative_pmse"], rows)
    tree, var = payload
    names = [f.name for f in tree.factors]
    j = names.index(var) if isinstance(var, str) else int(var)
    fac = tree.factors[j]
    if not fac.is_numeric:
        raise DataError(f"factor {fac.name!r} has no numeric coding")
    xs = fac.values()
    rows = []
    for leaf, conds in _leaf_conditions(tree):
        m = leaf.model
        slope = sum(c for (f, lev), c in zip(m.columns, m.coefficients[1:]) if f == j and lev is None)
        a = float(m.coefficients[0])
        lo, hi = float(xs.min()), float(xs.max())
        rows.append([leaf.node_id, " and ".join(conds), leaf.n, repr(a), repr(float(slope)), repr(lo), repr(a + slope * lo), repr(hi), repr(a + slope * hi)])
    return _csv(title, ["leaf", "condition", "n", "intercept", "slope", "x_low", "fit_low", "x_high", "fit_high"], rows)
