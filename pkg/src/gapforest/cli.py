"""Command-line interface: ``gapforest {synth,fit,score,eval,explain,embed}``.

Data goes to files or standard output; diagnostics go to standard error.
Exit status is 0 on success, 1 on a data or model error and 2 on a usage
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from gapforest import __version__
from gapforest.benchmarks import bundled
from gapforest.dataset import Dataset, inject_mcar, load_csv, stratified_subsample, write_csv
from gapforest.embed import classical_mds, histogram_summary, prepare_distances, spearman_rho
from gapforest.errors import DatasetError, ExplainError, ForestError, GapForestError, ScoreError
from gapforest.explain import (
    build_trajectory,
    counterfactual_importance,
    estimate_gradients,
    explanation_document,
    global_importance,
    write_explanation,
)
from gapforest.forest import ForestParams, partitions
from gapforest.forest_io import load_forest, save_forest
from gapforest.gap import write_distance_bin, write_distance_csv
from gapforest.pipeline import MISSING, MODES, FitOptions, fit_model, gap_scores, prepare
from gapforest.score import auc_roc, central_median_scores, euclidean_distances, knn_score, write_scores_csv
from gapforest.synth import generate

logger = logging.getLogger("gapforest")

DETECTORS = ("rf_uni", "extratrees", "euclidean_median", "knn@5")
MCAR_RATES = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
ISOLATED = {"error": "raise", "zero": "zero"}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- arguments

def _depth(text: str) -> int | str | None:
    if text in ("auto", "none"):
        return None if text == "none" else "auto"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, 'auto' or 'none', got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("depth must be >= 0")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _add_common(p: argparse.ArgumentParser, *, model: bool = True, forest: bool = True) -> None:
    p.add_argument("--input", required=False,
                   help="CSV with a header row, or bundled:NAME for packaged data")
    p.add_argument("--label-column", default="label",
                   help="name of the 0/1 label column if present (default: label)")
    p.add_argument("--output", help="output path (default: standard output where sensible)")
    p.add_argument("--seed", type=int, help="root seed for every random choice")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--missing", choices=MISSING, default="impute",
                   help="mean-impute missing cells or route them natively (default: impute)")
    if model:
        p.add_argument("--model", help="fitted model file; without it a forest is fitted first")
    if forest:
        p.add_argument("--mode", choices=tuple(MODES), default="rf_uni")
        p.add_argument("--trees", type=_positive_int, default=500)
        p.add_argument("--min-leaf", type=_positive_int, default=None)
        p.add_argument("--max-depth", type=_depth, default="auto",
                       help="integer, 'auto' (ceil(log2(rows)/2), default) or 'none'")
        p.add_argument("--mtry", type=_positive_int, default=None)
        p.add_argument("--synth-ratio", type=float, default=1.0)
        p.add_argument("--bounds", choices=("minmax", "percentile"), default="minmax")
        p.add_argument("--percentiles", type=float, nargs=2, metavar=("LOW", "HIGH"),
                       default=(1.0, 99.0))
        p.add_argument("--isolated", choices=tuple(ISOLATED), default="error",
                       help="rows with no voting tree: fail (default) or give them zero proximity")
    p.add_argument("--config", help="JSON file of option values; command-line flags win")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gapforest",
        description="Unsupervised outlier detection with random-forest GAP distances.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic contrast data for a dataset")
    _add_common(p, model=False, forest=False)
    p.add_argument("--mode", choices=("rf_uni", "rf_marginal"), default="rf_uni")
    p.add_argument("--synth-ratio", type=float, default=1.0)
    p.add_argument("--bounds", choices=("minmax", "percentile"), default="minmax")
    p.add_argument("--percentiles", type=float, nargs=2, metavar=("LOW", "HIGH"), default=(1.0, 99.0))

    p = sub.add_parser("fit", help="fit a forest and save it")
    _add_common(p, model=False)

    p = sub.add_parser("score", help="outlier scores from GAP distances")
    _add_common(p)
    p.add_argument("--distances", help="also write the distance matrix (.bin = binary, else CSV)")

    p = sub.add_parser("eval", help="AUCROC of several detectors on labelled datasets")
    _add_common(p, model=False)
    p.add_argument("--inputs", nargs="+", help="several datasets (overrides --input)")
    p.add_argument("--repeats", type=_positive_int, default=5)
    p.add_argument("--rows", type=_positive_int, default=1000,
                   help="stratified subsample size (default 1000)")
    p.add_argument("--full", action="store_true", help="use every row instead of subsampling")
    p.add_argument("--detectors", nargs="+", choices=DETECTORS, default=list(DETECTORS))
    p.add_argument("--mcar", action="store_true",
                   help="repeat at MCAR rates " + ", ".join(map(str, MCAR_RATES)))
    p.add_argument("--mcar-rates", type=float, nargs="+", default=None)
    p.add_argument("--knn-k", type=_positive_int, default=5)

    p = sub.add_parser("explain", help="counterfactual trajectory and crossed splits")
    _add_common(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--start", type=int, help="row index to explain")
    group.add_argument("--top-outliers", type=_positive_int, metavar="M",
                       help="explain the M highest-scoring rows")
    p.add_argument("--k", type=_positive_int, default=None, help="gradient neighbourhood size")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--max-steps", type=int, default=100)

    p = sub.add_parser("embed", help="classical MDS of GAP distances")
    _add_common(p)
    p.add_argument("--dims", type=_positive_int, default=2)
    p.add_argument("--report", help="JSON report path (default: OUTPUT with .json suffix)")
    return parser


def _config_defaults(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Feed values from --config into the chosen subcommand's defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config or not known.command:
        return
    try:
        with open(known.config, encoding="utf-8") as fh:
            config = json.load(fh)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from None
    if not isinstance(config, dict):
        raise UsageError("config file must hold a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    cmd = sub.choices.get(known.command)
    if cmd is None:
        return
    dests = {a.dest for a in cmd._actions}
    values = {}
    for key, value in config.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("help", "config"):
            raise UsageError(f"config key {key!r} is not an option of '{known.command}'")
        if dest == "max_depth" and isinstance(value, str):
            value = _depth(value)
        if dest == "percentiles":
            value = tuple(value)
        values[dest] = value
    cmd.set_defaults(**values)
    # a required option satisfied by the config is no longer required
    for action in cmd._actions:
        if action.dest in values:
            action.required = False


# ---------------------------------------------------------------- helpers

def _load(args, seed_needed: bool = False) -> Dataset:
    if not args.input:
        raise UsageError("--input is required")
    if args.input.startswith("bundled:"):
        return bundled(args.input.split(":", 1)[1], args.seed)
    path = Path(args.input)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh), [])
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror or exc}") from None
    label = args.label_column if args.label_column in (h.strip() for h in header) else None
    return load_csv(path, label)


def _params(args) -> ForestParams:
    return ForestParams(n_trees=args.trees, min_leaf=args.min_leaf, max_depth=args.max_depth,
                        mtry=args.mtry, seed=args.seed)


def _options(args) -> FitOptions:
    return FitOptions(args.mode, _params(args), args.synth_ratio, args.bounds,
                      tuple(args.percentiles))


def _need_seed(args) -> None:
    if args.seed is None:
        raise UsageError("--seed is required for this command")


def _forest(args, d: Dataset):
    if getattr(args, "model", None):
        forest = load_forest(args.model)
        if forest.feature_names != d.feature_names:
            raise ForestError("model and data have different feature columns")
        return forest
    _need_seed(args)
    return fit_model(d, _options(args), args.threads)


def _write_text(text: str, path: str | None) -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _fmt(x: float) -> str:
    return "inf" if np.isinf(x) else ("nan" if np.isnan(x) else f"{x:.6f}")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> None:
    _need_seed(args)
    d = _load(args)
    method = MODES[args.mode]
    s = generate(d, method, args.seed, args.synth_ratio, args.bounds, tuple(args.percentiles))
    if not args.output:
        raise UsageError("--output is required")
    write_csv(s, args.output, label_column=None)
    print(f"wrote {s.rows} synthetic rows to {args.output}")


def cmd_fit(args) -> None:
    _need_seed(args)
    if not args.output:
        raise UsageError("--output is required")
    d = prepare(_load(args), args.missing)
    forest = fit_model(d, _options(args), args.threads)
    save_forest(forest, args.output)
    print(f"mode: {forest.mode}")
    print(f"trees: {forest.n_trees}, internal nodes: {forest.internal_nodes()}")
    if forest.oob_accuracy is not None:
        print(f"oob_accuracy: {forest.oob_accuracy:.6f}")


def cmd_score(args) -> None:
    if not args.output:
        raise UsageError("--output is required")
    d = prepare(_load(args), args.missing)
    forest = _forest(args, d)
    result = gap_scores(forest, d, args.threads, ISOLATED[args.isolated])
    write_scores_csv(result.scores, args.output)
    if args.distances:
        writer = write_distance_bin if args.distances.endswith(".bin") else write_distance_csv
        writer(result.distances, args.distances)
    print(f"scored {d.rows} rows; {int(np.isinf(result.scores).sum())} infinite")
    if d.labels is not None and 0 < d.labels.sum() < d.rows:
        print(f"aucroc: {auc_roc(result.scores, d.labels):.6f}")


def _eval_one(d: Dataset, detector: str, args, seed: int) -> float:
    complete = prepare(d, "impute")
    if detector in ("rf_uni", "extratrees"):
        x = prepare(d, args.missing)
        params = ForestParams(n_trees=args.trees, min_leaf=args.min_leaf,
                              max_depth=args.max_depth, mtry=args.mtry, seed=seed)
        options = FitOptions(detector, params, args.synth_ratio, args.bounds,
                             tuple(args.percentiles))
        forest = fit_model(x, options, args.threads)
        scores = gap_scores(forest, x, args.threads, ISOLATED[args.isolated]).scores
    elif detector == "euclidean_median":
        scores = central_median_scores(euclidean_distances(complete))
    else:
        scores = knn_score(euclidean_distances(complete), args.knn_k)
    return auc_roc(scores, d.labels)


def cmd_eval(args) -> None:
    _need_seed(args)
    inputs = args.inputs or ([args.input] if args.input else [])
    if not inputs:
        raise UsageError("--input or --inputs is required")
    rates = tuple(args.mcar_rates) if args.mcar_rates else (MCAR_RATES if args.mcar else (0.0,))
    lines = [f"# gapforest {__version__} eval",
             f"# seed={args.seed} repeats={args.repeats} rows={args.rows} trees={args.trees} "
             f"missing={args.missing} max_depth={args.max_depth}",
             "dataset\tdetector\tmcar\trepeat\trows\tsample\taucroc"]
    summary = []
    for spec in inputs:
        args.input = spec
        data = _load(args)
        name = spec.split(":", 1)[1] if spec.startswith("bundled:") else Path(spec).stem
        if data.labels is None:
            raise ScoreError(f"{spec}: evaluation needs a {args.label_column!r} column")
        full = args.full or data.rows <= args.rows
        if full and not args.full:
            logger.warning("%s has %d rows (<= %d); using the full dataset", name, data.rows, args.rows)
        for rate in rates:
            results: dict[str, list[float]] = {det: [] for det in args.detectors}
            for r in range(args.repeats):
                seed = args.seed + r
                d = data if full else stratified_subsample(data, args.rows, seed)
                if rate > 0:
                    d = inject_mcar(d, rate, seed)
                for det in args.detectors:
                    auc = _eval_one(d, det, args, seed)
                    results[det].append(auc)
                    lines.append(f"{name}\t{det}\t{rate:g}\t{r}\t{d.rows}\t"
                                 f"{'full' if full else 'subsample'}\t{_fmt(auc)}")
            for det, aucs in results.items():
                a = np.asarray(aucs)
                sd = float(a.std(ddof=1)) if a.size > 1 else 0.0
                summary.append(f"{name}\t{det}\t{rate:g}\t{_fmt(float(a.mean()))}\t{_fmt(sd)}\t{a.size}")
    lines.append("# summary (mean and sample standard deviation over repeats)")
    lines.append("dataset\tdetector\tmcar\tmean\tsd\tn")
    lines.extend(summary)
    _write_text("\n".join(lines) + "\n", args.output)


def cmd_explain(args) -> None:
    if not args.output:
        raise UsageError("--output is required")
    d = _load(args)
    if d.has_missing and args.missing == "native":
        raise UsageError("explanations need complete data; use --missing impute")
    d = prepare(d, "impute")
    forest = _forest(args, d)
    result = gap_scores(forest, d, args.threads, ISOLATED[args.isolated])
    scores = result.scores
    if args.top_outliers:
        starts = [int(i) for i in np.argsort(-scores, kind="stable")[:args.top_outliers]]
    else:
        start = 0 if args.start is None else args.start
        if not 0 <= start < d.rows:
            raise ExplainError(f"start row {start} out of range 0..{d.rows - 1}")
        starts = [start]
    grads = estimate_gradients(d, scores, args.k)
    parts = partitions(forest)
    counts = global_importance(forest)
    docs = []
    for start in starts:
        traj = build_trajectory(d, scores, grads, start, args.learning_rate, args.max_steps)
        importance = counterfactual_importance(traj, parts, d) if len(traj) >= 2 else None
        doc = explanation_document(traj, importance, counts, d.feature_names)
        doc["gradient"] = {"k": grads.k,
                           "ill_conditioned": bool(grads.ill_conditioned[start]),
                           "degenerate": bool(grads.degenerate[start]),
                           "infinite_score": bool(grads.infinite_score[start])}
        docs.append(doc)
        print(f"row {start}: {len(traj)} point(s), stopped on {traj.reason}")
    write_explanation(docs[0] if args.top_outliers is None else {"explanations": docs}, args.output)


def cmd_embed(args) -> None:
    if not args.output:
        raise UsageError("--output is required")
    d = prepare(_load(args), args.missing)
    forest = _forest(args, d)
    D = gap_scores(forest, d, args.threads, ISOLATED[args.isolated]).distances
    finite, clamped = prepare_distances(D)
    emb = classical_mds(finite, args.dims)
    with open(args.output, "w", encoding="utf-8") as fh:
        fh.write(",".join(f"dim{k}" for k in range(emb.dims)) + "\n")
        for row in emb.coords:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    report = {
        "dims": emb.dims,
        "clamped_infinite": clamped,
        "clamp_value": float(finite.max()) if clamped else None,
        "stress": {str(k): v for k, v in emb.stress_by_dims.items()},
        "eigenvalues": [float(v) for v in emb.eigenvalues],
    }
    if not d.has_missing:
        report["spearman_euclidean"] = spearman_rho(euclidean_distances(d), D)
    if d.labels is not None and 0 < d.labels.sum() < d.rows:
        h = histogram_summary(D, d.labels)
        report["histogram"] = {
            "inlier_median": _fmt(h.inlier_median), "outlier_median": _fmt(h.outlier_median),
            "ratio": _fmt(h.ratio), "edges": [float(e) for e in h.edges],
            "inlier_counts": [int(c) for c in h.inlier_counts],
            "outlier_counts": [int(c) for c in h.outlier_counts],
            "inlier_infinite": h.inlier_infinite, "outlier_infinite": h.outlier_infinite,
        }
    report_path = args.report or str(Path(args.output).with_suffix(".json"))
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    print(f"{emb.dims}-D stress: {emb.stress_by_dims[emb.dims]:.6f}; {clamped} infinite distance(s) clamped")


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "score": cmd_score, "eval": cmd_eval,
            "explain": cmd_explain, "embed": cmd_embed}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _config_defaults(parser, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gapforest: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gapforest: error: {exc}", file=sys.stderr)
        return 2
    except GapForestError as exc:
        print(f"gapforest: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"gapforest: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
