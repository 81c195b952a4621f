"""Command-line entry point.

Exit codes: 0 success, 2 bad usage, 3 config error, 4 data error, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .conformal import ConformityScore, arw_prediction_interval
from .evaluation import (
    CoverageReport,
    aggregate_runs,
    make_report,
    summary_document,
    write_per_period_csv,
    write_summary_json,
)
from .experiment import ConfigError, ExperimentConfig, run_experiment
from .quantile_core import Grid, QuantileConfig, Variant, WindowedScores, select_window

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_IO = 5

OUT_ENV = "DRIFTCONFORMAL_OUT"


class DataError(ValueError):
    pass


def _fmt(x: float) -> str:
    # repr gives the shortest string that round-trips
    return repr(float(x))


def read_scores_csv(path) -> WindowedScores:
    """Read ``period,score`` rows; periods must cover ``1..t`` without gaps."""
    batches = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"period", "score"} <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain 'period' and 'score'")
        for row_no, row in enumerate(reader, start=2):
            try:
                period = int(row["period"])
                score = float(row["score"])
            except (TypeError, ValueError):
                raise DataError(f"{path}: row {row_no}: cannot parse period/score") from None
            if period < 1:
                raise DataError(f"{path}: row {row_no}: periods start at 1")
            if not math.isfinite(score):
                raise DataError(f"{path}: row {row_no}: score must be finite")
            batches[period].append(score)
    if not batches:
        raise DataError(f"{path}: no score rows")
    t = max(batches)
    missing = [j for j in range(1, t + 1) if j not in batches]
    if missing:
        raise DataError(f"{path}: period {missing[0]} has no scores (periods must be contiguous from 1)")
    return WindowedScores.from_batches(batches[j] for j in range(1, t + 1))


def read_predictions_csv(path):
    """Rows of ``id, mu[, sigma]``; returns ids, centers, and scales or None."""
    ids, mus, sigmas = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        if "mu" not in fields:
            raise DataError(f"{path}: header must contain 'mu'")
        has_sigma = "sigma" in fields
        for row_no, row in enumerate(reader, start=2):
            try:
                mu = float(row["mu"])
                sigma = float(row["sigma"]) if has_sigma else 1.0
            except (TypeError, ValueError):
                raise DataError(f"{path}: row {row_no}: cannot parse mu/sigma") from None
            if not math.isfinite(mu):
                raise DataError(f"{path}: row {row_no}: mu must be finite")
            if not sigma > 0 or not math.isfinite(sigma):
                raise DataError(f"{path}: row {row_no}: sigma must be positive and finite")
            ids.append(row.get("id") or str(row_no - 1))
            mus.append(mu)
            sigmas.append(sigma)
    return ids, np.array(mus), (np.array(sigmas) if has_sigma else None)


def _quantile_config(args) -> QuantileConfig:
    return QuantileConfig(args.alpha, args.delta_prime, args.variant, args.grid)


def cmd_calibrate(args) -> int:
    scores = read_scores_csv(args.scores)
    trace = select_window(scores, _quantile_config(args))
    result = {"t": trace.t, "chosen_k": trace.chosen_k, "threshold": trace.chosen_q}
    print(json.dumps(result))
    if args.trace_out:
        with open(args.trace_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "n_scores", "q_hat", "psi", "phi_hat", "objective", "chosen"])
            for row in trace.rows():
                writer.writerow(
                    [row["k"], row["n_scores"], _fmt(row["q_hat"]), _fmt(row["psi"]),
                     _fmt(row["phi_hat"]), _fmt(row["objective"]), int(row["chosen"])]
                )
    return EXIT_OK


def cmd_predict(args) -> int:
    scores = read_scores_csv(args.scores)
    ids, mus, sigmas = read_predictions_csv(args.predictions)
    config = _quantile_config(args)
    trace = select_window(scores, config)
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "lower", "upper", "threshold", "chosen_k"])
        for i, row_id in enumerate(ids):
            if sigmas is None:
                score = ConformityScore.absolute(lambda x, m=mus[i]: m)
            else:
                score = ConformityScore.studentized(lambda x, m=mus[i]: m, lambda x, s=sigmas[i]: s)
            interval = arw_prediction_interval(scores, config, score, None)
            writer.writerow([row_id, _fmt(interval.lower), _fmt(interval.upper), _fmt(trace.chosen_q), trace.chosen_k])
    print(json.dumps({"rows": len(ids), "chosen_k": trace.chosen_k, "threshold": trace.chosen_q, "out": str(out)}))
    return EXIT_OK


def _output_dir(args, config: ExperimentConfig) -> Path:
    out = args.out or config.out or os.environ.get(OUT_ENV) or "results"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_run_synthetic(args) -> int:
    config = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = args.seeds
    for name in ("alpha", "delta_prime", "variant", "grid"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    if overrides:
        from dataclasses import replace

        try:
            config = replace(config, **overrides)
        except ValueError as exc:
            raise ConfigError("flags", str(exc)) from None
    out = _output_dir(args, config)
    log = (lambda seed: print(f"seed {seed} done", file=sys.stderr)) if args.verbose else None
    result = run_experiment(config, progress=log, workers=args.workers)
    write_per_period_csv(out / "per_period.csv", result.per_period_rows())
    summary = result.summary()
    write_summary_json(out / "summary.json", summary)
    print(_format_table(summary))
    return EXIT_OK


def _format_table(summary: dict) -> str:
    methods = summary["methods"]
    lines = ["MAE of coverage (%)", "window " + " ".join(f"{m:>8}" for m in methods)]
    for row in summary["rows"]:
        cells = " ".join(f"{row['mae_pct'][m]:>8.2f}" for m in methods)
        lines.append(f"{row['training_window']:>6} {cells}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    if args.summary:
        with open(args.summary, encoding="utf-8") as fh:
            try:
                summary = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{args.summary}: line {exc.lineno}: {exc.msg}") from None
        print(_format_table(summary))
        return EXIT_OK
    cells = defaultdict(lambda: defaultdict(dict))
    with open(args.per_period, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row_no, row in enumerate(reader, start=2):
            try:
                key = (row["method"], int(row["training_window"]))
                cells[key][int(row["seed"])][int(row["t"])] = (float(row["coverage"]), float(row["width"]))
            except (KeyError, TypeError, ValueError):
                raise DataError(f"{args.per_period}: row {row_no}: malformed") from None
    if not cells:
        raise DataError(f"{args.per_period}: no rows")
    methods = list(dict.fromkeys(k[0] for k in cells))
    windows = sorted({k[1] for k in cells})
    aggregates = []
    for key, seeds in cells.items():
        reports: list[CoverageReport] = []
        for seed in sorted(seeds):
            series = seeds[seed]
            ts = sorted(series)
            if ts != list(range(1, len(ts) + 1)):
                raise DataError(f"{args.per_period}: {key} seed {seed}: periods not contiguous")
            cov = [series[t][0] for t in ts]
            width = [series[t][1] for t in ts]
            reports.append(make_report(key[0], key[1], cov, width, args.alpha, args.burn_in, seed))
        aggregates.append(aggregate_runs(reports))
    summary = summary_document(aggregates, methods, windows)
    if args.out:
        write_summary_json(args.out, summary)
    print(_format_table(summary))
    return EXIT_OK


def _seeds(text: str):
    try:
        if "," in text:
            return tuple(int(s) for s in text.split(",") if s.strip())
        return tuple(range(int(text)))
    except ValueError:
        raise argparse.ArgumentTypeError("seeds must be a count or a comma-separated list") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftconformal",
        description="Adaptive rolling-window prediction intervals under distribution drift.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def quantile_flags(p, defaults=True):
        p.add_argument("--alpha", type=float, default=0.1 if defaults else None)
        p.add_argument("--delta-prime", dest="delta_prime", type=float, default=0.1 if defaults else None)
        p.add_argument("--variant", choices=[v.value for v in Variant], default="experiment" if defaults else None)
        p.add_argument("--grid", choices=[g.value for g in Grid], default=None)

    p = sub.add_parser("run-synthetic", help="run a synthetic coverage experiment")
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--seeds", type=_seeds, help="seed count or comma-separated seeds")
    p.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./results)")
    p.add_argument("--workers", type=int, default=1, help="parallel seed workers")
    p.add_argument("-v", "--verbose", action="store_true")
    quantile_flags(p, defaults=False)
    p.set_defaults(func=cmd_run_synthetic)

    p = sub.add_parser("calibrate", help="select a window and threshold from a scores CSV")
    p.add_argument("--scores", required=True, help="CSV with columns period,score")
    p.add_argument("--trace-out", help="write per-window diagnostics CSV here")
    quantile_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="prediction intervals for rows of point predictions")
    p.add_argument("--scores", required=True, help="CSV with columns period,score")
    p.add_argument("--predictions", required=True, help="CSV with columns id,mu[,sigma]")
    p.add_argument("--out", required=True, help="output intervals CSV")
    quantile_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="print or rebuild a summary")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--summary", help="summary JSON written by run-synthetic")
    src.add_argument("--per-period", dest="per_period", help="per-period CSV to re-aggregate")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=100)
    p.add_argument("--out", help="write the rebuilt summary JSON here")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # invalid numeric flags such as alpha outside (0, 1)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
