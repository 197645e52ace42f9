"""Command-line front end.

Subcommands cover the full workflow: quantile discretization of raw
panels, dependence screening, two-stage estimation, scenario simulation
and replication studies, Monte-Carlo forecasting, and the trivariate
benchmark comparison.  All heavy lifting lives in the library modules;
this file only parses options, moves tables, and reports failures.

Every run writes delimited tables with a single header row into the
requested output directory, plus a ``meta.json`` sidecar recording the
resolved options, a hash of them, and library versions, so a rerun with
identical inputs is byte-identical.  Exit status is 0 exactly when all
requested outputs were written; any failure prints one line to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .combine import ParamLayout, SystemFit, fit_system
from .copula import CopulaFamily
from .data import (
    Panel,
    discretize_quantile,
    infer_state_spaces,
    kendall_matrix,
    load_panel,
    save_panel,
    to_state_indices,
)
from .exceptions import DataError, OrdcopError
from .forecast import ForecastConfig, forecast_paths
from .marginal import Coding, MarginalSpec
from .reference import efficiency_report
from .simulate import (
    run_replication_study,
    scenario_from_dict,
    simulate_system,
    trivariate_gaussian_scenario,
)

JOBS_ENV_VAR = "ORDCOP_JOBS"


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV_VAR, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        return 1


def _write_records(path: Path, rows: list[dict]) -> None:
    if not rows:
        raise DataError(f"nothing to write to {path}")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def _write_meta(out_dir: Path, command: str, options: dict, outputs: list[str]):
    canon = json.dumps(options, sort_keys=True)
    meta = {
        "command": command,
        "options": options,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest()[:16],
        "outputs": sorted(outputs),
        "versions": {
            "ordcop": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }
    with open(out_dir / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _options_dict(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "func"}
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in skip:
            continue
        out[key] = str(value) if isinstance(value, Path) else value
    return out


def _out_dir(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc.msg}, line {exc.lineno})")
    if not isinstance(data, dict):
        raise DataError(f"{path}: expected a JSON object at top level")
    return data


def _parse_probs(text: str | None):
    if text is None:
        return None
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise DataError(f"could not parse probabilities from {text!r}")


def _parse_family(name: str) -> CopulaFamily:
    try:
        return CopulaFamily(name.lower())
    except ValueError:
        choices = ", ".join(f.value for f in CopulaFamily)
        raise DataError(f"unknown copula family {name!r} (choose from {choices})")


def _pair_families(args, n_series: int) -> list[CopulaFamily]:
    """Per-pair families: the global default plus any per-pair overrides."""
    pairs = [(r, s) for r in range(n_series) for s in range(r + 1, n_series)]
    table = {pair: _parse_family(args.copula) for pair in pairs}
    for spec in args.pair_copula or []:
        head, _, family = spec.partition("=")
        if not family:
            raise DataError(
                f"pair copula override {spec!r} must look like R,S=family"
            )
        try:
            r_lab, s_lab = (int(tok) for tok in head.split(","))
        except ValueError:
            raise DataError(f"bad series pair in {spec!r}; use 1-based indices")
        key = (min(r_lab, s_lab) - 1, max(r_lab, s_lab) - 1)
        if key not in table:
            raise DataError(f"{spec!r} names a pair outside series 1..{n_series}")
        table[key] = _parse_family(family)
    return [table[pair] for pair in pairs]


def _fit_from_panel(args, panel: Panel) -> tuple[SystemFit, np.ndarray]:
    if panel.n_series < 2:
        raise DataError("fitting needs at least 2 series")
    spaces = infer_state_spaces(panel)
    states = to_state_indices(panel, spaces)
    coding = Coding(args.coding)
    specs = tuple(
        MarginalSpec(k, args.lag, coding, spaces)
        for k in range(panel.n_series)
    )
    layout = ParamLayout(
        specs, _pair_families(args, panel.n_series), series_names=panel.names
    )
    return fit_system(states, layout), states


def _split_param_rows(fit: SystemFit) -> tuple[list[dict], list[dict]]:
    rows = fit.records()
    n_params = fit.layout.n_params
    n_marginal = fit.layout.n_marginal
    marginal = [r for i, r in enumerate(rows) if i % n_params < n_marginal]
    copulas = [r for i, r in enumerate(rows) if i % n_params >= n_marginal]
    return marginal, copulas


def cmd_discretize(args) -> None:
    out = _out_dir(args)
    panel = load_panel(args.input)
    states, breakpoints = discretize_quantile(
        panel, args.states, _parse_probs(args.probs)
    )
    save_panel(states, out / "states.csv")
    _write_records(out / "breakpoints.csv", [
        {"index": i + 1, "value": float(v)}
        for i, v in enumerate(breakpoints)
    ])
    _write_meta(out, "discretize", _options_dict(args),
                ["states.csv", "breakpoints.csv"])


def cmd_screen(args) -> None:
    out = _out_dir(args)
    panel = load_panel(args.input)
    if args.lag < 0:
        raise DataError("--lag must be nonnegative")
    rows = []
    for lag in range(args.lag + 1):
        mat = kendall_matrix(panel, lag)
        for r in range(panel.n_series):
            row = {"lag": lag, "series": r + 1}
            for m, name in enumerate(panel.names):
                row[name] = float(mat[r, m])
            rows.append(row)
    _write_records(out / "kendall.csv", rows)
    _write_meta(out, "screen", _options_dict(args), ["kendall.csv"])


def cmd_fit(args) -> None:
    out = _out_dir(args)
    panel = load_panel(args.input)
    fit, _ = _fit_from_panel(args, panel)
    marginal_rows, copula_rows = _split_param_rows(fit)
    _write_records(out / "params.csv", marginal_rows)
    _write_records(out / "copulas.csv", copula_rows)
    _write_meta(out, "fit", _options_dict(args), ["params.csv", "copulas.csv"])
    if not fit.converged:
        print("ordcop: warning: some pair fits did not converge", file=sys.stderr)


def cmd_simulate(args) -> None:
    out = _out_dir(args)
    scenario_dict = _load_json(args.scenario)
    for key, value in (
        ("n_obs", args.n_obs),
        ("n_replications", args.replications),
        ("seed", args.seed),
    ):
        if value is not None:
            scenario_dict[key] = value
    scenario = scenario_from_dict(scenario_dict)
    outputs = []
    if args.study:
        study = run_replication_study(scenario)
        _write_records(out / "estimates.csv", study.records())
        summary_rows = []
        for method in study.methods:
            summary = study.param_summary(method)
            for i, name in enumerate(summary["names"]):
                summary_rows.append({
                    "method": method,
                    "name": name,
                    "truth": float(summary["truth"][i]),
                    "q25": float(summary["q25"][i]),
                    "median": float(summary["median"][i]),
                    "q75": float(summary["q75"][i]),
                    "variance": float(summary["variance"][i]),
                })
        _write_records(out / "summary.csv", summary_rows)
        mse_rows = [
            {"method": m, **study.mse_summary(m)} for m in study.methods
        ]
        _write_records(out / "mse.csv", mse_rows)
        outputs += ["estimates.csv", "summary.csv", "mse.csv"]
    else:
        states = simulate_system(scenario)
        names = scenario.series_names or tuple(
            f"Z{k + 1}" for k in range(scenario.n_series)
        )
        save_panel(Panel(names, states.astype(float)), out / "panel.csv")
        outputs.append("panel.csv")
    _write_meta(out, "simulate", _options_dict(args), outputs)


def cmd_forecast(args) -> None:
    out = _out_dir(args)
    panel = load_panel(args.input)
    fit, states = _fit_from_panel(args, panel)
    config = ForecastConfig(
        horizon=args.horizon,
        n_paths=args.paths,
        method=args.method,
        summary=args.summary,
        seed=args.seed if args.seed is not None else 0,
    )
    result = forecast_paths(
        fit, config, states[-args.lag:], estimator=args.estimator
    )
    _write_records(out / "forecast.csv", result.records())
    outputs = ["forecast.csv"]
    if args.truth is not None:
        truth_panel = load_panel(args.truth)
        if tuple(truth_panel.names) != tuple(panel.names):
            raise DataError("truth file must have the same series as the input")
        if truth_panel.n_obs < args.horizon:
            raise DataError(
                f"truth file has {truth_panel.n_obs} rows, need {args.horizon}"
            )
        truth = to_state_indices(truth_panel, infer_state_spaces(panel))
        hit_rows = []
        hits = np.zeros(panel.n_series, dtype=int)
        for h in range(args.horizon):
            for k, name in enumerate(panel.names):
                match = int(result.point[h, k] == truth[h, k])
                hits[k] += match
                hit_rows.append({
                    "horizon": h + 1,
                    "series": name,
                    "forecast": int(result.point[h, k]),
                    "actual": int(truth[h, k]),
                    "hit": match,
                })
        _write_records(out / "hits.csv", hit_rows)
        _write_records(out / "hit_rates.csv", [
            {
                "series": name,
                "n": args.horizon,
                "hits": int(hits[k]),
                "rate": float(hits[k] / args.horizon),
            }
            for k, name in enumerate(panel.names)
        ])
        outputs += ["hits.csv", "hit_rates.csv"]
    _write_meta(out, "forecast", _options_dict(args), outputs)


def cmd_compare_appendix(args) -> None:
    out = _out_dir(args)
    scenario = trivariate_gaussian_scenario(
        n_obs=args.n_obs,
        n_replications=args.replications,
        seed=args.seed if args.seed is not None else 271,
    )
    report = efficiency_report(scenario)
    _write_records(out / "efficiency.csv", report.records())
    _write_meta(out, "compare-appendix", _options_dict(args),
                ["efficiency.csv"])


# options that must be present after merging defaults, config file, and flags
_REQUIRED = {
    "discretize": ("input", "states", "out"),
    "screen": ("input", "out"),
    "fit": ("input", "out"),
    "simulate": ("scenario", "out"),
    "forecast": ("input", "out"),
    "compare-appendix": ("out",),
}


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(
        prog="ordcop",
        description="Joint modeling of ordinal time series via pair copulas.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    by_name = {}

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--config", default=None,
                       help="JSON file of option defaults (flags override)")
        p.add_argument("--jobs", type=int, default=_default_jobs(),
                       help="max worker processes; results do not depend on "
                            "scheduling, and 1 runs everything serially")

    def model_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--lag", type=int, default=1,
                       help="autoregressive order p")
        p.add_argument("--coding", choices=[c.value for c in Coding],
                       default=Coding.INDICATOR.value,
                       help="how lagged states enter the regressions")
        p.add_argument("--copula", default=CopulaFamily.GUMBEL.value,
                       help="copula family for every pair "
                            "(gumbel, frank, gaussian)")
        p.add_argument("--pair-copula", action="append", metavar="R,S=FAMILY",
                       help="override the family of one pair, 1-based; "
                            "repeatable")

    p = by_name["discretize"] = sub.add_parser(
        "discretize", help="turn a continuous panel into ordinal states")
    p.add_argument("--input", default=None, help="continuous panel CSV")
    p.add_argument("--states", type=int, default=None,
                   help="number of ordinal states")
    p.add_argument("--probs", default=None,
                   help="comma-separated cumulative probabilities "
                        "(default: equal)")
    common(p)
    p.set_defaults(func=cmd_discretize)

    p = by_name["screen"] = sub.add_parser(
        "screen", help="Kendall tau-b dependence screening")
    p.add_argument("--input", default=None, help="panel CSV")
    p.add_argument("--lag", type=int, default=1,
                   help="largest lag to screen (0..L)")
    common(p)
    p.set_defaults(func=cmd_screen)

    p = by_name["fit"] = sub.add_parser(
        "fit", help="two-stage pairwise estimation")
    p.add_argument("--input", default=None, help="ordinal panel CSV")
    model_options(p)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = by_name["simulate"] = sub.add_parser(
        "simulate", help="generate from a scenario, optionally replicate")
    p.add_argument("--scenario", default=None, help="scenario JSON file")
    p.add_argument("--study", action="store_true",
                   help="run a replication study instead of one panel")
    p.add_argument("--n-obs", type=int, default=None,
                   help="override the scenario's series length")
    p.add_argument("--replications", type=int, default=None,
                   help="override the scenario's replication count")
    p.add_argument("--seed", type=int, default=None,
                   help="override the scenario's seed")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = by_name["forecast"] = sub.add_parser(
        "forecast", help="fit a panel, then Monte-Carlo forecast its future")
    p.add_argument("--input", default=None, help="ordinal panel CSV")
    p.add_argument("--horizon", type=int, default=1,
                   help="steps ahead to forecast")
    p.add_argument("--paths", type=int, default=10000,
                   help="Monte-Carlo paths")
    p.add_argument("--method", choices=["A", "B"], default="A",
                   help="per-pair draws plus mode (A) or averaged "
                        "probabilities (B)")
    p.add_argument("--summary", choices=["mode", "median"], default="mode",
                   help="point forecast summary")
    p.add_argument("--estimator", choices=["mean", "weighted"],
                   default="weighted", help="which synthesis to forecast from")
    p.add_argument("--seed", type=int, default=None, help="path RNG seed")
    p.add_argument("--truth", default=None,
                   help="panel CSV of realized values for hit rates")
    model_options(p)
    common(p)
    p.set_defaults(func=cmd_forecast)

    p = by_name["compare-appendix"] = sub.add_parser(
        "compare-appendix", help="efficiency study: two-stage vs joint "
                                 "pairwise vs full likelihood")
    p.add_argument("--n-obs", type=int, default=500, help="series length")
    p.add_argument("--replications", type=int, default=100,
                   help="replication count")
    p.add_argument("--seed", type=int, default=None, help="study seed")
    common(p)
    p.set_defaults(func=cmd_compare_appendix)

    return parser, by_name


def _resolve_args(parser, subparsers, argv) -> argparse.Namespace:
    """Parse twice so config-file values sit between defaults and flags."""
    args = parser.parse_args(argv)
    if args.config is not None:
        file_values = _load_json(args.config)
        reserved = {"func", "command", "config"}
        bad = reserved & set(file_values)
        if bad:
            raise DataError(
                f"{args.config}: option(s) {sorted(bad)} not allowed"
            )
        unknown = set(file_values) - set(vars(args))
        if unknown:
            raise DataError(
                f"{args.config}: unknown option(s) {sorted(unknown)}"
            )
        subparsers[args.command].set_defaults(**file_values)
        args = parser.parse_args(argv)
    for name in _REQUIRED[args.command]:
        if getattr(args, name) is None:
            raise DataError(f"--{name} is required for {args.command}")
    return args


def main(argv=None) -> int:
    parser, subparsers = build_parser()
    try:
        args = _resolve_args(parser, subparsers, argv)
        if args.jobs < 1:
            raise DataError("--jobs must be at least 1")
        args.func(args)
    except OrdcopError as exc:
        print(f"ordcop: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ordcop: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
