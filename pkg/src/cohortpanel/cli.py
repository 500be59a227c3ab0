"""Command-line entry point.

Subcommands cover the pipeline stages individually (``ingest``, ``panel``,
``estimate``), the full study (``study``), and the synthetic generator plus
Monte Carlo harness (``simulate``). All failures exit nonzero with a
stage-tagged message on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .dgp import DgpParams, generate_panel, monte_carlo, write_synthetic_inputs
from .errors import CohortPanelError, StageError
from .ingest import (
    CpiTable,
    Schema,
    load_covariates_csv,
    parse_micro_csv,
    prepare_analysis_set,
    write_rejects,
)
from .panel import DEFAULT_VARIABLES, add_lag, aggregate, lag_name, summarize, write_panel
from .pipeline import instrument_spec, run, split_subgroups
from .regions import load_region_map
from .report import render_descriptive, render_table
from .static import ModelSpec, estimate_fe_within, estimate_ols, estimate_re_gls

_MODELS = ("ols", "fe", "re", "diff-gmm", "sys-gmm")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohortpanel")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="path to the run config file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    add_common(sub.add_parser("ingest", help="parse and validate the micro data"))
    add_common(sub.add_parser("panel", help="build the cohort panel"))

    est = sub.add_parser("estimate", help="fit a single model on the cohort panel")
    add_common(est)
    est.add_argument("--model", required=True, choices=_MODELS)
    est.add_argument("--steps", type=int, choices=(1, 2), default=2, help="GMM steps")
    est.add_argument("--iv-group", default=None, help="configured instrument group name")
    est.add_argument(
        "--subgroup",
        choices=("gender", "generation", "education"),
        default=None,
        help="fit the model separately on each side of this split",
    )

    add_common(sub.add_parser("study", help="run the full estimation ladder and report"))

    sim = sub.add_parser("simulate", help="write synthetic inputs; optionally Monte Carlo")
    add_common(sim, config_required=False)
    sim.add_argument("--reps", type=int, default=0, help="Monte Carlo replications (0: none)")
    return parser


def _load(args) -> RunConfig:
    config = load_config(args.config)
    if args.out is not None:
        config.output_dir = Path(args.out)
    if args.seed is not None:
        config.seed = args.seed
    return config


def _ingest(config: RunConfig):
    schema = (
        Schema.from_csv(config.schema_csv)
        if config.schema_csv is not None
        else Schema.identity(include_covariates=config.covariates_csv is None)
    )
    covariates = (
        load_covariates_csv(config.covariates_csv) if config.covariates_csv is not None else None
    )
    region_map = (
        load_region_map(config.region_map_csv) if config.region_map_csv is not None else None
    )
    result = parse_micro_csv(
        config.micro_csv,
        schema=schema,
        cpi=CpiTable.from_csv(config.cpi_csv),
        covariates=covariates,
        region_map=region_map,
        birth_range=config.birth_range,
    )
    analysis, n_trimmed = prepare_analysis_set(result.records)
    return result, analysis, n_trimmed


def _build_panel(config: RunConfig, analysis):
    variables = tuple(v for v in DEFAULT_VARIABLES if v in analysis.columns)
    panel = aggregate(analysis, variables=variables, bin_width=config.bin_width)
    for var in config.lag_variables:
        panel = add_lag(panel, var)
    return panel


def _cmd_ingest(args) -> int:
    config = _load(args)
    try:
        result, analysis, n_trimmed = _ingest(config)
    except Exception as exc:
        raise StageError("ingest", exc) from exc
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rejects(result.rejects, out / "rejects.csv")
    print(f"rows read: {result.n_rows_read}")
    print(f"rejected: {len(result.rejects)}")
    print(f"trimmed: {n_trimmed}")
    print(f"analysis rows: {len(analysis)}")
    return 0


def _cmd_panel(args) -> int:
    config = _load(args)
    try:
        _, analysis, _ = _ingest(config)
    except Exception as exc:
        raise StageError("ingest", exc) from exc
    try:
        panel = _build_panel(config, analysis)
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_panel(panel, out / "panel.csv")
        print(render_descriptive(summarize(panel)))
    except Exception as exc:
        raise StageError("panel", exc) from exc
    return 0


def _fit_one(panel, config: RunConfig, args):
    from .gmm import estimate_diff_gmm, estimate_sys_gmm

    dep_lag = lag_name(config.dependent)
    if args.model in ("ols", "fe", "re"):
        spec = ModelSpec(config.dependent, config.regressors)
        fit = {
            "ols": estimate_ols,
            "fe": estimate_fe_within,
            "re": estimate_re_gls,
        }[args.model]
        return fit(panel, spec)
    name = args.iv_group or next(iter(config.iv_groups))
    if name not in config.iv_groups:
        raise ConfigError(f"unknown IV group {name!r}")
    iv = instrument_spec(config.iv_groups[name], label=name)
    spec = ModelSpec(config.dependent, (dep_lag,) + tuple(config.regressors))
    step = "onestep" if args.steps == 1 else "twostep"
    fit = estimate_diff_gmm if args.model == "diff-gmm" else estimate_sys_gmm
    return fit(panel, spec, iv, step=step)


def _cmd_estimate(args) -> int:
    config = _load(args)
    try:
        _, analysis, _ = _ingest(config)
    except Exception as exc:
        raise StageError("ingest", exc) from exc
    try:
        panel = _build_panel(config, analysis)
    except Exception as exc:
        raise StageError("panel", exc) from exc
    try:
        if args.subgroup is None:
            columns = {args.model: _fit_one(panel, config, args)}
        else:
            columns = {
                name: _fit_one(sub, config, args)
                for name, sub in split_subgroups(
                    panel,
                    args.subgroup,
                    generation_boundary=config.generation_boundary,
                    education_boundary=config.education_boundary,
                )
            }
        print(render_table(f"Model: {args.model}", columns, dependent=config.dependent))
    except Exception as exc:
        raise StageError("estimate", exc) from exc
    return 0


def _cmd_study(args) -> int:
    config = _load(args)
    report = run(config)
    print(report.text, end="")
    return 0


def _cmd_simulate(args) -> int:
    seed = args.seed if args.seed is not None else 20240902
    out = Path(args.out) if args.out is not None else Path("out")
    params = DgpParams()
    try:
        paths = write_synthetic_inputs(params, seed, out)
        for name, path in sorted(paths.items()):
            print(f"{name}: {path}")
        if args.reps > 0:
            spec = ModelSpec("health", ("edu",) + tuple(params.beta))
            truth = params.beta_edu

            def one_rep(rng):
                panel = generate_panel(params, rng)
                fit = estimate_fe_within(panel, spec)
                est = fit.coefficient("edu")
                half = 1.959963984540054 * fit.std_error("edu")
                return {
                    "beta_edu": est,
                    "bias": est - truth,
                    "covered": float(abs(est - truth) <= half),
                }

            results = monte_carlo(args.reps, seed, one_rep, lambda r: r)
            results.to_csv(out / "mc_results.csv", index=True)
            print(f"replications: {args.reps}")
            print(f"mean bias: {results['bias'].mean():.6f}")
            print(f"sd: {results['beta_edu'].std(ddof=1):.6f}")
            print(f"coverage: {results['covered'].mean():.3f}")
    except CohortPanelError as exc:
        raise StageError("simulate", exc) from exc
    return 0


_COMMANDS = {
    "ingest": _cmd_ingest,
    "panel": _cmd_panel,
    "estimate": _cmd_estimate,
    "study": _cmd_study,
    "simulate": _cmd_simulate,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error: [config] {exc}", file=sys.stderr)
        return 1
    except CohortPanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
