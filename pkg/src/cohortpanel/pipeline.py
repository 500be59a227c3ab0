"""End-to-end study pipeline: ingestion, panel build, model ladders, artifacts.

Every stage is wrapped so failures surface as ``StageError`` with the stage
name; artifacts are written with stable formatting and catalogued in a
manifest whose bytes depend only on (config, seed, input data).
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd

from .config import IvGroup, RunConfig
from .errors import CohortPanelError, StageError
from .gmm import GmmStyleVar, InstrumentSpec, estimate_diff_gmm, estimate_sys_gmm
from .ingest import (
    CpiTable,
    Schema,
    load_covariates_csv,
    parse_micro_csv,
    prepare_analysis_set,
    write_rejects,
)
from .panel import (
    DEFAULT_VARIABLES,
    add_lag,
    aggregate,
    check_cell_sizes,
    lag_name,
    summarize,
    write_panel,
)
from .regions import load_region_map
from .report import (
    mean_lag_coefficient,
    render_descriptive,
    render_hausman,
    render_table,
    write_results_csv,
)
from .static import (
    ModelSpec,
    estimate_fe_within,
    estimate_ols,
    estimate_re_gls,
    hausman_test,
)

log = logging.getLogger(__name__)

ONESTEP = "onestep"
TWOSTEP = "twostep"


@dataclass
class Report:
    """Rendered study output plus the data needed to audit it."""

    descriptive: str | None = None
    static_table: str | None = None
    dynamic_table: str | None = None
    heterogeneity_table: str | None = None
    warnings: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)
    text: str = ""


def instrument_spec(group: IvGroup, label: str = "") -> InstrumentSpec:
    return InstrumentSpec(
        gmm_style=tuple(GmmStyleVar(name, collapse=group.collapse) for name in group.gmm),
        iv_style=tuple(group.iv),
        label=label,
    )


def split_subgroups(
    panel: pd.DataFrame,
    axis: str,
    generation_boundary: int = 1975,
    education_boundary: float = 11.0,
) -> list[tuple[str, pd.DataFrame]]:
    """Partition panel rows along one heterogeneity axis.

    gender and generation split whole cohorts by key; the education split is
    evaluated on each cohort-year cell's mean education, so a cohort whose
    education crosses the boundary mid-sample contributes rows to both sides.
    Empty subgroups are dropped with a warning.
    """
    if axis == "gender":
        masks = [("male", panel["gender"] == "male"), ("female", panel["gender"] == "female")]
    elif axis == "generation":
        older = panel["birth_bin"] < generation_boundary
        lo, hi = int(panel["birth_bin"].min()), int(panel["birth_bin"].max())
        masks = [
            (f"{lo}-{generation_boundary - 1}", older),
            (f"{generation_boundary}-{hi + 4}", ~older),
        ]
    elif axis == "education":
        basic = panel["edu"] <= education_boundary
        masks = [("basic edu", basic), ("higher edu", ~basic)]
    else:
        raise CohortPanelError(f"unknown subgroup axis: {axis!r}")

    out = []
    for name, mask in masks:
        sub = panel.loc[mask].reset_index(drop=True)
        if len(sub) == 0:
            log.warning("subgroup %s/%s is empty; skipped", axis, name)
            continue
        out.append((name, sub))
    return out


def export_education_profiles(panel: pd.DataFrame, path: str | Path) -> pd.DataFrame:
    """Write pooled mean education by birth bin and gender (figure data).

    One row per birth bin with male, female, gap, and overall columns; bins
    missing a gender cell are omitted with a warning.
    """
    by_gender = panel.groupby(["birth_bin", "gender"])["edu"].mean().unstack("gender")
    overall = panel.groupby("birth_bin")["edu"].mean()
    rows = []
    for birth_bin in by_gender.index:
        male = by_gender.at[birth_bin, "male"] if "male" in by_gender.columns else float("nan")
        female = by_gender.at[birth_bin, "female"] if "female" in by_gender.columns else float("nan")
        if pd.isna(male) or pd.isna(female):
            log.warning("birth bin %s lacks a gender cell; row omitted", birth_bin)
            continue
        rows.append(
            {
                "birth_bin": int(birth_bin),
                "male": float(male),
                "female": float(female),
                "gap": float(male - female),
                "overall": float(overall.at[birth_bin]),
            }
        )
    frame = pd.DataFrame(rows, columns=["birth_bin", "male", "female", "gap", "overall"])
    frame.to_csv(path, index=False)
    return frame


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _reference_group(config: RunConfig) -> tuple[str, IvGroup]:
    """IV group backing the heterogeneity columns (the final ladder spec)."""
    if "second" in config.iv_groups:
        return "second", config.iv_groups["second"]
    name = list(config.iv_groups)[-1]
    return name, config.iv_groups[name]


def run(config: RunConfig) -> Report:
    """Execute the configured study end to end and write all artifacts."""
    config.validate()
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = Report()
    sections: list[str] = []
    row_counts: dict[str, int] = {}

    # ingest
    try:
        schema = (
            Schema.from_csv(config.schema_csv)
            if config.schema_csv is not None
            else Schema.identity(include_covariates=config.covariates_csv is None)
        )
        covariates = (
            load_covariates_csv(config.covariates_csv)
            if config.covariates_csv is not None
            else None
        )
        region_map = (
            load_region_map(config.region_map_csv) if config.region_map_csv is not None else None
        )
        ingest_result = parse_micro_csv(
            config.micro_csv,
            schema=schema,
            cpi=CpiTable.from_csv(config.cpi_csv),
            covariates=covariates,
            region_map=region_map,
            birth_range=config.birth_range,
        )
        write_rejects(ingest_result.rejects, out_dir / "rejects.csv")
        analysis, n_trimmed = prepare_analysis_set(ingest_result.records)
        row_counts.update(
            rows_read=ingest_result.n_rows_read,
            rejected=len(ingest_result.rejects),
            trimmed=n_trimmed,
            analysis_rows=len(analysis),
        )
        if ingest_result.rejects:
            report.warnings.append(f"{len(ingest_result.rejects)} rows rejected at ingest")
    except Exception as exc:
        raise StageError("ingest", exc) from exc

    # panel
    try:
        variables = tuple(v for v in DEFAULT_VARIABLES if v in analysis.columns)
        panel = aggregate(analysis, variables=variables, bin_width=config.bin_width)
        for var in config.lag_variables:
            panel = add_lag(panel, var)
        small = check_cell_sizes(panel, min_n=config.min_cell_size)
        for key, year, n in small:
            report.warnings.append(
                f"cell below min size {config.min_cell_size}: "
                f"{key.birth_bin}/{key.gender}/{key.region} {year} has {n}"
            )
        write_panel(panel, out_dir / "panel.csv")
        row_counts["cells"] = len(panel)
        report.descriptive = render_descriptive(summarize(panel))
        sections.append(report.descriptive)
        if "edu" in panel.columns:
            export_education_profiles(panel, out_dir / "education_profiles.csv")
    except Exception as exc:
        raise StageError("panel", exc) from exc

    # static ladder
    if config.static:
        try:
            spec = ModelSpec(config.dependent, config.regressors)
            spec_dummies = ModelSpec(
                config.dependent, config.regressors, include_cohort_dummies=True
            )
            re_fit = estimate_re_gls(panel, spec)
            fe_fit = estimate_fe_within(panel, spec)
            columns = {
                "OLS(1)": estimate_ols(panel, spec),
                "OLS(2)": estimate_ols(panel, spec_dummies),
                "REM(3)": re_fit,
                "FEM(4)": fe_fit,
            }
            stat, df, p = hausman_test(fe_fit, re_fit)
            report.static_table = (
                render_table(
                    "Static ladder", columns, order=list(config.regressors), dependent=config.dependent
                )
                + "\n"
                + render_hausman(stat, df, p)
            )
            write_results_csv(columns, out_dir / "estimates_static.csv")
            sections.append(report.static_table)
        except Exception as exc:
            raise StageError("static", exc) from exc
    else:
        report.skipped.append("static")
        sections.append("Static ladder: skipped by configuration.")

    # dynamic ladder
    dep_lag = lag_name(config.dependent)
    dyn_spec = ModelSpec(config.dependent, (dep_lag,) + tuple(config.regressors))
    if config.dynamic:
        try:
            dyn_dummy_spec = ModelSpec(
                config.dependent,
                (dep_lag,) + tuple(config.regressors),
                include_cohort_dummies=True,
            )
            columns = {"OLS(1)": estimate_ols(panel, dyn_dummy_spec)}
            iv_row: dict[str, str] = {}
            i = 2
            for name, group in config.iv_groups.items():
                iv = instrument_spec(group, label=name)
                for label_fmt, fit in (
                    (f"Diff-GMM({i})", estimate_diff_gmm(panel, dyn_spec, iv, step=TWOSTEP)),
                    (f"Sys-GMM({i + 1})", estimate_sys_gmm(panel, dyn_spec, iv, step=ONESTEP)),
                    (f"Sys-GMM({i + 2})", estimate_sys_gmm(panel, dyn_spec, iv, step=TWOSTEP)),
                ):
                    columns[label_fmt] = fit
                    iv_row[label_fmt] = name
                i += 3
            lag_avg = mean_lag_coefficient(columns, dep_lag)
            report.dynamic_table = (
                render_table(
                    "Dynamic ladder",
                    columns,
                    order=[dep_lag] + list(config.regressors),
                    extra_rows=[("IV set", iv_row)],
                    dependent=config.dependent,
                )
                + f"\nAcross-model mean of {dep_lag} (descriptive only): "
                + f"{lag_avg:.4f}"
            )
            write_results_csv(columns, out_dir / "estimates_dynamic.csv")
            sections.append(report.dynamic_table)
        except Exception as exc:
            raise StageError("dynamic", exc) from exc
    else:
        report.skipped.append("dynamic")
        sections.append("Dynamic ladder: skipped by configuration.")

    # heterogeneity
    if config.heterogeneity:
        try:
            group_name, group = _reference_group(config)
            iv = instrument_spec(group, label=group_name)
            columns = {}
            for axis in config.subgroup_axes:
                subs = split_subgroups(
                    panel,
                    axis,
                    generation_boundary=config.generation_boundary,
                    education_boundary=config.education_boundary,
                )
                if len(subs) < 2:
                    report.warnings.append(f"subgroup axis {axis}: a side is empty; skipped")
                if axis == "education":
                    both = set(map(tuple, subs[0][1][["birth_bin", "gender", "region"]].values))
                    for _, sub in subs[1:]:
                        straddle = both & set(map(tuple, sub[["birth_bin", "gender", "region"]].values))
                        if straddle:
                            report.warnings.append(
                                f"education split: {len(straddle)} cohorts contribute to both sides"
                            )
                for name, sub in subs:
                    label = f"{name} ({axis})" if axis == "gender" else name
                    try:
                        columns[label] = estimate_sys_gmm(sub, dyn_spec, iv, step=TWOSTEP)
                    except CohortPanelError as exc:
                        report.warnings.append(f"subgroup {axis}/{name} not estimable: {exc}")
            if columns:
                report.heterogeneity_table = render_table(
                    f"Heterogeneity (system GMM, two-step, IV set {group_name})",
                    columns,
                    order=[dep_lag, "edu"],
                    extra_rows=[("Controls", {label: "yes" for label in columns})],
                    dependent=config.dependent,
                )
                write_results_csv(columns, out_dir / "estimates_subgroups.csv")
                sections.append(report.heterogeneity_table)
        except Exception as exc:
            raise StageError("heterogeneity", exc) from exc
    else:
        report.skipped.append("heterogeneity")
        sections.append("Heterogeneity: skipped by configuration.")

    # report and manifest
    try:
        report.provenance = {
            "config_sha256": config.digest(),
            "seed": config.seed,
            "row_counts": row_counts,
        }
        provenance_text = (
            "Provenance\n"
            f"  config sha256: {report.provenance['config_sha256']}\n"
            f"  seed: {config.seed}\n"
            + "".join(f"  {k}: {v}\n" for k, v in row_counts.items())
        ).rstrip()
        if report.warnings:
            sections.append("Warnings\n" + "\n".join(f"  - {w}" for w in report.warnings))
        sections.append(provenance_text)
        report.text = "\n\n".join(sections) + "\n"
        (out_dir / "report.txt").write_text(report.text, encoding="utf-8")

        artifacts = {
            p.name: _sha256(p)
            for p in sorted(out_dir.iterdir())
            if p.is_file() and p.name != "manifest.json"
        }
        manifest = {
            "config_sha256": report.provenance["config_sha256"],
            "seed": config.seed,
            "row_counts": row_counts,
            "sections": {
                name: ("skipped" if name in report.skipped else "done")
                for name in ("static", "dynamic", "heterogeneity")
            },
            "warnings": report.warnings,
            "artifacts": artifacts,
        }
        (out_dir / "manifest.json").write_text(
            json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
    except Exception as exc:
        raise StageError("report", exc) from exc

    return report
