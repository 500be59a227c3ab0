"""Cohort pseudo-panel construction and estimation for repeated cross-sections.

The package turns survey micro-data into birth-cohort cell means, then fits
the static ladder (pooled OLS, random effects, within FE) and dynamic panel
GMM (difference and system, one- and two-step) on the resulting panel, with
a synthetic data generator and Monte Carlo harness for validation.
"""

from .config import ConfigError, IvGroup, RunConfig, default_iv_groups, load_config
from .dgp import (
    DgpParams,
    generate_micro,
    generate_panel,
    monte_carlo,
    replication_rng,
    write_synthetic_inputs,
)
from .errors import (
    CohortPanelError,
    EmptyInputError,
    InvalidParamsError,
    MissingColumnError,
    MissingCpiYearError,
    OutOfRangeError,
    RankDeficientError,
    StageError,
    UnknownVariableError,
)
from .gmm import (
    GmmResult,
    GmmStyleVar,
    InstrumentSpec,
    estimate_diff_gmm,
    estimate_sys_gmm,
)
from .ingest import (
    CpiTable,
    IngestResult,
    Schema,
    load_covariates_csv,
    parse_micro_csv,
    prepare_analysis_set,
)
from .panel import (
    CohortKey,
    add_lag,
    aggregate,
    all_cohort_keys,
    check_cell_sizes,
    lag_name,
    read_panel,
    summarize,
    write_panel,
)
from .pipeline import Report, export_education_profiles, run, split_subgroups
from .report import render_table, results_frame, write_results_csv
from .static import (
    EstimationResult,
    ModelSpec,
    estimate_fe_within,
    estimate_ols,
    estimate_re_gls,
    hausman_test,
)

__version__ = "0.1.0"

__all__ = [
    "CohortKey",
    "CohortPanelError",
    "ConfigError",
    "CpiTable",
    "DgpParams",
    "EmptyInputError",
    "EstimationResult",
    "GmmResult",
    "GmmStyleVar",
    "IngestResult",
    "InstrumentSpec",
    "InvalidParamsError",
    "IvGroup",
    "MissingColumnError",
    "MissingCpiYearError",
    "ModelSpec",
    "OutOfRangeError",
    "Report",
    "RankDeficientError",
    "RunConfig",
    "Schema",
    "StageError",
    "UnknownVariableError",
    "add_lag",
    "aggregate",
    "all_cohort_keys",
    "check_cell_sizes",
    "default_iv_groups",
    "estimate_diff_gmm",
    "estimate_fe_within",
    "estimate_ols",
    "estimate_re_gls",
    "estimate_sys_gmm",
    "export_education_profiles",
    "generate_micro",
    "generate_panel",
    "hausman_test",
    "lag_name",
    "load_config",
    "load_covariates_csv",
    "monte_carlo",
    "parse_micro_csv",
    "prepare_analysis_set",
    "read_panel",
    "render_table",
    "replication_rng",
    "results_frame",
    "run",
    "split_subgroups",
    "summarize",
    "write_panel",
    "write_results_csv",
    "write_synthetic_inputs",
]
