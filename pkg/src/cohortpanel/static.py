"""Static panel estimators: pooled OLS, within fixed effects, GLS random
effects, and the Hausman specification test.

All estimators consume the canonical cohort panel (one row per cohort-year
cell) and a ModelSpec naming the dependent variable and regressors. Rows
with a missing value in any used column are excluded, so a specification
containing a lag automatically restricts to rows where the lag exists.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    InsufficientObservationsError,
    InvalidParamsError,
    MismatchedSpecsError,
    UnknownVariableError,
)
from .linalg import chi_square_sf, normal_sf, solve_least_squares, symmetric_pinv
from .panel import KEY_COLUMNS

log = logging.getLogger(__name__)

CONST = "const"


@dataclass(frozen=True)
class ModelSpec:
    """Names the dependent variable and the ordered regressor list."""

    dependent: str
    regressors: tuple[str, ...]
    include_cohort_dummies: bool = False
    weights: bool = False
    robust: bool = False

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        if self.dependent in self.regressors:
            raise InvalidParamsError(f"dependent {self.dependent!r} also listed as regressor")
        if len(set(self.regressors)) != len(self.regressors):
            raise InvalidParamsError("duplicate regressor names")


@dataclass
class EstimationResult:
    method: str
    names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    cov: np.ndarray
    residuals: np.ndarray
    r_squared: float
    n_obs: int
    n_cohorts: int
    r_squared_within: float | None = None
    details: dict = field(default_factory=dict)

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])


def _model_frame(panel: pd.DataFrame, spec: ModelSpec) -> pd.DataFrame:
    used = [spec.dependent, *spec.regressors]
    for name in used:
        if name not in panel.columns:
            raise UnknownVariableError(name)
    cols = KEY_COLUMNS + ["year"] + (["n"] if "n" in panel.columns else []) + used
    frame = panel[cols].dropna(subset=used).reset_index(drop=True)
    return frame


def _cohort_ids(frame: pd.DataFrame) -> pd.Series:
    return frame[KEY_COLUMNS].astype(str).agg("|".join, axis=1)


def _finish(beta, XtX_inv, residuals, sigma2, robust, X):
    if robust:
        n, k = X.shape
        meat = (X * residuals[:, None] ** 2).T @ X
        cov = XtX_inv @ meat @ XtX_inv * (n / (n - k))
    else:
        cov = sigma2 * XtX_inv
    se = np.sqrt(np.diag(cov))
    t = np.divide(beta, se, out=np.zeros_like(beta), where=se > 0)
    p = np.array([2.0 * normal_sf(abs(v)) for v in t])
    return cov, se, t, p


def estimate_ols(panel: pd.DataFrame, spec: ModelSpec) -> EstimationResult:
    """Least squares with an intercept; cohort dummies and analytic cell
    weights are optional per the spec flags."""
    frame = _model_frame(panel, spec)
    cohorts = _cohort_ids(frame)
    y = frame[spec.dependent].to_numpy(dtype=float)
    X = np.column_stack([np.ones(len(frame))] + [frame[r].to_numpy(dtype=float) for r in spec.regressors])
    names = [CONST, *spec.regressors]

    if spec.include_cohort_dummies:
        levels = sorted(cohorts.unique())
        for level in levels[1:]:
            X = np.column_stack([X, (cohorts == level).to_numpy(dtype=float)])
            names.append(f"cohort[{level}]")

    n, k = X.shape
    if n < k + 1:
        raise InsufficientObservationsError(f"{n} rows for {k} parameters")

    if spec.weights:
        w = np.sqrt(frame["n"].to_numpy(dtype=float))
        beta, _ = solve_least_squares(X * w[:, None], y * w)
        residuals = y - X @ beta
        wr = residuals * w
        sigma2 = float(wr @ wr) / (n - k)
        XtX_inv = symmetric_pinv((X * w[:, None] ** 2).T @ X)[0]
        mean_y = float(np.average(y, weights=w**2))
        tss = float(np.sum(w**2 * (y - mean_y) ** 2))
        rss = float(wr @ wr)
    else:
        beta, residuals = solve_least_squares(X, y)
        sigma2 = float(residuals @ residuals) / (n - k)
        XtX_inv = symmetric_pinv(X.T @ X)[0]
        tss = float(np.sum((y - y.mean()) ** 2))
        rss = float(residuals @ residuals)

    cov, se, t, p = _finish(beta, XtX_inv, residuals, sigma2, spec.robust, X)
    r2 = 1.0 - rss / tss if tss > 0 else 1.0
    return EstimationResult(
        method="ols+dummies" if spec.include_cohort_dummies else "ols",
        names=names,
        coefficients=beta,
        std_errors=se,
        t_stats=t,
        p_values=p,
        cov=cov,
        residuals=residuals,
        r_squared=r2,
        n_obs=n,
        n_cohorts=int(cohorts.nunique()),
        details={"sigma2": sigma2},
    )


def estimate_fe_within(panel: pd.DataFrame, spec: ModelSpec) -> EstimationResult:
    """Within estimator: subtract cohort means over time, then least squares.

    Cohorts contributing a single usable row are dropped with a warning
    (their within variation is identically zero). Degrees of freedom deduct
    one mean per retained cohort.
    """
    frame = _model_frame(panel, spec)
    cohorts = _cohort_ids(frame)
    sizes = cohorts.map(cohorts.value_counts())
    singletons = sorted(cohorts[sizes < 2].unique())
    if singletons:
        log.warning("dropping %d singleton cohorts from FE: %s", len(singletons), singletons)
        keep = (sizes >= 2).to_numpy()
        frame = frame.loc[keep].reset_index(drop=True)
        cohorts = cohorts.loc[keep].reset_index(drop=True)

    y = frame[spec.dependent].to_numpy(dtype=float)
    X = np.column_stack([frame[r].to_numpy(dtype=float) for r in spec.regressors])
    n, k = X.shape
    groups = cohorts.to_numpy()
    n_cohorts = len(np.unique(groups))
    if n < k + n_cohorts + 1:
        raise InsufficientObservationsError(f"{n} rows for {k} slopes and {n_cohorts} cohort means")

    frame_g = pd.DataFrame(X, columns=list(spec.regressors)).assign(_y=y, _g=groups)
    means = frame_g.groupby("_g").transform("mean")
    y_w = y - means["_y"].to_numpy()
    X_w = X - means[list(spec.regressors)].to_numpy()

    beta, resid_w = solve_least_squares(X_w, y_w)
    df = n - k - n_cohorts
    sigma2 = float(resid_w @ resid_w) / df
    XtX_inv = symmetric_pinv(X_w.T @ X_w)[0]
    cov_slopes, se_slopes, t_slopes, p_slopes = _finish(beta, XtX_inv, resid_w, sigma2, spec.robust, X_w)

    tss_w = float(y_w @ y_w)
    rss = float(resid_w @ resid_w)
    r2_within = 1.0 - rss / tss_w if tss_w > 0 else 1.0

    # Grand intercept: mean cohort effect, the usual software convention.
    x_bar = X.mean(axis=0)
    const = float(y.mean() - x_bar @ beta)
    se_const = float(np.sqrt(x_bar @ cov_slopes @ x_bar + sigma2 / n))
    # Full fitted values (cohort effect + slopes) leave exactly the within
    # residual, so they are y - resid_w.
    fitted = y - resid_w
    corr = np.corrcoef(y, fitted)[0, 1] if n > 1 and np.std(fitted) > 0 else np.nan
    r2_overall = float(corr**2) if np.isfinite(corr) else 1.0

    names = [CONST, *spec.regressors]
    coefficients = np.concatenate([[const], beta])
    se = np.concatenate([[se_const], se_slopes])
    t = np.concatenate([[const / se_const if se_const > 0 else 0.0], t_slopes])
    p = np.array([2.0 * normal_sf(abs(v)) for v in t])
    cov = np.zeros((k + 1, k + 1))
    cov[1:, 1:] = cov_slopes
    cov[0, 0] = se_const**2

    return EstimationResult(
        method="fe_within",
        names=names,
        coefficients=coefficients,
        std_errors=se,
        t_stats=t,
        p_values=p,
        cov=cov,
        residuals=resid_w,
        r_squared=r2_overall,
        n_obs=n,
        n_cohorts=n_cohorts,
        r_squared_within=r2_within,
        details={"sigma2": sigma2, "dropped_singletons": singletons, "fitted": fitted},
    )


def estimate_re_gls(panel: pd.DataFrame, spec: ModelSpec) -> EstimationResult:
    """Random effects by feasible GLS with Swamy-Arora variance components.

    The quasi-demeaning factor is theta_c = 1 - sqrt(s2_eps / (T_c s2_lambda
    + s2_eps)) per cohort; a negative estimated cohort variance is clamped to
    zero with a warning, which reduces the estimator to pooled OLS.
    """
    frame = _model_frame(panel, spec)
    cohorts = _cohort_ids(frame)
    y = frame[spec.dependent].to_numpy(dtype=float)
    X = np.column_stack([frame[r].to_numpy(dtype=float) for r in spec.regressors])
    n, k = X.shape
    groups = cohorts.to_numpy()
    unique_groups, group_index = np.unique(groups, return_inverse=True)
    n_cohorts = len(unique_groups)
    T_c = np.bincount(group_index).astype(float)

    if n < k + n_cohorts + 1 or n_cohorts < k + 2:
        raise InsufficientObservationsError(f"{n} rows / {n_cohorts} cohorts for {k} slopes")

    # Within step for the idiosyncratic variance.
    frame_g = pd.DataFrame(X, columns=list(spec.regressors)).assign(_y=y, _g=groups)
    means = frame_g.groupby("_g").transform("mean")
    y_w = y - means["_y"].to_numpy()
    X_w = X - means[list(spec.regressors)].to_numpy()
    beta_w, resid_within = solve_least_squares(X_w, y_w)
    sigma2_eps = float(resid_within @ resid_within) / (n - k - n_cohorts)

    # Between step on cohort means for the cohort-effect variance.
    by_group = frame_g.groupby("_g").mean()
    y_b = by_group["_y"].to_numpy()
    X_b = np.column_stack([np.ones(n_cohorts)] + [by_group[r].to_numpy() for r in spec.regressors])
    _, resid_between = solve_least_squares(X_b, y_b)
    s2_between = float(resid_between @ resid_between) / (n_cohorts - k - 1)
    sigma2_lambda = s2_between - sigma2_eps * float(np.mean(1.0 / T_c))
    if sigma2_lambda < 0:
        log.warning("negative cohort variance component %.3g clamped to zero", sigma2_lambda)
        sigma2_lambda = 0.0
    elif sigma2_lambda < 1e-12 * max(float(np.var(y)), 1e-300):
        # numerically indistinguishable from no cohort effect
        sigma2_lambda = 0.0

    if sigma2_lambda == 0.0:
        theta_by_group = np.zeros(n_cohorts)
    else:
        theta_by_group = 1.0 - np.sqrt(sigma2_eps / (T_c * sigma2_lambda + sigma2_eps))
    theta = theta_by_group[group_index]

    ones = np.ones(n)
    group_mean_y = means["_y"].to_numpy()
    group_mean_X = means[list(spec.regressors)].to_numpy()
    y_star = y - theta * group_mean_y
    X_star = np.column_stack([ones - theta, X - theta[:, None] * group_mean_X])
    names = [CONST, *spec.regressors]

    beta, resid_star = solve_least_squares(X_star, y_star)
    sigma2 = sigma2_eps if sigma2_eps > 0 else float(resid_star @ resid_star) / max(n - k - 1, 1)
    XtX_inv = symmetric_pinv(X_star.T @ X_star)[0]
    cov, se, t, p = _finish(beta, XtX_inv, resid_star, sigma2, spec.robust, X_star)

    fitted = np.column_stack([ones, X]) @ beta
    corr = np.corrcoef(y, fitted)[0, 1] if n > 1 and np.std(fitted) > 0 else np.nan
    r2_overall = float(corr**2) if np.isfinite(corr) else 1.0

    return EstimationResult(
        method="re_gls",
        names=names,
        coefficients=beta,
        std_errors=se,
        t_stats=t,
        p_values=p,
        cov=cov,
        residuals=y - fitted,
        r_squared=r2_overall,
        n_obs=n,
        n_cohorts=n_cohorts,
        details={
            "sigma2_eps": sigma2_eps,
            "sigma2_lambda": sigma2_lambda,
            "theta_min": float(theta.min()) if n else 0.0,
            "theta_max": float(theta.max()) if n else 0.0,
        },
    )


def hausman_test(fe: EstimationResult, re: EstimationResult) -> tuple[float, int, float]:
    """Contrast FE and RE slopes: H = d' (V_FE - V_RE)^+ d on the shared
    time-varying coefficients, with degrees of freedom from the rank of the
    variance difference."""
    common = [name for name in fe.names if name != CONST and name in re.names]
    if not common:
        raise MismatchedSpecsError("no shared slope coefficients")
    if set(n for n in fe.names if n != CONST) != set(n for n in re.names if n != CONST):
        raise MismatchedSpecsError("FE and RE slope sets differ")
    if fe.n_obs != re.n_obs:
        raise MismatchedSpecsError(f"row counts differ: {fe.n_obs} vs {re.n_obs}")

    idx_fe = [fe.names.index(name) for name in common]
    idx_re = [re.names.index(name) for name in common]
    d = fe.coefficients[idx_fe] - re.coefficients[idx_re]
    V = fe.cov[np.ix_(idx_fe, idx_fe)] - re.cov[np.ix_(idx_re, idx_re)]
    pinv, rank = symmetric_pinv(V)
    stat = float(max(d @ pinv @ d, 0.0))
    if rank == 0:
        return 0.0, 0, 1.0
    return stat, rank, chi_square_sf(stat, rank)
