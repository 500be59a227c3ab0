"""Dynamic panel GMM: difference and system estimators with collapsible
instrument sets, Hansen J, and Arellano-Bond serial-correlation tests.

The model is y_ct = a + rho y_{c,t-1} + b'x_ct + lambda_c + eps_ct with the
lagged dependent variable appearing as an ordinary regressor column in the
panel. Difference GMM first-differences the equation and instruments the
endogenous columns with deeper lags of their levels; system GMM stacks the
level equation back in, instrumented with lagged first differences.

Per-cohort blocks are kept explicit throughout: every sum over cohorts is a
plain Python loop over small dense matrices, which keeps the weighting and
correction formulas auditable.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    EmptyInstrumentColumnError,
    InsufficientPeriodsError,
    InvalidParamsError,
    TooFewPeriodsError,
    UnderIdentifiedError,
)
from .linalg import chi_square_sf, normal_sf, symmetric_pinv
from .panel import KEY_COLUMNS
from .static import CONST, ModelSpec

log = logging.getLogger(__name__)

ONESTEP = "onestep"
TWOSTEP = "twostep"

# Two-step weighting degenerates when one-step residuals are numerically
# zero; below this relative scale the one-step matrix is kept.
_DEGENERATE_SCALE = 1e-12


@dataclass(frozen=True)
class GmmStyleVar:
    """A variable instrumented by its own history.

    min_lag is the shallowest level lag used in the difference equation
    (lag min_lag - 1 of the first difference instruments the level
    equation); max_lag of None means every available lag.
    """

    name: str
    min_lag: int = 2
    max_lag: int | None = None
    collapse: bool = True

    def __post_init__(self):
        if self.min_lag < 1:
            raise InvalidParamsError(f"min_lag must be >= 1, got {self.min_lag}")
        if self.max_lag is not None and self.max_lag < self.min_lag:
            raise InvalidParamsError("max_lag below min_lag")


@dataclass(frozen=True)
class InstrumentSpec:
    gmm_style: tuple[GmmStyleVar, ...]
    iv_style: tuple[str, ...] = ()
    include_levels: bool = False
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "gmm_style", tuple(self.gmm_style))
        object.__setattr__(self, "iv_style", tuple(self.iv_style))


@dataclass
class InstrumentMatrix:
    labels: list[str]
    blocks: list[np.ndarray]
    cohort_keys: list[tuple]
    diff_times: list[np.ndarray]
    level_times: list[np.ndarray]
    years: np.ndarray

    @property
    def n_columns(self) -> int:
        return len(self.labels)


@dataclass
class GmmResult:
    method: str
    step: str
    names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    t_stats: np.ndarray
    p_values: np.ndarray
    cov: np.ndarray
    n_obs: int
    n_cohorts: int
    instrument_count: int
    instrument_labels: list[str]
    hansen_j: float
    hansen_df: int
    hansen_p: float
    ar1_z: float | None
    ar1_p: float | None
    ar2_z: float | None
    ar2_p: float | None
    corrected_se: bool
    details: dict = field(default_factory=dict)
    internals: "GmmInternals | None" = None

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def p_value(self, name: str) -> float:
        return float(self.p_values[self.names.index(name)])


@dataclass
class GmmInternals:
    """Per-cohort pieces needed by the AR tests and by audits."""

    Z: list[np.ndarray]
    X: list[np.ndarray]
    y: list[np.ndarray]
    diff_times: list[np.ndarray]
    level_times: list[np.ndarray]
    residuals: list[np.ndarray]
    weight: np.ndarray
    A: np.ndarray
    XtZ: np.ndarray
    cov: np.ndarray
    one_step_weight: np.ndarray
    S: np.ndarray


def _cohort_series(panel: pd.DataFrame, variables: list[str]):
    """Per-cohort value arrays over a contiguous year grid (NaN = absent)."""
    years = np.arange(int(panel["year"].min()), int(panel["year"].max()) + 1)
    keys = list(dict.fromkeys(map(tuple, panel[KEY_COLUMNS].itertuples(index=False))))
    series: dict[tuple, dict[str, np.ndarray]] = {
        key: {v: np.full(len(years), np.nan) for v in variables} for key in keys
    }
    year_pos = {int(y): i for i, y in enumerate(years)}
    for row in panel.itertuples(index=False):
        key = (row.birth_bin, row.gender, row.region)
        ti = year_pos[int(row.year)]
        for v in variables:
            series[key][v][ti] = getattr(row, v)
    return years, keys, series


def _finite(values: np.ndarray) -> np.ndarray:
    return np.isfinite(values)


def _usable_times(series_c: dict, model_vars: list[str], n_periods: int):
    ok = np.ones(n_periods, dtype=bool)
    for v in model_vars:
        ok &= _finite(series_c[v])
    level = np.flatnonzero(ok)
    diff = np.array([t for t in range(1, n_periods) if ok[t] and ok[t - 1]], dtype=int)
    return diff, level


def _value(series: np.ndarray, t: int) -> float:
    if t < 0 or t >= len(series) or not np.isfinite(series[t]):
        return 0.0
    return float(series[t])


def _delta(series: np.ndarray, t: int) -> float:
    if t < 1 or t >= len(series):
        return 0.0
    a, b = series[t], series[t - 1]
    if not (np.isfinite(a) and np.isfinite(b)):
        return 0.0
    return float(a - b)


def _design(panel: pd.DataFrame, model: ModelSpec, iv: InstrumentSpec, include_levels: bool):
    """Assemble per-cohort y, X, Z, H blocks for the stacked equations."""
    if model.include_cohort_dummies:
        raise InvalidParamsError("cohort dummies are not meaningful inside GMM")
    model_vars = [model.dependent, *model.regressors]
    inst_vars = [g.name for g in iv.gmm_style] + list(iv.iv_style)
    variables = list(dict.fromkeys(model_vars + inst_vars))
    for v in variables:
        if v not in panel.columns:
            raise InvalidParamsError(f"variable {v!r} not in panel")

    years, keys, series = _cohort_series(panel, variables)
    n_periods = len(years)
    per_cohort = []
    for key in keys:
        diff_t, level_t = _usable_times(series[key], model_vars, n_periods)
        per_cohort.append((key, diff_t, level_t if include_levels else np.array([], dtype=int)))

    all_diff = sorted({int(t) for _, dt, _ in per_cohort for t in dt})
    all_level = sorted({int(t) for _, _, lt in per_cohort for t in lt})
    if not all_diff:
        raise TooFewPeriodsError("no usable first-differenced rows; need T >= 3")

    # Column layout, shared by every cohort block.
    columns: list[tuple] = []  # (label, kind, payload)
    for g in iv.gmm_style:
        deepest = n_periods - 1
        max_lag = deepest if g.max_lag is None else min(g.max_lag, deepest)
        if g.collapse:
            for lag in range(g.min_lag, max_lag + 1):
                columns.append((f"gmm:{g.name}:L{lag}:diff", "gmm_diff_collapsed", (g.name, lag)))
        else:
            for t in all_diff:
                for lag in range(g.min_lag, min(max_lag, t) + 1):
                    columns.append(
                        (f"gmm:{g.name}:L{lag}:t{years[t]}:diff", "gmm_diff", (g.name, lag, t))
                    )
    if include_levels:
        for g in iv.gmm_style:
            s = g.min_lag - 1
            if g.collapse:
                columns.append((f"gmm:{g.name}:D.L{s}:level", "gmm_level_collapsed", (g.name, s)))
            else:
                for t in all_level:
                    if t - s >= 1:  # the lagged difference must be formable
                        columns.append((f"gmm:{g.name}:D.L{s}:t{years[t]}:level", "gmm_level", (g.name, s, t)))
    for name in iv.iv_style:
        columns.append((f"iv:{name}", "iv", name))
    if include_levels:
        columns.append(("iv:const", "const", None))

    labels = [c[0] for c in columns]
    blocks_Z, blocks_X, blocks_y, blocks_H = [], [], [], []
    diff_times, level_times, used_keys = [], [], []
    for key, dt, lt in per_cohort:
        n_rows = len(dt) + len(lt)
        if n_rows == 0:
            continue
        sc = series[key]
        Z = np.zeros((n_rows, len(columns)))
        for j, (_, kind, payload) in enumerate(columns):
            if kind == "gmm_diff_collapsed":
                name, lag = payload
                for i, t in enumerate(dt):
                    Z[i, j] = _value(sc[name], t - lag)
            elif kind == "gmm_diff":
                name, lag, period = payload
                for i, t in enumerate(dt):
                    if t == period:
                        Z[i, j] = _value(sc[name], t - lag)
            elif kind == "gmm_level_collapsed":
                name, s = payload
                for i, t in enumerate(lt):
                    Z[len(dt) + i, j] = _delta(sc[name], t - s)
            elif kind == "gmm_level":
                name, s, period = payload
                for i, t in enumerate(lt):
                    if t == period:
                        Z[len(dt) + i, j] = _delta(sc[name], t - s)
            elif kind == "iv":
                for i, t in enumerate(dt):
                    Z[i, j] = _delta(sc[payload], t)
                for i, t in enumerate(lt):
                    Z[len(dt) + i, j] = _value(sc[payload], t)
            elif kind == "const":
                Z[len(dt):, j] = 1.0

        k_slopes = len(model.regressors)
        with_const = include_levels
        X = np.zeros((n_rows, k_slopes + (1 if with_const else 0)))
        y = np.zeros(n_rows)
        off = 1 if with_const else 0
        for i, t in enumerate(dt):
            y[i] = sc[model.dependent][t] - sc[model.dependent][t - 1]
            for j, r in enumerate(model.regressors):
                X[i, off + j] = sc[r][t] - sc[r][t - 1]
        for i, t in enumerate(lt):
            y[len(dt) + i] = sc[model.dependent][t]
            if with_const:
                X[len(dt) + i, 0] = 1.0
            for j, r in enumerate(model.regressors):
                X[len(dt) + i, off + j] = sc[r][t]

        H = np.zeros((n_rows, n_rows))
        for i, ti in enumerate(dt):
            for j2, tj in enumerate(dt):
                if ti == tj:
                    H[i, j2] = 2.0
                elif abs(int(ti) - int(tj)) == 1:
                    H[i, j2] = -1.0
        for i in range(len(lt)):
            H[len(dt) + i, len(dt) + i] = 1.0
        for i, ti in enumerate(dt):
            for j2, tj in enumerate(lt):
                if tj == ti:
                    H[i, len(dt) + j2] = 1.0
                    H[len(dt) + j2, i] = 1.0
                elif tj == ti - 1:
                    H[i, len(dt) + j2] = -1.0
                    H[len(dt) + j2, i] = -1.0

        blocks_Z.append(Z)
        blocks_X.append(X)
        blocks_y.append(y)
        blocks_H.append(H)
        diff_times.append(dt)
        level_times.append(lt)
        used_keys.append(key)

    stacked = np.vstack(blocks_Z)
    dead = np.flatnonzero(np.abs(stacked).sum(axis=0) == 0.0)
    if dead.size:
        raise EmptyInstrumentColumnError(labels[int(dead[0])])

    names = ([CONST] if include_levels else []) + list(model.regressors)
    return {
        "labels": labels,
        "names": names,
        "Z": blocks_Z,
        "X": blocks_X,
        "y": blocks_y,
        "H": blocks_H,
        "diff_times": diff_times,
        "level_times": level_times,
        "keys": used_keys,
        "years": years,
    }


def build_instruments(
    panel: pd.DataFrame,
    iv: InstrumentSpec,
    model: ModelSpec,
    include_levels: bool | None = None,
) -> InstrumentMatrix:
    """Construct the per-cohort instrument blocks without estimating."""
    levels = iv.include_levels if include_levels is None else include_levels
    d = _design(panel, model, iv, levels)
    return InstrumentMatrix(
        labels=d["labels"],
        blocks=d["Z"],
        cohort_keys=d["keys"],
        diff_times=d["diff_times"],
        level_times=d["level_times"],
        years=d["years"],
    )


def _weighting_inverse(M: np.ndarray, what: str) -> np.ndarray:
    pinv, rank = symmetric_pinv(M)
    if rank < M.shape[0]:
        cond = float(np.linalg.cond(M))
        log.warning(
            "%s weighting matrix singular (rank %d of %d, cond %.3g); using generalized inverse",
            what, rank, M.shape[0], cond,
        )
    return pinv


def _estimate(panel, model, iv, step, include_levels, method):
    if step not in (ONESTEP, TWOSTEP):
        raise InvalidParamsError(f"step must be {ONESTEP!r} or {TWOSTEP!r}, got {step!r}")
    d = _design(panel, model, iv, include_levels)
    Zs, Xs, ys, Hs = d["Z"], d["X"], d["y"], d["H"]
    q = len(d["labels"])
    k = len(d["names"])
    if q < k:
        raise UnderIdentifiedError(f"{q} instruments for {k} parameters")

    ZHZ = sum(Z.T @ H @ Z for Z, H in zip(Zs, Hs))
    XtZ = sum(X.T @ Z for X, Z in zip(Xs, Zs))
    Zty = sum(Z.T @ y for Z, y in zip(Zs, ys))
    ZtZ = sum(Z.T @ Z for Z in Zs)

    W1 = _weighting_inverse(ZHZ, "one-step")
    G1, rank1 = symmetric_pinv(XtZ @ W1 @ XtZ.T)
    if rank1 < k:
        raise UnderIdentifiedError("moment conditions do not identify all parameters")
    beta1 = G1 @ (XtZ @ (W1 @ Zty))
    e1 = [y - X @ beta1 for X, y in zip(Xs, ys)]
    S = sum(Z.T @ np.outer(e, e) @ Z for Z, e in zip(Zs, e1))

    degenerate = np.linalg.norm(S) < _DEGENERATE_SCALE * max(np.linalg.norm(ZtZ), 1e-300)
    if degenerate:
        log.warning("one-step residuals are numerically zero; keeping the one-step weighting")
        W2 = W1
    else:
        W2 = _weighting_inverse(S, "two-step")

    # Robust one-step variance, also the inner piece of the correction.
    V1 = G1 @ (XtZ @ W1 @ S @ W1 @ XtZ.T) @ G1

    if step == ONESTEP:
        beta, A, cov, W_used, resid = beta1, G1, V1, W1, e1
        corrected = False
    else:
        G2, rank2 = symmetric_pinv(XtZ @ W2 @ XtZ.T)
        if rank2 < k:
            raise UnderIdentifiedError("moment conditions do not identify all parameters")
        beta = G2 @ (XtZ @ (W2 @ Zty))
        resid = [y - X @ beta for X, y in zip(Xs, ys)]
        windmeijer_D = None
        if degenerate:
            cov = G2
        else:
            Zte2 = sum(Z.T @ e for Z, e in zip(Zs, resid))
            D = np.zeros((k, k))
            for j in range(k):
                dSj = -sum(
                    Z.T @ (np.outer(X[:, j], e) + np.outer(e, X[:, j])) @ Z
                    for Z, X, e in zip(Zs, Xs, e1)
                )
                D[:, j] = -G2 @ (XtZ @ (W2 @ (dSj @ (W2 @ Zte2))))
            cov = G2 + D @ G2 + G2 @ D.T + D @ V1 @ D.T
            windmeijer_D = D
        A, W_used = G2, W2
        corrected = not degenerate

    se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    z = np.divide(beta, se, out=np.zeros_like(beta), where=se > 0)
    p = np.array([2.0 * normal_sf(abs(v)) for v in z])

    g_final = sum(Z.T @ (y - X @ beta) for Z, X, y in zip(Zs, Xs, ys))
    jstat, jdf, jp = hansen_j(g_final, W2, k)

    n_diff = sum(len(t) for t in d["diff_times"])
    n_level = sum(len(t) for t in d["level_times"])
    internals = GmmInternals(
        Z=Zs,
        X=Xs,
        y=ys,
        diff_times=d["diff_times"],
        level_times=d["level_times"],
        residuals=resid,
        weight=W_used,
        A=A,
        XtZ=XtZ,
        cov=cov,
        one_step_weight=W1,
        S=S,
    )
    result = GmmResult(
        method=method,
        step=step,
        names=d["names"],
        coefficients=beta,
        std_errors=se,
        t_stats=z,
        p_values=p,
        cov=cov,
        n_obs=n_level if include_levels else n_diff,
        n_cohorts=len(d["keys"]),
        instrument_count=q,
        instrument_labels=d["labels"],
        hansen_j=jstat,
        hansen_df=jdf,
        hansen_p=jp,
        ar1_z=None,
        ar1_p=None,
        ar2_z=None,
        ar2_p=None,
        corrected_se=corrected,
        details={
            "n_rows_stacked": n_diff + n_level,
            "n_diff_rows": n_diff,
            "n_level_rows": n_level,
            "degenerate_weighting": degenerate,
            "beta_onestep": beta1,
            "se_uncorrected": np.sqrt(np.maximum(np.diag(A), 0.0)) if step == TWOSTEP else None,
            "windmeijer_D": None if step == ONESTEP else windmeijer_D,
        },
        internals=internals,
    )
    for m in (1, 2):
        try:
            zm, pm = ar_test(result, m)
        except InsufficientPeriodsError:
            continue
        if m == 1:
            result.ar1_z, result.ar1_p = zm, pm
        else:
            result.ar2_z, result.ar2_p = zm, pm
    return result


def estimate_diff_gmm(panel, model: ModelSpec, iv: InstrumentSpec, step: str = TWOSTEP) -> GmmResult:
    """Difference GMM on the first-differenced equation."""
    return _estimate(panel, model, iv, step, include_levels=False, method="diff_gmm")


def estimate_sys_gmm(panel, model: ModelSpec, iv: InstrumentSpec, step: str = TWOSTEP) -> GmmResult:
    """System GMM: stacked difference and level equations, level intercept kept."""
    return _estimate(panel, model, iv, step, include_levels=True, method="sys_gmm")


def hansen_j(moments: np.ndarray, weight: np.ndarray, n_params: int) -> tuple[float, int, float]:
    """Overidentification statistic J = g' W g with df = len(g) - n_params.

    A just-identified model returns (0.0, 0, 1.0) by convention.
    """
    g = np.asarray(moments, dtype=float)
    df = len(g) - n_params
    if df < 0:
        raise UnderIdentifiedError(f"{len(g)} moments for {n_params} parameters")
    if df == 0:
        return 0.0, 0, 1.0
    j = float(max(g @ weight @ g, 0.0))
    return j, df, chi_square_sf(j, df)


def ar_test(result: GmmResult, order: int) -> tuple[float, float]:
    """Arellano-Bond test for order-m serial correlation in the differenced
    residuals; asymptotically N(0,1) under the null."""
    if order < 1:
        raise InvalidParamsError(f"order must be >= 1, got {order}")
    inner = result.internals
    if inner is None:
        raise InvalidParamsError("result carries no per-cohort internals")

    b0 = 0.0
    v_a = 0.0
    d = np.zeros(len(result.names))
    Zul = np.zeros(result.instrument_count)
    any_pair = False
    for Z, X, u, dt in zip(inner.Z, inner.X, inner.residuals, inner.diff_times):
        # residuals lagged m periods, aligned on the differenced rows only
        lag_vec = np.zeros(len(u))
        pos = {int(t): i for i, t in enumerate(dt)}
        for i, t in enumerate(dt):
            j = pos.get(int(t) - order)
            if j is not None:
                lag_vec[i] = u[j]
                any_pair = True
        s = float(lag_vec @ u)
        b0 += s
        v_a += s * s
        d += X.T @ lag_vec
        Zul += Z.T @ (u * s)
    if not any_pair:
        raise InsufficientPeriodsError(f"no residual pairs {order} periods apart")

    # middle term: -2 d' [A X'Z W] (sum_c Z_c' u_c u_c' l_c)
    projector = inner.A @ inner.XtZ @ inner.weight
    v_b = -2.0 * float(d @ projector @ Zul)
    v_c = float(d @ inner.cov @ d)
    variance = v_a + v_b + v_c
    if variance <= 0:
        log.warning("AR(%d) variance %.3g not positive; reporting no test", order, variance)
        raise InsufficientPeriodsError(f"AR({order}) variance not positive")
    z = b0 / float(np.sqrt(variance))
    return z, 2.0 * normal_sf(abs(z))
