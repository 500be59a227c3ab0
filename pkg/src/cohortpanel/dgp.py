"""Synthetic survey generator and Monte Carlo harness.

Two generators share one calibration. ``generate_panel`` draws cohort-level
cell means directly and is the fast path for estimator Monte Carlos.
``generate_micro`` draws individual survey rows (categorical education, a 0/1
health-record outcome, province labels, nominal incomes) whose cell means obey
the same linear model in expectation, and is the path for exercising the
ingestion pipeline end to end.

The health outcome is generated from a clipped-linear propensity, so cell
means follow the linear model exactly wherever the clip is inactive; the
calibrated defaults keep propensities well inside (0, 1).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import InvalidParamsError
from .ingest import EDUCATION_YEARS
from .panel import BIN_WIDTH, all_cohort_keys

# cell-level calibration targets (mean, sd across cohort-year cells)
CELL_MOMENTS = {
    "living": (2.905, 0.455),
    "flowt": (5.600, 2.023),
    "income": (8.570, 0.160),
    "hos": (33747.0, 6951.0),
    "bed": (5.344, 0.478),
    "doc": (2.026, 0.278),
}
HEALTH_TARGET = 0.3546

# pooled years of education by five-year birth bin: younger cohorts are more
# educated. The 1985 bin is still updating education during the survey window
# (its members are under 25), with the male profile crossing the 11-year
# boundary between 2016 and 2017.
EDU_BASE = {
    1955: 7.2,
    1960: 7.9,
    1965: 8.6,
    1970: 9.2,
    1975: 9.8,
    1980: 10.3,
    1985: 9.75,
    1990: 11.7,
    1995: 12.2,
}
EDU_TREND = {
    (1985, "male"): 0.4,
    (1985, "female"): 0.25,
    (1990, "male"): 0.05,
    (1990, "female"): 0.05,
    (1995, "male"): 0.05,
    (1995, "female"): 0.05,
}
GENDER_EDU_GAP = 0.25

SYNTHETIC_CPI = {2014: 100.0, 2015: 102.0, 2016: 104.0, 2017: 105.8, 2018: 107.8}
SYNTHETIC_PROVINCES = {
    "east": ("Beijing", "Shanghai"),
    "central": ("Henan", "Hubei"),
    "west": ("Sichuan", "Yunnan"),
}

_FIRST_YEAR = 2014


def education_mean(birth_bin: int, gender: str, year: int) -> float:
    """Calibrated cell-mean years of education for a cohort cell."""
    gap = GENDER_EDU_GAP if gender == "male" else -GENDER_EDU_GAP
    trend = EDU_TREND.get((birth_bin, gender), 0.0)
    return EDU_BASE[birth_bin] + gap + trend * (year - _FIRST_YEAR)


def default_beta() -> dict[str, float]:
    """Modest control coefficients matching the signs seen in practice."""
    return {
        "living": 0.10,
        "flowt": -0.01,
        "income": -0.15,
        "hos": -2.0e-06,
        "bed": -0.05,
        "doc": 0.02,
    }


@dataclass(frozen=True)
class DgpParams:
    """Parameters of the synthetic data-generating process.

    ``alpha=None`` solves the intercept so the stationary mean of the health
    outcome hits ``HEALTH_TARGET``. ``gamma`` links the cohort effect to the
    cohort's pooled education (negative values reproduce the underestimation
    of pooled OLS relative to FE). ``init_scale`` is the standard deviation of
    the initial-condition draw around each cohort's stationary mean; the draw
    is independent of the cohort effect, so mean-stationarity holds.
    """

    alpha: float | None = None
    beta_edu: float = 0.08
    beta: dict[str, float] = field(default_factory=default_beta)
    rho: float = 0.0
    sigma_lambda: float = 0.05
    sigma_eps: float = 0.02
    gamma: float = 0.0
    cell_n: int = 120
    n_periods: int = 5
    first_year: int = _FIRST_YEAR
    init_scale: float = 1.0

    def __post_init__(self):
        if self.sigma_lambda < 0 or self.sigma_eps < 0:
            raise InvalidParamsError("noise scales must be nonnegative")
        if not abs(self.rho) < 1:
            raise InvalidParamsError(f"lag coefficient must satisfy |rho| < 1, got {self.rho}")
        if self.cell_n < 1:
            raise InvalidParamsError("cell size target must be at least 1")
        if self.n_periods < 2:
            raise InvalidParamsError("need at least two periods")
        if self.init_scale < 0:
            raise InvalidParamsError("initial-condition scale must be nonnegative")
        if self.alpha is not None and not np.isfinite(self.alpha):
            raise InvalidParamsError("intercept must be finite")
        for name, value in self.beta.items():
            if name not in CELL_MOMENTS:
                raise InvalidParamsError(f"no calibration for control {name!r}")
            if not np.isfinite(value):
                raise InvalidParamsError(f"coefficient for {name!r} must be finite")

    @property
    def years(self) -> tuple[int, ...]:
        return tuple(range(self.first_year, self.first_year + self.n_periods))


def _as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _edu_grid(params: DgpParams) -> tuple[list, np.ndarray, np.ndarray]:
    """Cohort keys, per-(key, year) education means, per-key pooled means."""
    keys = all_cohort_keys()
    edu = np.array(
        [[education_mean(k.birth_bin, k.gender, y) for y in params.years] for k in keys]
    )
    return keys, edu, edu.mean(axis=1)


def _solve_alpha(params: DgpParams, mean_index: float) -> float:
    """Intercept putting the average stationary mean at HEALTH_TARGET."""
    if params.alpha is not None:
        return params.alpha
    return HEALTH_TARGET * (1.0 - params.rho) - mean_index


def generate_panel(params: DgpParams, seed) -> pd.DataFrame:
    """Draw a balanced cohort-level panel with a continuous health cell mean.

    health follows an AR(1) in the cell mean around cohort-specific stationary
    levels; controls are iid normal across cells at the calibrated moments.
    """
    rng = _as_rng(seed)
    keys, edu, pooled = _edu_grid(params)
    G, T = edu.shape

    controls = {
        name: rng.normal(CELL_MOMENTS[name][0], CELL_MOMENTS[name][1], size=(G, T))
        for name in params.beta
    }
    index = params.beta_edu * edu
    for name, coef in params.beta.items():
        index = index + coef * controls[name]

    lam = params.gamma * (pooled - pooled.mean()) + params.sigma_lambda * rng.normal(size=G)
    alpha = _solve_alpha(params, float(index.mean()))

    stationary = (alpha + index.mean(axis=1) + lam) / (1.0 - params.rho)
    y_prev = stationary + params.init_scale * rng.normal(size=G)
    health = np.empty((G, T))
    for t in range(T):
        eps = params.sigma_eps * rng.normal(size=G)
        y_prev = alpha + params.rho * y_prev + index[:, t] + lam + eps
        health[:, t] = y_prev

    rows = {
        "birth_bin": np.repeat([k.birth_bin for k in keys], T),
        "gender": np.repeat([k.gender for k in keys], T),
        "region": np.repeat([k.region for k in keys], T),
        "year": np.tile(params.years, G),
        "n": params.cell_n,
        "health": health.ravel(),
        "edu": edu.ravel(),
    }
    for name in CELL_MOMENTS:
        if name in controls:
            rows[name] = controls[name].ravel()
    return pd.DataFrame(rows)


def _education_levels(target: float, rng: np.random.Generator, n: int) -> tuple[np.ndarray, list[str]]:
    """Draw categorical education with the given cell-mean years."""
    levels = sorted(set(EDUCATION_YEARS.values()))
    labels = {years: label for label, years in EDUCATION_YEARS.items()}
    hi_idx = int(np.searchsorted(levels, target, side="left"))
    hi_idx = min(max(hi_idx, 1), len(levels) - 1)
    lo, hi = levels[hi_idx - 1], levels[hi_idx]
    p_hi = (target - lo) / (hi - lo)
    years = np.where(rng.random(n) < p_hi, hi, lo).astype(float)
    return years, [labels[y] for y in years]


def generate_micro(
    params: DgpParams, seed
) -> tuple[pd.DataFrame, dict[int, float], pd.DataFrame]:
    """Draw individual survey rows plus the CPI and city-covariate tables.

    Returns (micro rows in raw survey layout, CPI mapping, covariate table).
    Individual health records are Bernoulli draws from a clipped-linear
    propensity in the individual's own education and covariates, so cell means
    obey the linear model in expectation without attenuation.
    """
    rng = _as_rng(seed)
    keys, edu_grid, pooled = _edu_grid(params)

    covariate_rows = []
    province_values: dict[tuple[str, int], dict[str, float]] = {}
    for region in SYNTHETIC_PROVINCES:
        for province in SYNTHETIC_PROVINCES[region]:
            for year in params.years:
                draw = {
                    name: rng.normal(*CELL_MOMENTS[name]) for name in ("hos", "bed", "doc")
                }
                draw["hos"] = max(draw["hos"], 1.0)
                draw["bed"] = max(draw["bed"], 0.1)
                draw["doc"] = max(draw["doc"], 0.1)
                province_values[(province, year)] = draw
                covariate_rows.append({"province": province, "year": year, **draw})
    covariates = pd.DataFrame(covariate_rows)

    lam = params.gamma * (pooled - pooled.mean()) + params.sigma_lambda * rng.normal(size=len(keys))
    mean_index = params.beta_edu * float(edu_grid.mean()) + sum(
        coef * CELL_MOMENTS[name][0] for name, coef in params.beta.items()
    )
    alpha = _solve_alpha(params, mean_index)

    records = []
    prev_cell_mean = {k: None for k in keys}
    for t, year in enumerate(params.years):
        for g, key in enumerate(keys):
            n = params.cell_n
            provinces = rng.choice(SYNTHETIC_PROVINCES[key.region], size=n)
            birth_years = rng.integers(
                key.birth_bin, min(key.birth_bin + BIN_WIDTH, 2000), size=n
            )
            edu_years, edu_labels = _education_levels(edu_grid[g, t], rng, n)
            # cell-level shifts carry the calibrated cross-cell dispersion;
            # individual noise on top of them averages out in cell means
            living = rng.normal(*CELL_MOMENTS["living"]) + rng.normal(
                0.0, CELL_MOMENTS["living"][1], size=n
            )
            flowt = np.abs(
                rng.normal(*CELL_MOMENTS["flowt"]) + rng.normal(0.0, CELL_MOMENTS["flowt"][1], size=n)
            )
            log_income = rng.normal(*CELL_MOMENTS["income"]) + rng.normal(0.0, 0.3, size=n)
            income_real = np.exp(log_income)
            nominal = income_real * SYNTHETIC_CPI[year] / SYNTHETIC_CPI[params.first_year]

            city = np.array(
                [
                    [province_values[(p, year)][name] for name in ("hos", "bed", "doc")]
                    for p in provinces
                ]
            )
            index = (
                params.beta_edu * edu_years
                + params.beta.get("living", 0.0) * living
                + params.beta.get("flowt", 0.0) * flowt
                + params.beta.get("income", 0.0) * log_income
                + params.beta.get("hos", 0.0) * city[:, 0]
                + params.beta.get("bed", 0.0) * city[:, 1]
                + params.beta.get("doc", 0.0) * city[:, 2]
            )
            eps = params.sigma_eps * rng.normal()
            if prev_cell_mean[key] is None:
                propensity = (alpha + index + lam[g] + eps) / (1.0 - params.rho)
            else:
                propensity = alpha + params.rho * prev_cell_mean[key] + index + lam[g] + eps
            propensity = np.clip(propensity, 0.01, 0.99)
            health = (rng.random(n) < propensity).astype(int)
            prev_cell_mean[key] = float(health.mean())

            for i in range(n):
                records.append(
                    (
                        year,
                        int(birth_years[i]),
                        key.gender,
                        provinces[i],
                        edu_labels[i],
                        int(health[i]),
                        float(living[i]),
                        float(flowt[i]),
                        float(nominal[i]),
                    )
                )

    micro = pd.DataFrame(
        records,
        columns=[
            "survey_year",
            "birth_year",
            "gender",
            "province",
            "education_level",
            "has_health_record",
            "living",
            "flowt",
            "income",
        ],
    )
    return micro, dict(SYNTHETIC_CPI), covariates


def write_synthetic_inputs(params: DgpParams, seed, out_dir: str | Path) -> dict[str, Path]:
    """Write micro.csv, cpi.csv, and covariates.csv; returns their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    micro, cpi, covariates = generate_micro(params, seed)

    paths = {
        "micro": out / "micro.csv",
        "cpi": out / "cpi.csv",
        "covariates": out / "covariates.csv",
    }
    with open(paths["micro"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(micro.columns.tolist())
        for row in micro.itertuples(index=False):
            writer.writerow(
                [
                    row.survey_year,
                    row.birth_year,
                    row.gender,
                    row.province,
                    row.education_level,
                    row.has_health_record,
                    repr(row.living),
                    repr(row.flowt),
                    repr(row.income),
                ]
            )
    with open(paths["cpi"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["year", "cpi"])
        for year in sorted(cpi):
            writer.writerow([year, repr(cpi[year])])
    with open(paths["covariates"], "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["province", "year", "hos", "bed", "doc"])
        for row in covariates.itertuples(index=False):
            writer.writerow([row.province, row.year, repr(row.hos), repr(row.bed), repr(row.doc)])
    return paths


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Generator for replication ``rep``, independent of how many reps run."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


def monte_carlo(reps: int, seed: int, simulate, estimate, workers: int = 1) -> pd.DataFrame:
    """Run ``estimate(simulate(rng))`` once per replication.

    ``simulate`` receives the replication's own generator; ``estimate`` returns
    a mapping of scalar results. Rows are merged in replication order, so the
    output is identical for any worker count.
    """
    if reps < 1:
        raise InvalidParamsError("need at least one replication")

    def one(rep: int) -> dict:
        return dict(estimate(simulate(replication_rng(seed, rep))))

    if workers == 1:
        rows = [one(r) for r in range(reps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, range(reps)))
    return pd.DataFrame(rows, index=pd.RangeIndex(reps, name="rep"))
