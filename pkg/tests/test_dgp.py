"""Tests for the synthetic generator and Monte Carlo harness."""

import numpy as np
import pandas as pd
import pytest

from cohortpanel.dgp import (
    CELL_MOMENTS,
    EDU_BASE,
    HEALTH_TARGET,
    SYNTHETIC_PROVINCES,
    DgpParams,
    education_mean,
    generate_micro,
    generate_panel,
    monte_carlo,
    replication_rng,
    write_synthetic_inputs,
)
from cohortpanel.errors import InvalidParamsError
from cohortpanel.gmm import GmmStyleVar, InstrumentSpec, estimate_sys_gmm
from cohortpanel.ingest import (
    CpiTable,
    Schema,
    load_covariates_csv,
    parse_micro_csv,
    prepare_analysis_set,
)
from cohortpanel.panel import add_lag, aggregate, all_cohort_keys
from cohortpanel.static import ModelSpec, estimate_fe_within, estimate_ols

YEARS = (2014, 2015, 2016, 2017, 2018)

FULL_SPEC = ModelSpec("health", ("edu", "living", "flowt", "income", "hos", "bed", "doc"))


class TestParams:
    def test_defaults_validate(self):
        p = DgpParams()
        assert p.years == YEARS
        assert p.beta_edu == 0.08

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"sigma_lambda": -0.1},
            {"sigma_eps": -1.0},
            {"rho": 1.0},
            {"rho": -1.5},
            {"cell_n": 0},
            {"n_periods": 1},
            {"init_scale": -0.5},
            {"alpha": float("nan")},
            {"beta": {"nope": 0.1}},
            {"beta": {"living": float("inf")}},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(InvalidParamsError):
            DgpParams(**kwargs)


class TestEducationProfile:
    def test_seven_of_nine_bins_at_or_below_boundary(self):
        pooled = {
            b: np.mean([education_mean(b, g, y) for g in ("male", "female") for y in YEARS])
            for b in EDU_BASE
        }
        assert sum(v <= 11.0 for v in pooled.values()) == 7
        assert sum(v > 11.0 for v in pooled.values()) == 2

    def test_lag_sample_split_counts(self):
        # count cells above the boundary among the 54 keys x 4 lag years by
        # direct enumeration of the profile
        higher = sum(
            education_mean(k.birth_bin, k.gender, k_year) > 11.0
            for k in all_cohort_keys()
            for k_year in YEARS[1:]
        )
        assert higher == 54
        assert 54 * 4 - higher == 162

    def test_younger_cohorts_more_educated(self):
        bins = sorted(EDU_BASE)
        pooled = [
            np.mean([education_mean(b, g, y) for g in ("male", "female") for y in YEARS])
            for b in bins
        ]
        # rising trend with one deliberate dip at the still-in-school bin
        assert pooled[-1] > pooled[0]
        assert all(b - a > -0.6 for a, b in zip(pooled, pooled[1:]))

    def test_gender_gap_positive_everywhere(self):
        for b in EDU_BASE:
            for y in YEARS:
                assert education_mean(b, "male", y) > education_mean(b, "female", y)


class TestGeneratePanel:
    def test_shape_and_columns(self):
        panel = generate_panel(DgpParams(), 1)
        assert len(panel) == 54 * 5
        assert {"birth_bin", "gender", "region", "year", "n", "health", "edu"} <= set(panel.columns)
        assert set(CELL_MOMENTS) <= set(panel.columns)
        assert (panel["n"] == 120).all()

    def test_deterministic_per_seed(self):
        a = generate_panel(DgpParams(), 9)
        b = generate_panel(DgpParams(), 9)
        c = generate_panel(DgpParams(), 10)
        pd.testing.assert_frame_equal(a, b)
        assert not a["health"].equals(c["health"])

    def test_noiseless_linear_relation(self):
        p = DgpParams(alpha=0.1, sigma_lambda=0.0, sigma_eps=0.0, gamma=0.0, rho=0.0)
        panel = generate_panel(p, 3)
        expected = 0.1 + p.beta_edu * panel["edu"]
        for name, coef in p.beta.items():
            expected = expected + coef * panel[name]
        assert np.allclose(panel["health"], expected, atol=1e-12)

    def test_stationary_start_is_fixed_point(self):
        # no noise, no regressors: every cohort sits at alpha / (1 - rho)
        p = DgpParams(
            alpha=0.2,
            beta_edu=0.0,
            beta={},
            rho=0.5,
            sigma_lambda=0.0,
            sigma_eps=0.0,
            init_scale=0.0,
        )
        panel = generate_panel(p, 4)
        assert np.allclose(panel["health"], 0.4, atol=1e-12)

    def test_auto_intercept_hits_target_mean(self):
        panel = generate_panel(DgpParams(sigma_lambda=0.02, sigma_eps=0.02), 5)
        assert abs(panel["health"].mean() - HEALTH_TARGET) < 0.03

    def test_fe_recovers_edu_effect(self):
        panel = generate_panel(DgpParams(sigma_eps=0.005), 6)
        fit = estimate_fe_within(panel, FULL_SPEC)
        assert fit.coefficient("edu") == pytest.approx(0.08, abs=0.01)

    def test_negative_gamma_puts_pooled_ols_below_fe(self):
        p = DgpParams(gamma=-0.03, sigma_lambda=0.02, sigma_eps=0.02)
        below = 0
        reps = 200
        for r in range(reps):
            panel = generate_panel(p, replication_rng(111, r))
            ols = estimate_ols(panel, FULL_SPEC).coefficient("edu")
            fe = estimate_fe_within(panel, FULL_SPEC).coefficient("edu")
            below += ols < fe
        assert below / reps >= 0.95

    def test_sys_gmm_recovers_rho_and_beta_jointly(self):
        p = DgpParams(rho=0.3, gamma=0.0, sigma_lambda=0.02, sigma_eps=0.05, beta={})
        model = ModelSpec("health", ("health_lag1", "edu"))
        iv = InstrumentSpec(gmm_style=(GmmStyleVar("health"),), iv_style=("edu",))
        reps = 200
        rhos = np.empty(reps)
        betas = np.empty(reps)
        for r in range(reps):
            panel = add_lag(generate_panel(p, replication_rng(222, r)), "health")
            fit = estimate_sys_gmm(panel, model, iv, step="twostep")
            rhos[r] = fit.coefficient("health_lag1")
            betas[r] = fit.coefficient("edu")
        assert abs(rhos.mean() - 0.3) < 2 * rhos.std(ddof=1) / np.sqrt(reps)
        assert abs(betas.mean() - 0.08) < 2 * betas.std(ddof=1) / np.sqrt(reps)


class TestGenerateMicro:
    def test_deterministic_and_well_formed(self):
        micro, cpi, cov = generate_micro(DgpParams(cell_n=30), 12)
        micro2, _, _ = generate_micro(DgpParams(cell_n=30), 12)
        pd.testing.assert_frame_equal(micro, micro2)
        assert len(micro) == 54 * 5 * 30
        assert set(micro["has_health_record"].unique()) <= {0, 1}
        assert (micro["income"] > 0).all()
        assert len(cov) == 6 * 5
        assert set(cpi) == set(YEARS)

    def test_cell_means_track_profile(self):
        micro, _, _ = generate_micro(DgpParams(cell_n=200), 13)
        from cohortpanel.ingest import EDUCATION_YEARS, region_of

        df = micro.assign(
            edu=micro["education_level"].map(EDUCATION_YEARS),
            region=[region_of(p) for p in micro["province"]],
            health=micro["has_health_record"],
        )
        panel = aggregate(df, variables=("health", "edu"))
        errs = [
            row.edu - education_mean(row.birth_bin, row.gender, row.year)
            for row in panel.itertuples()
        ]
        # cell mean of a two-level mixture has sd <= 1.5 / sqrt(200)
        assert abs(np.mean(errs)) < 0.03
        assert np.max(np.abs(errs)) < 5 * 1.5 / np.sqrt(200)
        assert abs(panel["health"].mean() - HEALTH_TARGET) < 0.03

    def test_null_effect_estimates_center_on_zero(self):
        p = DgpParams(beta_edu=0.0, gamma=0.0, beta={}, cell_n=40)
        spec = ModelSpec("health", ("edu",))
        reps = 30
        est = np.empty(reps)
        for r in range(reps):
            micro, _, _ = generate_micro(p, replication_rng(333, r))
            from cohortpanel.ingest import EDUCATION_YEARS, region_of

            df = micro.assign(
                edu=micro["education_level"].map(EDUCATION_YEARS),
                region=[region_of(pv) for pv in micro["province"]],
                health=micro["has_health_record"],
            )
            panel = aggregate(df, variables=("health", "edu"))
            est[r] = estimate_ols(panel, spec).coefficient("edu")
        assert abs(est.mean()) < 2 * est.std(ddof=1) / np.sqrt(reps)

    def test_round_trip_through_ingestion(self, tmp_path):
        paths = write_synthetic_inputs(DgpParams(cell_n=40), 20240902, tmp_path)
        result = parse_micro_csv(
            paths["micro"],
            schema=Schema.identity(include_covariates=False),
            cpi=CpiTable.from_csv(paths["cpi"]),
            covariates=load_covariates_csv(paths["covariates"]),
        )
        assert result.n_rows_read == 54 * 5 * 40
        assert not result.rejects
        analysis, n_trimmed = prepare_analysis_set(result.records)
        assert n_trimmed == pytest.approx(0.10 * result.n_rows_read, rel=0.02)
        panel = aggregate(analysis)
        assert len(panel) == 270
        assert {p for ps in SYNTHETIC_PROVINCES.values() for p in ps} == set(
            result.records["province"].unique()
        )


class TestHarness:
    def test_replication_rng_reproducible_and_distinct(self):
        a = replication_rng(99, 3).normal(size=4)
        b = replication_rng(99, 3).normal(size=4)
        c = replication_rng(99, 4).normal(size=4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_monte_carlo_worker_count_is_invisible(self):
        def simulate(rng):
            return rng.normal(size=8)

        def estimate(draw):
            return {"mean": float(draw.mean()), "max": float(draw.max())}

        serial = monte_carlo(12, 77, simulate, estimate, workers=1)
        threaded = monte_carlo(12, 77, simulate, estimate, workers=4)
        pd.testing.assert_frame_equal(serial, threaded)
        assert serial["mean"].nunique() == 12

    def test_monte_carlo_rejects_zero_reps(self):
        with pytest.raises(InvalidParamsError):
            monte_carlo(0, 1, lambda rng: None, lambda d: {})
