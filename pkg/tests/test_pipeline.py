"""Config loading, subgroup splitting, the study pipeline, and the CLI."""

import json
from pathlib import Path

import pandas as pd
import pytest

from cohortpanel.cli import main
from cohortpanel.config import ConfigError, IvGroup, RunConfig, load_config
from cohortpanel.dgp import DgpParams, write_synthetic_inputs
from cohortpanel.errors import CohortPanelError, StageError
from cohortpanel.panel import read_panel
from cohortpanel.pipeline import export_education_profiles, run, split_subgroups
from cohortpanel.static import ModelSpec, estimate_ols

SEED = 20240902


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Synthetic inputs plus a config file, shared across the module."""
    root = tmp_path_factory.mktemp("study")
    write_synthetic_inputs(DgpParams(), SEED, root / "inputs")
    config_path = root / "study.toml"
    config_path.write_text(
        "[input]\n"
        'micro_csv = "inputs/micro.csv"\n'
        'cpi_csv = "inputs/cpi.csv"\n'
        'covariates_csv = "inputs/covariates.csv"\n'
        "\n[output]\n"
        'directory = "out"\n'
        "\n[run]\n"
        f"seed = {SEED}\n"
    )
    return root


@pytest.fixture(scope="module")
def study(workspace):
    """One full pipeline run; returns (config, report, output dir)."""
    config = load_config(workspace / "study.toml")
    report = run(config)
    return config, report, config.output_dir


@pytest.fixture(scope="module")
def cohort_panel():
    from cohortpanel.dgp import generate_panel

    return generate_panel(DgpParams(), 4821)


class TestLoadConfig:
    def test_minimal_config_fills_defaults(self, workspace):
        config = load_config(workspace / "study.toml")
        assert config.bin_width == 5
        assert config.birth_range == (1955, 1999)
        assert config.dependent == "health"
        assert "edu" in config.regressors
        assert set(config.iv_groups) == {"first", "second"}
        assert config.subgroup_axes == ("gender", "generation", "education")
        assert config.seed == SEED

    def test_relative_paths_resolve_against_config_dir(self, workspace):
        config = load_config(workspace / "study.toml")
        assert config.micro_csv == workspace / "inputs" / "micro.csv"
        assert config.output_dir == workspace / "out"

    def test_full_config_round_trip(self, workspace):
        path = workspace / "full.toml"
        path.write_text(
            "[input]\n"
            'micro_csv = "inputs/micro.csv"\n'
            'cpi_csv = "inputs/cpi.csv"\n'
            'covariates_csv = "inputs/covariates.csv"\n'
            "[cohort]\n"
            "bin_width = 9\n"
            "birth_range = [1955, 1999]\n"
            "min_cell_size = 50\n"
            "[variables]\n"
            'dependent = "health"\n'
            'regressors = ["edu", "income"]\n'
            'lags = ["health"]\n'
            "[models]\n"
            "static = true\n"
            "dynamic = true\n"
            "heterogeneity = false\n"
            "[models.iv_groups.only]\n"
            'gmm = ["health"]\n'
            'iv = ["edu"]\n'
            "collapse = false\n"
            "[subgroups]\n"
            'axes = ["gender"]\n'
            "generation_boundary = 1980\n"
            "education_boundary = 10.5\n"
            "[run]\n"
            "seed = 7\n"
        )
        config = load_config(path)
        assert config.bin_width == 9
        assert config.min_cell_size == 50
        assert config.regressors == ("edu", "income")
        assert config.lag_variables == ("health",)
        assert config.heterogeneity is False
        assert config.iv_groups == {"only": IvGroup(gmm=("health",), iv=("edu",), collapse=False)}
        assert config.subgroup_axes == ("gender",)
        assert config.generation_boundary == 1980
        assert config.education_boundary == 10.5
        assert config.seed == 7

    def test_missing_file_is_config_error(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "absent.toml")

    def test_malformed_toml_is_config_error(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[input\nmicro_csv = 3\n")
        with pytest.raises(ConfigError, match="malformed"):
            load_config(path)

    def test_required_inputs_enforced(self, tmp_path):
        path = tmp_path / "empty.toml"
        path.write_text('[input]\nmicro_csv = "x.csv"\n')
        with pytest.raises(ConfigError, match="cpi_csv"):
            load_config(path)

    @pytest.mark.parametrize(
        "body, fragment",
        [
            ("[bogus]\nx = 1\n", "bogus"),
            ("[cohort]\nwidth = 5\n", "cohort.width"),
            ("[models.iv_groups.first]\nlags = [1]\n", "models.iv_groups.first.lags"),
            ("[run]\nseeds = 3\n", "run.seeds"),
        ],
    )
    def test_unknown_keys_are_errors(self, workspace, body, fragment):
        path = workspace / "unknown.toml"
        path.write_text(
            f'[input]\nmicro_csv = "inputs/micro.csv"\ncpi_csv = "inputs/cpi.csv"\n'
            f'covariates_csv = "inputs/covariates.csv"\n{body}'
        )
        with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
            load_config(path)

    def test_non_boolean_model_flag_rejected(self, workspace):
        path = workspace / "flag.toml"
        path.write_text(
            '[input]\nmicro_csv = "inputs/micro.csv"\ncpi_csv = "inputs/cpi.csv"\n'
            'covariates_csv = "inputs/covariates.csv"\n[models]\nstatic = 1\n'
        )
        with pytest.raises(ConfigError, match="true or false"):
            load_config(path)


class TestValidate:
    def base(self, workspace, **overrides):
        kwargs = dict(
            micro_csv=workspace / "inputs" / "micro.csv",
            cpi_csv=workspace / "inputs" / "cpi.csv",
            covariates_csv=workspace / "inputs" / "covariates.csv",
        )
        kwargs.update(overrides)
        return RunConfig(**kwargs)

    def test_valid_config_passes(self, workspace):
        assert self.base(workspace).validate() is not None

    @pytest.mark.parametrize(
        "overrides, fragment",
        [
            ({"micro_csv": Path("/definitely/absent.csv")}, "does not exist"),
            ({"birth_range": (1999, 1955)}, "increasing"),
            ({"bin_width": 7}, "does not divide"),
            ({"bin_width": 0}, "does not divide"),
            ({"min_cell_size": 0}, "at least 1"),
            ({"subgroup_axes": ("gender", "age")}, "unknown subgroup axes"),
            ({"generation_boundary": 1900}, "outside birth range"),
            ({"iv_groups": {}}, "at least one IV group"),
            ({"iv_groups": {"a": IvGroup(gmm=(), iv=())}}, "no instruments"),
            ({"regressors": ("health", "edu")}, "cannot be a regressor"),
        ],
    )
    def test_invalid_configs_rejected(self, workspace, overrides, fragment):
        with pytest.raises(ConfigError, match=fragment):
            self.base(workspace, **overrides).validate()

    def test_static_only_needs_no_iv_groups(self, workspace):
        config = self.base(
            workspace, dynamic=False, heterogeneity=False, iv_groups={}
        )
        assert config.validate() is config

    def test_digest_ignores_output_directory(self, workspace):
        a = self.base(workspace, output_dir=Path("here"))
        b = self.base(workspace, output_dir=Path("elsewhere"))
        assert a.digest() == b.digest()

    def test_digest_tracks_analytic_fields(self, workspace):
        a = self.base(workspace)
        assert a.digest() != self.base(workspace, seed=1).digest()
        assert a.digest() != self.base(workspace, bin_width=9).digest()


class TestSplitSubgroups:
    def test_gender_split_halves_the_keys(self, cohort_panel):
        subs = dict(split_subgroups(cohort_panel, "gender"))
        assert set(subs) == {"male", "female"}
        for frame in subs.values():
            assert len(frame) == 27 * 5
            assert frame.groupby(["birth_bin", "gender", "region"]).ngroups == 27
        assert len(subs["male"]) + len(subs["female"]) == len(cohort_panel)

    def test_generation_split_counts_and_labels(self, cohort_panel):
        subs = dict(split_subgroups(cohort_panel, "generation"))
        assert set(subs) == {"1955-1974", "1975-1999"}
        assert sorted(subs["1955-1974"]["birth_bin"].unique()) == [1955, 1960, 1965, 1970]
        assert sorted(subs["1975-1999"]["birth_bin"].unique()) == [1975, 1980, 1985, 1990, 1995]
        assert len(subs["1955-1974"]) == 24 * 5
        assert len(subs["1975-1999"]) == 30 * 5

    def test_education_split_is_a_row_partition(self, cohort_panel):
        subs = dict(split_subgroups(cohort_panel, "education"))
        basic, higher = subs["basic edu"], subs["higher edu"]
        assert len(basic) + len(higher) == len(cohort_panel)
        assert basic["edu"].max() <= 11.0
        assert higher["edu"].min() > 11.0

    def test_education_lag_sample_matches_calibrated_counts(self, cohort_panel):
        subs = dict(split_subgroups(cohort_panel, "education"))
        lag_years = sorted(cohort_panel["year"].unique())[1:]
        basic = subs["basic edu"]
        higher = subs["higher edu"]
        assert len(basic.loc[basic["year"].isin(lag_years)]) == 162
        assert len(higher.loc[higher["year"].isin(lag_years)]) == 54

    def test_custom_boundaries_respected(self, cohort_panel):
        subs = dict(split_subgroups(cohort_panel, "generation", generation_boundary=1990))
        assert len(subs["1955-1989"]["birth_bin"].unique()) == 7
        subs = dict(split_subgroups(cohort_panel, "education", education_boundary=99.0))
        assert list(subs) == ["basic edu"]

    def test_unknown_axis_raises(self, cohort_panel):
        with pytest.raises(CohortPanelError, match="unknown subgroup axis"):
            split_subgroups(cohort_panel, "province")

    def test_empty_side_dropped_with_warning(self, cohort_panel, caplog):
        males = cohort_panel.loc[cohort_panel["gender"] == "male"]
        with caplog.at_level("WARNING"):
            subs = split_subgroups(males, "gender")
        assert [name for name, _ in subs] == ["male"]
        assert any("empty" in rec.message for rec in caplog.records)


class TestExportEducationProfiles:
    def test_equal_genders_give_zero_gap(self, tmp_path):
        panel = pd.DataFrame(
            {
                "birth_bin": [1955, 1955, 1960, 1960],
                "gender": ["male", "female", "male", "female"],
                "edu": [8.0, 8.0, 9.0, 9.0],
            }
        )
        frame = export_education_profiles(panel, tmp_path / "prof.csv")
        assert (frame["gap"] == 0.0).all()
        assert list(frame["overall"]) == [8.0, 9.0]

    def test_values_match_groupby_oracle(self, cohort_panel, tmp_path):
        frame = export_education_profiles(cohort_panel, tmp_path / "prof.csv")
        assert len(frame) == 9
        expected = cohort_panel.groupby(["birth_bin", "gender"])["edu"].mean()
        for row in frame.itertuples():
            assert row.male == pytest.approx(expected[(row.birth_bin, "male")], abs=1e-12)
            assert row.female == pytest.approx(expected[(row.birth_bin, "female")], abs=1e-12)
            assert row.gap == pytest.approx(row.male - row.female, abs=1e-12)
        on_disk = pd.read_csv(tmp_path / "prof.csv")
        assert list(on_disk.columns) == ["birth_bin", "male", "female", "gap", "overall"]

    def test_missing_gender_cell_omitted_with_warning(self, cohort_panel, tmp_path, caplog):
        partial = cohort_panel.loc[
            ~((cohort_panel["birth_bin"] == 1960) & (cohort_panel["gender"] == "female"))
        ]
        with caplog.at_level("WARNING"):
            frame = export_education_profiles(partial, tmp_path / "prof.csv")
        assert len(frame) == 8
        assert 1960 not in frame["birth_bin"].values
        assert any("1960" in rec.message for rec in caplog.records)


class TestRun:
    def test_all_artifacts_written(self, study):
        _, _, out = study
        names = {p.name for p in out.iterdir()}
        assert names >= {
            "panel.csv",
            "rejects.csv",
            "report.txt",
            "manifest.json",
            "education_profiles.csv",
            "estimates_static.csv",
            "estimates_dynamic.csv",
            "estimates_subgroups.csv",
        }

    def test_report_contains_every_section(self, study):
        _, report, _ = study
        for fragment in (
            "Descriptive statistics",
            "Static ladder",
            "Hausman test",
            "Dynamic ladder",
            "Heterogeneity",
            "Provenance",
        ):
            assert fragment in report.text
        assert report.skipped == []

    def test_manifest_provenance(self, study):
        config, _, out = study
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config_sha256"] == config.digest()
        assert manifest["seed"] == SEED
        assert manifest["sections"] == {
            "static": "done",
            "dynamic": "done",
            "heterogeneity": "done",
        }
        counts = manifest["row_counts"]
        assert counts["cells"] == 270
        assert counts["rows_read"] == counts["rejected"] + counts["trimmed"] + counts["analysis_rows"]
        assert set(manifest["artifacts"]) == {
            p.name for p in out.iterdir() if p.name != "manifest.json"
        }

    def test_subgroup_estimation_rows_match_calibrated_counts(self, study):
        _, _, out = study
        frame = pd.read_csv(out / "estimates_subgroups.csv")
        n_obs = frame.loc[frame["parameter"] == "n_obs"].set_index("model")["estimate"]
        assert n_obs["male (gender)"] == 108
        assert n_obs["female (gender)"] == 108
        assert n_obs["basic edu"] == 162
        assert n_obs["higher edu"] == 54

    def test_straddling_education_cohorts_are_reported(self, study):
        _, report, _ = study
        assert any("contribute to both sides" in w for w in report.warnings)

    def test_reported_coefficient_traces_to_artifacts(self, study):
        config, _, out = study
        frame = pd.read_csv(out / "estimates_static.csv", float_precision="round_trip")
        stored = frame.loc[
            (frame["model"] == "OLS(1)") & (frame["parameter"] == "edu"), "estimate"
        ].item()
        panel = read_panel(out / "panel.csv")
        refit = estimate_ols(panel, ModelSpec(config.dependent, config.regressors))
        assert refit.coefficient("edu") == stored

    def test_identical_runs_are_byte_identical(self, workspace, study):
        config = load_config(workspace / "study.toml")
        config.output_dir = workspace / "out_again"
        run(config)
        _, _, first_out = study
        assert (config.output_dir / "manifest.json").read_bytes() == (
            first_out / "manifest.json"
        ).read_bytes()
        assert (config.output_dir / "report.txt").read_bytes() == (
            first_out / "report.txt"
        ).read_bytes()

    def test_static_only_run_marks_skipped_sections(self, workspace):
        config = load_config(workspace / "study.toml")
        config.dynamic = False
        config.heterogeneity = False
        config.output_dir = workspace / "out_static"
        report = run(config)
        assert report.skipped == ["dynamic", "heterogeneity"]
        assert "Dynamic ladder: skipped by configuration." in report.text
        manifest = json.loads((config.output_dir / "manifest.json").read_text())
        assert manifest["sections"]["dynamic"] == "skipped"
        assert "estimates_dynamic.csv" not in manifest["artifacts"]

    def test_missing_cpi_year_fails_in_ingest_stage(self, workspace):
        truncated = workspace / "cpi_short.csv"
        lines = (workspace / "inputs" / "cpi.csv").read_text().strip().splitlines()
        truncated.write_text("\n".join(lines[:-1]) + "\n")
        config = load_config(workspace / "study.toml")
        config.cpi_csv = truncated
        config.output_dir = workspace / "out_broken"
        with pytest.raises(StageError, match=r"\[ingest\]") as err:
            run(config)
        assert err.value.stage == "ingest"


class TestCli:
    def test_study_prints_report(self, workspace, capsys):
        assert main(["study", "--config", str(workspace / "study.toml"),
                     "--out", str(workspace / "cli_study")]) == 0
        text = capsys.readouterr().out
        assert "Static ladder" in text
        assert "Provenance" in text

    def test_ingest_reports_counts(self, workspace, capsys):
        assert main(["ingest", "--config", str(workspace / "study.toml"),
                     "--out", str(workspace / "cli_ingest")]) == 0
        out = capsys.readouterr().out
        assert "rows read: 32400" in out
        assert (workspace / "cli_ingest" / "rejects.csv").is_file()

    def test_panel_writes_and_describes(self, workspace, capsys):
        assert main(["panel", "--config", str(workspace / "study.toml"),
                     "--out", str(workspace / "cli_panel")]) == 0
        assert "Descriptive statistics" in capsys.readouterr().out
        panel = read_panel(workspace / "cli_panel" / "panel.csv")
        assert len(panel) == 270

    def test_estimate_by_subgroup(self, workspace, capsys):
        assert main([
            "estimate", "--config", str(workspace / "study.toml"),
            "--out", str(workspace / "cli_est"),
            "--model", "sys-gmm", "--steps", "2", "--iv-group", "second",
            "--subgroup", "education",
        ]) == 0
        out = capsys.readouterr().out
        assert "basic edu" in out
        assert "higher edu" in out
        assert "Hansen p" in out

    def test_estimate_unknown_iv_group_fails(self, workspace, capsys):
        code = main([
            "estimate", "--config", str(workspace / "study.toml"),
            "--model", "sys-gmm", "--iv-group", "third",
        ])
        assert code == 1
        assert "unknown IV group" in capsys.readouterr().err

    def test_simulate_writes_inputs_and_mc_summary(self, tmp_path, capsys):
        out = tmp_path / "sim"
        assert main(["simulate", "--seed", "11", "--out", str(out), "--reps", "2"]) == 0
        text = capsys.readouterr().out
        assert (out / "micro.csv").is_file()
        assert (out / "cpi.csv").is_file()
        assert (out / "covariates.csv").is_file()
        assert (out / "mc_results.csv").is_file()
        assert "mean bias" in text

    def test_bad_config_exits_nonzero_with_stage_tag(self, tmp_path, capsys):
        path = tmp_path / "broken.toml"
        path.write_text("[input]\nmicro_csv = 'x.csv'\ncpi_csv = 'y.csv'\n[bogus]\nz = 1\n")
        assert main(["study", "--config", str(path)]) == 1
        assert "[config]" in capsys.readouterr().err

    def test_ingest_failure_is_stage_tagged(self, workspace, capsys):
        path = workspace / "badcpi.toml"
        lines = (workspace / "inputs" / "cpi.csv").read_text().strip().splitlines()
        (workspace / "cpi_short2.csv").write_text("\n".join(lines[:-1]) + "\n")
        path.write_text(
            "[input]\n"
            'micro_csv = "inputs/micro.csv"\n'
            'cpi_csv = "cpi_short2.csv"\n'
            'covariates_csv = "inputs/covariates.csv"\n'
        )
        assert main(["ingest", "--config", str(path), "--out", str(workspace / "x")]) == 1
        assert "[ingest]" in capsys.readouterr().err
