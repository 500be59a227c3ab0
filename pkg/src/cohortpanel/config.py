"""Declarative run configuration loaded from TOML.

The schema is strict: unknown keys anywhere in the file are errors, so typos
fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ImportError:
    import tomli as tomllib

from .errors import ConfigError
from .panel import BIN_WIDTH, BIRTH_SPAN

SUBGROUP_AXES = ("gender", "generation", "education")

_SCHEMA = {
    "input": {"micro_csv", "cpi_csv", "covariates_csv", "region_map_csv", "schema_csv"},
    "cohort": {"bin_width", "birth_range", "min_cell_size"},
    "variables": {"dependent", "regressors", "lags"},
    "models": {"static", "dynamic", "heterogeneity", "iv_groups"},
    "subgroups": {"axes", "generation_boundary", "education_boundary"},
    "output": {"directory"},
    "run": {"seed"},
}
_IV_GROUP_KEYS = {"gmm", "iv", "collapse"}


@dataclass
class IvGroup:
    """One named instrument configuration for the GMM ladder."""

    gmm: tuple[str, ...]
    iv: tuple[str, ...] = ()
    collapse: bool = True


def default_iv_groups() -> dict[str, IvGroup]:
    return {
        "first": IvGroup(gmm=("health", "edu"), iv=("edu", "hos", "doc", "income", "bed")),
        "second": IvGroup(
            gmm=("health", "edu"), iv=("edu", "hos", "income", "doc", "bed", "living")
        ),
    }


@dataclass
class RunConfig:
    micro_csv: Path
    cpi_csv: Path
    covariates_csv: Path | None = None
    region_map_csv: Path | None = None
    schema_csv: Path | None = None
    bin_width: int = BIN_WIDTH
    birth_range: tuple[int, int] = BIRTH_SPAN
    min_cell_size: int = 100
    dependent: str = "health"
    regressors: tuple[str, ...] = (
        "edu",
        "edu_lag1",
        "flowt",
        "income",
        "living",
        "hos",
        "doc",
        "bed",
    )
    lag_variables: tuple[str, ...] = ("health", "edu")
    static: bool = True
    dynamic: bool = True
    heterogeneity: bool = True
    iv_groups: dict[str, IvGroup] = field(default_factory=default_iv_groups)
    subgroup_axes: tuple[str, ...] = SUBGROUP_AXES
    generation_boundary: int = 1975
    education_boundary: float = 11.0
    output_dir: Path = Path("out")
    seed: int = 20240902

    def validate(self) -> "RunConfig":
        for label, path in (
            ("input.micro_csv", self.micro_csv),
            ("input.cpi_csv", self.cpi_csv),
            ("input.covariates_csv", self.covariates_csv),
            ("input.region_map_csv", self.region_map_csv),
            ("input.schema_csv", self.schema_csv),
        ):
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{label} does not exist: {path}")
        lo, hi = self.birth_range
        if not lo < hi:
            raise ConfigError(f"birth range must be increasing, got {self.birth_range}")
        if self.bin_width < 1 or (hi - lo + 1) % self.bin_width != 0:
            raise ConfigError(
                f"bin width {self.bin_width} does not divide the birth range "
                f"[{lo}, {hi}] ({hi - lo + 1} years)"
            )
        if self.min_cell_size < 1:
            raise ConfigError("cohort.min_cell_size must be at least 1")
        unknown = set(self.subgroup_axes) - set(SUBGROUP_AXES)
        if unknown:
            raise ConfigError(f"unknown subgroup axes: {sorted(unknown)}")
        if not lo <= self.generation_boundary <= hi:
            raise ConfigError(
                f"generation boundary {self.generation_boundary} outside birth range"
            )
        if self.dynamic and not self.iv_groups:
            raise ConfigError("dynamic ladder requires at least one IV group")
        for name, group in self.iv_groups.items():
            if not group.gmm and not group.iv:
                raise ConfigError(f"IV group {name!r} has no instruments")
        if self.dependent in self.regressors:
            raise ConfigError(f"dependent {self.dependent!r} cannot be a regressor")
        return self

    def to_dict(self) -> dict:
        """Canonical JSON-able view used for the provenance hash."""
        return {
            "input": {
                "micro_csv": str(self.micro_csv),
                "cpi_csv": str(self.cpi_csv),
                "covariates_csv": None if self.covariates_csv is None else str(self.covariates_csv),
                "region_map_csv": None if self.region_map_csv is None else str(self.region_map_csv),
                "schema_csv": None if self.schema_csv is None else str(self.schema_csv),
            },
            "cohort": {
                "bin_width": self.bin_width,
                "birth_range": list(self.birth_range),
                "min_cell_size": self.min_cell_size,
            },
            "variables": {
                "dependent": self.dependent,
                "regressors": list(self.regressors),
                "lags": list(self.lag_variables),
            },
            "models": {
                "static": self.static,
                "dynamic": self.dynamic,
                "heterogeneity": self.heterogeneity,
                "iv_groups": {
                    name: {"gmm": list(g.gmm), "iv": list(g.iv), "collapse": g.collapse}
                    for name, g in sorted(self.iv_groups.items())
                },
            },
            "subgroups": {
                "axes": list(self.subgroup_axes),
                "generation_boundary": self.generation_boundary,
                "education_boundary": self.education_boundary,
            },
            "output": {"directory": str(self.output_dir)},
            "run": {"seed": self.seed},
        }

    def digest(self) -> str:
        """Hash of the analytic configuration.

        The output directory is a destination, not an input: runs writing the
        same study to different places share a digest and produce identical
        reports.
        """
        view = self.to_dict()
        del view["output"]
        canonical = json.dumps(view, sort_keys=True).encode()
        return hashlib.sha256(canonical).hexdigest()


def _check_keys(data: dict, schema, context: str) -> None:
    unknown = set(data) - set(schema)
    if unknown:
        raise ConfigError(f"unknown key {context}{sorted(unknown)[0]}")


def _path(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate a TOML run configuration.

    Relative paths are resolved against the configuration file's directory.
    """
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None

    _check_keys(data, _SCHEMA, "")
    for section, keys in _SCHEMA.items():
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"section [{section}] must be a table")
            _check_keys(data[section], keys, f"{section}.")

    base = path.parent
    inp = data.get("input", {})
    if "micro_csv" not in inp or "cpi_csv" not in inp:
        raise ConfigError("input.micro_csv and input.cpi_csv are required")

    kwargs: dict = {
        "micro_csv": _path(base, inp["micro_csv"]),
        "cpi_csv": _path(base, inp["cpi_csv"]),
    }
    for key, attr in (
        ("covariates_csv", "covariates_csv"),
        ("region_map_csv", "region_map_csv"),
        ("schema_csv", "schema_csv"),
    ):
        if key in inp:
            kwargs[attr] = _path(base, inp[key])

    cohort = data.get("cohort", {})
    if "bin_width" in cohort:
        kwargs["bin_width"] = int(cohort["bin_width"])
    if "birth_range" in cohort:
        lo, hi = cohort["birth_range"]
        kwargs["birth_range"] = (int(lo), int(hi))
    if "min_cell_size" in cohort:
        kwargs["min_cell_size"] = int(cohort["min_cell_size"])

    variables = data.get("variables", {})
    if "dependent" in variables:
        kwargs["dependent"] = str(variables["dependent"])
    if "regressors" in variables:
        kwargs["regressors"] = tuple(variables["regressors"])
    if "lags" in variables:
        kwargs["lag_variables"] = tuple(variables["lags"])

    models = data.get("models", {})
    for key in ("static", "dynamic", "heterogeneity"):
        if key in models:
            if not isinstance(models[key], bool):
                raise ConfigError(f"models.{key} must be true or false")
            kwargs[key] = models[key]
    if "iv_groups" in models:
        groups: dict[str, IvGroup] = {}
        for name, spec in models["iv_groups"].items():
            if not isinstance(spec, dict):
                raise ConfigError(f"models.iv_groups.{name} must be a table")
            _check_keys(spec, _IV_GROUP_KEYS, f"models.iv_groups.{name}.")
            groups[name] = IvGroup(
                gmm=tuple(spec.get("gmm", ())),
                iv=tuple(spec.get("iv", ())),
                collapse=bool(spec.get("collapse", True)),
            )
        kwargs["iv_groups"] = groups

    subgroups = data.get("subgroups", {})
    if "axes" in subgroups:
        kwargs["subgroup_axes"] = tuple(subgroups["axes"])
    if "generation_boundary" in subgroups:
        kwargs["generation_boundary"] = int(subgroups["generation_boundary"])
    if "education_boundary" in subgroups:
        kwargs["education_boundary"] = float(subgroups["education_boundary"])

    output = data.get("output", {})
    if "directory" in output:
        kwargs["output_dir"] = _path(base, output["directory"])

    run = data.get("run", {})
    if "seed" in run:
        kwargs["seed"] = int(run["seed"])

    return RunConfig(**kwargs).validate()
