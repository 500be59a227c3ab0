"""Survey micro-data ingestion and analysis-variable construction.

Reads delimited micro files through a column-mapping schema, converts
education levels to years of schooling, attaches regions and city-level
covariates, deflates household income to base-year prices, and trims the
income distribution. Malformed rows are rejected with a reason and never
abort a file.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    EmptyInputError,
    MissingColumnError,
    MissingCpiYearError,
    UnknownCategoryError,
    UnknownProvinceError,
)
from .linalg import percentile
from .regions import DEFAULT_REGION_MAP

log = logging.getLogger(__name__)

# Years of schooling per questionnaire education level.
EDUCATION_YEARS: dict[str, float] = {
    "none": 0.0,
    "elementary": 6.0,
    "junior_high": 9.0,
    "high_school": 12.0,
    "college": 15.0,
    "undergraduate": 16.0,
    "postgraduate": 19.0,
}

SURVEY_YEARS = (2014, 2015, 2016, 2017, 2018)
BIRTH_RANGE = (1955, 1999)
BASE_YEAR = 2014

# Income trimming: drop above the 97.5th and below the 7.5th percentile.
TRIM_UPPER_PCT = 97.5
TRIM_LOWER_PCT = 7.5

# Canonical variable names a schema must map (hos/bed/doc may instead come
# from a covariate table joined on province and survey year).
CANONICAL_COLUMNS = (
    "survey_year",
    "birth_year",
    "gender",
    "province",
    "education_level",
    "has_health_record",
    "living",
    "flowt",
    "income",
)
COVARIATE_COLUMNS = ("hos", "bed", "doc")


def education_years(level: str) -> float:
    """Map an education-level label to years of schooling."""
    key = str(level).strip().lower()
    if key not in EDUCATION_YEARS:
        raise UnknownCategoryError(str(level))
    return EDUCATION_YEARS[key]


def region_of(province: str, region_map: dict[str, str] | None = None) -> str:
    """Return the economic-geography region for a province."""
    table = DEFAULT_REGION_MAP if region_map is None else region_map
    try:
        return table[province]
    except KeyError:
        raise UnknownProvinceError(province) from None


@dataclass(frozen=True)
class CpiTable:
    """Consumer price index by calendar year, base year = 100."""

    values: dict[int, float]
    base_year: int = BASE_YEAR

    def __post_init__(self):
        if self.base_year not in self.values:
            raise MissingCpiYearError(self.base_year)
        for year, v in self.values.items():
            if not v > 0:
                raise ValueError(f"CPI for {year} must be positive, got {v}")

    @classmethod
    def from_csv(cls, path: str | Path, base_year: int = BASE_YEAR) -> "CpiTable":
        values: dict[int, float] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() == "year":
                    continue
                values[int(row[0])] = float(row[1])
        return cls(values=values, base_year=base_year)

    def __contains__(self, year: int) -> bool:
        return year in self.values

    def __getitem__(self, year: int) -> float:
        try:
            return self.values[year]
        except KeyError:
            raise MissingCpiYearError(year) from None


def deflate_income(nominal: float, year: int, cpi: CpiTable) -> float:
    """Convert nominal income to base-year prices: nominal * cpi[base] / cpi[year]."""
    if year == cpi.base_year:
        return float(nominal)
    return float(nominal) * cpi[cpi.base_year] / cpi[year]


def trim_by_income(records: pd.DataFrame, column: str = "income_real") -> pd.DataFrame:
    """Drop records strictly above the 97.5th or strictly below the 7.5th
    percentile of the pooled deflated-income distribution."""
    if len(records) == 0:
        raise EmptyInputError("cannot trim an empty record set")
    incomes = records[column].to_numpy(dtype=float)
    hi = percentile(incomes, TRIM_UPPER_PCT)
    lo = percentile(incomes, TRIM_LOWER_PCT)
    keep = (incomes >= lo) & (incomes <= hi)
    return records.loc[keep].reset_index(drop=True)


@dataclass(frozen=True)
class Schema:
    """Maps canonical variable names to source column names."""

    mapping: dict[str, str]

    @classmethod
    def identity(cls, include_covariates: bool = True) -> "Schema":
        names = CANONICAL_COLUMNS + (COVARIATE_COLUMNS if include_covariates else ())
        return cls({name: name for name in names})

    @classmethod
    def from_csv(cls, path: str | Path) -> "Schema":
        """Two-column delimited file: canonical name, source column name."""
        mapping: dict[str, str] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().lower() in ("canonical", ""):
                    continue
                mapping[row[0].strip()] = row[1].strip()
        return cls(mapping)

    def source(self, canonical: str) -> str:
        return self.mapping[canonical]

    @property
    def has_covariates(self) -> bool:
        return all(c in self.mapping for c in COVARIATE_COLUMNS)


@dataclass
class RejectedRow:
    line_number: int
    reason: str


@dataclass
class IngestResult:
    records: pd.DataFrame
    rejects: list[RejectedRow]
    n_rows_read: int

    @property
    def n_records(self) -> int:
        return len(self.records)


def load_covariates_csv(path: str | Path) -> dict[tuple[str, int], tuple[float, float, float]]:
    """Read province-year city covariates: columns province, year, hos, bed, doc."""
    table: dict[tuple[str, int], tuple[float, float, float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"province", "year", "hos", "bed", "doc"} - set(reader.fieldnames or ())
        if missing:
            raise MissingColumnError(sorted(missing)[0])
        for row in reader:
            key = (row["province"].strip(), int(row["year"]))
            table[key] = (float(row["hos"]), float(row["bed"]), float(row["doc"]))
    return table


RECORD_COLUMNS = [
    "survey_year",
    "birth_year",
    "gender",
    "province",
    "region",
    "education_level",
    "edu",
    "health",
    "living",
    "flowt",
    "income_nominal",
    "income_real",
    "hos",
    "bed",
    "doc",
]


def parse_micro_csv(
    path: str | Path,
    schema: Schema,
    cpi: CpiTable,
    covariates: dict[tuple[str, int], tuple[float, float, float]] | None = None,
    region_map: dict[str, str] | None = None,
    survey_years: tuple[int, ...] = SURVEY_YEARS,
    birth_range: tuple[int, int] = BIRTH_RANGE,
) -> IngestResult:
    """Parse a micro-data CSV into validated records plus a rejects list.

    Every row either becomes a record or is rejected with a reason; a
    malformed row never aborts the file. Incomes are deflated to base-year
    prices here; trimming and the log transform are applied afterwards by
    :func:`prepare_analysis_set`.
    """
    region_map = DEFAULT_REGION_MAP if region_map is None else region_map
    rejects: list[RejectedRow] = []
    rows: list[tuple] = []
    n_read = 0

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or ())
        for canonical, source in schema.mapping.items():
            if source not in header:
                raise MissingColumnError(source)
        need_join = not schema.has_covariates
        if need_join and covariates is None:
            raise MissingColumnError("hos")  # no mapped columns and no covariate table

        for line_number, raw in enumerate(reader, start=2):
            n_read += 1
            try:
                rows.append(
                    _convert_row(
                        raw,
                        schema,
                        cpi,
                        covariates if need_join else None,
                        region_map,
                        survey_years,
                        birth_range,
                    )
                )
            except MissingCpiYearError:
                raise
            except Exception as exc:  # reject-and-continue
                rejects.append(RejectedRow(line_number, str(exc)))

    records = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    if rejects:
        log.info("parsed %d rows from %s: %d records, %d rejected", n_read, path, len(records), len(rejects))
    return IngestResult(records=records, rejects=rejects, n_rows_read=n_read)


def _convert_row(raw, schema, cpi, covariates, region_map, survey_years, birth_range):
    def get(canonical):
        value = raw[schema.source(canonical)]
        if value is None or str(value).strip() == "":
            raise ValueError(f"missing value for {canonical}")
        return str(value).strip()

    survey_year = int(get("survey_year"))
    if survey_year not in survey_years:
        raise ValueError(f"survey_year {survey_year} outside study window {survey_years[0]}-{survey_years[-1]}")
    birth_year = int(get("birth_year"))
    if not birth_range[0] <= birth_year <= birth_range[1]:
        raise ValueError(f"birth_year {birth_year} outside cohort range {birth_range}")
    gender = get("gender").lower()
    if gender not in ("male", "female"):
        raise ValueError(f"gender must be male/female, got {gender!r}")
    province = get("province")
    region = region_of(province, region_map)
    education_level = get("education_level")
    edu = education_years(education_level)
    education_level = education_level.lower()
    health = int(get("has_health_record"))
    if health not in (0, 1):
        raise ValueError(f"has_health_record must be 0/1, got {health}")
    living = float(get("living"))
    flowt = float(get("flowt"))
    income_nominal = float(get("income"))
    if income_nominal <= 0:
        raise ValueError(f"nonpositive income {income_nominal}")
    income_real = deflate_income(income_nominal, survey_year, cpi)

    if covariates is not None:
        try:
            hos, bed, doc = covariates[(province, survey_year)]
        except KeyError:
            raise ValueError(f"no covariates for ({province}, {survey_year})") from None
    else:
        hos = float(raw[schema.source("hos")])
        bed = float(raw[schema.source("bed")])
        doc = float(raw[schema.source("doc")])

    return (
        survey_year,
        birth_year,
        gender,
        province,
        region,
        education_level,
        edu,
        health,
        living,
        flowt,
        income_nominal,
        income_real,
        hos,
        bed,
        doc,
    )


def prepare_analysis_set(records: pd.DataFrame, trim: bool = True) -> tuple[pd.DataFrame, int]:
    """Trim the pooled income distribution and attach log income.

    Returns the analysis records and the number of rows removed by the trim.
    """
    if len(records) == 0:
        raise EmptyInputError("no records to prepare")
    before = len(records)
    out = trim_by_income(records) if trim else records.copy()
    out = out.assign(income=np.log(out["income_real"].to_numpy(dtype=float)))
    return out, before - len(out)


def write_rejects(rejects: list[RejectedRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line_number", "reason"])
        for r in rejects:
            writer.writerow([r.line_number, r.reason])


def serialize_micro_csv(records: pd.DataFrame, path: str | Path, schema: Schema) -> None:
    """Write records back under the schema's source column names.

    Numeric fields are written with shortest round-trip float formatting so a
    parse of the output reproduces them bit-exactly.
    """
    canonical_order = [c for c in schema.mapping]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([schema.source(c) for c in canonical_order])
        for _, row in records.iterrows():
            out = []
            for canonical in canonical_order:
                if canonical == "income":
                    out.append(repr(float(row["income_nominal"])))
                elif canonical == "has_health_record":
                    out.append(int(row["health"]))
                elif canonical in ("survey_year", "birth_year"):
                    out.append(int(row[canonical]))
                elif canonical in ("gender", "province", "education_level"):
                    out.append(row[canonical])
                else:
                    out.append(repr(float(row[canonical])))
            writer.writerow(out)
