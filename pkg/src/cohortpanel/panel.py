"""Cohort assignment and pseudo-panel construction.

Micro records are grouped into cells by birth-year bin, gender, region, and
survey year, and each cell is summarized by its arithmetic means. Lags are
materialized as extra columns that respect gaps: the lag of a cell refers
only to the same cohort one year earlier.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import (
    EmptyInputError,
    MissingColumnError,
    OutOfRangeError,
    UnknownVariableError,
)

BIN_ORIGIN = 1955
BIN_WIDTH = 5
BIRTH_SPAN = (1955, 1999)

GENDERS = ("male", "female")
REGIONS = ("east", "central", "west")

KEY_COLUMNS = ["birth_bin", "gender", "region"]
INDEX_COLUMNS = KEY_COLUMNS + ["year"]

# Cell-mean variables carried in the canonical panel.
DEFAULT_VARIABLES = ("health", "edu", "income", "living", "flowt", "hos", "bed", "doc")

_GENDER_RANK = {g: i for i, g in enumerate(GENDERS)}
_REGION_RANK = {r: i for i, r in enumerate(REGIONS)}


@dataclass(frozen=True, order=True)
class CohortKey:
    birth_bin: int
    gender: str
    region: str


def cohort_key(
    birth_year: int,
    gender: str,
    region: str,
    bin_width: int = BIN_WIDTH,
    origin: int = BIN_ORIGIN,
    span: tuple[int, int] = BIRTH_SPAN,
) -> CohortKey:
    """Assign a birth year to its cohort bin: origin + width * floor((y - origin)/width)."""
    if not span[0] <= birth_year <= span[1]:
        raise OutOfRangeError(f"birth_year {birth_year} outside {span}")
    birth_bin = origin + bin_width * ((birth_year - origin) // bin_width)
    return CohortKey(birth_bin=int(birth_bin), gender=gender, region=region)


def all_cohort_keys(bin_width: int = BIN_WIDTH, origin: int = BIN_ORIGIN, span: tuple[int, int] = BIRTH_SPAN):
    """Every possible key under the binning scheme, in panel sort order."""
    bins = range(origin, span[1] + 1, bin_width)
    return [CohortKey(b, g, r) for b in bins for g in GENDERS for r in REGIONS]


def _sort_panel(panel: pd.DataFrame) -> pd.DataFrame:
    out = panel.copy()
    out["_g"] = out["gender"].map(_GENDER_RANK)
    out["_r"] = out["region"].map(_REGION_RANK)
    out = out.sort_values(["birth_bin", "_g", "_r", "year"], kind="mergesort")
    return out.drop(columns=["_g", "_r"]).reset_index(drop=True)


def aggregate(
    records: pd.DataFrame,
    variables: tuple[str, ...] = DEFAULT_VARIABLES,
    bin_width: int = BIN_WIDTH,
) -> pd.DataFrame:
    """Collapse micro records to cohort-year cell means.

    Returns one row per observed (birth_bin, gender, region, year) with the
    cell count n and the arithmetic mean of each variable. Cells with no
    records are simply absent.
    """
    if len(records) == 0:
        raise EmptyInputError("no records to aggregate")
    for var in variables:
        if var not in records.columns:
            raise MissingColumnError(var)

    work = records.copy()
    birth = work["birth_year"].to_numpy(dtype=int)
    lo, hi = BIRTH_SPAN
    bad = (birth < lo) | (birth > hi)
    if bad.any():
        raise OutOfRangeError(f"birth_year {int(birth[bad][0])} outside {BIRTH_SPAN}")
    work["birth_bin"] = BIN_ORIGIN + bin_width * ((birth - BIN_ORIGIN) // bin_width)
    work = work.rename(columns={"survey_year": "year"})

    grouped = work.groupby(INDEX_COLUMNS, sort=False)
    panel = grouped[list(variables)].mean()
    panel.insert(0, "n", grouped.size())
    panel = panel.reset_index()
    panel["n"] = panel["n"].astype(int)
    return _sort_panel(panel)


def lag_name(variable: str, order: int = 1) -> str:
    return f"{variable}_lag{order}"


def add_lag(panel: pd.DataFrame, variable: str, order: int = 1) -> pd.DataFrame:
    """Attach the order-step lag of a variable within each cohort.

    The lag of (key, year) is the same key's value at year - order; a gap in
    the years leaves the lag missing rather than reaching further back.
    """
    if variable not in panel.columns:
        raise UnknownVariableError(variable)
    name = lag_name(variable, order)
    base = panel.drop(columns=[name], errors="ignore")
    shifted = base[INDEX_COLUMNS + [variable]].copy()
    shifted["year"] = shifted["year"] + order
    shifted = shifted.rename(columns={variable: name})
    out = base.merge(shifted, on=INDEX_COLUMNS, how="left", validate="one_to_one")
    return _sort_panel(out)


def check_cell_sizes(panel: pd.DataFrame, min_n: int = 100) -> list[tuple[CohortKey, int, int]]:
    """Return (key, year, n) for every cell smaller than min_n."""
    small = panel.loc[panel["n"] < min_n]
    return [
        (CohortKey(int(row.birth_bin), row.gender, row.region), int(row.year), int(row.n))
        for row in small.itertuples()
    ]


def summarize(panel: pd.DataFrame, variables: tuple[str, ...] | None = None) -> pd.DataFrame:
    """Descriptive statistics over cells: mean, sd, min, max, cell and record counts.

    The sd is the sample standard deviation across cell means; obs_weighted
    sums the underlying record counts.
    """
    if len(panel) == 0:
        raise EmptyInputError("empty panel")
    if variables is None:
        variables = [v for v in DEFAULT_VARIABLES if v in panel.columns]
    rows = []
    total_n = int(panel["n"].sum())
    for var in variables:
        x = panel[var].to_numpy(dtype=float)
        rows.append(
            {
                "variable": var,
                "mean": float(np.mean(x)),
                "sd": float(np.std(x, ddof=1)) if len(x) > 1 else 0.0,
                "min": float(np.min(x)),
                "max": float(np.max(x)),
                "cells": len(x),
                "obs_weighted": total_n,
            }
        )
    return pd.DataFrame(rows)


def _format_value(column: str, value) -> str:
    if column in ("birth_bin", "year", "n"):
        return str(int(value))
    if column in ("gender", "region"):
        return str(value)
    v = float(value)
    if np.isnan(v):
        return ""
    return repr(v)


def write_panel(panel: pd.DataFrame, path: str | Path) -> None:
    """Write the panel as a delimited file with round-trip float formatting."""
    ordered = _sort_panel(panel)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ordered.columns.tolist())
        for _, row in ordered.iterrows():
            writer.writerow([_format_value(c, row[c]) for c in ordered.columns])


def read_panel(path: str | Path) -> pd.DataFrame:
    panel = pd.read_csv(path, float_precision="round_trip")
    for col in ("birth_bin", "year", "n"):
        if col in panel.columns:
            panel[col] = panel[col].astype(int)
    for col in panel.columns:
        if col not in ("birth_bin", "year", "n", "gender", "region"):
            panel[col] = panel[col].astype(float)
    return panel
