"""Aligned-text regression tables, significance stars, and result serialization.

Renderers accept both static and GMM results; footer rows that do not apply to
a column show a dash. Formatted tables are for reading; the CSV serialization
keeps full precision so every displayed number traces back to an artifact.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

SIGNIFICANCE_LEVELS = ((0.01, "***"), (0.05, "**"), (0.10, "*"))
NOTE = "Note: standard errors in parentheses; *** p<0.01, ** p<0.05, * p<0.1."

_METHOD_LABELS = {
    "ols": "OLS",
    "ols+dummies": "OLS",
    "re_gls": "REM",
    "fe_within": "FEM",
    "diff_gmm": "Diff-GMM",
    "sys_gmm": "Sys-GMM",
}
_DUMMY_METHODS = {"ols+dummies", "fe_within"}


def stars(p_value: float) -> str:
    """Significance marker for a p-value."""
    for cutoff, marker in SIGNIFICANCE_LEVELS:
        if p_value < cutoff:
            return marker
    return ""


def format_number(x, digits: int = 4) -> str:
    if x is None:
        return "-"
    x = float(x)
    if not np.isfinite(x):
        return "-"
    return f"{x:.{digits}g}"


def _is_gmm(result) -> bool:
    return hasattr(result, "hansen_p")


def _has(result, name: str) -> bool:
    return name in result.names


def _coef_cell(result, name: str) -> str:
    if result is None or not _has(result, name):
        return "-"
    return format_number(result.coefficient(name)) + stars(result.p_value(name))


def _se_cell(result, name: str) -> str:
    if result is None or not _has(result, name):
        return ""
    return f"({format_number(result.std_error(name))})"


def _display_names(columns: dict) -> list[str]:
    names: list[str] = []
    for result in columns.values():
        for name in result.names:
            if name == "const" or name.startswith("cohort["):
                continue
            if name not in names:
                names.append(name)
    return names


def _render_grid(title: str, header: list[str], rows: list[list[str]], note: str | None) -> str:
    widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
    sep = "-" * (sum(widths) + 2 * (len(widths) - 1))

    def line(cells: list[str]) -> str:
        out = [cells[0].ljust(widths[0])]
        out += [c.rjust(w) for c, w in zip(cells[1:], widths[1:])]
        return "  ".join(out).rstrip()

    lines = [title, sep, line(header), sep]
    lines += [line(r) for r in rows]
    lines.append(sep)
    if note:
        lines.append(note)
    return "\n".join(lines)


def render_table(
    title: str,
    columns: dict[str, object],
    order: list[str] | None = None,
    extra_rows: list[tuple[str, dict[str, str]]] | None = None,
    dependent: str = "health",
) -> str:
    """Render a ladder of models as one aligned table.

    ``columns`` maps column label to an estimation result; ``extra_rows`` adds
    caller-supplied footer rows as (label, {column label: text}).
    """
    labels = list(columns)
    header = [dependent] + labels
    names = order if order is not None else _display_names(columns)

    rows: list[list[str]] = []
    for name in names:
        rows.append([name] + [_coef_cell(columns[c], name) for c in labels])
        rows.append([""] + [_se_cell(columns[c], name) for c in labels])

    if any(_has(r, "const") for r in columns.values()):
        rows.append(["Constant"] + [_coef_cell(columns[c], "const") for c in labels])
        rows.append([""] + [_se_cell(columns[c], "const") for c in labels])
    rows.append(
        ["Cohort dummies"]
        + ["yes" if getattr(columns[c], "method", "") in _DUMMY_METHODS else "-" for c in labels]
    )
    rows.append(["Rows"] + [str(columns[c].n_obs) for c in labels])
    rows.append(["Cohorts"] + [str(columns[c].n_cohorts) for c in labels])
    if any(getattr(r, "r_squared", None) is not None for r in columns.values()):
        rows.append(
            ["R-squared"] + [format_number(getattr(columns[c], "r_squared", None)) for c in labels]
        )

    if any(_is_gmm(r) for r in columns.values()):
        def gmm_cell(result, attr, digits=3):
            if not _is_gmm(result):
                return "-"
            return format_number(getattr(result, attr), digits)

        rows.append(
            ["Step"] + [columns[c].step if _is_gmm(columns[c]) else "-" for c in labels]
        )
        rows.append(
            ["Instruments"]
            + [str(columns[c].instrument_count) if _is_gmm(columns[c]) else "-" for c in labels]
        )
        rows.append(["Hansen p"] + [gmm_cell(columns[c], "hansen_p") for c in labels])
        rows.append(["AR(1) p"] + [gmm_cell(columns[c], "ar1_p") for c in labels])
        rows.append(["AR(2) p"] + [gmm_cell(columns[c], "ar2_p") for c in labels])

    for label, cells in extra_rows or []:
        rows.append([label] + [cells.get(c, "-") for c in labels])

    return _render_grid(title, header, rows, NOTE)


def render_descriptive(summary: pd.DataFrame, title: str = "Descriptive statistics") -> str:
    """Aligned view of a panel summary frame."""
    header = ["variable", "cells", "mean", "sd", "min", "max", "weighted obs"]
    rows = [
        [
            str(r.variable),
            str(int(r.cells)),
            format_number(r.mean),
            format_number(r.sd),
            format_number(r.min),
            format_number(r.max),
            str(int(r.obs_weighted)),
        ]
        for r in summary.itertuples()
    ]
    return _render_grid(title, header, rows, None)


def render_hausman(stat: float, df: int, p_value: float) -> str:
    return f"Hausman test (FE vs RE): chi2({df}) = {format_number(stat)}, p = {format_number(p_value, 3)}"


def mean_lag_coefficient(columns: dict[str, object], name: str = "health_lag1") -> float | None:
    """Average of a coefficient across a model ladder.

    Purely descriptive: this is the across-model mean of point estimates, not
    an estimator with sampling properties.
    """
    values = [
        float(r.coefficient(name)) for r in columns.values() if r is not None and _has(r, name)
    ]
    if not values:
        return None
    return float(np.mean(values))


def method_label(result) -> str:
    return _METHOD_LABELS.get(result.method, result.method)


def results_frame(label: str, result) -> pd.DataFrame:
    """Flatten one estimation result into a long frame at full precision."""
    rows = [
        {
            "model": label,
            "parameter": name,
            "estimate": float(result.coefficients[i]),
            "std_error": float(result.std_errors[i]),
            "t_stat": float(result.t_stats[i]),
            "p_value": float(result.p_values[i]),
        }
        for i, name in enumerate(result.names)
    ]
    scalars = {"n_obs": float(result.n_obs), "n_cohorts": float(result.n_cohorts)}
    if getattr(result, "r_squared", None) is not None:
        scalars["r_squared"] = float(result.r_squared)
    if getattr(result, "r_squared_within", None) is not None:
        scalars["r_squared_within"] = float(result.r_squared_within)
    if _is_gmm(result):
        scalars["instrument_count"] = float(result.instrument_count)
        scalars["hansen_j"] = float(result.hansen_j)
        scalars["hansen_df"] = float(result.hansen_df)
        scalars["hansen_p"] = float(result.hansen_p)
        for attr in ("ar1_z", "ar1_p", "ar2_z", "ar2_p"):
            value = getattr(result, attr)
            if value is not None:
                scalars[attr] = float(value)
    for key, value in scalars.items():
        rows.append(
            {
                "model": label,
                "parameter": key,
                "estimate": value,
                "std_error": float("nan"),
                "t_stat": float("nan"),
                "p_value": float("nan"),
            }
        )
    return pd.DataFrame(rows)


def write_results_csv(columns: dict[str, object], path: str | Path) -> None:
    """Serialize a model ladder; float repr keeps round-trip precision."""
    frame = pd.concat(
        [results_frame(label, result) for label, result in columns.items()],
        ignore_index=True,
    )
    frame.to_csv(path, index=False)
