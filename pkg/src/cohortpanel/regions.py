"""Built-in province-to-region table (economic-geography division).

Thirteen eastern, six central, and twelve western provinces cover all 31
mainland provinces, municipalities, and autonomous regions. The table can be
overridden from a two-column CSV (province, region).
"""

from __future__ import annotations

import csv
from pathlib import Path

from .errors import CohortPanelError

EAST = (
    "Hebei",
    "Beijing",
    "Tianjin",
    "Shandong",
    "Jiangsu",
    "Shanghai",
    "Zhejiang",
    "Fujian",
    "Guangdong",
    "Hainan",
    "Jilin",
    "Heilongjiang",
    "Liaoning",
)
CENTRAL = ("Shanxi", "Henan", "Anhui", "Jiangxi", "Hunan", "Hubei")
WEST = (
    "Inner Mongolia",
    "Shaanxi",
    "Ningxia",
    "Gansu",
    "Xinjiang",
    "Qinghai",
    "Tibet",
    "Chongqing",
    "Sichuan",
    "Guizhou",
    "Yunnan",
    "Guangxi",
)

REGIONS = ("east", "central", "west")

DEFAULT_REGION_MAP: dict[str, str] = {
    **{p: "east" for p in EAST},
    **{p: "central" for p in CENTRAL},
    **{p: "west" for p in WEST},
}


def load_region_map(path: str | Path) -> dict[str, str]:
    """Read a (province, region) CSV override and validate region labels."""
    out: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "province":
                continue
            province, region = row[0].strip(), row[1].strip().lower()
            if region not in REGIONS:
                raise CohortPanelError(f"unknown region {region!r} for province {province!r}")
            out[province] = region
    if not out:
        raise CohortPanelError(f"region map file {path} is empty")
    return out
