"""
Study reports: CSV tables, JSON documents and SVG bar charts.

A report object provides `name`, `rows()` (flat records, one per cell),
`to_dict()` (the JSON document) and `chart()` (a ChartData). Failed cells
stay in the rows with status "failed" and no bar in the chart.
"""

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from matplotlib.patches import Patch  # noqa: E402
from tabulate import tabulate  # noqa: E402

logger = logging.getLogger(__name__)

REPORT_FORMATS = ("csv", "json", "svg")


@dataclass
class ChartData:
    """Grouped bars: one group per category, one bar per series within a group.

    A None value means no bar (a failed cell).
    """
    title: str
    ylabel: str
    categories: List[str]
    series: Dict[str, List[Optional[float]]] = field(default_factory=dict)

    def bar_count(self) -> int:
        return sum(v is not None for values in self.series.values() for v in values)


def bar_id(series: str, category: str) -> str:
    """SVG element id of one bar."""
    return "bar-" + re.sub(r"[^A-Za-z0-9_.-]+", "_", f"{series}-{category}")


def write_csv(rows: Sequence[Dict], path: Union[str, Path]) -> Path:
    path = Path(path)
    pd.DataFrame(list(rows)).to_csv(path, index=False)
    return path


def write_json(data: Dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_bar_chart(chart: ChartData, path: Union[str, Path]) -> Path:
    """Render a grouped bar chart to SVG; output is byte-stable across runs."""
    path = Path(path)
    names = list(chart.series)
    x = np.arange(len(chart.categories))
    width = 0.8 / max(1, len(names))
    with plt.rc_context({"svg.hashsalt": "cpcr", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(max(4.0, 0.6 * len(chart.categories) * max(1, len(names))), 4.0))
        for i, name in enumerate(names):
            offset = (i - (len(names) - 1) / 2) * width
            for j, value in enumerate(chart.series[name]):
                if value is None:
                    continue
                bar = ax.bar(x[j] + offset, value, width, color=f"C{i}")[0]
                bar.set_gid(bar_id(name, chart.categories[j]))
        ax.set_xticks(x)
        ax.set_xticklabels(chart.categories, rotation=30, ha="right")
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_ylabel(chart.ylabel)
        ax.set_title(chart.title)
        if len(names) > 1:
            ax.legend(handles=[Patch(color=f"C{i}", label=name) for i, name in enumerate(names)])
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_report(report, out_dir: Union[str, Path], formats: Sequence[str] = REPORT_FORMATS) -> Dict[str, Path]:
    """Write the report in each requested format as <out_dir>/<report.name>.<format>.

    Raises:
        ValueError: empty report or unknown format
        OSError: the output directory cannot be written
    """
    rows = report.rows()
    if not rows:
        raise ValueError(f"report {report.name} has no results")
    for fmt in formats:
        if fmt not in REPORT_FORMATS:
            raise ValueError(f"unknown report format {fmt!r}, expected one of {REPORT_FORMATS}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if "csv" in formats:
        written["csv"] = write_csv(rows, out_dir / f"{report.name}.csv")
    if "json" in formats:
        written["json"] = write_json(report.to_dict(), out_dir / f"{report.name}.json")
    if "svg" in formats:
        written["svg"] = write_bar_chart(report.chart(), out_dir / f"{report.name}.svg")
    logger.info(f"Wrote {report.name} report ({len(rows)} rows) to {out_dir}")
    return written


def format_cell(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def print_report(report) -> None:
    rows = report.rows()
    print(f"\n{report.name}")
    print("=" * len(report.name))
    if not rows:
        print("No results")
        return
    keys = list(rows[0].keys())
    print(tabulate([[format_cell(r.get(k)) for k in keys] for r in rows], headers=keys, tablefmt="simple"))
