#!/usr/bin/env python3

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Union

from tabulate import tabulate


class TrainingLog:
    """JSON-lines metrics stream of one training run.

    Records are kept in memory and, when a path is given, appended to the
    file as they arrive. An existing file is loaded first so a resumed run
    continues its log.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None, run_id: Optional[str] = None):
        self.run_id = run_id or (Path(path).stem if path else "run")
        self.records: List[Dict] = []
        self._path = Path(path) if path else None
        if self._path is not None:
            self._path.parent.mkdir(parents=True, exist_ok=True)
            if self._path.exists():
                self.records = load_log(self._path)

    @property
    def path(self) -> Optional[Path]:
        return self._path

    def record(self, **fields) -> Dict:
        """Append one record (values must be JSON-serialisable)."""
        entry = dict(fields)
        self.records.append(entry)
        if self._path is not None:
            with open(self._path, "a") as f:
                f.write(json.dumps(entry, sort_keys=True) + "\n")
        return entry

    def values(self, key: str) -> List:
        return [r[key] for r in self.records if r.get(key) is not None]

    def get_summary(self) -> Dict:
        return summarize(self.records)


def summarize(records: List[Dict]) -> Dict:
    """Per-metric first/last/min/max over the numeric fields of a log."""
    metrics: Dict[str, Dict] = {}
    for r in records:
        for key, value in r.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                continue
            if isinstance(value, float) and not math.isfinite(value):
                continue
            stats = metrics.setdefault(key, {"first": value, "min": value, "max": value})
            stats["min"] = min(stats["min"], value)
            stats["max"] = max(stats["max"], value)
            stats["last"] = value
    return {"total_records": len(records), "metrics": metrics}


def load_log(path: Union[str, Path]) -> List[Dict]:
    records = []
    with open(path, "r") as f:
        for line_number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                print(f"Skipping malformed line {line_number} in {path}: {e}", file=sys.stderr)
    return records


def format_value(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def display_log_summary(name: str, records: List[Dict], show_records: bool = False):
    summary = summarize(records)

    print(f"\nRun: {name}")
    print("=" * (5 + len(name)))
    print(f"Records: {summary['total_records']}")

    rows = [[key, format_value(s["first"]), format_value(s["last"]), format_value(s["min"]), format_value(s["max"])]
            for key, s in summary["metrics"].items()]
    print(tabulate(rows, headers=["Metric", "First", "Last", "Min", "Max"], tablefmt="simple"))

    if show_records and records:
        keys = list(records[0].keys())
        print("\nRecords")
        print("=======")
        print(tabulate([[format_value(r.get(k)) for k in keys] for r in records], headers=keys, tablefmt="simple"))


def main():
    parser = argparse.ArgumentParser(description='View training run logs')
    parser.add_argument('logs', nargs='+', type=Path, help='JSON-lines log files (metrics.jsonl)')
    parser.add_argument('--records', action='store_true', help='Show individual records')
    args = parser.parse_args()

    for path in args.logs:
        if not path.exists():
            print(f"Log file not found: {path}")
            continue
        display_log_summary(str(path), load_log(path), args.records)


if __name__ == "__main__":
    main()
