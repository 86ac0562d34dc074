#!/usr/bin/env python3

import io
import json
import shutil
import tempfile
import unittest
import xml.etree.ElementTree as ET
from contextlib import redirect_stdout
from pathlib import Path

import pandas as pd

from cpcr.experiments import (EfficiencyResult, LanguageResult, MultilingualReport, SampleEfficiencyReport,
                              TransferCell, TransferReport)
from cpcr.reports import ChartData, bar_id, emit_report, print_report, write_bar_chart


def transfer_report() -> TransferReport:
    cells = []
    domains = ["clean", "noisy", "telephone"]
    for i, train in enumerate(domains):
        for j, test in enumerate(domains):
            for k, features in enumerate(["spectrogram", "frozen-cpc@clean", "frozen-cpc@diverse"]):
                cells.append(TransferCell(f"l0-{train}-train", f"l0-{test}-test", features,
                                          0.1 * (1 + abs(i - j)) + 0.01 * k, 0.05, 20, i == j))
    return TransferReport(cells)


def multilingual_report() -> MultilingualReport:
    return MultilingualReport("spectrogram", "frozen-cpc@diverse", [
        LanguageResult("l0", 27.85, 11.49, 100 * (27.85 - 11.49) / 27.85),
        LanguageResult("l1", 0.5, 0.5, 0.0),
        LanguageResult("l2", 0.4, 0.5, -25.0),
    ])


def svg_bars(path: Path):
    root = ET.parse(path).getroot()
    return [e.get("id") for e in root.iter() if (e.get("id") or "").startswith("bar-")]


class TestEmitReport(unittest.TestCase):
    def setUp(self):
        self.dir = Path(tempfile.mkdtemp(prefix="cpcr-reports-"))

    def tearDown(self):
        shutil.rmtree(self.dir, ignore_errors=True)

    def test_transfer_csv_rows(self):
        written = emit_report(transfer_report(), self.dir)
        lines = written["csv"].read_text().strip().splitlines()
        self.assertEqual(len(lines), 27 + 1)
        frame = pd.read_csv(written["csv"])
        self.assertEqual(list(frame.columns)[:3], ["train_corpus", "eval_corpus", "features"])
        self.assertEqual(int(frame["in_domain"].sum()), 9)

    def test_json_round_trip(self):
        for report in (transfer_report(), multilingual_report()):
            written = emit_report(report, self.dir, formats=("json",))
            self.assertEqual(json.loads(written["json"].read_text()), report.to_dict())

    def test_svg_one_bar_per_language(self):
        written = emit_report(multilingual_report(), self.dir, formats=("svg",))
        bars = svg_bars(written["svg"])
        self.assertEqual(len(bars), 3)
        self.assertIn(bar_id("relative_reduction", "l0"), bars)

    def test_svg_grouped_transfer_bars(self):
        written = emit_report(transfer_report(), self.dir, formats=("svg",))
        self.assertEqual(len(svg_bars(written["svg"])), 27)

    def test_svg_is_reproducible(self):
        first = write_bar_chart(multilingual_report().chart(), self.dir / "a.svg").read_bytes()
        second = write_bar_chart(multilingual_report().chart(), self.dir / "b.svg").read_bytes()
        self.assertEqual(first, second)

    def test_failed_cells_are_kept(self):
        report = multilingual_report()
        report.languages.append(LanguageResult("l3", None, None, None, "failed", "CtcAlignmentError: too short"))
        written = emit_report(report, self.dir)
        frame = pd.read_csv(written["csv"])
        self.assertEqual(len(frame), 4)
        self.assertEqual(frame["status"].tolist()[-1], "failed")
        self.assertEqual(len(svg_bars(written["svg"])), 3)
        self.assertIsNone(json.loads(written["json"].read_text())["languages"][-1]["relative_reduction"])

    def test_empty_report(self):
        with self.assertRaises(ValueError):
            emit_report(SampleEfficiencyReport([]), self.dir)

    def test_unknown_format(self):
        with self.assertRaises(ValueError):
            emit_report(multilingual_report(), self.dir, formats=("xlsx",))

    def test_unwritable_directory(self):
        blocker = self.dir / "file"
        blocker.write_text("not a directory")
        with self.assertRaises(OSError):
            emit_report(multilingual_report(), blocker / "reports")


class TestReportContent(unittest.TestCase):
    def test_transfer_summary(self):
        summary = transfer_report().summary()["spectrogram"]
        self.assertAlmostEqual(summary["in_domain_wer"], 0.1)
        # off-diagonal cells are 4 at distance 1 (0.2) and 2 at distance 2 (0.3)
        self.assertAlmostEqual(summary["off_domain_wer"], (4 * 0.2 + 2 * 0.3) / 6)
        self.assertAlmostEqual(summary["degradation"], (4 * 0.2 + 2 * 0.3) / 6 - 0.1)
        self.assertEqual(summary["failed"], 0)

    def test_sample_efficiency_chart(self):
        report = SampleEfficiencyReport([EfficiencyResult("spectrogram", 0.1, 5, 0.8, 0.6),
                                         EfficiencyResult("spectrogram", 1.0, 50, 0.4, None, "failed", "x")])
        chart = report.chart()
        self.assertEqual(chart.categories, ["spectrogram 10%", "spectrogram 100%"])
        self.assertEqual(chart.bar_count(), 3)

    def test_print_report(self):
        out = io.StringIO()
        with redirect_stdout(out):
            print_report(multilingual_report())
        text = out.getvalue()
        self.assertIn("multilingual", text)
        self.assertIn("l2", text)

    def test_bar_ids_are_xml_safe(self):
        self.assertEqual(bar_id("frozen-cpc@clean", "l0-clean-train -> l0-noisy-test"),
                         "bar-frozen-cpc_clean-l0-clean-train_-_l0-noisy-test")
        chart = ChartData("t", "y", ["a"], {"s": [None]})
        self.assertEqual(chart.bar_count(), 0)


if __name__ == '__main__':
    unittest.main()
