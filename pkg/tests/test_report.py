"""Report rendering: side-by-side model columns, CSV layout, SVG output."""

import numpy as np

from mixedflow.metrics import MetricReport
from mixedflow.report import (render_table, svg_coverage_curve, svg_scatter,
                              write_report_csv)


def _report(r=0.99, rmse=0.5):
    per_role = {
        "fixed": {"r": r, "rmse": rmse, "bias": 0.01,
                  "ce": {0.05: 0.01, 0.5: -0.02}, "ce_mean": -0.005},
        "variance": {"r": r - 0.02, "rmse": rmse + 0.1, "bias": -0.01,
                     "ce": {0.05: 0.02, 0.5: 0.03}, "ce_mean": 0.025},
    }
    return MetricReport(per_role=per_role, n_datasets=10)


class TestTable:
    def test_two_model_columns_side_by_side(self):
        text = render_table({"mine": _report(), "external": _report(0.95, 1.2)})
        header = text.splitlines()[0]
        assert header.index("mine:r") < header.index("external:r")
        for line in text.splitlines()[2:]:
            assert len(line.split()) == 7  # role + 2 models x (r, RMSE, CE)

    def test_missing_role_renders_dash(self):
        a = _report()
        b = _report()
        del b.per_role["variance"]
        text = render_table({"a": a, "b": b})
        variance_row = [l for l in text.splitlines() if l.startswith("variance")][0]
        assert "-" in variance_row.split()

    def test_csv_columns(self, tmp_path):
        path = tmp_path / "report.csv"
        write_report_csv(path, {"m1": _report()})
        lines = path.read_text().strip().splitlines()
        assert lines[0].startswith("model,n_datasets")
        assert "ce_0.05" in lines[0]
        assert len(lines) == 3  # header + two roles


class TestSvg:
    def test_scatter_valid_svg(self, tmp_path):
        path = tmp_path / "scatter.svg"
        rng = np.random.default_rng(0)
        truths = rng.normal(size=50)
        svg_scatter(path, truths, truths + rng.normal(0, 0.1, 50), title="demo")
        text = path.read_text()
        assert text.startswith("<svg ") and text.rstrip().endswith("</svg>")
        assert text.count("<circle") == 50

    def test_coverage_curve(self, tmp_path):
        path = tmp_path / "cov.svg"
        alphas = [0.05, 0.1, 0.2]
        svg_coverage_curve(path, alphas, {"m1": [0.96, 0.91, 0.82],
                                          "m2": [0.94, 0.89, 0.80]})
        text = path.read_text()
        assert text.count("<polyline") == 2
        assert "m1" in text and "m2" in text
