"""
Tests for the diagnostic suite.
"""

import numpy as np
import pytest

from impact_numba.analysis import SUMMARY_COLUMNS, DiagnosticSuite, run_diagnostics
from impact_numba.config import preset
from impact_numba.errors import ConfigError
from impact_numba.flowgen import EventFlow
from impact_numba.impact import PriceSeries
from impact_numba.io import TIDY_COLUMNS

T_SMALL = (8, 16, 32, 64, 128, 256)


def make_day(rng, n, day_id=0, flat=False):
    events = EventFlow(
        timestamp=np.arange(n, dtype=np.float64),
        volume=rng.lognormal(0.0, 1.0, n) + 1.0,
        sign=rng.choice(np.array([-1, 1], dtype=np.int8), n),
        rank=np.ones(n, dtype=np.int64),
        parent_id=np.arange(n, dtype=np.float64),
        beta_q=np.full(n, 0.25),
        day_id=day_id,
    )
    if flat:
        p = np.zeros(n)
        after = np.zeros(n)
    else:
        p = np.cumsum(rng.standard_normal(n))
        after = np.append(p[1:], p[-1] + rng.standard_normal())
    return events, PriceSeries(events.timestamp, p, after, day_id)


class TestDiagnosticSuite:
    """Selection, outputs and failure handling."""

    def setup_method(self):
        rng = np.random.default_rng(12)
        self.cfg = preset("C-VD-VF")
        self.days = [make_day(rng, 50_000, d) for d in range(3)]

    def test_unknown_diagnostic(self):
        suite = DiagnosticSuite(self.cfg, self.days, n_boot=0)
        with pytest.raises(ConfigError):
            suite.run(["signature", "spectrum"])

    def test_signature(self):
        report = DiagnosticSuite(self.cfg, self.days, n_boot=5).run(["signature"])
        filename, frame = report.figures["signature"]
        assert filename == "fig3_signature.csv"
        assert list(frame.columns) == ["tau", "signature", "stderr"]
        assert list(report.tidy["signature"].columns) == TIDY_COLUMNS
        assert list(report.summary.columns) == SUMMARY_COLUMNS
        slope = report.summary.loc[report.summary["quantity"] == "slope", "value"].item()
        assert abs(slope) < 0.15
        assert not report.failed

    def test_diffusive_imbalance(self):
        suite = DiagnosticSuite(self.cfg, self.days, n_boot=5, a_values=(0.0, 1.0), T_values=T_SMALL)
        report = suite.run(["imbalance"])
        _, frame = report.figures["imbalance"]
        assert len(frame) == 2 * 2 * len(T_SMALL)
        rows = report.summary[(report.summary["a"] == 0.0) & (report.summary["n"] == 1)]
        assert rows["value"].item() == pytest.approx(1.0, abs=0.1)
        # prediction for the configured model
        assert rows["theory"].item() == pytest.approx(1.5)

    def test_grid_is_shared(self):
        suite = DiagnosticSuite(self.cfg, self.days, n_boot=0, a_values=(0.0,), T_values=T_SMALL)
        suite.run(["covariance", "correlation"])
        assert suite.grid is suite.grid
        assert suite.grid.T_values == T_SMALL

    def test_failed_diagnostic_is_reported(self):
        rng = np.random.default_rng(5)
        flat = [make_day(rng, 20_000, d, flat=True) for d in range(2)]
        suite = DiagnosticSuite(self.cfg, flat, n_boot=0, a_values=(0.0,), T_values=T_SMALL)
        with pytest.warns(UserWarning, match="collapse"):
            report = suite.run(["collapse", "signature"])
        assert report.failed == ["collapse"]
        assert "collapse" not in report.figures
        assert "signature" in report.figures

    def test_run_diagnostics(self):
        report = run_diagnostics(self.cfg, self.days, only=["signature"], n_boot=0)
        assert set(report.figures) == {"signature"}
