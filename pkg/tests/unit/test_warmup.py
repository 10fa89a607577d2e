"""
Tests for JIT warm-up and the optional SVG charts.
"""

import pandas as pd
import pytest

from impact_numba import warmup
from impact_numba.errors import ConfigError


class TestWarmup:
    """Kernel pre-compilation."""

    def test_warmup_all(self):
        manager = warmup.JITWarmupManager()
        results = manager.warmup_all()
        assert "_price_path_serial" in results
        assert "_chain_ids" in results
        status = manager.get_status()
        assert status["warmed_functions"] == len(results)

    def test_second_call_is_free(self):
        manager = warmup.JITWarmupManager()
        manager.warmup_all()
        again = manager.warmup_all()
        assert all(v == 0.0 for v in again.values())

    def test_module_helpers(self):
        warmup.warmup_all(parallel=True)
        assert warmup.is_warmed_up()
        assert warmup.get_warmup_status()["warmed_functions"] > 0


class TestPlotting:
    """SVG charts of figure data."""

    def test_signature_chart(self, tmp_path):
        pytest.importorskip("matplotlib")
        from impact_numba.plotting import plot_figure

        frame = pd.DataFrame({"tau": [1, 10, 100], "signature": [1.0, 0.9, 0.85], "stderr": [0.0] * 3})
        path = plot_figure("signature", frame, tmp_path / "svg" / "fig3_signature.svg")
        assert path.exists()
        assert path.read_text(encoding="utf-8").lstrip().startswith("<?xml")

    def test_grouped_chart_is_deterministic(self, tmp_path):
        pytest.importorskip("matplotlib")
        from impact_numba.plotting import plot_figure

        frame = pd.DataFrame({
            "grouping": ["true", "true", "proxy", "proxy"],
            "Q_over_VD": [1e-3, 1e-2, 1e-3, 1e-2],
            "impact_over_sigma": [0.02, 0.07, 0.03, 0.07],
        })
        a = plot_figure("proxy", frame, tmp_path / "a.svg")
        b = plot_figure("proxy", frame, tmp_path / "b.svg")
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_chart(self, tmp_path):
        pytest.importorskip("matplotlib")
        from impact_numba.plotting import plot_figure

        with pytest.raises(ConfigError):
            plot_figure("spectrum", pd.DataFrame(), tmp_path / "x.svg")
