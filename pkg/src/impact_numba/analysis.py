# src/impact_numba/analysis.py

"""
Batch driver for the order-flow and price diagnostics.

``DiagnosticSuite`` runs any subset of the registered diagnostics over a set of simulated
days and returns one figure-data frame per diagnostic, tidy long-format rows and a summary
of fitted exponents next to their predicted values.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import stats
from .config import SimulationConfig
from .errors import ConfigError, NumericalError
from .flowgen import EventFlow
from .impact import PriceSeries
from .io import TIDY_COLUMNS

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ["diagnostic", "scenario", "a", "n", "quantity", "value", "stderr", "theory"]

Day = Tuple[EventFlow, PriceSeries]


@dataclass
class DiagnosticReport:
    figures: Dict[str, Tuple[str, pd.DataFrame]] = field(default_factory=dict)
    tidy: Dict[str, pd.DataFrame] = field(default_factory=dict)
    summary: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=SUMMARY_COLUMNS))
    failed: List[str] = field(default_factory=list)


class DiagnosticSuite:
    """
    Runs the registered diagnostics on a list of priced days.

    Each entry maps a diagnostic name to its figure-data file and to the method computing it.
    A diagnostic that raises ``NumericalError`` is reported with a warning and skipped.
    """

    DIAGNOSTICS = {
        "autocorr": ("fig1_autocorr.csv", "_autocorr"),
        "imbalance": ("fig2_imbalance.csv", "_imbalance"),
        "signature": ("fig3_signature.csv", "_signature"),
        "moments": ("fig4_moments.csv", "_moments"),
        "covariance": ("fig5_cov.csv", "_covariance"),
        "collapse": ("fig6_collapse.csv", "_collapse"),
        "correlation": ("fig7_corr.csv", "_correlation"),
        "fit": ("fig8_fit.csv", "_fit"),
    }

    def __init__(
        self,
        cfg: SimulationConfig,
        days: Sequence[Day],
        n_boot: int = stats.N_BOOT,
        seed: int = 0,
        a_values: Sequence[float] = stats.A_GRID,
        T_values: Sequence[int] = stats.T_GRID,
    ):
        self.cfg = cfg
        self.days = list(days)
        self.n_boot = n_boot
        self.seed = seed
        self.a_values = tuple(a_values)
        self.T_values = tuple(T_values)
        self._grid: Optional[stats.ImbalanceGrid] = None
        self._correlation_surface: Optional[stats.Surface] = None

    @property
    def grid(self) -> stats.ImbalanceGrid:
        if self._grid is None:
            self._grid = stats.build_imbalance_grid(self.days, self.a_values, self.T_values)
        return self._grid

    @property
    def scenario(self) -> str:
        return self.cfg.scenario

    def run(self, only: Optional[Sequence[str]] = None) -> DiagnosticReport:
        names = list(self.DIAGNOSTICS) if not only else list(only)
        unknown = [n for n in names if n not in self.DIAGNOSTICS]
        if unknown:
            raise ConfigError(f"Unknown diagnostics: {unknown}. Available: {list(self.DIAGNOSTICS)}")
        report = DiagnosticReport()
        summary_rows: List[dict] = []
        for name in names:
            filename, method = self.DIAGNOSTICS[name]
            try:
                figure, tidy, summary = getattr(self, method)()
            except NumericalError as exc:
                warnings.warn(f"Failed to compute {name}: {exc}")
                report.failed.append(name)
                continue
            report.figures[name] = (filename, figure)
            report.tidy[name] = pd.DataFrame(tidy, columns=TIDY_COLUMNS)
            summary_rows.extend(summary)
            logger.info("computed %s", name)
        report.summary = pd.DataFrame(summary_rows, columns=SUMMARY_COLUMNS)
        return report

    # --- helpers ----------------------------------------------------------------------

    def _tidy(self, diagnostic: str, a, T, value, stderr) -> dict:
        return {
            "diagnostic": diagnostic, "scenario": self.scenario,
            "a": a, "T": T, "value": value, "stderr": stderr,
        }

    def _summary(self, diagnostic: str, quantity: str, value, stderr, theory=math.nan, a=math.nan, n=math.nan) -> dict:
        return {
            "diagnostic": diagnostic, "scenario": self.scenario, "a": a, "n": n,
            "quantity": quantity, "value": value, "stderr": stderr, "theory": theory,
        }

    # --- diagnostics --------------------------------------------------------------------

    def _autocorr(self):
        result = stats.sign_autocorr_by_volume(
            [ev for ev, _ in self.days], n_boot=self.n_boot, seed=self.seed
        )
        rows, tidy, summary = [], [], []
        for curve in result.bins + [result.unconditional]:
            for tau, c in zip(curve.lags, curve.values):
                rows.append({
                    "bin": curve.label, "q_lo": curve.q_range[0], "q_hi": curve.q_range[1],
                    "tau": int(tau), "C": c, "gamma": curve.gamma, "gamma_stderr": curve.gamma_stderr,
                })
                tidy.append(self._tidy("autocorr", math.nan, int(tau), c, math.nan))
            summary.append(self._summary("autocorr", f"gamma_{curve.label}", curve.gamma, curve.gamma_stderr))
        return pd.DataFrame(rows), tidy, summary

    def _imbalance(self):
        rows, tidy, summary = [], [], []
        for n in (1, 2):
            surface = stats.imbalance_moments(self.grid, n, self.n_boot, self.seed)
            for i, a in enumerate(surface.a_values):
                for j, T in enumerate(surface.T_values):
                    value, err = surface.values[i, j], surface.stderr[i, j]
                    rows.append({"n": n, "a": a, "T": T, "moment": value, "stderr": err})
                    tidy.append(self._tidy(f"imbalance_n{n}", a, T, value, err))
                per_T = {T: self.grid.imbalance(a, T) for T in surface.T_values}
                theory = stats.theory_exponents(self.cfg, a, n).imbalance
                try:
                    fit = stats.moment_scaling(per_T, n, n_boot=self.n_boot, seed=self.seed)
                except NumericalError as exc:
                    logger.warning("imbalance scaling a=%g n=%d: %s", a, n, exc)
                    summary.append(self._summary("imbalance", "exponent", math.nan, math.nan, theory, a, n))
                    continue
                summary.append(self._summary("imbalance", "exponent", fit.exponent, fit.stderr, theory, a, n))
        return pd.DataFrame(rows), tidy, summary

    def _signature(self):
        lags, values, stderr = stats.signature_plot(
            [p for _, p in self.days], n_boot=self.n_boot, seed=self.seed
        )
        frame = pd.DataFrame({"tau": lags, "signature": values, "stderr": stderr})
        tidy = [self._tidy("signature", math.nan, int(t), v, e) for t, v, e in zip(lags, values, stderr)]
        # zero log-log slope is diffusive
        try:
            fit = stats.fit_power_law(lags, values, (10.0, 1_000.0))
            summary = [self._summary("signature", "slope", fit.exponent, fit.stderr, 0.0)]
        except NumericalError as exc:
            logger.warning("signature slope: %s", exc)
            summary = []
        return frame, tidy, summary

    def _moments(self):
        prices = [p for _, p in self.days]
        lags = np.array([2 ** k for k in range(0, 11)], dtype=np.int64)
        fits = stats.price_moment_scaling(prices, (1, 2, 3), lags, n_boot=self.n_boot, seed=self.seed)
        if not fits:
            raise NumericalError("no price-moment fit converged")
        rows, tidy, summary = [], [], []
        for n, fit in fits.items():
            for T, fitted in zip(lags, fit.predict(lags)):
                rows.append({"n": n, "T": int(T), "fitted": fitted, "zeta": fit.exponent, "offset": fit.offset})
                tidy.append(self._tidy(f"moments_n{n}", math.nan, int(T), fitted, math.nan))
            summary.append(self._summary("moments", "zeta", fit.exponent, fit.stderr, float(n), n=n))
        return pd.DataFrame(rows), tidy, summary

    def _covariance(self):
        surface = stats.covariance_surface(self.grid, n_boot=self.n_boot, seed=self.seed)
        rows, tidy, summary = [], [], []
        for i, a in enumerate(surface.a_values):
            fit = surface.fits.get(a)
            for j, T in enumerate(surface.T_values):
                value, err = surface.values[i, j], surface.stderr[i, j]
                rows.append({
                    "a": a, "T": T, "covariance": value, "stderr": err,
                    "excluded": (a, T) in surface.excluded,
                })
                tidy.append(self._tidy("covariance", a, T, value, err))
            theory = stats.theory_exponents(self.cfg, a).covariance
            summary.append(self._summary(
                "covariance", "exponent",
                math.nan if fit is None else fit.exponent,
                math.nan if fit is None else fit.stderr,
                theory, a,
            ))
        return pd.DataFrame(rows), tidy, summary

    def _collapse(self):
        T_values = [T for T in stats.COLLAPSE_T if T in self.grid.T_values]
        result = stats.aggregated_impact(self.grid, 0.0, T_values, n_boot=self.n_boot, seed=self.seed)
        rows, tidy = [], []
        for T, (x, y) in result.master_curve.items():
            for xi, yi in zip(x, y):
                rows.append({"T": T, "x": xi, "y": yi, "slope": result.slopes[T]})
                tidy.append(self._tidy("collapse", 0.0, T, yi, math.nan))
        try:
            overlap = result.overlap()
        except NumericalError:
            overlap = math.nan
        summary = [
            self._summary("collapse", "chi", result.chi, result.chi_stderr, 1.0 / self.cfg.mu_m, 0.0),
            self._summary("collapse", "omega", result.omega, result.omega_stderr, math.nan, 0.0),
            self._summary("collapse", "overlap", overlap, math.nan, math.nan, 0.0),
        ]
        return pd.DataFrame(rows), tidy, summary

    def _correlation_values(self) -> stats.Surface:
        if self._correlation_surface is None:
            self._correlation_surface = stats.correlation_R(self.grid, self.n_boot, self.seed)
        return self._correlation_surface

    def _correlation(self):
        surface = self._correlation_values()
        rows, tidy, summary = [], [], []
        for i, a in enumerate(surface.a_values):
            for j, T in enumerate(surface.T_values):
                value, err = surface.values[i, j], surface.stderr[i, j]
                rows.append({"a": a, "T": T, "R": value, "stderr": err})
                tidy.append(self._tidy("correlation", a, T, value, err))
        a = np.array(surface.a_values)
        for j, T in enumerate(surface.T_values):
            column = surface.values[:, j]
            if np.isfinite(column).any():
                summary.append(self._summary("correlation", f"peak_a_T{T}", float(a[np.nanargmax(column)]), math.nan))
        return pd.DataFrame(rows), tidy, summary

    def _fit(self):
        surface = self._correlation_values()
        rows, tidy, summary = [], [], []
        for T in surface.T_values:
            for mode in ("A", "B"):
                try:
                    fit = stats.fit_Ra(surface, T, mode)
                except NumericalError as exc:
                    logger.warning("correlation fit T=%d mode %s: %s", T, mode, exc)
                    continue
                rows.append({
                    "T": T, "mode": mode, "sigma2": fit.sigma2, "lam": fit.lam,
                    "amplitude": fit.amplitude, "residual": fit.residual, "aic": fit.aic,
                })
                tidy.append(self._tidy(f"fit_{mode}_sigma2", math.nan, T, fit.sigma2, fit.stderr["sigma2"]))
                if mode == "B":
                    tidy.append(self._tidy("fit_B_lam", math.nan, T, fit.lam, fit.stderr["lam"]))
        if not rows:
            raise NumericalError("no correlation fit converged")
        frame = pd.DataFrame(rows)
        sigma2_theory = self.cfg.sigma_l ** 2
        for mode, group in frame.groupby("mode", sort=True):
            summary.append(self._summary(
                "fit", f"sigma2_{mode}", float(group["sigma2"].median()), float(group["sigma2"].std(ddof=1)),
                sigma2_theory,
            ))
            summary.append(self._summary(
                "fit", f"residual_{mode}", float(group["residual"].median()), math.nan,
            ))
            summary.append(self._summary("fit", f"aic_{mode}", float(group["aic"].median()), math.nan))
            if mode == "B":
                summary.append(self._summary(
                    "fit", "lam_B", float(group["lam"].median()), float(group["lam"].std(ddof=1)), self.cfg.lam,
                ))
        return frame, tidy, summary


def run_diagnostics(
    cfg: SimulationConfig,
    days: Sequence[Day],
    only: Optional[Sequence[str]] = None,
    **kwargs,
) -> DiagnosticReport:
    """Run the selected diagnostics (all by default) on a list of priced days."""
    return DiagnosticSuite(cfg, days, **kwargs).run(only)
