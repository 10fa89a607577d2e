# src/impact_numba/cli.py

"""
Command-line entry point.

    impact-numba simulate --preset C-VD-VF --days 100 --seed 7 --jobs 8
    impact-numba analyze RUN_DIR --only signature collapse --svg
    impact-numba proxy RUN_DIR --C 4
    impact-numba report RUN_DIR [RUN_DIR ...]

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import hashlib
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__, io, warmup
from ._backend import get_backend
from .analysis import SUMMARY_COLUMNS, DiagnosticSuite
from .config import SCENARIOS, SimulationConfig, load_config, parse_overrides
from .errors import ConfigError, FitError, ImpactNumbaError, NumericalError
from .flowgen import build_day_flow, day_seed, resolve_config
from .impact import PriceSeries, reconstruct_prices
from .proxy import (
    DEFAULT_EDGES,
    THRESHOLD_MODES,
    ProxyParams,
    compare_curves,
    linkage_counts,
    metaorder_impacts,
    peak_impact_curve,
    proxy_grouping,
    true_grouping,
)
from .stats import N_BOOT

logger = logging.getLogger(__name__)

OUTPUT_ENV = "IMPACT_NUMBA_OUTPUT"


# ==============================================================================
# Helpers
# ==============================================================================


@contextmanager
def _stage(manifest: io.RunManifest, name: str) -> Iterator[None]:
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    manifest.record(name, elapsed)
    logger.info("%s finished in %.2fs", name, elapsed)


def _output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def _ensure_writable(directory: Path) -> None:
    try:
        directory.mkdir(parents=True, exist_ok=True)
        marker = directory / ".write-check"
        marker.write_text("", encoding="utf-8")
        marker.unlink()
    except OSError as exc:
        raise ConfigError(f"Output directory {directory} is not writable: {exc}") from exc


def _cache_path(run_dir: Path, day: int) -> Path:
    return run_dir / "cache" / f"{io.day_name(day)}.npz"


def _flow_path(flow_dir: Path, day: int) -> Path:
    return flow_dir / f"{io.day_name(day)}.csv"


def _config_from_manifest(manifest: io.RunManifest) -> SimulationConfig:
    cfg = SimulationConfig(**manifest.config)
    if cfg.config_hash() != manifest.config_hash:
        raise ConfigError("manifest config does not match its recorded hash")
    return cfg


def _load_priced_day(run_dir: Path, cfg: SimulationConfig, day: int, config_hash: str):
    cached = io.load_day_cache(_cache_path(run_dir, day), config_hash)
    if cached is not None:
        return cached
    logger.warning("no price cache for day %d; repricing from the flow CSV", day)
    events, _ = io.read_flow(_flow_path(run_dir / "flow", day), day)
    if events.parent_id is None:
        raise NumericalError(f"day {day}: cannot reprice an anonymized flow without cached prices")
    prices = reconstruct_prices(events, cfg)
    io.save_day_cache(_cache_path(run_dir, day), events, prices, config_hash)
    return events, prices


# ==============================================================================
# simulate
# ==============================================================================


def _simulate_day(cfg: SimulationConfig, day: int, backend: str):
    rng = np.random.default_rng(day_seed(cfg.seed, day))
    start = time.perf_counter()
    flow = build_day_flow(cfg, rng, day)
    generated = time.perf_counter()
    prices = reconstruct_prices(flow.events, cfg, backend)
    priced = time.perf_counter()
    logger.info("day %d: %d metaorders, %d trades", day, len(flow.metaorders), len(flow.events))
    return flow.events, prices, generated - start, priced - generated


def simulate_run(cfg: SimulationConfig, run_dir: Path, jobs: int = 1) -> io.RunManifest:
    """Simulate and price ``cfg.n_days`` days, writing flow, price and cache files plus a manifest."""
    cfg = resolve_config(cfg)
    run_dir = Path(run_dir)
    _ensure_writable(run_dir)
    config_hash = cfg.config_hash()
    seeds = [day_seed(cfg.seed, d) for d in range(cfg.n_days)]
    manifest = io.RunManifest(
        config=cfg.to_dict(), config_hash=config_hash, seed=cfg.seed,
        scenario=cfg.scenario, day_seeds=seeds, version=__version__,
    )
    logger.info("simulating %d days of %s (day_length=%.6g, tau0=%.6g)",
                cfg.n_days, cfg.scenario, cfg.day_length, cfg.tau0)
    with _stage(manifest, "warmup"):
        warmup.warmup_all()

    backend = get_backend(jobs)
    with _stage(manifest, "simulate"):
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
            results = list(executor.map(lambda d: _simulate_day(cfg, d, backend), range(cfg.n_days)))
    manifest.durations["generate_cpu"] = round(sum(r[2] for r in results), 6)
    manifest.durations["price_cpu"] = round(sum(r[3] for r in results), 6)

    with _stage(manifest, "write"):
        flows, prices, caches = [], [], []
        for day, (events, series, _, _) in enumerate(results):
            flows.append(io.write_flow(events, _flow_path(run_dir / "flow", day), config_hash))
            prices.append(io.write_prices(series, run_dir / "prices" / f"{io.day_name(day)}.csv", config_hash))
            caches.append(io.save_day_cache(_cache_path(run_dir, day), events, series, config_hash))
        manifest.add_paths("flow", flows, run_dir)
        manifest.add_paths("prices", prices, run_dir)
        manifest.add_paths("cache", caches, run_dir)
    manifest.write(run_dir)
    mean_trades = np.mean([len(r[0]) for r in results])
    logger.info("wrote %s (%.0f trades/day on average)", run_dir, mean_trades)
    return manifest


def cmd_simulate(args: argparse.Namespace) -> int:
    overrides: Dict[str, object] = dict(parse_overrides(args.set or []))
    if args.days is not None:
        overrides["n_days"] = args.days
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = resolve_config(load_config(args.config, args.preset, overrides))
    run_dir = Path(args.output) if args.output else _output_root() / f"{cfg.scenario}-{cfg.config_hash()}"
    simulate_run(cfg, run_dir, args.jobs)
    print(run_dir)
    return 0


# ==============================================================================
# analyze
# ==============================================================================


def analyze_run(
    run_dir: Path,
    only: Optional[Sequence[str]] = None,
    svg: bool = False,
    n_boot: int = N_BOOT,
) -> List[Path]:
    """Write figure-data, tidy and summary CSVs for a simulated run."""
    run_dir = Path(run_dir)
    manifest = io.RunManifest.read(run_dir)
    cfg = _config_from_manifest(manifest)
    out_dir = run_dir / "analysis"
    _ensure_writable(out_dir)

    with _stage(manifest, "load"):
        days = [_load_priced_day(run_dir, cfg, d, manifest.config_hash) for d in range(cfg.n_days)]
    with _stage(manifest, "analyze"):
        report = DiagnosticSuite(cfg, days, n_boot=n_boot, seed=cfg.seed).run(only)

    written: List[Path] = []
    for name, (filename, frame) in report.figures.items():
        written.append(io.write_csv(frame, out_dir / filename, manifest.config_hash))
        written.append(io.write_csv(report.tidy[name], out_dir / "tidy" / f"{name}.csv", manifest.config_hash))
        if svg:
            from .plotting import plot_figure

            written.append(plot_figure(name, frame, out_dir / "svg" / f"{Path(filename).stem}.svg"))
    written.append(io.write_csv(report.summary, out_dir / "summary.csv", manifest.config_hash))
    if report.failed:
        logger.warning("diagnostics that failed: %s", ", ".join(report.failed))
    manifest.add_paths("analysis", written, run_dir)
    manifest.write(run_dir)
    return written


def cmd_analyze(args: argparse.Namespace) -> int:
    for path in analyze_run(Path(args.run_dir), args.only, args.svg, args.boot):
        print(path)
    return 0


# ==============================================================================
# proxy
# ==============================================================================


def _proxy_day(run_dir: Path, flow_dir: Path, cfg: SimulationConfig, day: int, config_hash: str, params: ProxyParams):
    events, _ = io.read_flow(_flow_path(flow_dir, day), day)
    # prices always come from the full flow, never from the CSV being grouped
    prices: PriceSeries = _load_priced_day(run_dir, cfg, day, config_hash)[1]
    if len(prices) != len(events):
        raise NumericalError(f"day {day}: flow has {len(events)} trades but prices have {len(prices)}")
    rng = np.random.default_rng([cfg.seed, day, 1])
    labels = proxy_grouping(events, params, rng)
    proxy = metaorder_impacts(labels, events, prices)
    if not events.has_parents:
        return None, proxy, None
    return metaorder_impacts(true_grouping(events), events, prices), proxy, linkage_counts(labels, events)


def _curve_rows(curve) -> List[dict]:
    return [
        {"grouping": curve.label, "Q_over_VD": c, "impact_over_sigma": m, "count": int(n), "stderr": e}
        for c, m, n, e in zip(curve.centers, curve.mean_impact, curve.counts, curve.stderr)
    ]


def _curve_summary(curve, scenario: str) -> List[dict]:
    fit = curve.fit
    try:
        small = curve.local_slope(DEFAULT_EDGES[0], 1e-4)
    except FitError:
        small = math.nan
    return [
        {"diagnostic": "proxy", "scenario": scenario, "a": math.nan, "n": math.nan,
         "quantity": f"exponent_{curve.label}", "value": math.nan if fit is None else fit.exponent,
         "stderr": math.nan if fit is None else fit.stderr, "theory": 0.5},
        {"diagnostic": "proxy", "scenario": scenario, "a": math.nan, "n": math.nan,
         "quantity": f"Y_{curve.label}", "value": curve.Y, "stderr": curve.Y_stderr, "theory": math.nan},
        {"diagnostic": "proxy", "scenario": scenario, "a": math.nan, "n": math.nan,
         "quantity": f"slope_below_1e-4_{curve.label}", "value": small, "stderr": math.nan, "theory": math.nan},
    ]


def proxy_run(
    run_dir: Path,
    C: float = 4.0,
    phi_hat: Optional[float] = None,
    mu_hat: Optional[float] = None,
    flow_dir: Optional[Path] = None,
    threshold_mode: str = "scaled",
    max_gap: Optional[float] = None,
    jobs: int = 1,
    svg: bool = False,
) -> List[Path]:
    """Peak-impact curves of true and proxy metaorders, their ratio and crossover."""
    run_dir = Path(run_dir)
    manifest = io.RunManifest.read(run_dir)
    cfg = _config_from_manifest(manifest)
    if cfg.volume_dependent:
        logger.warning("%s has volume-dependent exponents; the proxy comparison assumes lambda = lambda_p = 0",
                       cfg.scenario)
    params = ProxyParams(
        phi_hat=cfg.phi if phi_hat is None else phi_hat,
        mu_hat=cfg.mu_m if mu_hat is None else mu_hat,
        s_max=cfg.s_max, C=C, threshold_mode=threshold_mode, max_gap=max_gap,
    ).validate()
    flow_dir = run_dir / "flow" if flow_dir is None else Path(flow_dir)
    out_dir = run_dir / "proxy"
    _ensure_writable(out_dir)

    with _stage(manifest, "proxy"):
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as executor:
            per_day = list(executor.map(
                lambda d: _proxy_day(run_dir, flow_dir, cfg, d, manifest.config_hash, params), range(cfg.n_days)
            ))
    proxy_curve = peak_impact_curve([p for _, p, _ in per_day], DEFAULT_EDGES, label="proxy", seed=cfg.seed)
    curves = [proxy_curve]
    summary = _curve_summary(proxy_curve, cfg.scenario)
    comparison = None
    if all(t is not None for t, _, _ in per_day):
        true_curve = peak_impact_curve([t for t, _, _ in per_day], DEFAULT_EDGES, label="true", seed=cfg.seed)
        curves.insert(0, true_curve)
        summary = _curve_summary(true_curve, cfg.scenario) + summary
        comparison = compare_curves(true_curve, proxy_curve)
        summary.append({
            "diagnostic": "proxy", "scenario": cfg.scenario, "a": math.nan, "n": math.nan,
            "quantity": "crossover_Q_over_VD",
            "value": math.nan if comparison.crossover is None else comparison.crossover,
            "stderr": math.nan, "theory": 1e-3,
        })
        same = sum(k[0] for _, _, k in per_day)
        linked = sum(k[1] for _, _, k in per_day)
        summary.append({
            "diagnostic": "proxy", "scenario": cfg.scenario, "a": math.nan, "n": math.nan,
            "quantity": "purity", "value": same / linked if linked else math.nan,
            "stderr": math.nan, "theory": math.nan,
        })
        if comparison.crossover is None:
            logger.info("proxy curve does not settle within tolerance of the true curve")
        else:
            logger.info("proxy curve joins the true curve from Q/V_D = %.3g", comparison.crossover)
    else:
        logger.warning("flow has no parent ids; skipping the true curve and the comparison")

    frame = pd.DataFrame([row for c in curves for row in _curve_rows(c)], columns=io.PROXY_COLUMNS)
    written = [
        io.write_csv(frame, out_dir / "impact_curves.csv", manifest.config_hash),
        io.write_csv(pd.DataFrame(summary, columns=SUMMARY_COLUMNS), out_dir / "summary.csv", manifest.config_hash),
    ]
    if comparison is not None:
        ratio = pd.DataFrame({
            "Q_over_VD": comparison.centers, "ratio": comparison.ratio, "stderr": comparison.ratio_stderr,
        })
        written.append(io.write_csv(ratio, out_dir / "comparison.csv", manifest.config_hash))
    if svg:
        from .plotting import plot_figure

        written.append(plot_figure("proxy", frame, out_dir / "impact_curves.svg"))
    manifest.add_paths("proxy", written, run_dir)
    manifest.write(run_dir)
    return written


def cmd_proxy(args: argparse.Namespace) -> int:
    max_gap = None if args.max_gap is None else float(args.max_gap)
    for path in proxy_run(
        Path(args.run_dir), args.C, args.phi_hat, args.mu_hat, args.flow_dir,
        args.threshold_mode, max_gap, args.jobs, args.svg,
    ):
        print(path)
    return 0


# ==============================================================================
# report
# ==============================================================================


def report_runs(run_dirs: Sequence[Path]) -> Tuple[pd.DataFrame, str]:
    """Concatenate the analysis and proxy summaries of several runs.

    Returns the table and the config hash of its header: the runs' hash when they share one,
    otherwise a digest of their sorted hashes.
    """
    frames = []
    hashes = set()
    for run_dir in run_dirs:
        for part in ("analysis", "proxy"):
            path = Path(run_dir) / part / "summary.csv"
            if path.exists():
                frame, config_hash = io.read_csv(path)
                frame.insert(0, "run", Path(run_dir).name)
                frames.append(frame)
                hashes.add(config_hash or "")
    if not frames:
        raise ConfigError("no summary.csv found; run analyze or proxy first")
    if len(hashes) == 1:
        combined = hashes.pop()
    else:
        combined = hashlib.sha256(",".join(sorted(hashes)).encode("utf-8")).hexdigest()[:16]
    return pd.concat(frames, ignore_index=True), combined


def cmd_report(args: argparse.Namespace) -> int:
    run_dirs = [Path(p) for p in args.run_dirs] or sorted(
        p.parent for p in _output_root().glob(f"*/{io.MANIFEST_NAME}")
    )
    frame, config_hash = report_runs(run_dirs)
    out = Path(args.out) if args.out else _output_root() / "report.csv"
    _ensure_writable(out.parent)
    io.write_csv(frame, out, config_hash)
    print(frame.to_string(index=False))
    return 0


# ==============================================================================
# Parser
# ==============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impact-numba", description="Metaorder flow simulator and impact diagnostics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="simulate and price trading days")
    sim.add_argument("--preset", choices=SCENARIOS, default=None, help="scenario triplet")
    sim.add_argument("--config", default=None, help="YAML file of SimulationConfig fields")
    sim.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field")
    sim.add_argument("--days", type=int, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--jobs", type=int, default=1, help="days simulated concurrently")
    sim.add_argument("--output", default=None, help=f"run directory (default: ${OUTPUT_ENV}/<scenario>-<hash>)")
    sim.set_defaults(func=cmd_simulate)

    ana = sub.add_parser("analyze", help="compute figure data for a run")
    ana.add_argument("run_dir")
    ana.add_argument("--only", nargs="+", choices=list(DiagnosticSuite.DIAGNOSTICS), default=None)
    ana.add_argument("--boot", type=int, default=N_BOOT, help="bootstrap replicates")
    ana.add_argument("--svg", action="store_true", help="also write SVG charts")
    ana.set_defaults(func=cmd_analyze)

    prx = sub.add_parser("proxy", help="proxy metaorders and peak-impact curves")
    prx.add_argument("run_dir")
    prx.add_argument("--C", type=float, default=4.0, help="threshold constant")
    prx.add_argument("--phi-hat", type=float, default=None)
    prx.add_argument("--mu-hat", type=float, default=None)
    prx.add_argument("--threshold-mode", choices=THRESHOLD_MODES, default="scaled")
    prx.add_argument("--max-gap", default=None, help="largest gap inside a proxy; 'inf' disables")
    prx.add_argument("--flow-dir", default=None, help="read flow CSVs from here instead of RUN_DIR/flow")
    prx.add_argument("--jobs", type=int, default=1)
    prx.add_argument("--svg", action="store_true")
    prx.set_defaults(func=cmd_proxy)

    rep = sub.add_parser("report", help="concatenate run summaries")
    rep.add_argument("run_dirs", nargs="*")
    rep.add_argument("--out", default=None)
    rep.set_defaults(func=cmd_report)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        return args.func(args)
    except ImpactNumbaError as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
