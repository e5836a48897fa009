"""Single-record identification: preprocessing, sweep, flagging, clustering."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

from . import cluster, randla, signal, ssi, stab
from .config import PipelineConfig

logger = logging.getLogger(__name__)

__all__ = ["Identification", "prepare", "lag_plan_for", "identify_record", "write_plot_csv"]


@dataclass(frozen=True)
class Identification:
    record: signal.TimeSeriesRecord = field(repr=False)
    f0: float
    lag_plan: ssi.LagPlan
    grid: ssi.StabilizationGrid = field(repr=False)
    result: cluster.ClusteringResult = field(repr=False)
    timings: Dict[str, float]

    @property
    def modes(self):
        return self.result.clusters


def prepare(rec: signal.TimeSeriesRecord, cfg: PipelineConfig) -> signal.TimeSeriesRecord:
    if cfg.preprocess.detrend:
        rec = signal.detrend(rec)
    if cfg.preprocess.target_fs is not None and cfg.preprocess.target_fs != rec.fs:
        rec = signal.decimate(rec, cfg.preprocess.target_fs)
    return rec


def lag_plan_for(fs: float, f0: float, cfg: PipelineConfig) -> ssi.LagPlan:
    lg = cfg.lags
    if lg.mode == "fixed":
        j_b = lg.j_b if lg.j_b is not None else ssi.time_lag_step(fs, f0)
        return ssi.LagPlan.fixed(fs, j_b, f0)
    return ssi.lag_grid(fs, f0, lg.beta, lg.grid_count)


def identify_record(rec: signal.TimeSeriesRecord, cfg: PipelineConfig = PipelineConfig(),
                    jobs: int = 1, seed: Optional[int] = None) -> Identification:
    """Run the whole chain on one record.

    ``seed`` overrides both the decomposer and clustering seeds.
    """
    timings = {}
    t0 = time.perf_counter()
    rec = prepare(rec, cfg)
    f0 = cfg.f0 if cfg.f0 is not None else ssi.estimate_f0(rec)
    plan = lag_plan_for(rec.fs, f0, cfg)
    corrs = signal.correlations(rec, max(plan.j_b_values))
    timings["correlations"] = time.perf_counter() - t0

    d = cfg.decomposer
    dseed = d.seed if seed is None else seed
    if d.method == "rsvd" and (d.rank is not None or d.rank_percent is not None):
        for j_b in plan.j_b_values:
            side = j_b * rec.n_channels
            adv = randla.min_rank_percent(side)
            pct = d.rank_percent if d.rank is None else 100.0 * d.rank / side
            if pct < adv:
                logger.warning("rank %.2f%% below the advisory %.2f%% at T=%d", pct, adv, side)
    t0 = time.perf_counter()
    grid = ssi.sweep_3d(corrs, plan, cfg.orders, d.method, dseed, d.rank_percent, jobs, d.rank)
    timings["sweep"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    grid = stab.flag_stable_3d(stab.apply_hard_grid(grid, cfg.hard), cfg.soft_criteria)
    c = cfg.clustering
    res = cluster.extract_modes(grid, c.cutoff, c.min_size, c.fuzzifier, c.tol, c.max_iter,
                                c.seed if seed is None else seed, c.min_size_fraction)
    timings["clustering"] = time.perf_counter() - t0
    return Identification(rec, f0, plan, grid, res, timings)


def write_plot_csv(grid: ssi.StabilizationGrid, path) -> None:
    """Tidy table of every pole for external stabilization-diagram plots."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "order", "tau", "flag", "xi", "lag_index", "j_b"])
        for p in grid.all_poles():
            w.writerow([repr(p.f), p.order, repr(grid.tau_of(p)), p.stability_flag.value,
                        repr(p.xi), p.lag_index, p.j_b])
