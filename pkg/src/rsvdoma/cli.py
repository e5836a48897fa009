"""Command-line driver.

Subcommands: ``synth``, ``identify``, ``track``, ``bench`` and ``rankscan``.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import logging
import platform
import sys
import time
import tracemalloc
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import scipy

from . import __version__, cluster, randla, signal, ssi, stab, synth, track
from .config import ConfigError, PipelineConfig, config_hash, load_config
from .pipeline import identify_record, write_plot_csv

logger = logging.getLogger("rsvdoma")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

BENCH_COLUMNS = ["T", "k_percent", "k", "rsvd_seconds", "svd_seconds",
                 "rsvd_peak_bytes", "svd_peak_bytes"]


class DataError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, command: str, cfg: PipelineConfig, argv: Sequence[str],
                   outputs: Sequence[Path], extra: Optional[dict] = None) -> Path:
    """Reproducibility record; pass it back with ``--config`` to replay the run."""
    doc = {
        "command": command,
        "argv": list(argv),
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "seeds": {
            "decomposer": cfg.decomposer.seed,
            "clustering": cfg.clustering.seed,
            "synth": list(cfg.synth.seeds),
        },
        "versions": {
            "rsvdoma": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": {str(p.relative_to(out)): _sha256(p) for p in outputs},
    }
    if extra:
        doc.update(extra)
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    return path


def _expand(patterns: Sequence[str]) -> List[Path]:
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        if not hits and not any(ch in pat for ch in "*?["):
            hits = [pat]  # let the loader report a missing file
        paths.extend(Path(h) for h in hits)
    return paths


def _load(path: Path) -> signal.TimeSeriesRecord:
    try:
        return signal.load_record(path)
    except (signal.RecordFormatError, OSError) as exc:
        raise DataError(str(exc)) from exc


def _apply_seed(cfg: PipelineConfig, seed: Optional[int]) -> PipelineConfig:
    if seed is None:
        return cfg
    return replace(cfg,
                   decomposer=replace(cfg.decomposer, seed=seed),
                   clustering=replace(cfg.clustering, seed=seed),
                   synth=replace(cfg.synth, seeds=(seed,)))


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    return path


def _modes_from_json(path: Path) -> List[cluster.ModeCluster]:
    try:
        doc = json.loads(path.read_text())
        out = []
        for m in doc["modes"]:
            v = np.asarray(m["shape"], dtype=float).reshape(-1, 2)
            out.append(cluster.ModeCluster((), m["f"], m["xi"], v[:, 0] + 1j * v[:, 1],
                                           m.get("f_iqr", 0.0)))
        return out
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a cluster document ({exc})") from exc


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig, out: Path, args) -> List[Path]:
    s = cfg.synth
    ext = "csv" if s.format == "csv" else "bin"
    written = []
    for snr in s.snr_db:
        for seed in s.seeds:
            spec = synth.ShearFrameSpec(n=s.n, fs=s.fs, duration=s.duration,
                                        snr_db=float(snr), seed=int(seed))
            rec = synth.simulate(spec)
            stem = f"synth_snr{snr:g}_seed{seed}"
            path = out / f"{stem}.{ext}"
            signal.save_record(rec, path)
            written += [path, _write_json(out / f"{stem}.json", synth.manifest(spec))]
            logger.info("wrote %s", path)
    return written


def _identify_one(path: Path, cfg: PipelineConfig, jobs: int):
    rec = _load(path)
    return identify_record(rec, cfg, jobs=jobs)


def cmd_identify(cfg: PipelineConfig, out: Path, args) -> List[Path]:
    paths = _expand(args.records or cfg.inputs)
    if not paths:
        raise ConfigError("no input records given")
    written = []
    for path in paths:
        res = _identify_one(path, cfg, args.jobs)
        stem = path.stem
        written.append(_write_json(out / f"{stem}_grid.json", ssi.grid_to_dict(res.grid)))
        doc = cluster.clusters_to_dict(res.result)
        doc.update({"record": str(path), "f0": res.f0, "j_b": list(res.lag_plan.j_b_values)})
        written.append(_write_json(out / f"{stem}_clusters.json", doc))
        write_plot_csv(res.grid, out / f"{stem}_poles.csv")
        written.append(out / f"{stem}_poles.csv")
        print(f"{path}: {len(res.modes)} modes " + " ".join(f"{m.f:.3f}" for m in res.modes))
    return written


def cmd_track(cfg: PipelineConfig, out: Path, args) -> List[Path]:
    paths = _expand(args.sessions or cfg.inputs)
    if not paths:
        raise ConfigError("tracking needs at least one session")

    def modes_of(path: Path):
        if path.suffix.lower() == ".json":
            return _modes_from_json(path)
        return list(_identify_one(path, cfg, 1).modes)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as ex:
            found = list(ex.map(modes_of, paths))
    else:
        found = [modes_of(p) for p in paths]
    ref_src = cfg.tracking.reference
    ref_modes = _modes_from_json(Path(ref_src)) if ref_src else found[0]
    if not ref_modes:
        raise DataError("reference session has no modes")
    ref = track.ReferenceModeSet.from_modes(ref_modes)
    hist = track.TrackedHistory(ref, [
        track.track_session(ref, modes, cfg.tracking.df_max, cfg.tracking.macd_max, p.stem)
        for p, modes in zip(paths, found)
    ])
    track.write_tracking_csv(hist, out / "tracking.csv")
    track.write_summary_csv(hist, out / "success_ratios.csv")
    for r, s in zip(ref.modes, track.success_ratio(hist)):
        print(f"{r.label} {r.f:.3f} Hz: {s:.2f}%")
    return [out / "tracking.csv", out / "success_ratios.csv"]


def _measure(fn, memory: bool):
    if memory:
        tracemalloc.start()
    t0 = time.perf_counter()
    fn()
    dt = time.perf_counter() - t0
    peak = 0
    if memory:
        peak = tracemalloc.get_traced_memory()[1]
        tracemalloc.stop()
    return dt, peak


def bench_rows(sizes: Sequence[int], rank_percent: Optional[float] = None, repeats: int = 1,
               memory: bool = True, seed: int = 0, l: int = 10) -> List[dict]:
    """Time (and trace peak memory of) SVD and RSVD on Toeplitz matrices of side ``T``.

    Matrices come from one synthetic 10-DOF record; ``T`` is rounded to a
    multiple of the channel count.
    """
    spec = synth.ShearFrameSpec(n=l, seed=seed)
    rec = synth.simulate(spec)
    max_jb = max(max(1, round(T / l)) for T in sizes)
    corrs = signal.correlations(rec, max_jb)
    rows = []
    for T in sizes:
        j_b = max(1, round(T / l))
        A = signal.assemble_toeplitz(corrs.truncate(j_b)).data
        side = A.shape[0]
        pct = randla.min_rank_percent(side) if rank_percent is None else rank_percent
        k = randla.sample_count(pct, side)
        r_t, r_m, s_t, s_m = [], [], [], []
        for _ in range(repeats):
            t, m = _measure(lambda: randla.rsvd(A, k, seed), memory)
            r_t.append(t)
            r_m.append(m)
            t, m = _measure(lambda: randla.full_svd(A), memory)
            s_t.append(t)
            s_m.append(m)
        rows.append({"T": side, "k_percent": pct, "k": k,
                     "rsvd_seconds": min(r_t), "svd_seconds": min(s_t),
                     "rsvd_peak_bytes": max(r_m), "svd_peak_bytes": max(s_m)})
        logger.info("T=%d k=%d rsvd %.3fs svd %.3fs", side, k, min(r_t), min(s_t))
    return rows


def cmd_bench(cfg: PipelineConfig, out: Path, args) -> List[Path]:
    b = cfg.bench
    sizes = args.sizes or b.sizes
    rows = bench_rows(sizes, b.rank_percent, b.repeats, b.memory, cfg.decomposer.seed)
    path = out / "bench.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"T={r['T']} k={r['k']} rsvd {r['rsvd_seconds']:.3f}s svd {r['svd_seconds']:.3f}s")
    return [path]


RANKSCAN_COLUMNS = ["snr_db", "seed", "j_b", "T", "percent", "k", "advisory_percent",
                    "n_reference", "n_matched", "all_matched"]


def _modes_2d(T: signal.BlockToeplitz, cfg: PipelineConfig, method: str, seed: int,
              rank: Optional[int] = None):
    by_order = ssi.sweep(T, cfg.orders, method, seed, rank=rank)
    plan = ssi.LagPlan.fixed(T.fs, T.j_b)
    grid = ssi.StabilizationGrid({(0, o): tuple(by_order[n]) for o, n in enumerate(sorted(by_order))},
                                 tuple(cfg.orders), plan, T.l)
    grid = stab.flag_stable_3d(stab.apply_hard_grid(grid, cfg.hard), cfg.soft_criteria)
    c = cfg.clustering
    return cluster.extract_modes(grid, c.cutoff, c.min_size, c.fuzzifier, c.tol, c.max_iter,
                                 c.seed, c.min_size_fraction).clusters


def _physical(modes, oracle_f: Sequence[float], tol: float = 0.01):
    """For each oracle frequency, the closest mode within ``tol`` (relative)."""
    picked = {}
    for fa in oracle_f:
        near = [i for i, m in enumerate(modes) if abs(m.f - fa) / fa <= tol]
        if near:
            i = min(near, key=lambda i: abs(modes[i].f - fa))
            picked[i] = modes[i]
    return [picked[i] for i in sorted(picked)]


def rankscan_rows(rec: signal.TimeSeriesRecord, cfg: PipelineConfig, j_b_values: Sequence[int],
                  percents: Sequence[float], label: dict, fractions: Sequence[float] = (),
                  oracle_f: Optional[Sequence[float]] = None) -> List[dict]:
    """Match RSVD identifications at several ranks against the SVD one.

    Ranks are the absolute ``percents``, the ``fractions`` of the advisory
    percentage and the advisory percentage itself. With ``oracle_f`` the
    reference is narrowed to the SVD modes closest to those frequencies, so
    spurious clusters do not count. Matching uses the rankscan tolerances
    on frequency, damping and ``1 - MAC``.
    """
    rs = cfg.rankscan
    cfg2d = replace(cfg, orders=tuple(rs.orders), lags=replace(cfg.lags, mode="fixed"),
                    decomposer=replace(cfg.decomposer, rank=None))
    corrs = signal.correlations(rec, max(j_b_values))
    rows = []
    for j_b in j_b_values:
        T = signal.assemble_toeplitz(corrs.truncate(j_b))
        ref_modes = list(_modes_2d(T, cfg2d, "svd", 0))
        if oracle_f is not None:
            ref_modes = _physical(ref_modes, oracle_f)
        side = T.side
        adv = randla.min_rank_percent(side)
        ref = track.ReferenceModeSet.from_modes(ref_modes) if ref_modes else None
        scan = set(map(float, percents)) | {adv} | {float(a) * adv for a in fractions}
        for pct in sorted(scan):
            k = max(randla.sample_count(pct, side), cfg2d.orders[1])
            modes = _modes_2d(T, cfg2d, "rsvd", cfg.decomposer.seed, rank=k)
            n_match = 0
            if ref is not None:
                rep = track.track_session(ref, modes, rs.df_max, rs.macd_max, dxi_max=rs.dxi_max)
                n_match = rep.n_matched
            n_ref = len(ref_modes)
            rows.append({**label, "j_b": j_b, "T": side, "percent": pct, "k": k,
                         "advisory_percent": adv, "n_reference": n_ref, "n_matched": n_match,
                         "all_matched": int(n_ref > 0 and n_match == n_ref)})
            logger.info("j_b=%d %.2f%% k=%d matched %d/%d", j_b, pct, k, n_match, n_ref)
    return rows


def cmd_rankscan(cfg: PipelineConfig, out: Path, args) -> List[Path]:
    rs = cfg.rankscan
    paths = _expand(args.records or cfg.inputs)
    rows = []
    if paths:
        for p in paths:
            rows += rankscan_rows(_load(p), cfg, rs.j_b, rs.percents, {"snr_db": "", "seed": p.stem},
                                  rs.fractions)
    else:
        for snr in cfg.synth.snr_db:
            for seed in cfg.synth.seeds:
                spec = synth.ShearFrameSpec(n=cfg.synth.n, fs=cfg.synth.fs, duration=cfg.synth.duration,
                                            snr_db=float(snr), seed=int(seed))
                oracle = synth.analytic_modes(*synth.build_matrices(spec)).f
                rows += rankscan_rows(synth.simulate(spec), cfg, rs.j_b, rs.percents,
                                      {"snr_db": snr, "seed": seed}, rs.fractions, oracle)
    path = out / "rankscan.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RANKSCAN_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    return [path]


COMMANDS = {
    "synth": cmd_synth,
    "identify": cmd_identify,
    "track": cmd_track,
    "bench": cmd_bench,
    "rankscan": cmd_rankscan,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON config or a previous run manifest")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers (lags or sessions)")
    common.add_argument("--seed", type=int, help="override every seed in the config")
    common.add_argument("--out", help="output directory (default: config 'output')")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="rsvdoma", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate shear-frame records")
    p = sub.add_parser("identify", parents=[common], help="identify modes of records")
    p.add_argument("records", nargs="*")
    p = sub.add_parser("track", parents=[common], help="track modes over sessions")
    p.add_argument("sessions", nargs="*", help="records or cluster JSON files")
    p = sub.add_parser("bench", parents=[common], help="time SVD against RSVD")
    p.add_argument("--sizes", type=int, nargs="+", help="Toeplitz sides to test")
    p = sub.add_parser("rankscan", parents=[common], help="RSVD rank sweep against SVD")
    p.add_argument("records", nargs="*", help="records (default: synthesize from config)")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = load_config(args.config) if args.config else PipelineConfig()
        cfg = _apply_seed(cfg, args.seed)
        out = Path(args.out or cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        written = COMMANDS[args.command](cfg, out, args)
        write_manifest(out, args.command, cfg, argv, written)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, signal.RecordFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
