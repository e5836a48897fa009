"""Covariance-driven stochastic subspace identification.

The block-Toeplitz matrix of output correlations is factorized once per time
lag (full or randomized SVD); each model order then reuses the leading
singular triplets to build the observability matrix, solve the shifted
least-squares problem for the state matrix and convert its eigenvalues to
frequencies, damping ratios and mode shapes.
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import signal as sps

from .randla import LowRankSvd, full_svd, min_rank_percent, rsvd, sample_count
from .signal import BlockToeplitz, CorrelationSequence, TimeSeriesRecord, assemble_toeplitz
from .stab import StabilityFlag, mpc, mpd

__all__ = [
    "OrderRange",
    "LagPlan",
    "Pole",
    "StabilizationGrid",
    "time_lag_step",
    "lag_of_step",
    "lag_grid",
    "estimate_f0",
    "eigen_to_modal",
    "modal_to_eigen",
    "normalize_shape",
    "identify",
    "sweep",
    "sweep_3d",
    "lag_seed",
    "grid_to_dict",
    "grid_from_dict",
]

logger = logging.getLogger(__name__)


def _ceil(x: float) -> int:
    # guard against 100.00000000000001 style noise in exact divisions
    return math.ceil(round(x, 9))


# ---------------------------------------------------------------------------
# Time-lag rules
# ---------------------------------------------------------------------------


def time_lag_step(fs: float, f0: float) -> int:
    """Time-lag step ``j_b = ceil(10 fs / (2 f0))``."""
    if not 0 < 2 * f0 < fs:
        raise ValueError(f"f0={f0} must be positive and below Nyquist ({fs / 2})")
    return _ceil(10 * fs / (2 * f0))


def lag_of_step(j_b: int, fs: float) -> float:
    """Time lag ``tau = (2 j_b - 1) / fs`` in seconds."""
    if j_b < 1:
        raise ValueError("j_b must be >= 1")
    return (2 * j_b - 1) / fs


@dataclass(frozen=True)
class LagPlan:
    """Time-lag steps scanned by the 3D stabilization diagram."""

    fs: float
    f0: Optional[float]
    j_b_values: Tuple[int, ...]
    beta: float = 1.5
    grid_count: int = 8

    def __post_init__(self):
        jb = tuple(int(j) for j in self.j_b_values)
        if not jb or any(j < 1 for j in jb):
            raise ValueError("j_b values must be positive integers")
        if any(b <= a for a, b in zip(jb, jb[1:])):
            raise ValueError("j_b values must be strictly increasing")
        object.__setattr__(self, "j_b_values", jb)
        object.__setattr__(self, "grid_count", len(jb))

    @property
    def taus(self) -> Tuple[float, ...]:
        return tuple(lag_of_step(j, self.fs) for j in self.j_b_values)

    @classmethod
    def fixed(cls, fs: float, j_b: int, f0: Optional[float] = None) -> "LagPlan":
        """Single-lag plan (classical 2D diagram)."""
        return cls(fs, f0, (int(j_b),), beta=1.0)


def lag_grid(fs: float, f0: float, beta: float = 1.5, grid_count: int = 8) -> LagPlan:
    """Evenly spaced j_b values from ``ceil(9 fs / (2 f0))`` to ``round(beta * j_min)``."""
    if not beta > 1:
        raise ValueError("beta must be > 1")
    if grid_count < 2:
        raise ValueError("grid_count must be >= 2")
    if not 0 < 2 * f0 < fs:
        raise ValueError(f"f0={f0} must be positive and below Nyquist ({fs / 2})")
    j_min = _ceil(9 * fs / (2 * f0))
    j_max = int(math.floor(beta * j_min + 0.5))
    if j_max <= j_min:
        raise ValueError(f"degenerate lag range: j_max={j_max} <= j_min={j_min}")
    raw = np.floor(np.linspace(j_min, j_max, grid_count) + 0.5).astype(int)
    values = tuple(dict.fromkeys(int(j) for j in raw))
    return LagPlan(fs, f0, values, beta, grid_count)


def estimate_f0(rec: TimeSeriesRecord, nperseg: Optional[int] = None) -> float:
    """Lowest prominent peak of the channel-averaged Welch spectrum below Nyquist/4."""
    nperseg = nperseg or min(rec.n_samples, int(2 ** np.ceil(np.log2(rec.fs * 20))))
    f, P = sps.welch(rec.samples, fs=rec.fs, nperseg=nperseg, axis=0)
    P = P.mean(axis=1)
    band = (f > 0) & (f < rec.fs / 8)
    fb, Pb = f[band], P[band]
    if fb.size < 3:
        raise ValueError("record too short to estimate f0")
    peaks, _ = sps.find_peaks(Pb, prominence=0.1 * Pb.max())
    if peaks.size == 0:
        return float(fb[np.argmax(Pb)])
    return float(fb[peaks[0]])


# ---------------------------------------------------------------------------
# Poles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Pole:
    """One modal estimate at a (model order, time-lag step) grid point.

    ``shape`` has unit norm with its largest component on the positive real
    axis. ``neighbor`` holds ``(d_f, d_xi, 1 - MAC, |dMPC|, |dMPD|)`` to the
    neighbour that made the pole stable, when it is.
    """

    f: float
    xi: float
    shape: np.ndarray = field(repr=False)
    order: int
    j_b: int
    mpc: float
    mpd: float
    stability_flag: StabilityFlag = StabilityFlag.NEW
    lag_index: int = 0
    neighbor: Optional[Tuple[float, ...]] = None


def eigen_to_modal(mu: complex, dt: float) -> Tuple[float, float]:
    """Discrete eigenvalue to ``(f [Hz], xi)`` via ``lambda = ln(mu) / dt``."""
    lam = np.log(complex(mu)) / dt
    a = abs(lam)
    return a / (2 * np.pi), -lam.real / a


def modal_to_eigen(f: float, xi: float, dt: float) -> complex:
    """Inverse of :func:`eigen_to_modal` (upper half-plane root)."""
    w = 2 * np.pi * f
    lam = complex(-xi * w, w * np.sqrt(1 - xi * xi))
    return np.exp(lam * dt)


def normalize_shape(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex)
    v = v / np.linalg.norm(v)
    k = int(np.argmax(np.abs(v)))
    return v * (abs(v[k]) / v[k])


def identify(svd: LowRankSvd, n2: int, dt: float, l: int, j_b: int,
             lag_index: int = 0) -> List[Pole]:
    """Modal estimates of the order-``n2`` model from a Toeplitz factorization.

    Only the leading ``n2`` singular triplets are used. Poles with frequency
    outside ``(0, Nyquist)`` or damping outside ``(0, 1)`` are dropped.
    """
    n2 = int(n2)
    if n2 < 2 or n2 % 2:
        raise ValueError(f"model order must be even and >= 2, got {n2}")
    if n2 > svd.rank_k:
        raise ValueError(f"order {n2} exceeds factorization rank {svd.rank_k}")
    if svd.U.shape[0] != j_b * l:
        raise ValueError(f"factorization has {svd.U.shape[0]} rows, expected j_b*l={j_b * l}")
    if j_b < 2:
        raise ValueError("j_b must be >= 2 to form the shifted observability matrix")
    S = svd.S[:n2]
    ok = int(np.sum(S > 1e-12 * svd.S[0])) if svd.S[0] > 0 else 0
    if ok < n2:
        new = ok - ok % 2
        warnings.warn(f"singular values underflow at order {n2}; truncated to {new}", RuntimeWarning)
        n2 = new
        if n2 < 2:
            return []
        S = S[:n2]
    O = svd.U[:, :n2] * np.sqrt(S)
    C = O[:l]
    A = np.linalg.pinv(O[:-l], rcond=1e-10) @ O[l:]
    mu, Psi = np.linalg.eig(A)
    nyq = 0.5 / dt
    poles = []
    for i in np.flatnonzero(mu.imag > 0):
        if abs(mu[i]) == 0:
            continue
        f, xi = eigen_to_modal(mu[i], dt)
        if not (0 < f < nyq and 0 < xi < 1):
            continue
        phi = C @ Psi[:, i]
        if not np.any(phi):
            continue
        phi = normalize_shape(phi)
        poles.append(Pole(float(f), float(xi), phi, n2, int(j_b), mpc(phi), mpd(phi),
                          lag_index=lag_index))
    poles.sort(key=lambda p: p.f)
    return poles


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


OrderRange = Tuple[int, int, int]


def _orders(order_range: OrderRange) -> List[int]:
    lo, hi, step = (int(x) for x in order_range)
    if lo < 2 or lo % 2 or step < 2 or step % 2 or hi < lo:
        raise ValueError(f"order range must use even orders and an even step, got {order_range}")
    return list(range(lo, hi + 1, step))


def _decompose(T: np.ndarray, method: str, seed: int, rank_percent: Optional[float],
               n_max: int, rank: Optional[int] = None) -> LowRankSvd:
    if method == "svd":
        return full_svd(T)
    if method == "rsvd":
        side = T.shape[0]
        if rank is not None:
            k = max(int(rank), n_max)
        else:
            pct = min_rank_percent(side) if rank_percent is None else rank_percent
            k = max(sample_count(pct, side), n_max)
        if k > side:
            raise ValueError(f"rank {k} exceeds Toeplitz side {side}")
        return rsvd(T, k, seed)
    raise ValueError(f"unknown decomposer {method!r}")


def sweep(toeplitz: BlockToeplitz, order_range: OrderRange, method: str = "svd",
          seed: int = 0, rank_percent: Optional[float] = None,
          lag_index: int = 0, rank: Optional[int] = None) -> Dict[int, List[Pole]]:
    """Poles for every order in ``order_range`` from one decomposition.

    ``method`` is ``"svd"`` or ``"rsvd"``. For RSVD the rank defaults to the
    advisory :func:`~rsvdoma.randla.min_rank_percent` of the Toeplitz side;
    ``rank`` fixes it in absolute terms. It is never below the largest model
    order.
    """
    orders = _orders(order_range)
    svd = _decompose(toeplitz.data, method, seed, rank_percent, orders[-1], rank)
    dt = 1.0 / toeplitz.fs
    return {n2: identify(svd, n2, dt, toeplitz.l, toeplitz.j_b, lag_index) for n2 in orders}


@dataclass(frozen=True)
class StabilizationGrid:
    """Poles indexed by ``(lag index, order index)``."""

    poles: Dict[Tuple[int, int], Tuple[Pole, ...]]
    order_range: OrderRange
    lag_plan: LagPlan
    l: int

    @property
    def orders(self) -> List[int]:
        return _orders(self.order_range)

    def all_poles(self) -> List[Pole]:
        return [p for key in sorted(self.poles) for p in self.poles[key]]

    def stable_poles(self) -> List[Pole]:
        return [p for p in self.all_poles() if p.stability_flag == StabilityFlag.STABLE]

    def slice_lag(self, t: int) -> Dict[int, Tuple[Pole, ...]]:
        """Order -> poles for one lag index."""
        return {self.orders[o]: ps for (tt, o), ps in sorted(self.poles.items()) if tt == t}

    def tau_of(self, pole: Pole) -> float:
        return lag_of_step(pole.j_b, self.lag_plan.fs)


def lag_seed(seed: int, lag_index: int) -> int:
    """Independent per-lag seed derived from a base seed."""
    return int(np.random.SeedSequence([int(seed), int(lag_index)]).generate_state(1, np.uint64)[0])


def sweep_3d(corrs: CorrelationSequence, lag_plan: LagPlan, order_range: OrderRange,
             method: str = "rsvd", seed: int = 0, rank_percent: Optional[float] = None,
             jobs: int = 1, rank: Optional[int] = None) -> StabilizationGrid:
    """Order sweep at every time lag of ``lag_plan``.

    ``corrs`` must reach the largest j_b in the plan; smaller lags reuse its
    leading correlation matrices. Lag slices are independent and may run on
    ``jobs`` threads; the result does not depend on ``jobs``.
    """
    if max(lag_plan.j_b_values) > corrs.j_b:
        raise ValueError(f"correlations reach j_b={corrs.j_b}, plan needs {max(lag_plan.j_b_values)}")
    orders = _orders(order_range)

    def one(t: int):
        j_b = lag_plan.j_b_values[t]
        T = assemble_toeplitz(corrs.truncate(j_b))
        by_order = sweep(T, order_range, method, lag_seed(seed, t), rank_percent, lag_index=t,
                         rank=rank)
        return {(t, o): tuple(by_order[n2]) for o, n2 in enumerate(orders)}

    idx = range(len(lag_plan.j_b_values))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(one, idx))
    else:
        parts = [one(t) for t in idx]
    cells = {}
    for part in parts:
        cells.update(part)
    return StabilizationGrid(dict(sorted(cells.items())), tuple(order_range), lag_plan, corrs.n_channels)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _shape_list(v: np.ndarray) -> List[float]:
    return np.column_stack([v.real, v.imag]).ravel().tolist()


def _shape_from(vals) -> np.ndarray:
    a = np.asarray(vals, dtype=float).reshape(-1, 2)
    return a[:, 0] + 1j * a[:, 1]


def grid_to_dict(grid: StabilizationGrid) -> dict:
    """JSON-ready document: grid metadata plus one record per pole."""
    plan = grid.lag_plan
    poles = []
    for (t, o), ps in sorted(grid.poles.items()):
        for p in ps:
            poles.append({
                "f": p.f, "xi": p.xi, "order": p.order, "j_b": p.j_b,
                "tau": lag_of_step(p.j_b, plan.fs), "mpc": p.mpc, "mpd": p.mpd,
                "stability_flag": p.stability_flag.value, "lag_index": t, "order_index": o,
                "neighbor": None if p.neighbor is None else list(p.neighbor),
                "shape": _shape_list(p.shape),
            })
    return {
        "order_range": list(grid.order_range),
        "l": grid.l,
        "lag_plan": {"fs": plan.fs, "f0": plan.f0, "j_b_values": list(plan.j_b_values),
                     "taus": list(plan.taus), "beta": plan.beta, "grid_count": plan.grid_count},
        "poles": poles,
    }


def grid_from_dict(doc: dict) -> StabilizationGrid:
    lp = doc["lag_plan"]
    plan = LagPlan(lp["fs"], lp["f0"], tuple(lp["j_b_values"]), lp["beta"], lp["grid_count"])
    order_range = tuple(doc["order_range"])
    cells: Dict[Tuple[int, int], list] = {
        (t, o): [] for t in range(len(plan.j_b_values)) for o in range(len(_orders(order_range)))
    }
    for r in doc["poles"]:
        p = Pole(r["f"], r["xi"], _shape_from(r["shape"]), r["order"], r["j_b"], r["mpc"], r["mpd"],
                 StabilityFlag(r["stability_flag"]), r["lag_index"],
                 None if r.get("neighbor") is None else tuple(r["neighbor"]))
        cells[(r["lag_index"], r["order_index"])].append(p)
    return StabilizationGrid({k: tuple(v) for k, v in sorted(cells.items())}, order_range, plan, doc["l"])
