"""Pole quality indicators and stability flagging.

MAC compares two shapes, MPC and MPD measure how far one shape is from a
real (mono-phase) vector. Hard criteria act on single poles; soft criteria
compare a pole with its best neighbour one model order below and, in the 3D
diagram, one time lag below.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "StabilityFlag",
    "HardCriteria",
    "SoftCriteria",
    "mac",
    "mpc",
    "mpd",
    "pole_distances",
    "neighbor_features",
    "best_neighbor",
    "apply_hard",
    "apply_hard_grid",
    "flag_stable_2d",
    "flag_stable_3d",
]


class StabilityFlag(str, Enum):
    NEW = "new"
    STABLE = "stable"
    REJECTED = "rejected"


@dataclass(frozen=True)
class HardCriteria:
    """Single-pole rejection thresholds.

    A pole is kept when ``xi <= xi_max``, ``mpc > mpc_min`` and
    ``mpd < mpd_max``.
    """

    xi_max: float = 0.10
    mpc_min: float = 0.60
    mpd_max: float = 0.50

    def __post_init__(self):
        for name in ("xi_max", "mpc_min", "mpd_max"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")


@dataclass(frozen=True)
class SoftCriteria:
    """Neighbour-consistency thresholds.

    ``alpha_mac`` bounds ``1 - MAC``.
    """

    alpha_f: float = 0.01
    alpha_xi: float = 0.03
    alpha_mac: float = 0.02

    def __post_init__(self):
        for name in ("alpha_f", "alpha_xi", "alpha_mac"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")


def _as_shape(v) -> np.ndarray:
    v = np.asarray(v, dtype=complex).ravel()
    if v.size == 0 or not np.any(v):
        raise ValueError("mode shape must be a non-zero vector")
    return v


def mac(a, b) -> float:
    """Modal assurance criterion ``|a^H b|^2 / (|a|^2 |b|^2)``."""
    a = _as_shape(a)
    b = _as_shape(b)
    if a.shape != b.shape:
        raise ValueError(f"shape lengths differ: {a.size} vs {b.size}")
    num = abs(np.vdot(a, b)) ** 2
    den = np.vdot(a, a).real * np.vdot(b, b).real
    return float(min(num / den, 1.0))


def mpc(shape) -> float:
    """Modal phase collinearity in ``[0, 1]``.

    Eigenvalues ``l1 >= l2`` of the 2x2 covariance of the mean-centred real
    and imaginary parts give ``((l1 - l2) / (l1 + l2))**2``. A shape whose
    components are all equal has zero covariance and is reported as 1.
    """
    v = _as_shape(shape)
    v = v - v.mean()
    x, y = v.real, v.imag
    sxx, syy, sxy = x @ x, y @ y, x @ y
    tr = sxx + syy
    if tr <= 1e-300:
        return 1.0
    # l1 - l2 of a symmetric 2x2 matrix
    diff = np.hypot(sxx - syy, 2 * sxy)
    return float(min((diff / tr) ** 2, 1.0))


def mpd(shape) -> float:
    """Mean phase deviation in ``[0, 1]``.

    The magnitude-weighted mean angle between each component and the
    total-least-squares line through the origin of the complex plane,
    divided by ``pi/4`` (the value for two orthogonal, equal components).
    """
    v = _as_shape(shape)
    X = np.column_stack([v.real, v.imag])
    _, _, Vt = np.linalg.svd(X, full_matrices=False)
    d = Vt[0]  # unit direction of the fitted line
    w = np.abs(v)
    nz = w > 0
    # arctan2 keeps full precision for nearly collinear components
    along = np.abs(X[nz] @ d)
    across = np.abs(X[nz] @ np.array([-d[1], d[0]]))
    ang = np.arctan2(across, along)
    dev = (w[nz] @ ang) / w[nz].sum()
    return float(min(dev / (np.pi / 4), 1.0))


# ---------------------------------------------------------------------------
# Neighbour distances
# ---------------------------------------------------------------------------


def _rel(a: float, b: float) -> float:
    m = max(abs(a), abs(b))
    return 0.0 if m == 0 else abs(a - b) / m


def pole_distances(p, q) -> Tuple[float, float, float]:
    """``(d_f, d_xi, 1 - MAC)`` between two poles."""
    return _rel(p.f, q.f), _rel(p.xi, q.xi), 1.0 - mac(p.shape, q.shape)


def neighbor_features(p, q) -> Tuple[float, float, float, float, float]:
    """``(d_f, d_xi, 1 - MAC, |dMPC|, |dMPD|)`` between two poles."""
    return (*pole_distances(p, q), abs(p.mpc - q.mpc), abs(p.mpd - q.mpd))


def best_neighbor(pole, candidates: Sequence) -> Optional[Tuple[int, Tuple[float, float, float]]]:
    """Index and distances of the candidate with the smallest summed distance.

    Ties go to the smaller ``d_f`` and then to the lower index.
    """
    best = None
    best_key = None
    for idx, c in enumerate(candidates):
        d = pole_distances(pole, c)
        key = (sum(d), d[0], idx)
        if best_key is None or key < best_key:
            best_key, best = key, (idx, d)
    return best


def _passes(d, sc: SoftCriteria) -> bool:
    return d[0] <= sc.alpha_f and d[1] <= sc.alpha_xi and d[2] <= sc.alpha_mac


# ---------------------------------------------------------------------------
# Hard criteria
# ---------------------------------------------------------------------------


def _hard_reason(p, hc: HardCriteria) -> Optional[str]:
    if not p.xi <= hc.xi_max:
        return "damping"
    if not p.mpc > hc.mpc_min:
        return "mpc"
    if not p.mpd < hc.mpd_max:
        return "mpd"
    return None


def apply_hard(poles: Iterable, hc: HardCriteria = HardCriteria()):
    """Split poles into ``(kept, rejected)``.

    ``rejected`` holds ``(pole, reason)`` pairs with the pole flagged
    ``rejected`` and the reason naming the first violated criterion
    (``damping``, ``mpc`` or ``mpd``).
    """
    kept, rejected = [], []
    for p in poles:
        reason = _hard_reason(p, hc)
        if reason is None:
            kept.append(p)
        else:
            rejected.append((replace(p, stability_flag=StabilityFlag.REJECTED), reason))
    return kept, rejected


def apply_hard_grid(grid, hc: HardCriteria = HardCriteria()):
    """Flag hard-rejected poles inside a grid; other flags are reset to ``new``."""
    cells = {}
    for key, poles in grid.poles.items():
        out = []
        for p in poles:
            flag = StabilityFlag.NEW if _hard_reason(p, hc) is None else StabilityFlag.REJECTED
            out.append(replace(p, stability_flag=flag, neighbor=None))
        cells[key] = tuple(out)
    return replace(grid, poles=cells)


# ---------------------------------------------------------------------------
# Soft criteria
# ---------------------------------------------------------------------------


def _live(poles) -> List:
    return [p for p in poles if p.stability_flag != StabilityFlag.REJECTED]


def _flag_cell(poles, neighbour_sets, sc: SoftCriteria):
    """Flag the poles of one cell against each candidate neighbour set."""
    out = []
    for p in poles:
        if p.stability_flag == StabilityFlag.REJECTED:
            out.append(p)
            continue
        chosen = None
        for cands in neighbour_sets:
            hit = best_neighbor(p, cands)
            if hit is not None and _passes(hit[1], sc):
                if chosen is None or sum(hit[1]) < sum(chosen[1]):
                    chosen = (cands[hit[0]], hit[1])
        if chosen is None:
            out.append(replace(p, stability_flag=StabilityFlag.NEW, neighbor=None))
        else:
            out.append(replace(p, stability_flag=StabilityFlag.STABLE,
                               neighbor=neighbor_features(p, chosen[0])))
    return tuple(out)


def flag_stable_2d(by_order: Dict[int, Sequence], sc: SoftCriteria = SoftCriteria()) -> Dict[int, tuple]:
    """Flag poles stable along the model-order axis.

    ``by_order`` maps model order to the poles found at that order. A pole is
    ``stable`` when its best neighbour at the next lower order meets all three
    soft criteria; poles at the lowest order are ``new``.
    """
    orders = sorted(by_order)
    out = {}
    prev = None
    for m in orders:
        sets = [] if prev is None else [_live(by_order[prev])]
        out[m] = _flag_cell(by_order[m], sets, sc)
        prev = m
    return out


def flag_stable_3d(grid, sc: SoftCriteria = SoftCriteria()):
    """Flag poles stable along the order axis or the time-lag axis.

    A pole at (lag ``t``, order ``m``) is stable if its best neighbour at
    (``t``, ``m - step``) or at (``t - 1``, ``m``) meets all soft criteria.
    Returns a new grid.
    """
    cells = {}
    for (t, o), poles in grid.poles.items():
        sets = []
        if o > 0:
            sets.append(_live(grid.poles.get((t, o - 1), ())))
        if t > 0:
            sets.append(_live(grid.poles.get((t - 1, o), ())))
        cells[(t, o)] = _flag_cell(poles, sets, sc)
    return replace(grid, poles=cells)
