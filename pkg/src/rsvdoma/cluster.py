"""Two-stage extraction of physical modes from stable poles.

Stage I splits the stable poles with fuzzy C-means into a cluster near the
origin of the feature space (possibly physical) and one far from it. Stage II
groups the retained poles by average-linkage hierarchical clustering on the
summed relative frequency, damping and ``1 - MAC`` distance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import squareform

from .ssi import Pole
from .stab import StabilityFlag

__all__ = [
    "ClusteringError",
    "FuzzyResult",
    "ModeCluster",
    "ClusteringResult",
    "pole_features",
    "fuzzy_cmeans",
    "select_physical",
    "pairwise_distance",
    "hierarchical_cluster",
    "extract_modes",
    "default_min_cluster_size",
]

FEATURE_NAMES = ("d_f", "d_xi", "one_minus_mac", "d_mpc", "d_mpd")


class ClusteringError(ValueError):
    pass


def pole_features(grid_or_poles) -> Tuple[List[Pole], np.ndarray]:
    """Stable poles in canonical order and their ``(n, 5)`` feature matrix.

    Columns are the distances to the neighbour used when flagging:
    ``d_f, d_xi, 1 - MAC`` and the absolute MPC and MPD differences.
    """
    poles = grid_or_poles.stable_poles() if hasattr(grid_or_poles, "stable_poles") else [
        p for p in grid_or_poles if p.stability_flag == StabilityFlag.STABLE
    ]
    poles = sorted(poles, key=_pole_key)
    X = np.array([p.neighbor for p in poles], dtype=float).reshape(-1, 5)
    return poles, np.clip(X, 0.0, None)


def _pole_key(p: Pole):
    return (p.f, p.xi, p.lag_index, p.order, p.j_b)


# ---------------------------------------------------------------------------
# Stage I
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FuzzyResult:
    memberships: np.ndarray  # (n_points, c), rows sum to 1
    centroids: np.ndarray  # (c, n_features)
    n_iter: int


def _memberships(X, V, m):
    D = np.linalg.norm(X[:, None, :] - V[None, :, :], axis=2)
    U = np.empty_like(D)
    zero = D <= 1e-300
    hit = zero.any(axis=1)
    if hit.any():
        U[hit] = zero[hit] / zero[hit].sum(axis=1, keepdims=True)
    rest = ~hit
    if rest.any():
        inv = D[rest] ** (-2.0 / (m - 1.0))
        U[rest] = inv / inv.sum(axis=1, keepdims=True)
    return U


def fuzzy_cmeans(points, c: int = 2, m: float = 2.0, tol: float = 1e-6,
                 max_iter: int = 300, seed: int = 0) -> FuzzyResult:
    """Fuzzy C-means (Bezdek) with random initial memberships.

    Iterates centroid and membership updates until the largest centroid
    displacement drops below ``tol``. A point lying exactly on one or more
    centroids gets its membership split evenly among them.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if not m > 1:
        raise ValueError("fuzzifier m must be > 1")
    if len(np.unique(X, axis=0)) < c:
        raise ClusteringError(f"need at least {c} distinct points for {c} clusters")
    rng = np.random.Generator(np.random.Philox(seed))
    U = rng.random((X.shape[0], c))
    U /= U.sum(axis=1, keepdims=True)
    V = None
    it = 0
    for it in range(1, max_iter + 1):
        W = U ** m
        V_new = (W.T @ X) / W.sum(axis=0)[:, None]
        U = _memberships(X, V_new, m)
        moved = np.inf if V is None else np.max(np.linalg.norm(V_new - V, axis=1))
        V = V_new
        if moved < tol:
            break
    return FuzzyResult(U, V, it)


def select_physical(memberships, centroids, points=None) -> np.ndarray:
    """Indices of points with membership >= 0.5 in the cluster nearest the origin."""
    U = np.asarray(memberships, dtype=float)
    V = np.asarray(centroids, dtype=float)
    if V.shape[0] != 2:
        raise ValueError("select_physical expects two clusters")
    norms = np.linalg.norm(V, axis=1)
    if abs(norms[0] - norms[1]) <= 1e-12:
        raise ClusteringError("centroids equidistant from the origin; manual review needed")
    phys = int(np.argmin(norms))
    return np.flatnonzero(U[:, phys] >= 0.5)


# ---------------------------------------------------------------------------
# Stage II
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModeCluster:
    """Physical mode represented by an alignment of poles."""

    members: Tuple[Pole, ...] = field(repr=False)
    f: float
    xi: float
    shape: np.ndarray = field(repr=False)
    f_iqr: float

    @property
    def size(self) -> int:
        return len(self.members)


def pairwise_distance(poles: Sequence[Pole]) -> np.ndarray:
    """``d_f + d_xi + (1 - MAC)`` for all pole pairs, as a square matrix."""
    f = np.array([p.f for p in poles])
    xi = np.array([p.xi for p in poles])
    Phi = np.array([p.shape for p in poles])
    Phi = Phi / np.linalg.norm(Phi, axis=1, keepdims=True)
    df = np.abs(f[:, None] - f[None, :]) / np.maximum(f[:, None], f[None, :])
    dxi = np.abs(xi[:, None] - xi[None, :]) / np.maximum(xi[:, None], xi[None, :])
    M = np.abs(Phi.conj() @ Phi.T) ** 2
    D = df + dxi + (1.0 - np.clip(M, 0.0, 1.0))
    np.fill_diagonal(D, 0.0)
    return 0.5 * (D + D.T)


def _lower_median(v: np.ndarray) -> float:
    s = np.sort(v)
    return float(s[(len(s) - 1) // 2])


def _make_cluster(members: List[Pole], D: np.ndarray) -> ModeCluster:
    f = np.array([p.f for p in members])
    xi = np.array([p.xi for p in members])
    medoid = int(np.argmin(D.sum(axis=1)))
    q75, q25 = np.percentile(f, [75, 25])
    return ModeCluster(tuple(members), _lower_median(f), _lower_median(xi),
                       members[medoid].shape, float(q75 - q25))


def hierarchical_cluster(poles: Sequence[Pole], cutoff: float = 0.10,
                         min_cluster_size: int = 1) -> List[ModeCluster]:
    """Average-linkage clusters cut at ``cutoff``, smallest ones discarded.

    Poles are put in canonical order first so the result does not depend on
    the input order. Clusters are returned by ascending frequency.
    """
    poles = sorted(poles, key=_pole_key)
    if not poles:
        raise ValueError("no poles to cluster")
    if len(poles) == 1:
        labels = np.array([1])
        D = np.zeros((1, 1))
    else:
        D = pairwise_distance(poles)
        Z = linkage(squareform(D, checks=False), method="average")
        labels = fcluster(Z, t=cutoff, criterion="distance")
    out = []
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        if len(idx) < min_cluster_size:
            continue
        out.append(_make_cluster([poles[i] for i in idx], D[np.ix_(idx, idx)]))
    out.sort(key=lambda c: (c.f, c.xi))
    return out


def default_min_cluster_size(n_orders: int, n_lags: int, fraction: float = 0.2) -> int:
    return max(1, int(np.ceil(fraction * n_orders * n_lags)))


@dataclass(frozen=True)
class ClusteringResult:
    poles: Tuple[Pole, ...]  # stable poles entering stage I
    features: np.ndarray
    fuzzy: Optional[FuzzyResult]
    retained: np.ndarray  # indices into ``poles``
    clusters: Tuple[ModeCluster, ...]
    cutoff: float
    min_cluster_size: int


def extract_modes(grid, cutoff: float = 0.10, min_cluster_size: Optional[int] = None,
                  fuzzifier: float = 2.0, tol: float = 1e-6, max_iter: int = 300,
                  seed: int = 0, min_size_fraction: float = 0.2) -> ClusteringResult:
    """Both clustering stages on the stable poles of a flagged grid."""
    if min_cluster_size is None:
        min_cluster_size = default_min_cluster_size(len(grid.orders), len(grid.lag_plan.j_b_values),
                                                    min_size_fraction)
    poles, X = pole_features(grid)
    if len(poles) == 0:
        return ClusteringResult((), X, None, np.array([], dtype=int), (), cutoff, min_cluster_size)
    try:
        fz = fuzzy_cmeans(X, 2, fuzzifier, tol, max_iter, seed)
        keep = select_physical(fz.memberships, fz.centroids, X)
    except ClusteringError:
        # all stable poles indistinguishable in feature space: nothing to separate
        fz, keep = None, np.arange(len(poles))
    kept = [poles[i] for i in keep]
    clusters = hierarchical_cluster(kept, cutoff, min_cluster_size) if kept else []
    return ClusteringResult(tuple(poles), X, fz, keep, tuple(clusters), cutoff, min_cluster_size)


def clusters_to_dict(res: ClusteringResult) -> dict:
    def shape(v):
        return np.column_stack([v.real, v.imag]).ravel().tolist()

    return {
        "feature_names": list(FEATURE_NAMES),
        "cutoff": res.cutoff,
        "min_cluster_size": res.min_cluster_size,
        "stage1": {
            "n_stable": len(res.poles),
            "memberships": None if res.fuzzy is None else res.fuzzy.memberships.tolist(),
            "centroids": None if res.fuzzy is None else res.fuzzy.centroids.tolist(),
            "retained": res.retained.tolist(),
        },
        "modes": [
            {"f": c.f, "xi": c.xi, "size": c.size, "f_iqr": c.f_iqr, "shape": shape(c.shape)}
            for c in res.clusters
        ],
    }
