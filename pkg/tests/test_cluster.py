import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsvdoma import cluster, pipeline, stab
from rsvdoma.cluster import ClusteringError
from rsvdoma.config import PipelineConfig
from rsvdoma.ssi import LagPlan, StabilizationGrid
from rsvdoma.stab import StabilityFlag
from conftest import FRAME_F, frame_record, make_pole


def stable(p, neighbor=(0.0, 0.0, 0.0, 0.0, 0.0)):
    from dataclasses import replace
    return replace(p, stability_flag=StabilityFlag.STABLE, neighbor=neighbor)


# --------------------------------------------------------------------------- features


def test_features_identical_neighbours():
    a = make_pole()
    assert stab.neighbor_features(a, a)[:3] == (0.0, 0.0, 0.0)


def test_feature_relative_frequency():
    d = stab.neighbor_features(make_pole(f=5.0), make_pole(f=5.1))
    assert d[0] == pytest.approx(0.1 / 5.1, abs=1e-6)
    assert d[0] == pytest.approx(0.019608, abs=5e-7)


def test_features_exact_two_dof_grid(exact2dof):
    from rsvdoma import ssi
    grid = ssi.sweep_3d(exact2dof.correlations(10), LagPlan(exact2dof.fs, None, (6, 8, 10)), (4, 4, 2), "svd")
    grid = stab.flag_stable_3d(stab.apply_hard_grid(grid))
    poles, X = cluster.pole_features(grid)
    assert len(poles) == 4  # two modes at two lags beyond the first
    assert np.all(X[:, :3] <= 1e-6)


def test_pole_features_only_stable():
    poles = [stable(make_pole(f=1.0), (0.1, 0.2, 0.3, 0.4, 0.5)), make_pole(f=2.0)]
    kept, X = cluster.pole_features(poles)
    assert len(kept) == 1 and X.shape == (1, 5)
    np.testing.assert_allclose(X[0], [0.1, 0.2, 0.3, 0.4, 0.5])


# --------------------------------------------------------------------------- stage I


def test_fcm_two_clouds():
    X = np.array([[0, 0], [0.01, 0.01], [1, 1], [0.99, 1.01]])
    res = cluster.fuzzy_cmeans(X, seed=3)
    own = np.argmax(res.memberships, axis=1)
    assert own[0] == own[1] != own[2] == own[3]
    assert np.all(res.memberships.max(axis=1) >= 0.95)
    np.testing.assert_allclose(res.memberships.sum(axis=1), 1)


def test_fcm_point_on_centroid():
    # symmetric data put a centroid exactly on the middle point of each cloud
    X = np.array([[0.0], [0.0], [0.0], [10.0], [10.0], [10.0]])
    res = cluster.fuzzy_cmeans(X, seed=1)
    assert set(np.round(res.memberships.ravel(), 12)) == {0.0, 1.0}


def test_fcm_deterministic():
    X = np.random.default_rng(0).random((40, 5))
    a, b = cluster.fuzzy_cmeans(X, seed=9), cluster.fuzzy_cmeans(X, seed=9)
    assert a.memberships.tobytes() == b.memberships.tobytes()
    assert a.centroids.tobytes() == b.centroids.tobytes()


def test_fcm_errors():
    with pytest.raises(ClusteringError):
        cluster.fuzzy_cmeans(np.ones((5, 3)))
    with pytest.raises(ValueError):
        cluster.fuzzy_cmeans(np.random.default_rng(0).random((5, 2)), m=1.0)


def test_select_physical():
    U = np.array([[0.9, 0.1], [0.5, 0.5], [0.2, 0.8]])
    V = np.array([[0.01, 0.0], [0.4, 0.0]])
    np.testing.assert_array_equal(cluster.select_physical(U, V), [0, 1])
    # the nearer centroid may come second
    np.testing.assert_array_equal(cluster.select_physical(U, V[::-1]), [1, 2])
    with pytest.raises(ClusteringError):
        cluster.select_physical(U, np.array([[0.1, 0.0], [0.0, 0.1]]))


# --------------------------------------------------------------------------- stage II


def test_hierarchical_tight_triplet():
    poles = [make_pole(f=5.312 + d, xi=0.01 + d / 100, shape=(1.0, 0.5 + d)) for d in (-0.001, 0, 0.001)]
    (c,) = cluster.hierarchical_cluster(poles, 0.10)
    assert c.size == 3 and c.f == pytest.approx(5.312)
    for a in poles:
        for b in poles:
            assert stab.mac(a.shape, b.shape) >= 0.999


@pytest.mark.parametrize("cutoff", [0.1, 0.3, 0.5])
def test_hierarchical_separates_distant_modes(cutoff):
    out = cluster.hierarchical_cluster([make_pole(f=5.3), make_pole(f=15.8)], cutoff)
    assert len(out) == 2


def test_hierarchical_min_size_and_representatives():
    poles = [make_pole(f=f) for f in (5.0, 5.01, 5.02, 5.03)] + [make_pole(f=20.0)]
    out = cluster.hierarchical_cluster(poles, 0.10, min_cluster_size=2)
    assert len(out) == 1
    assert out[0].f == 5.01  # lower median of an even-sized cluster
    assert out[0].f_iqr == pytest.approx(np.percentile([5.0, 5.01, 5.02, 5.03], 75)
                                         - np.percentile([5.0, 5.01, 5.02, 5.03], 25))
    with pytest.raises(ValueError):
        cluster.hierarchical_cluster([], 0.1)


@settings(max_examples=30, deadline=None)
@given(st.permutations(range(12)))
def test_hierarchical_permutation_invariant(perm):
    rng = np.random.default_rng(4)
    poles = [make_pole(f=float(f), xi=float(x), shape=(1.0, float(s)))
             for f, x, s in zip(rng.choice([5.0, 15.0, 26.0], 12) * (1 + 0.002 * rng.standard_normal(12)),
                                rng.uniform(0.009, 0.011, 12), rng.uniform(0.4, 0.6, 12))]
    base = cluster.hierarchical_cluster(poles, 0.1)
    other = cluster.hierarchical_cluster([poles[i] for i in perm], 0.1)
    assert [(c.f, c.xi, c.size) for c in base] == [(c.f, c.xi, c.size) for c in other]


def test_default_min_cluster_size():
    assert cluster.default_min_cluster_size(15, 10) == 30
    assert cluster.default_min_cluster_size(15, 1) == 3
    assert cluster.default_min_cluster_size(1, 1) == 1


def test_extract_modes_empty_grid():
    grid = StabilizationGrid({(0, 0): ()}, (2, 2, 2), LagPlan.fixed(100.0, 5), 2)
    res = cluster.extract_modes(grid)
    assert res.clusters == () and len(res.retained) == 0


def test_frame_3d_gives_ten_modes(analytic10):
    res = pipeline.identify_record(frame_record(20.0, 0), PipelineConfig(f0=5.319))
    f = np.array([c.f for c in res.modes])
    assert len(f) == 10
    assert np.all(np.abs(f - FRAME_F) / FRAME_F <= 0.005)
    d = cluster.clusters_to_dict(res.result)
    assert len(d["modes"]) == 10 and d["stage1"]["n_stable"] == len(res.result.poles)
