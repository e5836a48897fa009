import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsvdoma import randla, signal, ssi, stab
from rsvdoma.ssi import LagPlan
from conftest import frame_record


# --------------------------------------------------------------------------- lag rules


@pytest.mark.parametrize("fs, f0, j_b", [(200, 5.319, 189), (40, 2.64, 76), (200, 10, 100)])
def test_time_lag_step(fs, f0, j_b):
    assert ssi.time_lag_step(fs, f0) == j_b


@pytest.mark.parametrize("j_b, fs, tau", [(189, 200, 1.885), (76, 40, 3.775), (1, 50, 0.02)])
def test_lag_of_step(j_b, fs, tau):
    assert ssi.lag_of_step(j_b, fs) == pytest.approx(tau, abs=1e-12)


def test_lag_grid_bridge_case():
    plan = ssi.lag_grid(40, 2.64, 1.5, 8)
    assert plan.j_b_values[0] == 69 and plan.j_b_values[-1] == 104
    assert plan.taus[0] == pytest.approx(3.425) and plan.taus[-1] == pytest.approx(5.175)


def test_lag_grid_frame_case():
    plan = ssi.lag_grid(200, 5.319, 1.5, 11)
    assert plan.j_b_values[0] == 170
    plan10 = ssi.lag_grid(200, 5.319, 1.5, 10)
    assert plan10.j_b_values[0] == 170 and plan10.j_b_values[-1] == 255
    assert len(plan10.j_b_values) == 10


def test_lag_grid_minimal_two_points():
    # j_min = 18; beta just above 1 + 1/36 rounds j_max to 19 and the grid collapses
    plan = ssi.lag_grid(40, 10, 1 + 1 / 36 + 1e-9, 5)
    assert plan.j_b_values == (18, 19)


def test_lag_grid_errors():
    with pytest.raises(ValueError):
        ssi.lag_grid(200, 150, 1.5, 5)
    with pytest.raises(ValueError):
        ssi.lag_grid(200, 5, 1.0, 5)


def test_estimate_f0_on_frame():
    assert ssi.estimate_f0(frame_record()) == pytest.approx(5.319, rel=0.02)


# --------------------------------------------------------------------------- conversions


@settings(max_examples=200, deadline=None)
@given(f=st.floats(0.01, 40), xi=st.floats(1e-4, 0.9), fs=st.sampled_from([100.0, 200.0]))
def test_conversion_roundtrip(f, xi, fs):
    dt = 1 / fs
    f2, xi2 = ssi.eigen_to_modal(ssi.modal_to_eigen(f, xi, dt), dt)
    assert f2 == pytest.approx(f, rel=1e-12, abs=1e-12)
    assert xi2 == pytest.approx(xi, rel=1e-12, abs=1e-12)


def test_conversion_table_value():
    f, xi = ssi.eigen_to_modal(ssi.modal_to_eigen(5.319, 0.01, 1 / 200), 1 / 200)
    assert f == pytest.approx(5.319, abs=1e-12) and xi == pytest.approx(0.01, abs=1e-12)


def test_normalize_shape():
    v = ssi.normalize_shape([1j, -3j, 0.5])
    assert np.linalg.norm(v) == pytest.approx(1)
    k = np.argmax(np.abs(v))
    assert v[k].imag == pytest.approx(0, abs=1e-15) and v[k].real > 0


# --------------------------------------------------------------------------- identify


def test_identify_exact_two_dof(exact2dof):
    T = exact2dof.toeplitz(6)
    poles = ssi.identify(randla.full_svd(T.data), 4, 1 / exact2dof.fs, 2, 6)
    assert len(poles) == 2
    m = exact2dof.modes
    for p, f, xi, phi in zip(poles, m.f, m.xi, m.shapes.T):
        assert p.f == pytest.approx(f, rel=1e-6)
        assert p.xi == pytest.approx(xi, rel=1e-6)
        assert stab.mac(p.shape, phi) > 1 - 1e-9
        assert p.order == 4 and p.j_b == 6


def test_identify_scale_invariance(exact2dof):
    T = exact2dof.toeplitz(6).data
    a = ssi.identify(randla.full_svd(T), 4, 1 / exact2dof.fs, 2, 6)
    b = ssi.identify(randla.full_svd(T * 37.5), 4, 1 / exact2dof.fs, 2, 6)
    for p, q in zip(a, b):
        assert abs(p.f - q.f) <= 1e-9 * p.f and abs(p.xi - q.xi) <= 1e-9 * p.xi
        assert stab.mac(p.shape, q.shape) >= 1 - 1e-9


def test_identify_higher_orders_keep_physical_poles(exact2dof):
    T = exact2dof.toeplitz(8)
    svd = randla.full_svd(T.data)
    m = exact2dof.modes
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # orders above 4 hit the noise floor
        for n2 in (4, 6, 8, 10):
            poles = ssi.identify(svd, n2, 1 / exact2dof.fs, 2, 8)
            for f in m.f:
                assert min(abs(p.f - f) / f for p in poles) < 1e-6


def test_identify_validation(exact2dof):
    svd = randla.full_svd(exact2dof.toeplitz(4).data)
    with pytest.raises(ValueError):
        ssi.identify(svd, 3, 0.02, 2, 4)
    with pytest.raises(ValueError):
        ssi.identify(svd, 4, 0.02, 3, 4)


def test_identify_underflow_warns(exact2dof):
    svd = randla.full_svd(exact2dof.toeplitz(6).data)
    with pytest.warns(RuntimeWarning, match="underflow"):
        poles = ssi.identify(svd, 8, 1 / exact2dof.fs, 2, 6)
    assert len(poles) == 2


def test_identify_frame_order30(record20, analytic10):
    T = signal.toeplitz_from_record(record20, 189)
    svd = randla.full_svd(T.data)
    poles = ssi.identify(svd, 30, 1 / 200, 10, 189)
    for f in analytic10.f:
        assert min(abs(p.f - f) / f for p in poles) <= 0.005
    # RSVD at the advisory rank reproduces the same poles
    rpoles = ssi.identify(randla.rsvd(T.data, 512, 0), 30, 1 / 200, 10, 189)
    for f in analytic10.f:
        p = min(poles, key=lambda p: abs(p.f - f))
        q = min(rpoles, key=lambda q: abs(q.f - p.f))
        assert abs(q.f - p.f) / p.f <= 0.01
        assert stab.mac(p.shape, q.shape) >= 0.98


# --------------------------------------------------------------------------- sweeps


def test_sweep_orders(record20):
    T = signal.toeplitz_from_record(record20, 60)
    out = ssi.sweep(T, (2, 30, 2), "rsvd", seed=1)
    assert sorted(out) == list(range(2, 31, 2))
    with pytest.raises(ValueError):
        ssi.sweep(T, (3, 30, 2))
    with pytest.raises(ValueError):
        ssi.sweep(T, (2, 30, 2), "qr")


def test_sweep_rank_floor_and_override(exact2dof):
    T = exact2dof.toeplitz(40)  # side 80, advisory 30% is 24
    by_order = ssi.sweep(T, (2, 30, 2), "rsvd", seed=0)
    assert 30 in by_order
    with pytest.raises(ValueError):
        ssi.sweep(T, (2, 30, 2), "rsvd", rank=200)


def test_sweep_3d_two_lags_exact(exact2dof):
    corrs = exact2dof.correlations(12)
    plan = LagPlan(exact2dof.fs, None, (8, 12))
    grid = ssi.sweep_3d(corrs, plan, (4, 4, 2), "svd")
    a, b = grid.poles[(0, 0)], grid.poles[(1, 0)]
    assert len(a) == len(b) == 2
    for p, q in zip(a, b):
        assert abs(p.f - q.f) <= 1e-6 * p.f and abs(p.xi - q.xi) <= 1e-6 * p.xi
        assert (p.lag_index, q.lag_index) == (0, 1)
        assert grid.tau_of(p) == ssi.lag_of_step(8, exact2dof.fs)


def test_sweep_3d_grid_shape_and_jobs(record20):
    corrs = signal.correlations(record20, 255)
    plan = ssi.lag_grid(200, 5.319, 1.5, 10)
    g1 = ssi.sweep_3d(corrs, plan, (2, 30, 2), "rsvd", seed=5)
    assert set(g1.poles) <= {(t, o) for t in range(10) for o in range(15)}
    assert len(g1.poles) <= 150
    g2 = ssi.sweep_3d(corrs, plan, (2, 30, 2), "rsvd", seed=5, jobs=3)
    assert ssi.grid_to_dict(g1) == ssi.grid_to_dict(g2)


def test_single_lag_plan_is_2d(record20):
    corrs = signal.correlations(record20, 60)
    grid = ssi.sweep_3d(corrs, LagPlan.fixed(200, 60), (2, 20, 2), "svd")
    direct = ssi.sweep(signal.assemble_toeplitz(corrs), (2, 20, 2), "svd")
    assert grid.slice_lag(0).keys() == direct.keys()
    for n2, poles in direct.items():
        assert [p.f for p in grid.slice_lag(0)[n2]] == [p.f for p in poles]


def test_grid_json_roundtrip(exact2dof):
    corrs = exact2dof.correlations(10)
    grid = ssi.sweep_3d(corrs, LagPlan(exact2dof.fs, None, (6, 10)), (2, 4, 2), "svd")
    grid = stab.flag_stable_3d(stab.apply_hard_grid(grid))
    doc = json.loads(json.dumps(ssi.grid_to_dict(grid)))
    back = ssi.grid_from_dict(doc)
    assert ssi.grid_to_dict(back) == ssi.grid_to_dict(grid)
    for key in grid.poles:
        for p, q in zip(grid.poles[key], back.poles[key]):
            assert p.stability_flag == q.stability_flag and p.neighbor == q.neighbor
            np.testing.assert_allclose(p.shape, q.shape)


def test_lag_seed_independent():
    seeds = {ssi.lag_seed(0, t) for t in range(10)}
    assert len(seeds) == 10
    assert ssi.lag_seed(3, 2) == ssi.lag_seed(3, 2)
