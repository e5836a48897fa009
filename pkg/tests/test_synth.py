import time

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.signal as sps

from rsvdoma import synth
from rsvdoma.synth import ShearFrameSpec
from conftest import FRAME_F, FRAME_XI_PCT


def test_frame_frequencies_and_damping(analytic10):
    np.testing.assert_allclose(analytic10.f, FRAME_F, atol=5e-4)
    np.testing.assert_allclose(100 * analytic10.xi, FRAME_XI_PCT, atol=5e-4)


def test_matrices_structure():
    M, K, C = synth.build_matrices(ShearFrameSpec(n=3, k=2.0, m=1.0, mode_b=3))
    np.testing.assert_array_equal(M, np.eye(3))
    np.testing.assert_array_equal(K, [[4, -2, 0], [-2, 4, -2], [0, -2, 2]])
    np.testing.assert_allclose(C, C.T)


def test_rayleigh_coefficients():
    w1, w4 = 2 * np.pi * 5.319, 2 * np.pi * 35.588
    a, b = synth.rayleigh_coefficients(w1, w4, 0.01)
    assert a == pytest.approx(0.5815, abs=5e-4)
    assert b == pytest.approx(7.781e-5, rel=1e-3)
    w2 = 2 * np.pi * 15.838
    assert 100 * (a / (2 * w2) + b * w2 / 2) == pytest.approx(0.679, abs=5e-4)
    M, K, C = synth.build_matrices(ShearFrameSpec())
    np.testing.assert_allclose(C, a * M + b * K, rtol=2e-3)


def test_single_storey():
    spec = ShearFrameSpec(n=1, k=4.0e4, m=10.0)
    M, K, C = synth.build_matrices(spec)
    assert K.tolist() == [[4.0e4]] and not C.any()
    modes = synth.analytic_modes(M, K, C)
    assert modes.f[0] == pytest.approx(np.sqrt(4.0e3) / (2 * np.pi))
    assert modes.xi[0] == pytest.approx(0, abs=1e-12)


def test_spec_validation():
    for bad in (dict(n=0), dict(m=0), dict(k=-1), dict(xi_target=1.0), dict(duration=0), dict(output="jerk"),
                dict(n=3), dict(mode_a=4, mode_b=2)):
        with pytest.raises(ValueError):
            ShearFrameSpec(**bad)


def test_discretization_eigenvalues():
    M, K, C = synth.build_matrices(ShearFrameSpec())
    Ac, Bc = synth.state_space(M, K, C)
    dt = 1 / 200
    Ad = sla.expm(Ac * dt)
    lam = np.linalg.eigvals(Ac)
    mu = np.linalg.eigvals(Ad)
    expected = np.exp(lam * dt)
    for m in mu:
        assert np.min(np.abs(expected - m)) <= 1e-10


def _clean_and_noisy(snr, seed=0, duration=120):
    # the force draws precede the noise draws, so a huge SNR gives the clean response
    clean = synth.simulate(ShearFrameSpec(snr_db=300, seed=seed, duration=duration)).samples
    noisy = synth.simulate(ShearFrameSpec(snr_db=snr, seed=seed, duration=duration)).samples
    return clean, noisy


@pytest.mark.parametrize("snr", [10, 15, 20, 25])
def test_per_channel_snr(snr):
    clean, noisy = _clean_and_noisy(snr)
    noise = noisy - clean
    measured = 10 * np.log10(np.mean(clean ** 2, axis=0) / np.mean(noise ** 2, axis=0))
    assert np.all(np.abs(measured - snr) <= 0.5)


def _analytic_roof_psd(f):
    M, K, C = synth.build_matrices(ShearFrameSpec())
    Ac, Bc = synth.state_space(M, K, C)
    Cy = np.hstack([-np.linalg.solve(M, K), -np.linalg.solve(M, C)])
    out = []
    for fi in f:
        H = Cy[9] @ np.linalg.solve(2j * np.pi * fi * np.eye(20) - Ac, Bc)
        out.append(np.sum(np.abs(H) ** 2))
    return np.array(out)


def _peak_near(f, P, f0, half=1.0):
    peaks, _ = sps.find_peaks(P)
    near = peaks[np.abs(f[peaks] - f0) <= half]
    return f[near[np.argmax(P[near])]] if near.size else None


def test_analytic_roof_psd_resolves_nine_modes():
    # modes 9 and 10 are 2.4 Hz apart with ~1.2 Hz half-power bandwidths and
    # merge into one roof peak; the others sit within 0.2 Hz of the modes
    f = np.arange(0.5, 99.5, 0.002)
    P = _analytic_roof_psd(f)
    peaks, _ = sps.find_peaks(P)
    assert len(peaks) == 9
    for f0 in FRAME_F[:9]:
        assert abs(_peak_near(f, P, f0) - f0) <= 0.2


def test_record_psd_tracks_analytic_psd():
    rec = synth.simulate(ShearFrameSpec(snr_db=20, seed=0))
    f, P = sps.welch(rec.samples[:, 9], fs=rec.fs, nperseg=4096)
    band = (f > 1) & (f < 90)
    exact = _analytic_roof_psd(f[band])
    # same shape up to the unknown force scale and the flat noise floor
    ratio = np.median(P[band] / exact)
    rel = np.abs(np.log(P[band] / (ratio * exact)))
    assert np.median(rel) < 0.5
    for f0 in FRAME_F[:5]:
        assert abs(_peak_near(f, P, f0) - f0) <= 0.2


@pytest.mark.xfail(strict=True, reason="the roof PSD has no separate peak at mode 10 and the "
                   "estimated peaks of the broad upper modes wander by up to ~0.9 Hz")
def test_record_psd_ten_peaks():
    rec = synth.simulate(ShearFrameSpec(snr_db=20, seed=0))
    f, P = sps.welch(rec.samples[:, 9], fs=rec.fs, nperseg=4096)
    for f0 in FRAME_F:
        assert abs(_peak_near(f, P, f0) - f0) <= 0.2


def test_zero_drive_is_pure_noise():
    rec = synth.simulate(ShearFrameSpec(force_std=0.0, noise_std=1.0, duration=60, seed=2))
    ref = np.random.Generator(np.random.Philox(2))
    ref.standard_normal((int(70 * 200), 10))  # the unused force draws
    np.testing.assert_array_equal(rec.samples, ref.standard_normal((12000, 10)))
    silent = synth.simulate(ShearFrameSpec(force_std=0.0, duration=10))
    assert not silent.samples.any()


def test_simulate_layout_and_determinism():
    a = synth.simulate(ShearFrameSpec(duration=5, seed=4))
    b = synth.simulate(ShearFrameSpec(duration=5, seed=4))
    assert a.samples.shape == (1000, 10) and a.fs == 200
    assert a.channel_labels[0] == "dof1"
    assert a.samples.tobytes() == b.samples.tobytes()
    c = synth.simulate(ShearFrameSpec(duration=5, seed=5))
    assert not np.array_equal(a.samples, c.samples)


def test_manifest_contains_oracle():
    doc = synth.manifest(ShearFrameSpec(duration=1))
    np.testing.assert_allclose(doc["analytic"]["f_hz"], FRAME_F, atol=5e-4)
    assert doc["spec"]["snr_db"] == 20.0


def test_oracle_is_fast():
    t0 = time.perf_counter()
    synth.analytic_modes(*synth.build_matrices(ShearFrameSpec()))
    assert time.perf_counter() - t0 < 1.0
