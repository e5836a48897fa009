"""Shared fixtures: analytic state-space oracle and cached synthetic records."""
from __future__ import annotations

import functools

import numpy as np
import pytest
import scipy.linalg as sla

from rsvdoma import signal, synth

# exact modal properties of the default 10-storey frame, rounded to 3 decimals
FRAME_F = np.array([5.319, 15.838, 26.004, 35.588, 44.378, 52.176, 58.809, 64.128, 68.014, 70.381])
FRAME_XI_PCT = np.array([1.000, 0.679, 0.814, 1.000, 1.189, 1.364, 1.516, 1.640, 1.731, 1.786])


class Exact2Dof:
    """Noise-free correlations ``R_j = C A^(j-1) G`` of a 2-storey frame."""

    def __init__(self, fs=50.0, seed=7):
        spec = synth.ShearFrameSpec(n=2, k=2.0e4, m=10.0, mode_a=1, mode_b=2, xi_target=0.02)
        M, K, C = synth.build_matrices(spec)
        self.modes = synth.analytic_modes(M, K, C)
        Ac, _ = synth.state_space(M, K, C)
        self.fs = fs
        self.A = sla.expm(Ac / fs)
        self.C = np.hstack([np.eye(2), np.zeros((2, 2))])
        rng = np.random.default_rng(seed)
        self.G = rng.standard_normal((4, 2))

    def correlations(self, j_b):
        mats = []
        Aj = np.eye(4)
        for _ in range(2 * j_b - 1):
            mats.append(self.C @ Aj @ self.G)
            Aj = Aj @ self.A
        return signal.CorrelationSequence(np.array(mats), j_b, self.fs)

    def toeplitz(self, j_b):
        return signal.assemble_toeplitz(self.correlations(j_b))


@pytest.fixture(scope="session")
def exact2dof():
    return Exact2Dof()


@functools.lru_cache(maxsize=None)
def frame_record(snr_db=20.0, seed=0, duration=300.0):
    return synth.simulate(synth.ShearFrameSpec(snr_db=snr_db, seed=seed, duration=duration))


@pytest.fixture(scope="session")
def analytic10():
    return synth.analytic_modes(*synth.build_matrices(synth.ShearFrameSpec()))


@pytest.fixture(scope="session")
def record20():
    return frame_record(20.0, 0)


def make_pole(f=5.0, xi=0.01, shape=(1.0, 0.5), order=2, j_b=10, lag_index=0, mpc=None, mpd=None):
    """Pole with indicators computed from ``shape`` unless given."""
    from rsvdoma import ssi, stab

    v = ssi.normalize_shape(np.asarray(shape, dtype=complex))
    return ssi.Pole(f, xi, v, order, j_b,
                    stab.mpc(v) if mpc is None else mpc,
                    stab.mpd(v) if mpd is None else mpd,
                    lag_index=lag_index)


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
