"""Shear-frame benchmark: exact modes and simulated ambient records."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg as sla

from .signal import TimeSeriesRecord

__all__ = [
    "ShearFrameSpec",
    "AnalyticModes",
    "build_matrices",
    "rayleigh_coefficients",
    "analytic_modes",
    "state_space",
    "simulate",
    "manifest",
]


@dataclass(frozen=True)
class ShearFrameSpec:
    """Damped shear-type frame with identical stories.

    Stiffness in N/m, mass in kg. Rayleigh damping gives ``xi_target`` at
    modes ``mode_a`` and ``mode_b`` (1-based). ``noise_std``, when set,
    replaces the SNR rule with an absolute measurement-noise level.
    """

    n: int = 10
    m: float = 100.0
    k: float = 5.0e6
    mode_a: int = 1
    mode_b: int = 4
    xi_target: float = 0.01
    fs: float = 200.0
    duration: float = 300.0
    snr_db: float = 20.0
    seed: int = 0
    output: str = "acceleration"
    force_std: float = 100.0
    burn_in: float = 10.0
    noise_std: Optional[float] = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (self.m > 0 and self.k > 0):
            raise ValueError("mass and stiffness must be positive")
        if not 0 <= self.xi_target < 1:
            raise ValueError("xi_target must lie in [0, 1)")
        if self.n > 1 and not 1 <= self.mode_a < self.mode_b <= self.n:
            raise ValueError(f"need 1 <= mode_a < mode_b <= n, got {self.mode_a}, {self.mode_b}")
        if not self.fs > 0:
            raise ValueError("fs must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.output not in ("acceleration", "velocity", "displacement"):
            raise ValueError(f"unknown output quantity {self.output!r}")


def _undamped(M, K):
    w2, phi = sla.eigh(K, M)
    return np.sqrt(w2), phi


def rayleigh_coefficients(w_a: float, w_b: float, xi: float) -> Tuple[float, float]:
    """``(a, b)`` so that ``C = a M + b K`` has damping ``xi`` at ``w_a`` and ``w_b``."""
    return 2 * xi * w_a * w_b / (w_a + w_b), 2 * xi / (w_a + w_b)


def build_matrices(spec: ShearFrameSpec):
    """Mass, stiffness and Rayleigh damping matrices ``(M, K, C)``."""
    n, k = spec.n, spec.k
    M = spec.m * np.eye(n)
    K = np.diag(np.full(n, 2 * k))
    K[-1, -1] = k
    if n > 1:
        K -= k * (np.eye(n, k=1) + np.eye(n, k=-1))
    if n == 1 or spec.xi_target == 0:
        return M, K, np.zeros((n, n))
    w, _ = _undamped(M, K)
    a, b = rayleigh_coefficients(w[spec.mode_a - 1], w[spec.mode_b - 1], spec.xi_target)
    return M, K, a * M + b * K


@dataclass(frozen=True)
class AnalyticModes:
    f: np.ndarray
    xi: np.ndarray
    shapes: np.ndarray  # columns, unit norm

    def __len__(self):
        return len(self.f)


def state_space(M, K, C):
    """Continuous ``(A_c, B_c)`` for state ``[q, q']`` and nodal force input."""
    n = M.shape[0]
    Minv = np.linalg.inv(M)
    Ac = np.block([[np.zeros((n, n)), np.eye(n)], [-Minv @ K, -Minv @ C]])
    Bc = np.vstack([np.zeros((n, n)), Minv])
    return Ac, Bc


def analytic_modes(M, K, C) -> AnalyticModes:
    """Exact frequencies (Hz), damping ratios and shapes, sorted by frequency."""
    n = M.shape[0]
    Ac, _ = state_space(M, K, C)
    lam, vec = np.linalg.eig(Ac)
    pos = lam.imag > 1e-9 * np.abs(lam)
    if pos.sum() < n:
        raise ValueError("overdamped mode encountered")
    lam, vec = lam[pos], vec[:n, pos]
    order = np.argsort(np.abs(lam))
    lam, vec = lam[order], vec[:, order]
    f = np.abs(lam) / (2 * np.pi)
    xi = -lam.real / np.abs(lam)
    shapes = vec / np.linalg.norm(vec, axis=0)
    # rotate so the largest component is real positive
    idx = np.argmax(np.abs(shapes), axis=0)
    piv = shapes[idx, np.arange(n)]
    shapes = shapes * (np.abs(piv) / piv)
    return AnalyticModes(f, xi, shapes)


def _discretize(Ac, Bc, dt):
    ns, ni = Bc.shape
    big = np.zeros((ns + ni, ns + ni))
    big[:ns, :ns] = Ac
    big[:ns, ns:] = Bc
    E = sla.expm(big * dt)
    return E[:ns, :ns], E[:ns, ns:]


def _output_matrix(M, K, C, output: str):
    n = M.shape[0]
    if output == "displacement":
        return np.hstack([np.eye(n), np.zeros((n, n))])
    if output == "velocity":
        return np.hstack([np.zeros((n, n)), np.eye(n)])
    Minv = np.linalg.inv(M)
    return np.hstack([-Minv @ K, -Minv @ C])


def simulate(spec: ShearFrameSpec) -> TimeSeriesRecord:
    """Ambient response of every story under white-noise nodal forces.

    Zero-order-hold discretization at ``1/fs``; Gaussian measurement noise is
    added per channel at ``snr_db`` relative to that channel's signal power.
    The first ``burn_in`` seconds are dropped.
    """
    M, K, C = build_matrices(spec)
    Ac, Bc = state_space(M, K, C)
    dt = 1.0 / spec.fs
    Ad, Bd = _discretize(Ac, Bc, dt)
    Cc = _output_matrix(M, K, C, spec.output)
    n_keep = int(round(spec.duration * spec.fs))
    n_burn = int(round(spec.burn_in * spec.fs))
    n_tot = n_keep + n_burn
    rng = np.random.Generator(np.random.Philox(spec.seed))
    W = rng.standard_normal((n_tot, spec.n)) * spec.force_std @ Bd.T
    X = np.empty((n_tot, Ad.shape[0]))
    x = np.zeros(Ad.shape[0])
    for h in range(n_tot):
        X[h] = x
        x = Ad @ x + W[h]
    Y = X[n_burn:] @ Cc.T
    if spec.noise_std is not None:
        sd = np.full(spec.n, float(spec.noise_std))
    else:
        power = np.mean(Y ** 2, axis=0)
        sd = np.sqrt(power / 10 ** (spec.snr_db / 10))
    Y = Y + rng.standard_normal(Y.shape) * sd
    return TimeSeriesRecord(Y, spec.fs, tuple(f"dof{i + 1}" for i in range(spec.n)))


def manifest(spec: ShearFrameSpec) -> dict:
    """Frame settings plus the exact modal oracle, JSON-ready."""
    modes = analytic_modes(*build_matrices(spec))
    return {
        "spec": asdict(spec),
        "analytic": {
            "f_hz": modes.f.tolist(),
            "xi": modes.xi.tolist(),
            "shapes_re": modes.shapes.real.T.tolist(),
            "shapes_im": modes.shapes.imag.T.tolist(),
        },
    }
