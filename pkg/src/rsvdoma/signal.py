"""Acceleration records, preprocessing and output correlations.

A record holds ``N`` samples of ``l`` channels. The functions here take a
record to the block-Toeplitz matrix of lagged output correlations that the
subspace identification factorizes.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from datetime import datetime
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.fft as sfft
from scipy import signal as sps

__all__ = [
    "RecordFormatError",
    "TimeSeriesRecord",
    "CorrelationSequence",
    "BlockToeplitz",
    "load_record",
    "save_record",
    "detrend",
    "decimate",
    "correlations",
    "assemble_toeplitz",
    "toeplitz_from_record",
]

MAGIC = b"OMAR1"


class RecordFormatError(ValueError):
    """Raised when a record file cannot be parsed."""


@dataclass(frozen=True)
class TimeSeriesRecord:
    """Multichannel acceleration record.

    Parameters
    ----------
    samples : ndarray, shape (N, l)
        Accelerations, one row per time step.
    fs : float
        Sampling frequency in Hz.
    channel_labels : sequence of str
        One label per column.
    origin_timestamp : datetime, optional
        Calendar time of the first sample.
    """

    samples: np.ndarray
    fs: float
    channel_labels: tuple = ()
    origin_timestamp: Optional[datetime] = None

    def __post_init__(self):
        y = np.asarray(self.samples, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2:
            raise ValueError("samples must be a 2-D array (time x channels)")
        if y.shape[0] < 2 or y.shape[1] < 1:
            raise ValueError(f"record needs N >= 2 and l >= 1, got shape {y.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("record contains non-finite samples")
        if not self.fs > 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        labels = tuple(self.channel_labels) or tuple(f"ch{i + 1}" for i in range(y.shape[1]))
        if len(labels) != y.shape[1]:
            raise ValueError(f"{len(labels)} labels for {y.shape[1]} channels")
        object.__setattr__(self, "samples", y)
        object.__setattr__(self, "fs", float(self.fs))
        object.__setattr__(self, "channel_labels", labels)

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.fs


@dataclass(frozen=True)
class CorrelationSequence:
    """Output correlation matrices ``R_1 .. R_{2 j_b - 1}``.

    ``matrices[j - 1]`` holds ``R_j``.
    """

    matrices: np.ndarray
    j_b: int
    fs: float

    def __post_init__(self):
        R = np.asarray(self.matrices, dtype=float)
        if R.ndim != 3 or R.shape[1] != R.shape[2]:
            raise ValueError("matrices must have shape (2*j_b - 1, l, l)")
        if R.shape[0] != 2 * self.j_b - 1:
            raise ValueError(f"expected {2 * self.j_b - 1} matrices, got {R.shape[0]}")
        if not np.all(np.isfinite(R)):
            raise ValueError("correlation matrices must be finite")
        object.__setattr__(self, "matrices", R)

    @property
    def lags(self) -> range:
        return range(1, 2 * self.j_b)

    @property
    def n_channels(self) -> int:
        return self.matrices.shape[1]

    def __getitem__(self, j: int) -> np.ndarray:
        """``R_j`` for ``1 <= j <= 2 j_b - 1``."""
        if not 1 <= j <= 2 * self.j_b - 1:
            raise IndexError(f"lag {j} outside 1..{2 * self.j_b - 1}")
        return self.matrices[j - 1]

    def truncate(self, j_b: int) -> "CorrelationSequence":
        """Sub-sequence for a smaller time-lag step (lags are shared)."""
        if not 1 <= j_b <= self.j_b:
            raise ValueError(f"j_b={j_b} not in 1..{self.j_b}")
        return CorrelationSequence(self.matrices[: 2 * j_b - 1], j_b, self.fs)


@dataclass(frozen=True)
class BlockToeplitz:
    """Square block-Toeplitz matrix of side ``j_b * l``."""

    data: np.ndarray
    j_b: int
    l: int
    fs: float

    def __post_init__(self):
        side = self.j_b * self.l
        if self.data.shape != (side, side):
            raise ValueError(f"Toeplitz side must be {side}, got {self.data.shape}")

    @property
    def side(self) -> int:
        return self.data.shape[0]

    def block(self, i: int, p: int) -> np.ndarray:
        l = self.l
        return self.data[i * l:(i + 1) * l, p * l:(p + 1) * l]


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------


def _infer_format(path: Path) -> str:
    return "csv" if path.suffix.lower() in (".csv", ".txt") else "binary"


def load_record(path, format: Optional[str] = None) -> TimeSeriesRecord:
    """Read a record from CSV or the ``OMAR1`` binary format.

    Raises
    ------
    RecordFormatError
        On a malformed header, a non-numeric value or a row with the wrong
        number of channels. The message names the offending line or offset.
    """
    path = Path(path)
    format = format or _infer_format(path)
    if format == "csv":
        return _load_csv(path)
    if format == "binary":
        return _load_binary(path)
    raise ValueError(f"unknown record format {format!r}")


def save_record(rec: TimeSeriesRecord, path, format: Optional[str] = None) -> None:
    path = Path(path)
    format = format or _infer_format(path)
    if format == "csv":
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"fs={rec.fs!r}\n")
            fh.write(",".join(rec.channel_labels) + "\n")
            for row in rec.samples:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif format == "binary":
        head = [MAGIC, struct.pack("<IQd", rec.n_channels, rec.n_samples, rec.fs)]
        for lab in rec.channel_labels:
            b = lab.encode("utf-8")
            head.append(struct.pack("<I", len(b)) + b)
        with open(path, "wb") as fh:
            fh.write(b"".join(head))
            fh.write(np.ascontiguousarray(rec.samples, dtype="<f8").tobytes())
    else:
        raise ValueError(f"unknown record format {format!r}")


def _load_csv(path: Path) -> TimeSeriesRecord:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if len(lines) < 2:
        raise RecordFormatError(f"{path}: missing header lines")
    head = lines[0].strip()
    if not head.startswith("fs="):
        raise RecordFormatError(f"{path}:1: expected 'fs=<float>', got {head!r}")
    try:
        fs = float(head[3:])
    except ValueError:
        raise RecordFormatError(f"{path}:1: bad sampling frequency {head[3:]!r}") from None
    labels = [s.strip() for s in lines[1].split(",")]
    l = len(labels)
    rows = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != l:
            raise RecordFormatError(f"{path}:{lineno}: {len(parts)} values for {l} channels")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise RecordFormatError(f"{path}:{lineno}: non-numeric sample") from None
    if not rows:
        raise RecordFormatError(f"{path}: no samples")
    try:
        return TimeSeriesRecord(np.array(rows), fs, labels)
    except ValueError as exc:
        raise RecordFormatError(f"{path}: {exc}") from None


def _load_binary(path: Path) -> TimeSeriesRecord:
    buf = path.read_bytes()
    if buf[:5] != MAGIC:
        raise RecordFormatError(f"{path}: offset 0: bad magic {buf[:5]!r}")
    off = 5
    try:
        l, N, fs = struct.unpack_from("<IQd", buf, off)
        off += 20
        labels = []
        for _ in range(l):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            labels.append(buf[off:off + n].decode("utf-8"))
            off += n
    except (struct.error, UnicodeDecodeError) as exc:
        raise RecordFormatError(f"{path}: offset {off}: truncated header ({exc})") from None
    expected = N * l * 8
    if len(buf) - off != expected:
        raise RecordFormatError(
            f"{path}: offset {off}: expected {expected} sample bytes, found {len(buf) - off}"
        )
    y = np.frombuffer(buf, dtype="<f8", offset=off).reshape(N, l).astype(float)
    try:
        return TimeSeriesRecord(y, fs, labels)
    except ValueError as exc:
        raise RecordFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def detrend(rec: TimeSeriesRecord) -> TimeSeriesRecord:
    """Remove the least-squares linear trend of every channel."""
    return replace(rec, samples=sps.detrend(rec.samples, axis=0, type="linear"))


def decimate(rec: TimeSeriesRecord, target_fs: float, ripple_db: float = 0.05) -> TimeSeriesRecord:
    """Low-pass and downsample by an integer factor.

    An 8th-order Chebyshev type I filter with cut-off ``0.8 * target_fs / 2``
    is run forward and backward (zero phase) before keeping every q-th sample.
    """
    ratio = rec.fs / target_fs
    q = int(round(ratio))
    if q < 1 or abs(ratio - q) > 1e-9 * ratio:
        raise ValueError(f"fs={rec.fs} is not an integer multiple of target_fs={target_fs}")
    if q == 1:
        return rec
    sos = sps.cheby1(8, ripple_db, 0.8 * target_fs / 2, btype="low", fs=rec.fs, output="sos")
    y = sps.sosfiltfilt(sos, rec.samples, axis=0)
    n_out = int(np.floor(rec.n_samples * target_fs / rec.fs))
    return replace(rec, samples=y[: n_out * q: q], fs=float(target_fs))


# ---------------------------------------------------------------------------
# Correlations and Toeplitz
# ---------------------------------------------------------------------------


def _raw_lag_products(y: np.ndarray, max_lag: int) -> np.ndarray:
    """``S[j, a, b] = sum_h y[h + j, a] * y[h, b]`` for ``j = 0..max_lag`` via FFT."""
    N, l = y.shape
    nfft = sfft.next_fast_len(N + max_lag + 1, real=True)
    Yf = np.fft.rfft(y, n=nfft, axis=0)
    Yc = np.conj(Yf)
    out = np.empty((max_lag + 1, l, l))
    for a in range(l):
        out[:, a, :] = np.fft.irfft(Yf[:, a, None] * Yc, n=nfft, axis=0)[: max_lag + 1]
    return out


def correlations(rec: TimeSeriesRecord, j_b: int) -> CorrelationSequence:
    """Unbiased output correlations ``R_j``, ``j = 1 .. 2 j_b - 1``.

    ``R_j = 1/(N - j) * sum_{h=0}^{N-j-1} y_{h+j} y_h^T``.
    """
    j_b = int(j_b)
    if j_b < 1:
        raise ValueError("j_b must be a positive integer")
    N = rec.n_samples
    L = 2 * j_b - 1
    if N <= 2 * j_b:
        raise ValueError(f"record of {N} samples too short for j_b={j_b}")
    S = _raw_lag_products(rec.samples, L)[1:]
    S /= (N - np.arange(1, L + 1))[:, None, None]
    return CorrelationSequence(S, j_b, rec.fs)


def assemble_toeplitz(corrs: CorrelationSequence) -> BlockToeplitz:
    """Block ``(i, p)`` of the result is ``R_{j_b + i - p}``."""
    j_b, l = corrs.j_b, corrs.n_channels
    R = corrs.matrices
    T = np.empty((j_b * l, j_b * l))
    for i in range(j_b):
        for p in range(j_b):
            T[i * l:(i + 1) * l, p * l:(p + 1) * l] = R[j_b + i - p - 1]
    return BlockToeplitz(T, j_b, l, corrs.fs)


def toeplitz_from_record(rec: TimeSeriesRecord, j_b: int) -> BlockToeplitz:
    return assemble_toeplitz(correlations(rec, j_b))
