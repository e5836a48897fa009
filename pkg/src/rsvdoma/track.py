"""Modal tracking across monitoring sessions."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .stab import mac

__all__ = [
    "ReferenceMode",
    "ReferenceModeSet",
    "Match",
    "SessionReport",
    "TrackedHistory",
    "track_session",
    "success_ratio",
    "write_tracking_csv",
    "write_summary_csv",
]


@dataclass(frozen=True)
class ReferenceMode:
    f: float
    xi: float
    shape: np.ndarray = field(repr=False)
    label: str = ""


class ReferenceModeSet:
    """Reference modes sorted by strictly increasing frequency, unit-norm shapes."""

    def __init__(self, modes: Sequence[ReferenceMode]):
        modes = list(modes)
        fs = [m.f for m in modes]
        if any(b <= a for a, b in zip(fs, fs[1:])):
            raise ValueError("reference frequencies must be strictly increasing")
        self.modes = tuple(
            ReferenceMode(m.f, m.xi, np.asarray(m.shape, complex) / np.linalg.norm(m.shape),
                          m.label or f"mode{i + 1}")
            for i, m in enumerate(modes)
        )

    def __len__(self):
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    @classmethod
    def from_modes(cls, modes) -> "ReferenceModeSet":
        """Build from any objects with ``f``, ``xi`` and ``shape`` (e.g. clusters)."""
        ms = sorted(modes, key=lambda m: m.f)
        return cls([ReferenceMode(m.f, m.xi, m.shape, f"mode{i + 1}") for i, m in enumerate(ms)])


@dataclass(frozen=True)
class Match:
    f: float
    xi: float
    mac: float
    candidate: int  # index into the session's mode list


@dataclass(frozen=True)
class SessionReport:
    """Per reference mode, the matched candidate or ``None`` for a miss."""

    session: str
    matches: Tuple[Optional[Match], ...]

    @property
    def n_matched(self) -> int:
        return sum(m is not None for m in self.matches)


def track_session(ref: ReferenceModeSet, found: Sequence, df_max: float = 0.05,
                  macd_max: float = 0.15, session: str = "",
                  dxi_max: Optional[float] = None) -> SessionReport:
    """Greedy one-to-one matching of session modes to the reference set.

    A pair is admissible when ``|f - f_ref| / max(f, f_ref) <= df_max`` and
    ``1 - MAC <= macd_max`` (and, if ``dxi_max`` is given, the relative
    damping difference w.r.t. the reference is within it). Admissible pairs
    are assigned in ascending order of relative frequency distance plus
    ``1 - MAC``.
    """
    pairs = []
    for i, r in enumerate(ref.modes):
        for j, c in enumerate(found):
            df = abs(c.f - r.f) / max(c.f, r.f)
            m = mac(r.shape, c.shape)
            if dxi_max is not None and abs(c.xi - r.xi) > dxi_max * abs(r.xi):
                continue
            if df <= df_max and 1.0 - m <= macd_max:
                pairs.append((df + (1.0 - m), i, j, m))
    pairs.sort()
    out: List[Optional[Match]] = [None] * len(ref)
    used = set()
    for _, i, j, m in pairs:
        if out[i] is None and j not in used:
            out[i] = Match(found[j].f, found[j].xi, m, j)
            used.add(j)
    return SessionReport(session, tuple(out))


class TrackedHistory:
    """Time histories of every reference mode over a campaign."""

    def __init__(self, ref: ReferenceModeSet, reports: Sequence[SessionReport] = ()):
        self.ref = ref
        self.reports: List[SessionReport] = []
        for r in reports:
            self.add(r)

    def add(self, report: SessionReport) -> None:
        if len(report.matches) != len(self.ref):
            raise ValueError("report does not match the reference set size")
        self.reports.append(report)

    @property
    def n_sessions(self) -> int:
        return len(self.reports)

    def counts(self) -> np.ndarray:
        return np.array([sum(r.matches[i] is not None for r in self.reports)
                         for i in range(len(self.ref))], dtype=int)

    def series(self, i: int) -> List[Tuple[str, Optional[Match]]]:
        return [(r.session, r.matches[i]) for r in self.reports]


def success_ratio(history: TrackedHistory) -> np.ndarray:
    """Percentage of sessions in which each reference mode was matched."""
    if history.n_sessions < 1:
        raise ValueError("success ratio needs at least one session")
    return 100.0 * history.counts() / history.n_sessions


def write_tracking_csv(history: TrackedHistory, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["session", "mode", "f_ref", "matched", "f", "xi", "mac"])
        for rep in history.reports:
            for r, m in zip(history.ref.modes, rep.matches):
                if m is None:
                    w.writerow([rep.session, r.label, r.f, 0, "", "", ""])
                else:
                    w.writerow([rep.session, r.label, r.f, 1, m.f, m.xi, m.mac])


def write_summary_csv(history: TrackedHistory, path) -> None:
    ratios = success_ratio(history)
    counts = history.counts()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "f_ref", "xi_ref", "matches", "sessions", "success_ratio"])
        for r, c, s in zip(history.ref.modes, counts, ratios):
            w.writerow([r.label, r.f, r.xi, int(c), history.n_sessions, round(float(s), 2)])
