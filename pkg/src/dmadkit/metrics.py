"""Biometric error metrics with exact threshold-sweep semantics.

Scores follow the convention "higher means more likely morphed". The step
function H is strict: H(x) = 1 iff x > 0, so a score exactly at the
threshold counts as *not* flagged. Consequently

    BPCER(tau) = (1/N) * #{bona fide scores  > tau}
    APCER(tau) = (1/M) * #{morph scores     <= tau}

Both are step functions changing only at observed scores, so every sweep
here uses the grid of distinct observed scores plus -inf/+inf sentinels.

Operating points B_x are the lowest BPCER subject to APCER <= x, reported
at x in {0.1, 0.05, 0.01}; the weighted average error (WAE) combines
[EER, B_0.1, B_0.05, B_0.01] with weights [0.3, 0.1, 0.2, 0.4].
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WAE_WEIGHTS = (0.3, 0.1, 0.2, 0.4)
OPERATING_POINTS = (0.1, 0.05, 0.01)


class MetricsError(Exception):
    """Raised for invalid metric inputs."""


@dataclass(frozen=True)
class ScoreSet:
    """Bona fide and morph detection scores for one evaluation."""

    bona_fide: np.ndarray
    morph: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bona_fide, dtype=np.float64)
        m = np.asarray(self.morph, dtype=np.float64)
        if b.size == 0 or m.size == 0:
            raise MetricsError("score set needs at least one score per side")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(m))):
            raise MetricsError("scores must be finite")
        object.__setattr__(self, "bona_fide", b)
        object.__setattr__(self, "morph", m)


def bpcer(bona_fide_scores, tau: float) -> float:
    """Fraction of bona fide scores strictly above the threshold."""
    b = np.asarray(bona_fide_scores, dtype=np.float64)
    if b.size == 0:
        raise MetricsError("empty bona fide score list")
    return float(np.count_nonzero(b > tau) / b.size)


def apcer(morph_scores, tau: float) -> float:
    """Fraction of morph scores not strictly above the threshold."""
    m = np.asarray(morph_scores, dtype=np.float64)
    if m.size == 0:
        raise MetricsError("empty morph score list")
    return float(np.count_nonzero(m <= tau) / m.size)


def threshold_grid(scores: ScoreSet) -> np.ndarray:
    """All distinct observed scores plus -inf/+inf sentinels, ascending."""
    uniq = np.unique(np.concatenate([scores.bona_fide, scores.morph]))
    return np.concatenate([[-np.inf], uniq, [np.inf]])


def _sweep(scores: ScoreSet, taus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (BPCER, APCER) at each threshold."""
    b = np.sort(scores.bona_fide)
    m = np.sort(scores.morph)
    n, k = b.size, m.size
    bp = (n - np.searchsorted(b, taus, side="right")) / n
    ap = np.searchsorted(m, taus, side="right") / k
    return bp, ap


def eer(scores: ScoreSet, interpolated: bool = False) -> float:
    """Error rate where the two error curves cross.

    On the discrete threshold grid exact equality may not occur; the default
    returns the midpoint of BPCER and APCER at the threshold minimizing
    |BPCER - APCER| (ties resolved toward the lower threshold). With
    ``interpolated=True`` the crossing of the linearly interpolated curves
    is returned instead.
    """
    taus = threshold_grid(scores)
    bp, ap = _sweep(scores, taus)
    gap = np.abs(bp - ap)
    i = int(np.argmin(gap))  # first minimum == lowest threshold
    if not interpolated:
        return float((bp[i] + ap[i]) / 2.0)
    diff = bp - ap  # non-increasing minus non-decreasing: non-increasing
    j = int(np.searchsorted(-diff, 0.0, side="left"))
    if j == 0:
        return float((bp[0] + ap[0]) / 2.0)
    if j >= taus.size:
        return float((bp[-1] + ap[-1]) / 2.0)
    d0, d1 = diff[j - 1], diff[j]
    if d0 == d1:
        return float((bp[j] + ap[j]) / 2.0)
    t = d0 / (d0 - d1)
    return float((1 - t) * (bp[j - 1] + ap[j - 1]) / 2.0 + t * (bp[j] + ap[j]) / 2.0)


def bpcer_at_apcer(scores: ScoreSet, x: float) -> float:
    """Lowest BPCER over thresholds where APCER <= x; 1.0 if unattainable."""
    if not 0.0 < x < 1.0:
        raise MetricsError(f"operating point must be in (0, 1), got {x}")
    taus = threshold_grid(scores)
    bp, ap = _sweep(scores, taus)
    feasible = bp[ap <= x]
    if feasible.size == 0:
        return 1.0
    return float(feasible.min())


def wae(errors) -> float:
    """Weighted average of [EER, B_0.1, B_0.05, B_0.01]."""
    vals = np.asarray(errors, dtype=np.float64)
    if vals.shape != (4,):
        raise MetricsError("wae expects exactly four error values")
    if np.any(vals < 0.0) or np.any(vals > 1.0):
        raise MetricsError("error values must lie in [0, 1]")
    return float(np.dot(np.asarray(WAE_WEIGHTS), vals))


@dataclass(frozen=True)
class ErrorSummary:
    eer: float
    b_010: float
    b_005: float
    b_001: float
    wae: float

    @classmethod
    def from_scores(cls, scores: ScoreSet) -> "ErrorSummary":
        e = eer(scores)
        b10, b05, b01 = (bpcer_at_apcer(scores, x) for x in OPERATING_POINTS)
        return cls(eer=e, b_010=b10, b_005=b05, b_001=b01,
                   wae=wae([e, b10, b05, b01]))

    def as_dict(self) -> dict:
        return {"eer": self.eer, "b_010": self.b_010, "b_005": self.b_005,
                "b_001": self.b_001, "wae": self.wae}


@dataclass(frozen=True)
class DETCurve:
    """(APCER, BPCER) pairs over the threshold sweep, sorted by APCER."""

    points: tuple[tuple[float, float], ...]

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        arr = np.asarray(self.points, dtype=np.float64)
        return arr[:, 0], arr[:, 1]


def det_curve(scores: ScoreSet) -> DETCurve:
    """Trade-off curve at every distinct threshold, duplicates collapsed."""
    taus = threshold_grid(scores)
    bp, ap = _sweep(scores, taus)
    points: list[tuple[float, float]] = []
    for a, b in zip(ap, bp):
        pt = (float(a), float(b))
        if not points or points[-1] != pt:
            points.append(pt)
    return DETCurve(points=tuple(points))


def load_score_set(path: str | Path) -> ScoreSet:
    """Read scores from a CSV with at least ``score`` and ``is_morph`` columns."""
    path = Path(path)
    bona, morph = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or \
                not {"score", "is_morph"} <= set(reader.fieldnames):
            raise MetricsError(f"{path}: need columns score, is_morph")
        for i, row in enumerate(reader):
            try:
                score = float(row["score"])
            except ValueError:
                raise MetricsError(f"{path}:{i + 2}: bad score {row['score']!r}") from None
            flag = str(row["is_morph"]).strip().lower()
            if flag in ("1", "true"):
                morph.append(score)
            elif flag in ("0", "false"):
                bona.append(score)
            else:
                raise MetricsError(f"{path}:{i + 2}: bad is_morph {row['is_morph']!r}")
    return ScoreSet(bona_fide=np.asarray(bona), morph=np.asarray(morph))
