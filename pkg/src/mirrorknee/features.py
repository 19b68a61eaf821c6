"""Gait feature extraction and tracking-error state."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import MalformedTrajectory
from .gait import PHASES, GaitFeatures, GaitPhase, Trajectory


@dataclass(frozen=True)
class FeatureExtractorConfig:
    window: int = 10
    threshold: float = 1.5
    duration_threshold: float = 0.02  # fraction of the target cycle duration
    cadence: int = 1
    smoothing_width: int = 5
    prominence: float = 1.0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.threshold < 0 or self.duration_threshold < 0:
            raise ValueError("thresholds must be non-negative")
        if self.cadence < 1:
            raise ValueError("cadence must be >= 1")
        if self.smoothing_width < 1 or self.smoothing_width % 2 == 0:
            raise ValueError("smoothing_width must be a positive odd integer")
        if self.prominence < 0:
            raise ValueError("prominence must be non-negative")


@dataclass(frozen=True)
class TrackingState:
    """Peak error (deg) and duration error (s) of one phase."""

    dP: float
    dD: float
    phase: GaitPhase
    cycle_duration: float

    @property
    def x(self) -> np.ndarray:
        return np.array([self.dP, self.dD])

    @property
    def dD_frac(self) -> float:
        return self.dD / self.cycle_duration

    @property
    def dD_pct(self) -> float:
        return 100.0 * self.dD_frac


def moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Centered moving average; the window shrinks symmetrically at the ends."""
    x = np.asarray(x, dtype=float)
    if width == 1 or x.size == 0:
        return x.copy()
    half = width // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    i = np.arange(x.size)
    h = np.minimum(half, np.minimum(i, x.size - 1 - i))
    return (c[i + h + 1] - c[i - h]) / (2 * h + 1)


def detect_extrema(x: np.ndarray, prominence: float) -> list[tuple[int, str]]:
    """Alternating local extrema that each stand at least ``prominence`` clear.

    Returns ``(index, "max" | "min")`` pairs. A turn is confirmed once the
    signal has retreated more than ``prominence`` from the running extreme;
    extrema sitting on the first or last sample are discarded since the true
    turning point may lie outside the record.
    """
    x = np.asarray(x, dtype=float)
    out: list[tuple[int, str]] = []
    if x.size < 3:
        return out
    direction = 0
    imax = imin = 0
    for i in range(1, x.size):
        v = x[i]
        if v > x[imax]:
            imax = i
        if v < x[imin]:
            imin = i
        falling = x[imax] - v > prominence
        rising = v - x[imin] > prominence
        if direction == 1 and falling:
            out.append((imax, "max"))
            direction, imin = -1, i
        elif direction == -1 and rising:
            out.append((imin, "min"))
            direction, imax = 1, i
        elif direction == 0 and (rising or falling):
            if rising:
                out.append((imin, "min"))
                direction, imax = 1, i
            else:
                out.append((imax, "max"))
                direction, imin = -1, i
    last = x.size - 1
    return [(i, k) for i, k in out if 0 < i < last]


def _extract_annotated(traj: Trajectory, side: str) -> GaitFeatures:
    peaks, durs = [], []
    for p in PHASES:
        s, e = traj.phase_bounds(p)
        seg = traj.theta[s : e + 1]
        peaks.append(float(seg.max() if p.is_flexion else seg.min()))
        durs.append((e - s) * traj.dt)
    return GaitFeatures(tuple(peaks), tuple(durs), side=side)


def _refine(x: np.ndarray, i: int, kind: str, half: int) -> int:
    # smoothing shifts an asymmetric turn; take the raw extremum nearby
    lo, hi = max(i - half, 0), min(i + half + 1, x.size)
    seg = x[lo:hi]
    return lo + int(seg.argmax() if kind == "max" else seg.argmin())


def _extract_raw(traj: Trajectory, side: str, width: int, prominence: float) -> GaitFeatures:
    smooth = moving_average(traj.theta, width)
    ext = detect_extrema(smooth, prominence)
    kinds = [k for _, k in ext]
    want = ["min", "max", "min", "max", "min"]
    for j in range(len(ext) - 4):
        if kinds[j : j + 5] != want:
            continue
        idx = [i for i, _ in ext[j : j + 5]]
        # stance peak precedes the larger swing peak
        if smooth[idx[3]] <= smooth[idx[1]]:
            continue
        idx = [_refine(traj.theta, i, k, width // 2) for i, k in zip(idx, want)]
        peaks = [float(traj.theta[i]) for i in idx[1:]]
        durs = [(b - a) * traj.dt for a, b in zip(idx, idx[1:])]
        return GaitFeatures(tuple(peaks), tuple(durs), side=side)
    raise MalformedTrajectory(
        f"no complete cycle (need 2 maxima and 2 minima in order), found {kinds}"
    )


def extract_features(
    traj: Trajectory,
    side: str | None = None,
    cfg: FeatureExtractorConfig | None = None,
) -> GaitFeatures:
    """Per-phase peak angle and duration of one gait cycle.

    Annotated trajectories use their phase boundaries directly: the peak is
    the max (flexion) or min (extension) over the phase's samples including
    both boundary samples, and the duration is the sample count times dt.

    Raw trajectories are smoothed, scanned for alternating extrema, and the
    first trough-peak-trough-peak-trough run whose second peak is the larger
    one is taken as the cycle. Each detected index is then moved to the raw
    extremum within half the smoothing width, where the peak is read.
    """
    cfg = cfg or FeatureExtractorConfig()
    if traj.annotated:
        return _extract_annotated(traj, side or "prosthesis")
    return _extract_raw(traj, side or "intact", cfg.smoothing_width, cfg.prominence)


def average_features(items: Sequence[GaitFeatures]) -> GaitFeatures:
    if not items:
        raise ValueError("nothing to average")
    peaks = np.mean([f.peak for f in items], axis=0)
    durs = np.mean([f.duration for f in items], axis=0)
    return GaitFeatures(tuple(peaks), tuple(durs), side=items[0].side)


def smooth_target(history: Sequence[float], window: int = 10) -> float:
    """Mean of the most recent ``min(window, len(history))`` values."""
    if len(history) == 0:
        raise ValueError("history is empty")
    tail = list(history)[-window:]
    return float(np.mean(tail))


def threshold_update(current_target: float, candidate: float, threshold: float) -> float:
    """Accept ``candidate`` only if it moved more than ``threshold`` away."""
    if abs(candidate - current_target) > threshold:
        return candidate
    return current_target


class TargetTracker:
    """Smoothed, thresholded target features for one side of one trial."""

    def __init__(self, cfg: FeatureExtractorConfig | None = None):
        self.cfg = cfg or FeatureExtractorConfig()
        self._peaks = [deque(maxlen=self.cfg.window) for _ in PHASES]
        self._durs = [deque(maxlen=self.cfg.window) for _ in PHASES]
        self.target: GaitFeatures | None = None

    def update(self, observed: GaitFeatures) -> GaitFeatures:
        for i in range(4):
            self._peaks[i].append(observed.peak[i])
            self._durs[i].append(observed.duration[i])
        cand_p = [smooth_target(h, self.cfg.window) for h in self._peaks]
        cand_d = [smooth_target(h, self.cfg.window) for h in self._durs]
        if self.target is None:
            self.target = GaitFeatures(tuple(cand_p), tuple(cand_d), side=observed.side)
            return self.target
        dthr = self.cfg.duration_threshold * self.target.cycle_duration
        peaks = [threshold_update(c, n, self.cfg.threshold) for c, n in zip(self.target.peak, cand_p)]
        durs = [threshold_update(c, n, dthr) for c, n in zip(self.target.duration, cand_d)]
        self.target = GaitFeatures(tuple(peaks), tuple(durs), side=observed.side)
        return self.target


def compute_state(prosthesis: GaitFeatures, intact_target: GaitFeatures, phase: GaitPhase) -> TrackingState:
    """Signed prosthesis-minus-target errors for ``phase``.

    The duration error's percentage form is taken against the target's
    cycle duration.
    """
    i = int(phase)
    return TrackingState(
        dP=prosthesis.peak[i] - intact_target.peak[i],
        dD=prosthesis.duration[i] - intact_target.duration[i],
        phase=phase,
        cycle_duration=intact_target.cycle_duration,
    )
