"""Gait phases, impedance parameters and the finite-state-machine torque law.

Angles are in degrees, time in seconds, stiffness in N*m/deg and damping in
N*m*s/deg throughout the package.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterator, Mapping

import numpy as np


class GaitPhase(enum.IntEnum):
    STF = 0  # stance flexion
    STE = 1  # stance extension
    SWF = 2  # swing flexion
    SWE = 3  # swing extension

    @property
    def is_flexion(self) -> bool:
        return self in (GaitPhase.STF, GaitPhase.SWF)


PHASES: tuple[GaitPhase, ...] = tuple(GaitPhase)


def next_phase(p: GaitPhase) -> GaitPhase:
    """Successor of ``p`` in the fixed cycle STF -> STE -> SWF -> SWE -> STF."""
    return GaitPhase((int(p) + 1) % 4)


@dataclass(frozen=True)
class ImpedanceTriple:
    K: float
    B: float
    theta_e: float

    def as_array(self) -> np.ndarray:
        return np.array([self.K, self.B, self.theta_e], dtype=float)

    @classmethod
    def from_array(cls, a) -> "ImpedanceTriple":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class Action:
    dK: float = 0.0
    dB: float = 0.0
    dtheta_e: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dK, self.dB, self.dtheta_e], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Action":
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def __neg__(self) -> "Action":
        return Action(-self.dK, -self.dB, -self.dtheta_e)


@dataclass(frozen=True)
class KneeState:
    theta: float
    omega: float = 0.0
    t: float = 0.0


@dataclass(frozen=True)
class ImpedanceBounds:
    """Box bounds on one phase's (K, B, theta_e)."""

    K: tuple[float, float] = (0.0, 10.0)
    B: tuple[float, float] = (0.0, 2.0)
    theta_e: tuple[float, float] = (0.0, 80.0)

    def __post_init__(self):
        for name in ("K", "B", "theta_e"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} bounds inverted: {lo} > {hi}")
        if self.K[0] < 0 or self.B[0] < 0:
            raise ValueError("K and B lower bounds must be non-negative")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.K[0], self.B[0], self.theta_e[0]])

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.K[1], self.B[1], self.theta_e[1]])

    def contains(self, imp: ImpedanceTriple) -> bool:
        a = imp.as_array()
        return bool(np.all(a >= self.lower) and np.all(a <= self.upper))


@dataclass(frozen=True)
class ActionBounds:
    """Symmetric per-update limits |dK|, |dB|, |dtheta_e|."""

    dK: float = 0.5
    dB: float = 0.1
    dtheta_e: float = 3.0

    def as_array(self) -> np.ndarray:
        return np.array([self.dK, self.dB, self.dtheta_e], dtype=float)

    def clip(self, u: np.ndarray) -> np.ndarray:
        lim = self.as_array()
        return np.clip(np.asarray(u, dtype=float), -lim, lim)


def compute_torque(imp: ImpedanceTriple, state: KneeState) -> float:
    """Knee torque K*(theta - theta_e) + B*omega."""
    return imp.K * (state.theta - imp.theta_e) + imp.B * state.omega


@dataclass(frozen=True)
class ImpedanceSchedule:
    """One impedance triple per gait phase, plus the cycle index it applies to."""

    triples: tuple[ImpedanceTriple, ImpedanceTriple, ImpedanceTriple, ImpedanceTriple]
    k: int = 0
    bounds: tuple[ImpedanceBounds, ...] = field(
        default=(ImpedanceBounds(),) * 4, compare=False
    )

    def __post_init__(self):
        if len(self.triples) != 4:
            raise ValueError("an impedance schedule needs exactly four triples")
        if len(self.bounds) != 4:
            raise ValueError("need one ImpedanceBounds per phase")

    def __getitem__(self, phase: GaitPhase) -> ImpedanceTriple:
        return self.triples[int(phase)]

    def __iter__(self) -> Iterator[ImpedanceTriple]:
        return iter(self.triples)

    @classmethod
    def from_mapping(cls, m: Mapping[GaitPhase, ImpedanceTriple], **kw) -> "ImpedanceSchedule":
        return cls(tuple(m[p] for p in PHASES), **kw)

    def as_array(self) -> np.ndarray:
        """4x3 array of (K, B, theta_e) rows in phase order."""
        return np.array([t.as_array() for t in self.triples])

    @classmethod
    def from_array(cls, a, **kw) -> "ImpedanceSchedule":
        a = np.asarray(a, dtype=float).reshape(4, 3)
        return cls(tuple(ImpedanceTriple.from_array(r) for r in a), **kw)

    def with_triple(self, phase: GaitPhase, imp: ImpedanceTriple) -> "ImpedanceSchedule":
        triples = list(self.triples)
        triples[int(phase)] = imp
        return replace(self, triples=tuple(triples))


@dataclass(frozen=True)
class ActionResult:
    schedule: ImpedanceSchedule
    saturated: bool


def apply_action(sched: ImpedanceSchedule, phase: GaitPhase, u: Action) -> ActionResult:
    """Add ``u`` to the triple of ``phase`` and clamp to that phase's bounds.

    Clamping is silent; ``saturated`` reports whether any component hit a bound.
    """
    bounds = sched.bounds[int(phase)]
    raw = sched[phase].as_array() + u.as_array()
    clamped = np.clip(raw, bounds.lower, bounds.upper)
    saturated = bool(np.any(clamped != raw))
    new = sched.with_triple(phase, ImpedanceTriple.from_array(clamped))
    return ActionResult(new, saturated)


@dataclass(frozen=True)
class GaitFeatures:
    """Per-phase peak angle (deg) and duration (s) for one side.

    For flexion phases the peak is the maximum angle reached, for extension
    phases it is the minimum (the trough that ends the phase).
    """

    peak: tuple[float, float, float, float]
    duration: tuple[float, float, float, float]
    side: str = "prosthesis"

    def __post_init__(self):
        object.__setattr__(self, "peak", tuple(float(v) for v in self.peak))
        object.__setattr__(self, "duration", tuple(float(v) for v in self.duration))
        if len(self.peak) != 4 or len(self.duration) != 4:
            raise ValueError("GaitFeatures needs four peaks and four durations")
        if self.side not in ("prosthesis", "intact"):
            raise ValueError(f"unknown side {self.side!r}")

    @property
    def cycle_duration(self) -> float:
        return float(sum(self.duration))

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.peak), np.array(self.duration)


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled knee angle.

    ``phase_starts`` holds the sample index at which each of the four phases
    began; the last phase runs to the final sample. Raw (unannotated) traces
    have ``phase_starts=None``.
    """

    theta: np.ndarray
    dt: float
    phase_starts: tuple[int, int, int, int] | None = None
    t0: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        object.__setattr__(self, "theta", theta)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.phase_starts is not None:
            starts = tuple(int(s) for s in self.phase_starts)
            if len(starts) != 4:
                raise ValueError("an annotated trajectory needs four phase starts")
            if starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValueError("phase starts must begin at 0 and strictly increase")
            if starts[-1] >= theta.size - 1:
                raise ValueError("last phase has no samples")
            object.__setattr__(self, "phase_starts", starts)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.theta.size)

    @property
    def annotated(self) -> bool:
        return self.phase_starts is not None

    def phase_bounds(self, phase: GaitPhase) -> tuple[int, int]:
        """Inclusive sample range [start, end] of ``phase``; ends are shared."""
        if self.phase_starts is None:
            raise ValueError("trajectory is not annotated")
        i = int(phase)
        start = self.phase_starts[i]
        end = self.phase_starts[i + 1] if i < 3 else self.theta.size - 1
        return start, end

    def phase_labels(self) -> list[str]:
        """Phase name per sample; the final sample closes the cycle and is tagged SWE."""
        if self.phase_starts is None:
            return [""] * self.theta.size
        labels = []
        for p in PHASES:
            s, e = self.phase_bounds(p)
            labels += [p.name] * (e - s)
        labels.append(PHASES[-1].name)
        return labels
