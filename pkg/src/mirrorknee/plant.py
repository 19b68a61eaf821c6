"""Surrogate knee dynamics driven by the impedance torque.

Each phase is a single-degree-of-freedom knee

    J * theta'' = -(K * (theta - theta_e) + B * omega) + load(t)

integrated with fixed-step RK4. The load is a constant plus a sinusoid, one
set per phase, and stands in for the body-weight and inertial torques that a
full biped model would produce.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FailedCycle
from .gait import (
    PHASES,
    GaitFeatures,
    GaitPhase,
    ImpedanceSchedule,
    ImpedanceTriple,
    KneeState,
    Trajectory,
)


@dataclass(frozen=True)
class PhaseLoad:
    const: float = 0.0  # N*m
    amp: float = 0.0  # N*m
    freq: float = 0.0  # Hz, phase-local time

    def __call__(self, t: float) -> float:
        if self.amp == 0.0:
            return self.const
        return self.const + self.amp * math.sin(2.0 * math.pi * self.freq * t)


@dataclass(frozen=True)
class PlantConfig:
    J: float = 0.004
    loads: tuple[PhaseLoad, PhaseLoad, PhaseLoad, PhaseLoad] = (PhaseLoad(),) * 4
    dt: float = 0.01
    cadence: float = 1.1
    noise_theta: float = 0.3
    max_phase_duration: float = 2.0
    min_motion: float = 1.0
    theta_range: tuple[float, float] = (0.0, 90.0)
    init_theta: float = 3.0
    settle_cycles: int = 1
    intact_baseline: GaitFeatures | None = None
    adapt_rate: float = 0.0
    adapt_coupling_peak: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    adapt_coupling_duration: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    peak_bounds: tuple[float, float] = (0.0, 90.0)
    duration_bounds: tuple[float, float] = (0.05, 1.5)

    def __post_init__(self):
        if not self.J > 0:
            raise ValueError("J must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.adapt_rate < 1.0:
            raise ValueError("adapt_rate must lie in [0, 1)")
        if self.noise_theta < 0:
            raise ValueError("noise_theta must be non-negative")
        if len(self.loads) != 4:
            raise ValueError("need one PhaseLoad per phase")
        if self.max_phase_duration <= self.dt:
            raise ValueError("max_phase_duration must exceed dt")
        if self.settle_cycles < 0:
            raise ValueError("settle_cycles must be non-negative")
        if self.theta_range[0] >= self.theta_range[1]:
            raise ValueError("theta_range is empty")


@dataclass(frozen=True)
class PhaseSegment:
    phase: GaitPhase
    theta: np.ndarray  # entry sample through exit sample, inclusive
    exit_state: KneeState
    capped: bool

    @property
    def n_steps(self) -> int:
        return self.theta.size - 1


def _rk4_step(theta, omega, t, dt, K, B, theta_e, J, load):
    def acc(th, om, tt):
        return (load(tt) - K * (th - theta_e) - B * om) / J

    k1t, k1w = omega, acc(theta, omega, t)
    h = 0.5 * dt
    k2t, k2w = omega + h * k1w, acc(theta + h * k1t, omega + h * k1w, t + h)
    k3t, k3w = omega + h * k2w, acc(theta + h * k2t, omega + h * k2w, t + h)
    k4t, k4w = omega + dt * k3w, acc(theta + dt * k3t, omega + dt * k3w, t + dt)
    theta = theta + dt / 6.0 * (k1t + 2 * k2t + 2 * k3t + k4t)
    omega = omega + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
    return theta, omega


def simulate_phase(
    imp: ImpedanceTriple, phase: GaitPhase, init: KneeState, cfg: PlantConfig
) -> PhaseSegment:
    """Integrate one phase from ``init`` until its exit condition.

    Flexion phases end at the first sample where the velocity is no longer
    positive, extension phases where it is no longer negative; either only
    after the knee has moved more than ``cfg.min_motion`` from its entry
    angle in the phase's own direction. A phase still running at ``cfg.max_phase_duration`` stops there
    with ``capped=True``. The knee hits a hard stop at the ends of
    ``cfg.theta_range`` (angle clamped, velocity zeroed).
    """
    dt, J = cfg.dt, cfg.J
    K, B, theta_e = imp.K, imp.B, imp.theta_e
    load = cfg.loads[int(phase)]
    lo, hi = cfg.theta_range
    max_steps = int(round(cfg.max_phase_duration / dt))
    sign = 1.0 if phase.is_flexion else -1.0

    theta, omega = float(init.theta), float(init.omega)
    theta0 = theta
    samples = [theta]
    capped = True
    t = 0.0
    for n in range(1, max_steps + 1):
        theta, omega = _rk4_step(theta, omega, t, dt, K, B, theta_e, J, load)
        t = n * dt
        if theta < lo:
            theta, omega = lo, 0.0
        elif theta > hi:
            theta, omega = hi, 0.0
        samples.append(theta)
        if sign * omega <= 0.0 and sign * (theta - theta0) > cfg.min_motion:
            capped = False
            break
    return PhaseSegment(
        phase=phase,
        theta=np.array(samples),
        exit_state=KneeState(theta, omega, t),
        capped=capped,
    )


@dataclass(frozen=True)
class CycleResult:
    trajectory: Trajectory
    features: GaitFeatures
    exit_state: KneeState


def simulate_cycle(
    sched: ImpedanceSchedule,
    cfg: PlantConfig,
    rng=None,
    init: KneeState | None = None,
) -> CycleResult:
    """Run the four phases in order and return the sampled cycle.

    ``rng`` is a seed or ``numpy.random.Generator``; it only drives the
    measurement noise added to the returned angles, never the dynamics.
    Raises FailedCycle if any phase hits its duration cap.
    """
    from .features import extract_features

    state = init if init is not None else KneeState(cfg.init_theta, 0.0)
    state = KneeState(state.theta, state.omega, 0.0)
    pieces, starts = [], []
    n = 0
    for phase in PHASES:
        seg = simulate_phase(sched[phase], phase, state, cfg)
        if seg.capped:
            raise FailedCycle(phase)
        starts.append(n)
        pieces.append(seg.theta[:-1])
        n += seg.n_steps
        state = seg.exit_state
    pieces.append(np.array([state.theta]))
    theta = np.concatenate(pieces)
    if cfg.noise_theta > 0:
        gen = np.random.default_rng(rng)
        theta = theta + gen.normal(0.0, cfg.noise_theta, size=theta.size)
    traj = Trajectory(theta, cfg.dt, tuple(starts))
    return CycleResult(traj, extract_features(traj), KneeState(state.theta, state.omega, 0.0))


class KneePlant:
    """Stateful wrapper carrying the knee state and noise RNG across cycles."""

    def __init__(self, cfg: PlantConfig, rng=None):
        self.cfg = cfg
        self.rng = np.random.default_rng(rng)
        self.state = KneeState(cfg.init_theta, 0.0)

    def reset(self) -> None:
        self.state = KneeState(self.cfg.init_theta, 0.0)

    def cycle(self, sched: ImpedanceSchedule) -> CycleResult:
        """Settle for ``cfg.settle_cycles`` cycles, then return the next one."""
        for _ in range(self.cfg.settle_cycles):
            self.state = simulate_cycle(sched, self._quiet, None, self.state).exit_state
        res = simulate_cycle(sched, self.cfg, self.rng, self.state)
        self.state = res.exit_state
        return res

    @property
    def _quiet(self) -> PlantConfig:
        return replace(self.cfg, noise_theta=0.0)


def adapt_intact(intact: GaitFeatures, prosthesis: GaitFeatures, cfg: PlantConfig) -> GaitFeatures:
    """Relax the intact-side features toward the prosthesis side.

    One step of x_i <- x_i + rate * coupling * (x_p - x_i) per feature,
    clamped to the configured feature bounds.
    """
    a = cfg.adapt_rate
    if a == 0.0:
        return intact
    pi, di = intact.as_arrays()
    pp, dp = prosthesis.as_arrays()
    pi = pi + a * np.asarray(cfg.adapt_coupling_peak) * (pp - pi)
    di = di + a * np.asarray(cfg.adapt_coupling_duration) * (dp - di)
    pi = np.clip(pi, *cfg.peak_bounds)
    di = np.clip(di, *cfg.duration_bounds)
    return GaitFeatures(tuple(pi), tuple(di), side="intact")


def synthesize_intact(
    features: GaitFeatures, dt: float, rng=None, noise: float = 0.0, cycles: int = 2
) -> Trajectory:
    """Raw intact-knee trace realizing ``features`` with half-cosine segments.

    Each phase moves from the previous feature angle to its own over its
    duration with zero velocity at both ends, so the four feature points are
    exactly the trace's extrema. The cycle repeats ``cycles`` times. The
    trace starts and ends halfway through SWE so that every cycle-bounding
    trough lies strictly inside it.
    """
    peaks, durs = features.as_arrays()
    if np.any(durs <= 0):
        raise ValueError("durations must be positive")
    period = durs.sum()
    edges = np.concatenate([[0.0], np.cumsum(durs)])
    starts_theta = np.roll(peaks, 1)  # STF starts from the SWE trough
    lead = dt * round(0.5 * durs[3] / dt)
    n = int(math.floor((cycles * period + 2 * lead) / dt + 1e-9)) + 1
    t = dt * np.arange(n) - lead
    tc = np.mod(t, period)
    idx = np.clip(np.searchsorted(edges, tc, side="right") - 1, 0, 3)
    frac = (tc - edges[idx]) / durs[idx]
    theta = starts_theta[idx] + (peaks[idx] - starts_theta[idx]) * 0.5 * (1 - np.cos(np.pi * frac))
    if noise > 0:
        theta = theta + np.random.default_rng(rng).normal(0.0, noise, size=n)
    return Trajectory(theta, dt)
