"""Seeded trials, the 30-trial batch protocol, metrics and output files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import FailedCycle, InsufficientData, MalformedTrajectory, TrialAborted
from .features import (
    TargetTracker,
    TrackingState,
    average_features,
    compute_state,
    extract_features,
)
from .gait import PHASES, Action, GaitFeatures, ImpedanceSchedule, Trajectory, apply_action
from .plant import KneePlant, adapt_intact, synthesize_intact
from .rl import PhaseLearner, check_convergence, instantaneous_cost

log = logging.getLogger(__name__)

TRIAL_HEADER = (
    "trial,update,phase,dP_deg,dD_s,dD_pct,K,B,theta_e,dK,dB,dtheta_e,cost,converged"
).split(",")
TRAJECTORY_HEADER = ["trial", "cycle", "sample", "t", "theta", "phase"]
WINDOW = 10

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    """Output of one SplitMix64 step from ``state`` (state already advanced)."""
    z = state & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trial_seed(master_seed: int, trial_index: int) -> int:
    """Seed of trial ``trial_index``: SplitMix64 output number ``trial_index + 1``
    of a generator seeded with ``master_seed``."""
    return splitmix64((master_seed + (trial_index + 1) * _GOLDEN) & _MASK64)


@dataclass(frozen=True)
class UpdateRow:
    trial: int
    update: int
    phase: str
    dP_deg: float
    dD_s: float
    dD_pct: float
    K: float
    B: float
    theta_e: float
    dK: float
    dB: float
    dtheta_e: float
    cost: float
    converged: int

    def values(self) -> list:
        return [getattr(self, k) for k in TRIAL_HEADER]


@dataclass
class TrialRecord:
    trial: int
    seed: int
    rows: list[UpdateRow] = field(default_factory=list)
    converged_at: int | None = None
    failed_cycles: int = 0
    aborted: bool = False
    targets: list[GaitFeatures] = field(default_factory=list)
    intact_true: list[GaitFeatures] = field(default_factory=list)
    learners: list[dict] = field(default_factory=list)
    trajectories: list[tuple[int, Trajectory]] = field(default_factory=list)

    @property
    def n_updates(self) -> int:
        return 1 + max((r.update for r in self.rows), default=-1)

    def series(self, phase: int, column: str) -> np.ndarray:
        name = PHASES[phase].name
        return np.array([getattr(r, column) for r in self.rows if r.phase == name])

    @property
    def converged(self) -> bool:
        return self.converged_at is not None


def compute_rmse(errors: Sequence[float], window: str = "first", n: int = WINDOW) -> float:
    """Root mean square of the first or last ``n`` entries."""
    if window not in ("first", "last"):
        raise ValueError("window must be 'first' or 'last'")
    if len(errors) < n:
        raise InsufficientData(f"need {n} entries, got {len(errors)}")
    e = np.asarray(errors, dtype=float)
    part = e[:n] if window == "first" else e[len(e) - n :]
    return float(math.sqrt(np.mean(part * part)))


MAX_INIT_DRAWS = 100


def _draw_schedule(cfg: ExperimentConfig, rng: np.random.Generator) -> ImpedanceSchedule:
    ref = np.asarray(cfg.reference, dtype=float)
    s = cfg.init_spread
    factors = rng.uniform(1.0 - s, 1.0 + s, size=ref.shape)
    lo = np.array([b.lower for b in cfg.impedance_bounds])
    hi = np.array([b.upper for b in cfg.impedance_bounds])
    return ImpedanceSchedule.from_array(np.clip(ref * factors, lo, hi), bounds=cfg.impedance_bounds)


def _walks(sched: ImpedanceSchedule, cfg: ExperimentConfig) -> bool:
    plant = KneePlant(replace(cfg.plant, noise_theta=0.0))
    try:
        plant.cycle(sched)
    except FailedCycle:
        return False
    return True


def initial_schedule(cfg: ExperimentConfig, rng: np.random.Generator) -> ImpedanceSchedule:
    """Random initial impedance around the reference that completes a cycle.

    Draws that cannot finish a noiseless cycle are redrawn, up to
    ``MAX_INIT_DRAWS`` times.
    """
    for _ in range(MAX_INIT_DRAWS):
        sched = _draw_schedule(cfg, rng)
        if _walks(sched, cfg):
            return sched
    raise TrialAborted("no admissible initial impedance found")


def _initial_gains(cfg: ExperimentConfig, rng: np.random.Generator) -> np.ndarray:
    G = np.asarray(cfg.rl.initial_gain, dtype=float)
    if cfg.rl.initial_policy == "random":
        # magnitudes are randomized, signs kept from the shipped gain
        G = G * np.exp(cfg.rl.random_gain_scale * rng.normal(size=G.shape))
    return G


def _observe_intact(true: GaitFeatures, cfg: ExperimentConfig, rng) -> GaitFeatures | None:
    traj = synthesize_intact(true, cfg.plant.dt, rng, cfg.plant.noise_theta)
    try:
        return extract_features(traj, side="intact", cfg=cfg.features)
    except MalformedTrajectory:
        return None


def run_trial(
    cfg: ExperimentConfig,
    seed: int,
    trial_id: int = 0,
    record_trajectories: bool = False,
    initial: ImpedanceSchedule | None = None,
) -> TrialRecord:
    """One tuning run from a randomized initial impedance until convergence.

    Each update: simulate the prosthesis cycle(s), observe the intact knee,
    refresh the smoothed target, form per-phase errors, feed the previous
    transition to each learner, test the 8-of-10 rule, then act.
    """
    ss = np.random.SeedSequence(seed)
    init_rng, plant_rng, intact_rng, explore_rng = (np.random.default_rng(s) for s in ss.spawn(4))
    pcfg = cfg.plant_effective
    sched = initial if initial is not None else initial_schedule(cfg, init_rng)
    gains = _initial_gains(cfg, init_rng)
    learners = [PhaseLearner(cfg.rl, gains[i], cfg.action_bounds, i) for i in range(4)]
    tracker = TargetTracker(cfg.features)
    plant = KneePlant(pcfg, plant_rng)
    intact = pcfg.intact_baseline
    rec = TrialRecord(trial=trial_id, seed=seed)
    history: list[list[TrackingState]] = [[] for _ in PHASES]
    prev: list[tuple[np.ndarray, np.ndarray] | None] = [None] * 4
    last_good = sched
    consecutive = 0
    cycle_no = 0

    update = 0
    while update < cfg.max_updates:
        try:
            pros = []
            for _ in range(cfg.cadence):
                res = plant.cycle(sched)
                if record_trajectories:
                    rec.trajectories.append((cycle_no, res.trajectory))
                cycle_no += 1
                pros.append(res.features)
                obs = _observe_intact(intact, cfg, intact_rng)
                if obs is not None:
                    tracker.update(obs)
                rec.intact_true.append(intact)
                intact = adapt_intact(intact, res.features, pcfg)
        except FailedCycle as exc:
            rec.failed_cycles += 1
            consecutive += 1
            log.debug("trial %d update %d: %s", trial_id, update, exc)
            if consecutive > cfg.max_consecutive_failures:
                rec.aborted = True
                break
            sched = last_good
            plant.reset()
            prev = [None] * 4
            if cfg.rl.initial_policy == "random":
                for lr, G in zip(learners, _initial_gains(cfg, init_rng)):
                    lr.policy.G = G
            continue
        last_good = sched
        if tracker.target is None:
            # no usable intact cycle yet; counts toward the abort limit
            consecutive += 1
            if consecutive > cfg.max_consecutive_failures:
                rec.aborted = True
                break
            continue
        consecutive = 0
        target = tracker.target
        rec.targets.append(target)
        feats = average_features(pros)
        states = [compute_state(feats, target, p) for p in PHASES]

        for i, lr in enumerate(learners):
            if prev[i] is not None:
                lr.observe(prev[i][0], prev[i][1], states[i].x)
            history[i].append(states[i])
        flags = [check_convergence(h[-WINDOW:], cfg.tol_peak, cfg.tol_duration) for h in history]
        done = all(flags)

        if cfg.sequential:
            active = [False] * 4
            active[next((i for i, f in enumerate(flags) if not f), 0)] = True
        else:
            active = [True] * 4

        new = sched
        for i, p in enumerate(PHASES):
            x = states[i].x
            if done or not active[i]:
                u = np.zeros(3)
            else:
                u = learners[i].act(x, explore_rng)
            imp = sched[p]
            rec.rows.append(
                UpdateRow(
                    trial=trial_id,
                    update=update,
                    phase=p.name,
                    dP_deg=float(states[i].dP),
                    dD_s=float(states[i].dD),
                    dD_pct=float(states[i].dD_pct),
                    K=imp.K,
                    B=imp.B,
                    theta_e=imp.theta_e,
                    dK=float(u[0]),
                    dB=float(u[1]),
                    dtheta_e=float(u[2]),
                    cost=instantaneous_cost(x, u, learners[i].cost),
                    converged=int(flags[i]),
                )
            )
            if not done and active[i]:
                new = apply_action(new, p, Action.from_array(u)).schedule
                prev[i] = (x, u)
            else:
                prev[i] = None
        if done:
            rec.converged_at = update
            break
        sched = ImpedanceSchedule(new.triples, k=sched.k + 1, bounds=sched.bounds)
        update += 1

    rec.learners = [lr.to_dict() for lr in learners]
    return rec


def _run_one(args):
    cfg, i = args
    return run_trial(cfg, trial_seed(cfg.seed, i), trial_id=i)


def run_batch(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> tuple[dict, list[TrialRecord]]:
    """All trials of the protocol; writes outputs when ``out_dir`` is given."""
    jobs = [(cfg, i) for i in range(cfg.trials)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    records.sort(key=lambda r: r.trial)
    summary = summarize(records, cfg)
    if out_dir is not None:
        write_outputs(Path(out_dir), cfg, records, summary)
    return summary, records


def _pooled_rms(chunks: list[np.ndarray]) -> float | None:
    if not chunks:
        return None
    e = np.concatenate(chunks)
    return float(math.sqrt(np.mean(e * e)))


def trial_metrics(rec: TrialRecord) -> dict:
    out = {
        "trial": rec.trial,
        "seed": rec.seed,
        "updates": rec.n_updates,
        "converged_at": rec.converged_at,
        "failed_cycles": rec.failed_cycles,
        "aborted": rec.aborted,
    }
    per_phase = {}
    for i, p in enumerate(PHASES):
        dp = rec.series(i, "dP_deg")
        dd = rec.series(i, "dD_pct")
        m = {}
        if dp.size >= WINDOW:
            m = {
                "peak_first": compute_rmse(dp, "first"),
                "peak_last": compute_rmse(dp, "last"),
                "duration_pct_first": compute_rmse(dd, "first"),
                "duration_pct_last": compute_rmse(dd, "last"),
            }
        per_phase[p.name] = m
    out["rmse"] = per_phase
    return out


def summarize(records: Sequence[TrialRecord], cfg: ExperimentConfig | None = None) -> dict:
    """Batch statistics.

    Per-phase RMSE values pool the first (or last) ten updates of every
    trial with at least ten updates. ``updates_to_convergence`` is the
    update index at which the 8-of-10 rule first held.
    """
    n = len(records)
    conv = [r.converged_at for r in records if r.converged_at is not None]
    phases = {}
    for i, p in enumerate(PHASES):
        chunks = {"peak_first": [], "peak_last": [], "duration_pct_first": [], "duration_pct_last": []}
        for r in records:
            dp = r.series(i, "dP_deg")
            dd = r.series(i, "dD_pct")
            if dp.size < WINDOW:
                continue
            chunks["peak_first"].append(dp[:WINDOW])
            chunks["peak_last"].append(dp[-WINDOW:])
            chunks["duration_pct_first"].append(dd[:WINDOW])
            chunks["duration_pct_last"].append(dd[-WINDOW:])
        phases[p.name] = {k: _pooled_rms(v) for k, v in chunks.items()}
    return {
        "trials": n,
        "converged": len(conv),
        "convergence_rate": len(conv) / n if n else 0.0,
        "mean_updates_to_convergence": float(np.mean(conv)) if conv else None,
        "median_updates_to_convergence": float(np.median(conv)) if conv else None,
        "aborted": sum(1 for r in records if r.aborted),
        "rmse": phases,
        "per_trial": [trial_metrics(r) for r in records],
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def trial_csv_text(rec: TrialRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRIAL_HEADER)
    for row in rec.rows:
        w.writerow([_fmt(v) for v in row.values()])
    return buf.getvalue()


def read_trial_csv(path: str | Path) -> TrialRecord:
    """Rebuild the tabular part of a TrialRecord from its CSV.

    ``converged_at`` is recovered as the first update whose four phase rows
    all carry ``converged == 1``.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRIAL_HEADER:
            raise ValueError(f"unexpected trial CSV header: {header}")
        for r in reader:
            rows.append(
                UpdateRow(
                    int(r[0]), int(r[1]), r[2], *(float(v) for v in r[3:13]), int(r[13])
                )
            )
    rec = TrialRecord(trial=rows[0].trial if rows else -1, seed=-1, rows=rows)
    by_update: dict[int, list[int]] = {}
    for r in rows:
        by_update.setdefault(r.update, []).append(r.converged)
    for u in sorted(by_update):
        flags = by_update[u]
        if len(flags) == 4 and all(flags):
            rec.converged_at = u
            break
    return rec


def trajectory_csv_text(items: Sequence[tuple[int, int, Trajectory]]) -> str:
    """Rows (trial, cycle, sample, t, theta, phase) for (trial, cycle, traj) items."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRAJECTORY_HEADER)
    for trial, cycle, traj in items:
        labels = traj.phase_labels()
        for k, (t, th) in enumerate(zip(traj.t, traj.theta)):
            w.writerow([trial, cycle, k, repr(float(t)), repr(float(th)), labels[k]])
    return buf.getvalue()


def read_trajectory_csv(path: str | Path, dt: float | None = None) -> list[tuple[int, int, Trajectory]]:
    """Parse a trajectory CSV into (trial, cycle, Trajectory) items.

    Cycles whose phase column is filled become annotated trajectories; the
    phase start indices are where the label changes. Empty labels give raw
    trajectories.
    """
    groups: dict[tuple[int, int], list[tuple[float, float, str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(TRAJECTORY_HEADER) - set(reader.fieldnames or [])
        if missing:
            raise MalformedTrajectory(f"trajectory CSV missing columns {sorted(missing)}")
        for r in reader:
            key = (int(r["trial"]), int(r["cycle"]))
            groups.setdefault(key, []).append((float(r["t"]), float(r["theta"]), r["phase"].strip()))
    out = []
    for (trial, cycle), samples in groups.items():
        t = np.array([s[0] for s in samples])
        theta = np.array([s[1] for s in samples])
        labels = [s[2] for s in samples]
        step = dt if dt is not None else (float(np.median(np.diff(t))) if t.size > 1 else 0.01)
        starts = None
        if all(labels):
            starts = []
            for p in PHASES:
                if p.name not in labels:
                    raise MalformedTrajectory(f"cycle {cycle} has no {p.name} samples")
                starts.append(labels.index(p.name))
            starts = tuple(starts)
        out.append((trial, cycle, Trajectory(theta, step, starts, t0=float(t[0]))))
    return out


def _json_dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_outputs(out: Path, cfg: ExperimentConfig, records: Sequence[TrialRecord], summary: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        (out / f"trial_{rec.trial:03d}.csv").write_text(trial_csv_text(rec), encoding="utf-8")
    (out / "summary.json").write_text(_json_dump(summary), encoding="utf-8")
    echo = cfg.to_dict()
    echo.pop("out_dir")  # where results go does not affect them
    (out / "config.json").write_text(_json_dump(echo), encoding="utf-8")


def records_from_dir(out: str | Path) -> list[TrialRecord]:
    return [read_trial_csv(p) for p in sorted(Path(out).glob("trial_*.csv"))]
