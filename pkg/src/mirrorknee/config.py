"""Experiment configuration: TOML schema, defaults and validation.

The packaged ``data/default.toml`` lists every accepted key with its
default. A user file is merged over it; any key absent from the defaults is
rejected.
"""
from __future__ import annotations

import copy
import sys
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .features import FeatureExtractorConfig
from .gait import ActionBounds, GaitFeatures, ImpedanceBounds, ImpedanceSchedule
from .linear import LQRCheckConfig
from .plant import PhaseLoad, PlantConfig
from .rl import RLConfig

MODES = ("sim", "human-cadence")
HUMAN_CADENCE = 4


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantConfig
    features: FeatureExtractorConfig
    rl: RLConfig
    reference: tuple  # 4 x 3 (K, B, theta_e)
    impedance_bounds: tuple[ImpedanceBounds, ...]
    action_bounds: ActionBounds
    lqr: LQRCheckConfig = field(default_factory=LQRCheckConfig)
    trials: int = 30
    max_updates: int = 50
    init_spread: float = 0.2 * 3**0.5
    tol_peak: float = 1.5
    tol_duration: float = 0.02
    mode: str = "sim"
    coadapt: bool = True
    sequential: bool = False
    seed: int = 0
    out_dir: str = "out"
    max_consecutive_failures: int = 5
    jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.max_updates < 1:
            raise ConfigError("max_updates must be >= 1")
        if self.tol_peak <= 0 or self.tol_duration <= 0:
            raise ConfigError("tolerances must be positive")
        if not 0 <= self.init_spread < 1:
            raise ConfigError("init_spread must lie in [0, 1)")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if np.shape(self.reference) != (4, 3):
            raise ConfigError("reference schedule must be 4 x 3")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.plant.intact_baseline is None:
            raise ConfigError("plant.intact_baseline is required")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")

    @property
    def cadence(self) -> int:
        return HUMAN_CADENCE if self.mode == "human-cadence" else self.features.cadence

    @property
    def plant_effective(self) -> PlantConfig:
        return self.plant if self.coadapt else replace(self.plant, adapt_rate=0.0)

    def reference_schedule(self) -> ImpedanceSchedule:
        return ImpedanceSchedule.from_array(self.reference, bounds=self.impedance_bounds)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _default_text() -> str:
    return resources.files("mirrorknee").joinpath("data/default.toml").read_text(encoding="utf-8")


def default_dict() -> dict:
    return tomllib.loads(_default_text())


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be a table")
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


def _per_phase_bounds(val, name) -> list[tuple[float, float]]:
    arr = np.asarray(val, dtype=float)
    if arr.shape == (2,):
        return [tuple(arr)] * 4
    if arr.shape == (4, 2):
        return [tuple(r) for r in arr]
    raise ConfigError(f"impedance.{name} must be [lo, hi] or four [lo, hi] pairs")


def _scalar_or_tuple(val):
    if isinstance(val, (list, tuple)):
        return tuple(float(v) for v in val)
    return float(val)


def build_config(d: dict) -> ExperimentConfig:
    try:
        return _build(d)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(d: dict) -> ExperimentConfig:
    ex, imp, pl, fe, rl, lq = (d[k] for k in ("experiment", "impedance", "plant", "features", "rl", "lqr"))
    loads = pl["loads"]
    plant = PlantConfig(
        J=float(pl["J"]),
        loads=tuple(PhaseLoad(*map(float, t)) for t in zip(loads["const"], loads["amp"], loads["freq"])),
        dt=float(pl["dt"]),
        cadence=float(pl["cadence"]),
        noise_theta=float(pl["noise_theta"]),
        max_phase_duration=float(pl["max_phase_duration"]),
        min_motion=float(pl["min_motion"]),
        theta_range=tuple(map(float, pl["theta_range"])),
        init_theta=float(pl["init_theta"]),
        settle_cycles=int(pl["settle_cycles"]),
        intact_baseline=GaitFeatures(
            tuple(pl["intact_baseline"]["peak"]), tuple(pl["intact_baseline"]["duration"]), side="intact"
        ),
        adapt_rate=float(pl["adapt_rate"]),
        adapt_coupling_peak=tuple(map(float, pl["adapt_coupling_peak"])),
        adapt_coupling_duration=tuple(map(float, pl["adapt_coupling_duration"])),
        peak_bounds=tuple(map(float, pl["peak_bounds"])),
        duration_bounds=tuple(map(float, pl["duration_bounds"])),
    )
    features = FeatureExtractorConfig(**fe)
    rlcfg = RLConfig(
        Rx=tuple(map(tuple, rl["Rx"])),
        Ru=tuple(map(tuple, rl["Ru"])),
        gamma=float(rl["gamma"]),
        batch_size=int(rl["batch_size"]),
        buffer_size=int(rl["buffer_size"]),
        explore_frac=_scalar_or_tuple(rl["explore_frac"]),
        projection=str(rl["projection"]),
        gain_step=float(rl["gain_step"]) if rl["gain_step"] > 0 else None,
        explore_decay=float(rl["explore_decay"]),
        explore_floor_frac=float(rl["explore_floor_frac"]),
        eps_proj=float(rl["eps_proj"]),
        reg=float(rl["reg"]),
        cond_threshold=float(rl["cond_threshold"]),
        cond_cap=float(rl["cond_cap"]),
        initial_gain=np.asarray(rl["initial_gain"], dtype=float).tolist(),
        initial_policy=str(rl["initial_policy"]),
        random_gain_scale=float(rl["random_gain_scale"]),
    )
    kb = _per_phase_bounds(imp["bounds_K"], "bounds_K")
    bb = _per_phase_bounds(imp["bounds_B"], "bounds_B")
    tb = _per_phase_bounds(imp["bounds_theta_e"], "bounds_theta_e")
    bounds = tuple(ImpedanceBounds(k, b, t) for k, b, t in zip(kb, bb, tb))
    lim = imp["action_limits"]
    if len(lim) != 3:
        raise ConfigError("impedance.action_limits must have three entries")
    lqr = LQRCheckConfig(
        A=lq["A"], B=lq["B"], Rx=lq["Rx"], Ru=lq["Ru"],
        G0=lq["G0"] if lq["G0"] else None,
        gamma=float(lq["gamma"]), iterations=int(lq["iterations"]),
        n_samples=int(lq["n_samples"]), tol=float(lq["tol"]), seed=int(lq["seed"]),
    )
    return ExperimentConfig(
        plant=plant,
        features=features,
        rl=rlcfg,
        reference=tuple(tuple(map(float, r)) for r in imp["reference"]),
        impedance_bounds=bounds,
        action_bounds=ActionBounds(*map(float, lim)),
        lqr=lqr,
        trials=int(ex["trials"]),
        max_updates=int(ex["max_updates"]),
        init_spread=float(ex["init_spread"]),
        tol_peak=float(ex["tol_peak"]),
        tol_duration=float(ex["tol_duration"]),
        mode=str(ex["mode"]),
        coadapt=bool(ex["coadapt"]),
        sequential=bool(ex["sequential"]),
        seed=int(ex["seed"]),
        out_dir=str(ex["out_dir"]),
        max_consecutive_failures=int(ex["max_consecutive_failures"]),
        jobs=int(ex["jobs"]),
    )


def load_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Defaults, then the TOML file at ``path``, then ``overrides``.

    ``overrides`` is a nested dict in the same layout as the file.
    """
    d = default_dict()
    if path is not None:
        try:
            user = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        d = _merge(d, user)
    if overrides:
        d = _merge(d, overrides)
    return build_config(d)


def default_config(**experiment) -> ExperimentConfig:
    """Packaged defaults with optional ``[experiment]`` overrides."""
    return load_config(overrides={"experiment": experiment} if experiment else None)
