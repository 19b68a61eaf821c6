"""Policy iteration with a quadratic Q-function, one learner per gait phase.

The Q-function is approximated as ``Q(x, u) = W . phi(x, u)`` where ``phi``
holds every degree-2 monomial of ``z = (x1, x2, u1, u2, u3)``. Equivalently
``Q = z' H z`` for a symmetric 5x5 ``H``; diagonal weights equal diagonal
entries of ``H`` and off-diagonal weights are twice the matching entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import IllConditioned, InsufficientData, SingularHuu
from .features import TrackingState
from .gait import ActionBounds

NX, NU = 2, 3
NZ = NX + NU
#: (i, j) pairs, i <= j, in basis order: (0,0), (0,1), ..., (0,4), (1,1), ...
BASIS_INDEX: tuple[tuple[int, int], ...] = tuple(
    (i, j) for i in range(NZ) for j in range(i, NZ)
)
L = len(BASIS_INDEX)
_I, _J = (np.array(a) for a in zip(*BASIS_INDEX))


def basis_phi(x, u) -> np.ndarray:
    """All monomials z_i * z_j (i <= j) of z = (x, u) in BASIS_INDEX order."""
    z = np.concatenate([np.asarray(x, dtype=float).ravel(), np.asarray(u, dtype=float).ravel()])
    return z[_I] * z[_J]


def _phi_rows(X: np.ndarray, U: np.ndarray) -> np.ndarray:
    Z = np.hstack([X, U])
    return Z[:, _I] * Z[:, _J]


def weights_to_H(W) -> np.ndarray:
    W = np.asarray(W, dtype=float)
    if W.shape != (L,):
        raise ValueError(f"expected {L} weights, got shape {W.shape}")
    H = np.zeros((NZ, NZ))
    H[_I, _J] = W
    H[_J, _I] = W
    off = _I != _J
    H[_I[off], _J[off]] *= 0.5
    H[_J[off], _I[off]] *= 0.5
    return H


def H_to_weights(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    return np.where(_I == _J, 1.0, 2.0) * H[_I, _J]


def q_value(W, x, u) -> float:
    return float(np.dot(W, basis_phi(x, u)))


@dataclass(frozen=True)
class CostMatrices:
    Rx: np.ndarray
    Ru: np.ndarray

    def __post_init__(self):
        Rx = np.asarray(self.Rx, dtype=float)
        Ru = np.asarray(self.Ru, dtype=float)
        object.__setattr__(self, "Rx", Rx)
        object.__setattr__(self, "Ru", Ru)
        for name, M, n in (("Rx", Rx, NX), ("Ru", Ru, NU)):
            if M.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}")
            if not np.allclose(M, M.T, rtol=0, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ValueError(f"{name} must be positive definite")


def instantaneous_cost(x, u, R: CostMatrices) -> float:
    """x' Rx x + u' Ru u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    return float(x @ R.Rx @ x + u @ R.Ru @ u)


@dataclass(frozen=True)
class Experience:
    x: np.ndarray
    u: np.ndarray
    cost: float
    x_next: np.ndarray
    u_next: np.ndarray

    def __post_init__(self):
        for name in ("x", "u", "x_next", "u_next"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not (
            np.isfinite(self.cost)
            and all(np.all(np.isfinite(getattr(self, n))) for n in ("x", "u", "x_next", "u_next"))
        ):
            raise ValueError("experience contains non-finite entries")


@dataclass(frozen=True)
class Evaluation:
    W: np.ndarray
    residual_norm: float
    condition: float
    regularized: bool


def policy_evaluation(
    batch: Sequence[Experience],
    gamma: float = 0.95,
    reg: float = 1e-8,
    cond_threshold: float = 1e10,
    cond_cap: float = 1e10,
) -> Evaluation:
    """Least-squares solve of W'(phi(x, u) - gamma * phi(x', u')) = U(x, u).

    Regressor columns are scaled to unit norm before solving (this leaves a
    full-rank solution unchanged). The scaled system is solved with the
    Moore-Penrose pseudo-inverse, or with a ridge term ``reg`` when its
    condition number exceeds ``cond_threshold``. IllConditioned is raised
    if the ridge-regularized system still exceeds ``cond_cap``.
    """
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    n = len(batch)
    if n < L:
        raise InsufficientData(f"need at least {L} experiences, got {n}")
    X0 = np.array([e.x for e in batch])
    U0 = np.array([e.u for e in batch])
    X1 = np.array([e.x_next for e in batch])
    U1 = np.array([e.u_next for e in batch])
    Y = np.array([e.cost for e in batch])
    A = _phi_rows(X0, U0) - gamma * _phi_rows(X1, U1)
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    As = A / scale
    sv = np.linalg.svd(As, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else float("inf")
    regularized = cond > cond_threshold
    if regularized:
        M = As.T @ As + reg * np.eye(L)
        eff = float(np.sqrt((sv[0] ** 2 + reg) / (sv[-1] ** 2 + reg)))
        if eff > cond_cap:
            raise IllConditioned(f"condition number {eff:.3g} after regularization")
        Ws = np.linalg.solve(M, As.T @ Y)
    else:
        Ws = np.linalg.pinv(As) @ Y
    W = Ws / scale
    return Evaluation(W, float(np.linalg.norm(A @ W - Y)), cond, regularized)


def bellman_residuals(W, batch: Sequence[Experience], gamma: float) -> np.ndarray:
    """Per-sample |Q(x,u) - U(x,u) - gamma * Q(x',u')|."""
    X0 = np.array([e.x for e in batch])
    U0 = np.array([e.u for e in batch])
    X1 = np.array([e.x_next for e in batch])
    U1 = np.array([e.u_next for e in batch])
    Y = np.array([e.cost for e in batch])
    return np.abs(_phi_rows(X0, U0) @ W - Y - gamma * (_phi_rows(X1, U1) @ W))


def project_q(W, eps: float = 1e-6) -> np.ndarray:
    """Raise every eigenvalue of the action block Huu to at least ``eps``.

    The other blocks of H are left as they are. Clamping eigenvalues is the
    Frobenius-nearest symmetric matrix with spectrum bounded below by eps.
    """
    H = weights_to_H(W)
    Huu = H[NX:, NX:]
    vals, vecs = np.linalg.eigh(Huu)
    if vals.min() >= eps:
        return np.asarray(W, dtype=float).copy()
    H[NX:, NX:] = (vecs * np.maximum(vals, eps)) @ vecs.T
    return H_to_weights(H)


def project_q_floor(W, cost: CostMatrices, eps: float = 1e-6) -> np.ndarray:
    """Project H onto {H : H - blockdiag(Rx, Ru) is positive semidefinite}.

    For a non-negative value function the true kernel satisfies
    Q(x, u) >= U(x, u), so this set contains it. The Frobenius projection
    clamps the eigenvalues of H - U at zero. Huu then dominates Ru, which
    bounds the improved gain even when the fit is poor. A final
    ``project_q`` keeps the eps floor when Ru itself is singular.
    """
    H = weights_to_H(W)
    U = np.zeros_like(H)
    U[:NX, :NX] = cost.Rx
    U[NX:, NX:] = cost.Ru
    vals, vecs = np.linalg.eigh(H - U)
    if vals.min() < 0:
        H = U + (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return project_q(H_to_weights(H), eps)


def policy_improvement(W) -> np.ndarray:
    """Gain G = Huu^-1 Hux, so that u = -G x minimizes Q(x, .) exactly."""
    H = weights_to_H(W)
    Huu, Hux = H[NX:, NX:], H[NX:, :NX]
    try:
        np.linalg.cholesky(Huu)
    except np.linalg.LinAlgError:
        raise SingularHuu("Huu is not positive definite; project first") from None
    return np.linalg.solve(Huu, Hux)


@dataclass
class Policy:
    """Linear state feedback u = -G x with decaying Gaussian exploration.

    ``sigma`` and ``sigma_floor`` are per-action-component standard
    deviations.
    """

    G: np.ndarray
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(NU))
    decay: float = 0.9
    sigma_floor: np.ndarray = field(default_factory=lambda: np.zeros(NU))

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float).reshape(NU, NX)
        self.sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (NU,)).copy()
        self.sigma_floor = np.broadcast_to(np.asarray(self.sigma_floor, dtype=float), (NU,)).copy()
        if not np.all(np.isfinite(self.G)):
            raise ValueError("policy gain must be finite")

    def greedy(self, x) -> np.ndarray:
        return -self.G @ np.asarray(x, dtype=float)

    def decay_exploration(self) -> None:
        self.sigma = np.maximum(self.sigma * self.decay, self.sigma_floor)


def act(policy: Policy, x, rng: np.random.Generator, bounds: ActionBounds) -> np.ndarray:
    """Exploratory action clip(-G x + noise) with noise ~ N(0, diag(sigma^2))."""
    if isinstance(x, TrackingState):
        x = x.x
    noise = rng.normal(0.0, 1.0, size=NU) * policy.sigma
    return bounds.clip(policy.greedy(x) + noise)


def check_convergence(
    recent_states: Sequence[TrackingState],
    tol_P: float = 1.5,
    tol_D: float = 0.02,
    window: int = 10,
    required: int = 8,
) -> bool:
    """True iff at least ``required`` of the last ``window`` states are in tolerance.

    A state is in tolerance when |dP| <= tol_P (deg) and |dD| / cycle <= tol_D.
    Fewer than ``window`` states never count as converged.
    """
    if len(recent_states) < window:
        return False
    tail = list(recent_states)[-window:]
    ok = sum(1 for s in tail if abs(s.dP) <= tol_P and abs(s.dD_frac) <= tol_D)
    return ok >= required


@dataclass(frozen=True)
class RLConfig:
    Rx: tuple = ((1.0, 0.0), (0.0, 2000.0))
    Ru: tuple = ((20.0, 0.0, 0.0), (0.0, 2e5, 0.0), (0.0, 0.0, 1.0))
    gamma: float = 0.95
    batch_size: int = 20
    buffer_size: int = 40
    explore_frac: float | tuple = 0.02  # initial sigma as a fraction of each action limit
    projection: str = "cost_floor"  # "cost_floor" | "huu"
    gain_step: float | None = 0.25  # max relative change per gain entry per iteration; None = unlimited
    explore_decay: float = 0.9
    explore_floor_frac: float = 0.01
    eps_proj: float = 1e-6
    reg: float = 1e-8
    cond_threshold: float = 1e10
    cond_cap: float = 1e10
    initial_gain: tuple | None = None  # 4 x 3 x 2, phase order
    initial_policy: str = "config"  # "config" | "random"
    random_gain_scale: float = 1.0

    def __post_init__(self):
        CostMatrices(np.asarray(self.Rx), np.asarray(self.Ru))
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.batch_size < L:
            raise ValueError(f"batch_size must be at least {L}")
        if self.buffer_size < self.batch_size:
            raise ValueError("buffer_size must be at least batch_size")
        if not 0 < self.explore_decay <= 1:
            raise ValueError("explore_decay must lie in (0, 1]")
        if np.shape(self.explore_frac) not in ((), (NU,)):
            raise ValueError("explore_frac must be a scalar or one value per action component")
        if np.any(np.asarray(self.explore_frac) < 0) or self.explore_floor_frac < 0:
            raise ValueError("exploration scales must be non-negative")
        if self.gain_step is not None and not self.gain_step > 0:
            raise ValueError("gain_step must be positive or None")
        if self.projection not in ("cost_floor", "huu"):
            raise ValueError("projection must be 'cost_floor' or 'huu'")
        if self.initial_policy not in ("config", "random"):
            raise ValueError("initial_policy must be 'config' or 'random'")
        if self.initial_gain is not None and np.shape(self.initial_gain) != (4, NU, NX):
            raise ValueError("initial_gain must have shape (4, 3, 2)")

    @property
    def cost(self) -> CostMatrices:
        return CostMatrices(np.asarray(self.Rx, dtype=float), np.asarray(self.Ru, dtype=float))


def limit_gain_step(G_old, G_new, step: float | None) -> np.ndarray:
    """Clip each entry of ``G_new`` to within ``step * |G_old|`` of ``G_old``.

    Noisy state measurements bias the least-squares Q fit, so a single
    improvement can return a gain far from anything stabilizing. Bounding
    each entry relative to its current magnitude keeps signs and limits the
    damage of one bad fit. ``step=None`` returns ``G_new`` unchanged.
    """
    G_new = np.asarray(G_new, dtype=float)
    if step is None:
        return G_new.copy()
    G_old = np.asarray(G_old, dtype=float)
    r = step * np.abs(G_old)
    return np.clip(G_new, G_old - r, G_old + r)


class PhaseLearner:
    """Online policy iteration for one gait phase.

    Transitions are kept in a sliding buffer. Every ``batch_size`` new
    transitions the current policy is evaluated on the whole buffer, with
    each next action recomputed from the current policy, and then improved.
    """

    def __init__(self, cfg: RLConfig, G0, bounds: ActionBounds, phase: int = 0):
        self.cfg = cfg
        self.phase = int(phase)
        self.bounds = bounds
        lim = bounds.as_array()
        self.policy = Policy(
            G0,
            sigma=np.asarray(cfg.explore_frac, dtype=float) * lim,
            decay=cfg.explore_decay,
            sigma_floor=cfg.explore_floor_frac * lim,
        )
        self.W: np.ndarray | None = None
        self.iteration = 0
        self.buffer: list[tuple[np.ndarray, np.ndarray, float, np.ndarray]] = []
        self.pending = 0
        self.failed_evaluations = 0
        self.cost = cfg.cost

    def act(self, x, rng: np.random.Generator) -> np.ndarray:
        return act(self.policy, x, rng, self.bounds)

    def observe(self, x, u, x_next) -> bool:
        """Store one transition; returns True if a policy update happened."""
        c = instantaneous_cost(x, u, self.cost)
        self.buffer.append((np.asarray(x, float), np.asarray(u, float), c, np.asarray(x_next, float)))
        del self.buffer[: -self.cfg.buffer_size]
        self.pending += 1
        if self.pending >= self.cfg.batch_size:
            return self.improve()
        return False

    def experiences(self) -> list[Experience]:
        return [Experience(x, u, c, x1, self.policy.greedy(x1)) for x, u, c, x1 in self.buffer]

    def improve(self) -> bool:
        cfg = self.cfg
        try:
            ev = policy_evaluation(
                self.experiences(), cfg.gamma, cfg.reg, cfg.cond_threshold, cfg.cond_cap
            )
        except (InsufficientData, IllConditioned):
            self.failed_evaluations += 1
            return False
        if cfg.projection == "cost_floor":
            W = project_q_floor(ev.W, self.cost, cfg.eps_proj)
        else:
            W = project_q(ev.W, cfg.eps_proj)
        self.W = W
        self.policy.G = limit_gain_step(self.policy.G, policy_improvement(W), cfg.gain_step)
        self.policy.decay_exploration()
        self.iteration += 1
        self.pending = 0
        return True

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "iteration": self.iteration,
            "W": None if self.W is None else self.W.tolist(),
            "G": self.policy.G.tolist(),
            "sigma": self.policy.sigma.tolist(),
            "pending": self.pending,
            "failed_evaluations": self.failed_evaluations,
            "buffer": [[x.tolist(), u.tolist(), c, x1.tolist()] for x, u, c, x1 in self.buffer],
        }

    @classmethod
    def from_dict(cls, d: dict, cfg: RLConfig, bounds: ActionBounds) -> "PhaseLearner":
        obj = cls(cfg, np.asarray(d["G"]), bounds, d["phase"])
        obj.iteration = int(d["iteration"])
        obj.W = None if d["W"] is None else np.asarray(d["W"], dtype=float)
        obj.policy.sigma = np.asarray(d["sigma"], dtype=float)
        obj.pending = int(d["pending"])
        obj.failed_evaluations = int(d.get("failed_evaluations", 0))
        obj.buffer = [
            (np.asarray(x, float), np.asarray(u, float), float(c), np.asarray(x1, float))
            for x, u, c, x1 in d["buffer"]
        ]
        return obj
