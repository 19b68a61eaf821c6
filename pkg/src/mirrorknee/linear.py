"""Linear-quadratic verification plant and its Riccati oracle.

On x' = A x + B u with cost x'Rx x + u'Ru u the Q-function of any linear
policy is exactly quadratic, so the learner in :mod:`mirrorknee.rl` can be
checked against the optimal gain from the discrete algebraic Riccati
equation.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleDivergence
from .rl import (
    CostMatrices,
    Experience,
    instantaneous_cost,
    policy_evaluation,
    policy_improvement,
    project_q,
)


def lqr_plant_step(x, u, A, B) -> np.ndarray:
    return np.asarray(A, dtype=float) @ np.asarray(x, dtype=float) + np.asarray(B, dtype=float) @ np.asarray(u, dtype=float)


def riccati_oracle(A, B, cost: CostMatrices, gamma: float = 1.0, tol: float = 1e-13, max_iter: int = 10_000):
    """Solve the discounted DARE by fixed-point iteration from P = Rx.

    Returns ``(P, G)`` with the optimal policy u = -G x. Raises
    OracleDivergence when the iteration blows up or has not settled after
    ``max_iter`` sweeps.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Rx, Ru = cost.Rx, cost.Ru
    P = Rx.copy()
    for _ in range(max_iter):
        BtPA = B.T @ P @ A
        S = Ru + gamma * B.T @ P @ B
        P_new = Rx + gamma * A.T @ P @ A - gamma**2 * BtPA.T @ np.linalg.solve(S, BtPA)
        P_new = 0.5 * (P_new + P_new.T)
        if not np.all(np.isfinite(P_new)) or np.abs(P_new).max() > 1e150:
            raise OracleDivergence("Riccati iterate became non-finite")
        if np.abs(P_new - P).max() <= tol * max(1.0, np.abs(P_new).max()):
            P = P_new
            G = np.linalg.solve(Ru + gamma * B.T @ P @ B, gamma * B.T @ P @ A)
            return P, G
        P = P_new
    raise OracleDivergence(f"Riccati iteration did not converge in {max_iter} steps")


def collect_linear_batch(A, B, G, cost, n, rng, explore=1.0) -> list[Experience]:
    """Exact transitions from random states with exploratory actions."""
    nx, nu = np.shape(B)
    batch = []
    for _ in range(n):
        x = rng.normal(size=nx)
        u = -G @ x + explore * rng.normal(size=nu)
        x1 = lqr_plant_step(x, u, A, B)
        batch.append(Experience(x, u, instantaneous_cost(x, u, cost), x1, -G @ x1))
    return batch


def rollout_cost(A, B, G, cost, x0, steps=200, gamma=1.0) -> float:
    x = np.asarray(x0, dtype=float)
    total = 0.0
    for k in range(steps):
        u = -G @ x
        total += gamma**k * instantaneous_cost(x, u, cost)
        x = lqr_plant_step(x, u, A, B)
    return total


def lqr_policy_iteration(
    A, B, cost: CostMatrices, G0, gamma=1.0, iterations=10, n_samples=30, seed=0, eps=1e-6, explore=1.0
) -> list[np.ndarray]:
    """Gains G0, G1, ... from evaluation -> projection -> improvement."""
    rng = np.random.default_rng(seed)
    gains = [np.asarray(G0, dtype=float)]
    for _ in range(iterations):
        batch = collect_linear_batch(A, B, gains[-1], cost, n_samples, rng, explore)
        W = policy_evaluation(batch, gamma).W
        gains.append(policy_improvement(project_q(W, eps)))
    return gains


@dataclass
class LQRCheckConfig:
    A: list = field(default_factory=lambda: [[1.05, 0.1], [0.0, 0.95]])
    B: list = field(default_factory=lambda: [[0.5, 0.0, 0.1], [0.0, 0.3, 0.2]])
    Rx: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    Ru: list = field(default_factory=lambda: [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0], [0.0, 0.0, 0.5]])
    G0: list | None = None
    gamma: float = 1.0
    iterations: int = 10
    n_samples: int = 30
    tol: float = 1e-3
    seed: int = 0


@dataclass
class LQRReport:
    G_star: np.ndarray
    gains: list
    errors: list
    passed: bool
    runtime: float

    def lines(self) -> list[str]:
        out = [f"iter {i:2d}  relative gain error {e:.3e}" for i, e in enumerate(self.errors)]
        out.append(f"{'PASS' if self.passed else 'FAIL'}  runtime {self.runtime:.3f}s")
        return out


def default_initial_gain(A, B) -> np.ndarray:
    """Gain placing A - B G at 0.5 I (least-norm), used when none is given."""
    A = np.asarray(A, dtype=float)
    return np.linalg.pinv(np.asarray(B, dtype=float)) @ (A - 0.5 * np.eye(A.shape[0]))


def lqr_check(cfg: LQRCheckConfig) -> LQRReport:
    """Run policy iteration on the linear plant and compare with the oracle.

    ``passed`` requires the relative gain error (Frobenius) to drop below
    ``cfg.tol`` within ``cfg.iterations`` iterations.
    """
    A = np.asarray(cfg.A, dtype=float)
    B = np.asarray(cfg.B, dtype=float)
    cost = CostMatrices(np.asarray(cfg.Rx, dtype=float), np.asarray(cfg.Ru, dtype=float))
    _, G_star = riccati_oracle(A, B, cost, cfg.gamma)
    G0 = default_initial_gain(A, B) if cfg.G0 is None else np.asarray(cfg.G0, dtype=float)
    start = time.perf_counter()
    gains = lqr_policy_iteration(A, B, cost, G0, cfg.gamma, cfg.iterations, cfg.n_samples, cfg.seed)
    runtime = time.perf_counter() - start
    denom = max(np.linalg.norm(G_star), 1e-12)
    errors = [float(np.linalg.norm(G - G_star) / denom) if np.linalg.norm(G_star) > 0 else float(np.linalg.norm(G)) for G in gains]
    return LQRReport(G_star, gains, errors, min(errors) < cfg.tol, runtime)
