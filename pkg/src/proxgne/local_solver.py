"""Projected-gradient inner solves with a guaranteed a-priori error bound.

Each agent's proximal best response is the zero of a strongly monotone map
``G_i`` over its local set. Warm-started projected gradient with a fixed step
contracts by ``rho_i`` per step, so after ``j`` steps the distance to the
exact solution is at most ``rho_i**j * d_i / (1 - rho_i)`` where ``d_i`` is the
first-step displacement. The number of steps is chosen from that bound before
iterating, as agents would do locally.

All agents are solved together: arrays are stacked over the joint action and
per-agent quantities are expanded through ``owner``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NonfiniteIterate
from .sets import ProductSet

EXACT_EPS = 1e-12
EXACT_CAP = 100_000


@dataclass
class InnerSolveReport:
    steps: np.ndarray          # per-agent projected-gradient steps taken
    eps: np.ndarray            # guaranteed accuracy
    displacement: np.ndarray   # first-step displacement per agent
    rho: np.ndarray            # contraction factor per agent
    capped: bool = False

    @property
    def max_steps(self) -> int:
        return int(self.steps.max(initial=0))

    @property
    def mean_steps(self) -> float:
        return float(self.steps.mean()) if self.steps.size else 0.0

    def error_bound(self) -> np.ndarray:
        """Per-agent bound on the distance to the exact subproblem solution."""
        with np.errstate(divide="ignore", invalid="ignore"):
            b = self.rho ** self.steps * self.displacement / (1.0 - self.rho)
        return np.where(self.rho > 0, b, 0.0)


def required_steps(eps, rho, displacement, cap=EXACT_CAP):
    """Smallest ``j >= 1`` with ``rho**j * displacement / (1 - rho) <= eps``."""
    eps = np.asarray(eps, dtype=float)
    rho = np.asarray(rho, dtype=float)
    disp = np.asarray(displacement, dtype=float)
    target = eps * (1.0 - rho)
    steps = np.ones(np.broadcast(eps, rho, disp).shape, dtype=np.int64)
    need = (disp > target) & (rho > 0)
    if np.any(need):
        with np.errstate(divide="ignore", invalid="ignore"):
            j = np.log(target / disp) / np.log(rho)
        j = np.ceil(np.where(need, j, 1.0) - 1e-12)
        steps = np.where(need, np.maximum(j, 1.0), 1.0).astype(np.int64)
    return np.minimum(steps, cap)


def projected_gradient_batch(grad: Callable[[np.ndarray], np.ndarray], sets: ProductSet,
                             owner: np.ndarray, x0: np.ndarray, step: np.ndarray,
                             rho: np.ndarray, eps, cap: int = EXACT_CAP):
    """Run warm-started projected gradient for every agent at once.

    ``step`` and ``rho`` are per agent; ``eps`` is a scalar or per-agent array.
    Agents stop individually once their step count from the a-priori bound
    is reached; later sweeps leave their blocks untouched.
    """
    rho = np.clip(np.asarray(rho, dtype=float), 0.0, None)
    N = rho.size
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (N,))
    step_c = step[owner]
    x = np.asarray(x0, dtype=float)
    x1 = sets.project(x - step_c * grad(x))
    if not np.all(np.isfinite(x1)):
        raise NonfiniteIterate("inner iterate became non-finite")
    disp = np.sqrt(np.bincount(owner, weights=(x1 - x) ** 2, minlength=N))
    steps = required_steps(eps, rho, disp, cap)
    capped = bool(np.any(steps >= cap))
    x = x1
    jmax = int(steps.max(initial=1))
    for j in range(2, jmax + 1):
        active = (steps >= j)[owner]
        xn = sets.project(x - step_c * grad(x))
        x = np.where(active, xn, x)
        if not np.all(np.isfinite(x)):
            raise NonfiniteIterate("inner iterate became non-finite")
    return x, InnerSolveReport(steps=steps, eps=np.array(eps), displacement=disp, rho=np.array(rho),
                               capped=capped)


def gradient_step_for(mu_i, theta_i, reg_i):
    """Step and contraction for a gradient with curvature in ``[mu_i + reg_i, theta_i + reg_i]``.

    The step ``2 / (L + m)`` gives ``rho = (L - m) / (L + m)``.
    """
    m = np.asarray(mu_i) + reg_i
    L = np.asarray(theta_i) + reg_i
    return 2.0 / (L + m), (L - m) / (L + m)


def monotone_step_for(m, L, symmetric: bool):
    """Step and contraction for a strongly monotone, Lipschitz map.

    Symmetric Jacobians (gradients) get the optimal ``2 / (L + m)``; otherwise
    the classical ``m / L**2`` with ``rho = sqrt(1 - m**2 / L**2)``.
    """
    m = np.asarray(m, dtype=float)
    L = np.asarray(L, dtype=float)
    if symmetric:
        return 2.0 / (L + m), (L - m) / (L + m)
    return m / L ** 2, np.sqrt(np.maximum(0.0, 1.0 - (m / L) ** 2))


@dataclass
class AgentContext:
    """Everything one agent needs for its proximal best response.

    ``grad_own(y)`` is ``grad_{x_i} J_i(y, estimates_{i,-i}^{k+1})``.
    """

    grad_own: Callable[[np.ndarray], np.ndarray]
    local_set: object
    x_prev: np.ndarray
    neighbor_sum: np.ndarray      # sum_j w_ij xbold_{j,i}^k
    dual_term: np.ndarray         # A_i^T lambda_i^k
    alpha: float
    tau: float
    degree: float
    mu_i: float
    theta_i: float


def prox_best_response(ctx: AgentContext, eps: float, cap: int = EXACT_CAP):
    """Approximate argmin of the agent's regularized best-response problem."""
    reg = 1.0 / (ctx.alpha * ctx.tau) + ctx.degree / ctx.alpha
    step, rho = gradient_step_for(ctx.mu_i, ctx.theta_i, reg)

    def grad(y):
        return (ctx.grad_own(y) + (y - ctx.x_prev) / (ctx.alpha * ctx.tau)
                + (ctx.degree * y - ctx.neighbor_sum) / ctx.alpha + ctx.dual_term / ctx.alpha)

    sets = ProductSet([ctx.local_set], [0, ctx.x_prev.size])
    owner = np.zeros(ctx.x_prev.size, dtype=int)
    x, rep = projected_gradient_batch(grad, sets, owner, ctx.x_prev, np.array([step]),
                                      np.array([rho]), eps, cap)
    return x, rep
