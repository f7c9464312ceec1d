"""Step-size bounds, restricted monotonicity constants and preconditioners."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import GammaOutOfRange, NonpositiveInput, StepPlanIncomplete
from .game import GameProblem
from .graph import CommGraph

DEFAULT_SAFETY = 0.99


def alpha_max(mu: float, theta0: float, theta: float, lambda2: float) -> float:
    """Largest alpha for which the augmented operator is restricted strongly monotone."""
    if min(mu, theta0, theta, lambda2) <= 0:
        raise NonpositiveInput("mu, theta0, theta and lambda2 must be positive")
    return 4.0 * mu * lambda2 / ((theta0 + theta) ** 2 + 4.0 * mu * theta)


def monotonicity_matrix(alpha, mu, theta0, theta, lambda2, N) -> np.ndarray:
    off = -(theta0 + theta) / (2.0 * np.sqrt(N))
    return alpha * np.array([[mu / N, off], [off, lambda2 / alpha - theta]])


def mu_Fa(alpha, mu, theta0, theta, lambda2, N) -> float:
    """Restricted strong monotonicity constant of the augmented operator."""
    if alpha <= 0:
        raise NonpositiveInput("alpha must be positive")
    if np.isinf(lambda2):
        # single agent: no consensus term, F_a = alpha F
        return alpha * mu
    return float(np.linalg.eigvalsh(monotonicity_matrix(alpha, mu, theta0, theta, lambda2, N))[0])


def alpha_max_agg(mu: float, theta_tilde: float, lambda2: float, d_min: float) -> float:
    if min(mu, theta_tilde, lambda2, d_min) <= 0:
        raise NonpositiveInput("mu, theta_tilde, lambda2 and d_min must be positive")
    return min(4.0 * mu * lambda2 / theta_tilde ** 2, 2.0 * np.sqrt(2.0) * d_min / theta_tilde)


def _row_inf_norms(game: GameProblem):
    """(||A_i'||_inf, ||A_i||_inf) per agent."""
    At = np.array([np.abs(game.A_block(i)).sum(axis=0).max(initial=0.0) for i in range(game.num_agents)])
    Ai = np.array([np.abs(game.A_block(i)).sum(axis=1).max(initial=0.0) for i in range(game.num_agents)])
    return At, Ai


@dataclass
class StepPlan:
    alpha: float
    tau: np.ndarray
    delta: np.ndarray
    nu: np.ndarray
    eta_safe: float = DEFAULT_SAFETY
    beta: float | None = None
    alpha_bound: float | None = None
    mu_Fa: float | None = None
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        self.nu = np.asarray(self.nu, dtype=float)
        for name in ("tau", "delta", "nu"):
            if np.any(getattr(self, name) <= 0):
                raise NonpositiveInput(f"{name} must be strictly positive")
        if self.alpha <= 0:
            raise NonpositiveInput("alpha must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("tau", "delta", "nu"):
            d[k] = getattr(self, k).tolist()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), default=float)


def gne_step_bounds(graph: CommGraph, game: GameProblem, eta_safe: float = DEFAULT_SAFETY):
    """Per-agent and per-edge steps that keep the preconditioner positive definite."""
    if not 0 < eta_safe < 1:
        raise NonpositiveInput("eta_safe must lie in (0, 1)")
    At, Ai = _row_inf_norms(game)
    d = graph.degrees
    sqrt_deg = np.sqrt(graph.weights).sum(axis=1)
    tau_den = d + At
    tau = eta_safe / np.where(tau_den > 0, tau_den, 1.0)
    delta_den = Ai + sqrt_deg
    delta = eta_safe / np.where(delta_den > 0, delta_den, 1.0)
    nu = eta_safe / (2.0 * np.sqrt(graph.edge_weights))
    return tau, delta, nu


def aggregative_step_bounds(graph: CommGraph, game: GameProblem, eta_safe: float = DEFAULT_SAFETY):
    if not 0 < eta_safe < 1:
        raise NonpositiveInput("eta_safe must lie in (0, 1)")
    At, Ai = _row_inf_norms(game)
    d = graph.degrees
    dmax = d.max()
    beta = eta_safe / (4.0 * dmax) if dmax > 0 else 1.0
    tau_den = 4.0 * d + At
    tau = eta_safe / np.where(tau_den > 0, tau_den, 1.0)
    delta_den = Ai + np.sqrt(graph.weights).sum(axis=1)
    delta = eta_safe / np.where(delta_den > 0, delta_den, 1.0)
    nu = eta_safe / (2.0 * np.sqrt(graph.edge_weights))
    return tau, delta, nu, beta


def make_gne_plan(game: GameProblem, graph: CommGraph, alpha: float | None = None,
                  eta_safe: float = DEFAULT_SAFETY, alpha_scale: float = 1.0) -> StepPlan:
    """Plan for the general algorithm; ``alpha`` defaults to ``alpha_scale * alpha_max``."""
    c = game.constants()
    lam2 = graph._lambda2
    amax = alpha_max(c.mu, c.theta0, c.theta, lam2) if np.isfinite(lam2) else np.inf
    if alpha is None:
        if not np.isfinite(amax):
            raise StepPlanIncomplete("alpha must be given when there is no consensus term")
        alpha = alpha_scale * amax
    tau, delta, nu = gne_step_bounds(graph, game, eta_safe)
    return StepPlan(alpha=float(alpha), tau=tau, delta=delta, nu=nu, eta_safe=eta_safe,
                    alpha_bound=float(amax),
                    mu_Fa=mu_Fa(alpha, c.mu, c.theta0, c.theta, lam2, game.num_agents),
                    bounds={"mu": c.mu, "theta0": c.theta0, "theta": c.theta, "lambda2": float(lam2)})


def make_aggregative_plan(game, graph: CommGraph, alpha: float | None = None,
                          eta_safe: float = DEFAULT_SAFETY, alpha_scale: float = 1.0) -> StepPlan:
    c = game.constants()
    th = game.theta_tilde()
    lam2 = graph._lambda2
    if np.isfinite(lam2):
        amax = alpha_max_agg(c.mu, th, lam2, graph.degrees.min())
    else:
        amax = np.inf
    if alpha is None:
        if not np.isfinite(amax):
            raise StepPlanIncomplete("alpha must be given when there is no consensus term")
        alpha = alpha_scale * amax
    tau, delta, nu, beta = aggregative_step_bounds(graph, game, eta_safe)
    return StepPlan(alpha=float(alpha), tau=tau, delta=delta, nu=nu, beta=float(beta),
                    eta_safe=eta_safe, alpha_bound=float(amax),
                    bounds={"mu": c.mu, "theta_tilde": th, "lambda2": float(lam2)})


# --- preconditioners (verification paths only) -------------------------------

def _own_coupling_block(game: GameProblem) -> sp.csr_matrix:
    """Sparse ``blkdiag(A_i) R`` mapping flattened estimates to stacked A_i x_i (Nm x Nn)."""
    N, n, m = game.num_agents, game.n, game.m
    rows, cols, vals = [], [], []
    for k in range(m):
        for r in range(n):
            a = game.A[k, r]
            if a != 0:
                i = game.owner[r]
                rows.append(i * m + k)
                cols.append(i * n + r)
                vals.append(a)
    return sp.csr_matrix((vals, (rows, cols)), shape=(N * m, N * n))


def _edge_incidence_m(graph: CommGraph, m: int) -> sp.csr_matrix:
    return sp.kron(sp.csr_matrix(graph._incidence), sp.identity(m), format="csr")


def assemble_phi(game: GameProblem, graph: CommGraph, plan: StepPlan, dense: bool = False):
    """Preconditioner in the layout (xbold, v, lambda)."""
    if plan.tau is None or plan.delta is None or plan.nu is None:
        raise StepPlanIncomplete("tau, delta and nu are required")
    N, n, m, E = game.num_agents, game.n, game.m, graph.num_edges
    top = sp.kron(sp.diags(1.0 / plan.tau) + sp.csr_matrix(graph.weights), sp.identity(n))
    RA = _own_coupling_block(game)
    Vm = _edge_incidence_m(graph, m)
    if m == 0:
        Phi = sp.csr_matrix(top)
    elif E == 0:
        Phi = sp.bmat([[top, -RA.T], [-RA, sp.diags(np.repeat(1.0 / plan.delta, m))]],
                      format="csr", dtype=float)
    else:
        nu_inv = sp.diags(np.repeat(1.0 / plan.nu, m))
        delta_inv = sp.diags(np.repeat(1.0 / plan.delta, m))
        Phi = sp.bmat([
            [top, None, -RA.T],
            [None, nu_inv, Vm],
            [-RA, Vm.T, delta_inv],
        ], format="csr", dtype=float)
    return Phi.toarray() if dense else Phi


def assemble_phi_ne(graph: CommGraph, tau, n: int, dense: bool = False):
    Phi = sp.kron(sp.diags(1.0 / np.asarray(tau)) + sp.csr_matrix(graph.weights), sp.identity(n), format="csr")
    return Phi.toarray() if dense else Phi


def phi_ne_norm(graph: CommGraph, tau, exact: bool = True) -> float:
    """Spectral norm of the NE preconditioner; it equals that of the N x N factor."""
    small = np.diag(1.0 / np.asarray(tau)) + graph.weights
    if exact:
        return float(np.abs(np.linalg.eigvalsh(small)).max())
    return float(np.max(graph.degrees + 1.0 / np.asarray(tau)))


def assemble_phi_agg(game: GameProblem, graph: CommGraph, plan: StepPlan, dense: bool = False):
    """Aggregative preconditioner in the layout (x, s, v, lambda)."""
    if plan.beta is None:
        raise StepPlanIncomplete("beta is required for the aggregative preconditioner")
    N, n, m = game.num_agents, game.n, game.m
    nbar = n // N
    Ln = sp.kron(sp.csr_matrix(graph._laplacian), sp.identity(nbar), format="csr")
    tau_inv = sp.diags(np.repeat(1.0 / plan.tau, nbar))
    beta_inv = sp.identity(n) / plan.beta
    A_bd = sp.block_diag([sp.csr_matrix(game.A_block(i)) for i in range(N)], format="csr")
    Vm = _edge_incidence_m(graph, m)
    nu_inv = sp.diags(np.repeat(1.0 / plan.nu, m))
    delta_inv = sp.diags(np.repeat(1.0 / plan.delta, m))
    Z = None
    Phi = sp.bmat([
        [tau_inv - Ln, -Ln, Z, -A_bd.T],
        [-Ln, beta_inv - Ln, Z, Z],
        [Z, Z, nu_inv, Vm],
        [-A_bd, Z, Vm.T, delta_inv],
    ], format="csr", dtype=float)
    return Phi.toarray() if dense else Phi


# --- rates for the NE-only algorithm ------------------------------------------

def ne_rate(gamma: float, mu_fa: float, norm_phi_ne: float) -> float:
    if not 0 < gamma < 2:
        raise GammaOutOfRange("gamma must lie in (0, 2)")
    if mu_fa < 0:
        raise NonpositiveInput("mu_Fa must be nonnegative")
    return max(1.0 - gamma * mu_fa / (norm_phi_ne + mu_fa), gamma - 1.0)


def optimal_gamma(mu_fa: float, norm_phi_ne: float) -> float:
    return 1.0 + norm_phi_ne / (norm_phi_ne + 2.0 * mu_fa)


def theta_Fa(graph: CommGraph, alpha: float, theta: float) -> float:
    """Lipschitz bound of the augmented operator."""
    return 2.0 * graph.degrees.max() + alpha * theta


def kappa_Fa(mu_fa: float, theta_fa: float) -> float:
    return mu_fa / theta_fa


def fb_step_bound(mu_fa: float, theta_fa: float, scale: float = 1.0) -> float:
    """Projected pseudo-gradient step of order mu_Fa / (theta_Fa^2 + mu_Fa)."""
    return scale * mu_fa / (theta_fa ** 2 + mu_fa)


def best_fb_alpha(game: GameProblem, graph: CommGraph, grid: int = 400) -> tuple[float, float]:
    """alpha in (0, alpha_max] maximizing the baseline step bound; returns (alpha, step)."""
    c = game.constants()
    lam2 = graph._lambda2
    amax = alpha_max(c.mu, c.theta0, c.theta, lam2)
    best = (amax, 0.0)
    for a in amax * np.arange(1, grid + 1) / grid:
        mf = mu_Fa(a, c.mu, c.theta0, c.theta, lam2, game.num_agents)
        if mf <= 0:
            continue
        s = fb_step_bound(mf, theta_Fa(graph, a, c.theta))
        if s > best[1]:
            best = (float(a), float(s))
    return best
