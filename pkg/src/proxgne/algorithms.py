"""Distributed equilibrium-seeking iterations over a communication graph.

Every iteration has one exchange phase (all reads use k-indexed neighbor
values) followed by independent per-agent updates; both are vectorized over
agents here, so results do not depend on any agent ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.spatial.distance import pdist

from .errors import (
    AlphaTooLarge,
    CouplingPresent,
    DimensionMismatch,
    GammaOutOfRange,
    MissingEdgeVariable,
    NonpositiveInput,
)
from .game import GameProblem, QuadraticAggregativeGame, augmented_operator
from .graph import CommGraph
from .local_solver import (
    EXACT_CAP,
    InnerSolveReport,
    gradient_step_for,
    monotone_step_for,
    projected_gradient_batch,
)
from .ppa import Schedule, apply_schedule_point, relax
from .stepsizes import StepPlan, assemble_phi


# --- states ------------------------------------------------------------------

@dataclass
class NetworkState:
    X: np.ndarray                 # N x n estimates, own slots hold the actions
    Z: np.ndarray                 # N x m
    Lam: np.ndarray               # N x m
    V: np.ndarray | None = None   # E x m edge variable (verification runs)
    k: int = 0
    comms: int = 0

    def copy(self):
        return NetworkState(self.X.copy(), self.Z.copy(), self.Lam.copy(),
                            None if self.V is None else self.V.copy(), self.k, self.comms)

    def combine(self, other: "NetworkState", a: float, b: float) -> "NetworkState":
        """Componentwise ``a * self + b * other`` (counters taken from ``self``)."""
        V = None if self.V is None else a * self.V + b * other.V
        return NetworkState(a * self.X + b * other.X, a * self.Z + b * other.Z,
                            a * self.Lam + b * other.Lam, V, self.k, self.comms)


@dataclass
class AggState:
    X: np.ndarray                 # N x nbar actions
    S: np.ndarray                 # N x nbar aggregate-tracking errors
    Z: np.ndarray
    Lam: np.ndarray
    V: np.ndarray | None = None
    k: int = 0
    comms: int = 0

    @property
    def sigma(self):
        return self.X + self.S

    def copy(self):
        return AggState(self.X.copy(), self.S.copy(), self.Z.copy(), self.Lam.copy(),
                        None if self.V is None else self.V.copy(), self.k, self.comms)


def initial_state(game: GameProblem, graph: CommGraph, x0=None, lam0=None, track_v=False,
                  estimates=None) -> NetworkState:
    """Estimates start at ``1 (x) x0`` unless given; ``z0 = 0`` and ``v0 = 0``."""
    N, n, m = game.num_agents, game.n, game.m
    if x0 is None:
        x0 = game.sets.project(np.zeros(n))
    X = game.lift(x0) if estimates is None else np.array(estimates, dtype=float).reshape(N, n)
    Lam = np.zeros((N, m)) if lam0 is None else np.array(lam0, dtype=float).reshape(N, m)
    V = np.zeros((graph.num_edges, m)) if track_v else None
    return NetworkState(X, np.zeros((N, m)), Lam, V)


def initial_agg_state(game: QuadraticAggregativeGame, graph: CommGraph, x0, track_v=False) -> AggState:
    N, nb, m = game.num_agents, game.nbar, game.m
    X = np.array(x0, dtype=float).reshape(N, nb)
    return AggState(X, np.zeros((N, nb)), np.zeros((N, m)), np.zeros((N, m)),
                    np.zeros((graph.num_edges, m)) if track_v else None)


# --- shared graph precomputation ---------------------------------------------

class _Network:
    def __init__(self, graph: CommGraph, plan: StepPlan, m: int):
        self.graph = graph
        self.W = graph.weights
        self.d = graph.degrees
        self.L = graph._laplacian
        N = graph.num_agents
        Wnu = np.zeros((N, N))
        edges = np.array(graph.edges, dtype=int).reshape(-1, 2)
        if edges.size:
            Wnu[edges[:, 0], edges[:, 1]] = plan.nu * graph.edge_weights
            Wnu[edges[:, 1], edges[:, 0]] = plan.nu * graph.edge_weights
        # nu-weighted Laplacian: z_i += sum_j nu_ij w_ij (lam_i - lam_j)
        self.Lnu = np.diag(Wnu.sum(axis=1)) - Wnu
        self.edges = edges
        self.edge_gain = plan.nu * np.sqrt(graph.edge_weights) if edges.size else np.zeros(0)
        self.Vinc = graph._incidence
        self.m = m

    def v_update(self, V, Lam):
        if self.edges.size == 0:
            return V.copy()
        return V + self.edge_gain[:, None] * (Lam[self.edges[:, 0]] - Lam[self.edges[:, 1]])

    def vT(self, V):
        """``V_m^T v`` as an N x m array."""
        return self.Vinc.T @ V


def _check_no_coupling(game):
    if game.has_coupling:
        raise CouplingPresent("NE iteration requires a game without coupling constraints")


# --- general algorithm ---------------------------------------------------------

class GneIteration:
    """Resolvent of the preconditioned KKT operator, computed agent-wise."""

    def __init__(self, game: GameProblem, graph: CommGraph, plan: StepPlan, cap: int = EXACT_CAP):
        if graph.num_agents != game.num_agents:
            raise DimensionMismatch("graph and game disagree on the number of agents")
        self.game, self.graph, self.plan = game, graph, plan
        self.net = _Network(graph, plan, game.m)
        self.cap = cap
        alpha = plan.alpha
        tau = plan.tau
        d = self.net.d
        mu_i, theta_i = game.agent_curvature()
        reg = 1.0 / (alpha * tau) + d / alpha
        self.step, self.rho = gradient_step_for(mu_i, theta_i, reg)
        self.A_norm = np.array([np.linalg.norm(game.A_block(i), 2) if game.m else 0.0
                                for i in range(game.num_agents)])

    # Algorithm steps on arbitrary (possibly extrapolated) inputs.
    def estimates(self, X, WX):
        tau, d = self.plan.tau, self.net.d
        return (X + tau[:, None] * WX) / (1.0 + tau * d)[:, None]

    def x_update(self, X, WX, Xhat, Lam, eps, dual=True):
        g = self.game
        alpha, tau, d = self.plan.alpha, self.plan.tau, self.net.d
        x_prev = g.own_actions(X)
        nb_sum = WX[g.owner, g.cols]
        lin = -(x_prev / tau[g.owner] + nb_sum) / alpha
        if dual and g.m:
            lin = lin + g.coupling_transpose(Lam) / alpha
        quad = (1.0 / (alpha * tau) + d / alpha)[g.owner]
        own_grad = g.own_gradient_map(Xhat)

        def grad(y):
            return own_grad(y) + quad * y + lin

        return projected_gradient_batch(grad, g.sets, g.owner, x_prev, self.step, self.rho, eps, self.cap)

    def resolvent(self, s: NetworkState, eps) -> tuple[NetworkState, InnerSolveReport]:
        """One application of Algorithm-1 updates to ``s`` (comms counted by caller)."""
        g, net, plan = self.game, self.net, self.plan
        WX = net.W @ s.X                       # exchange of estimates
        Xhat = self.estimates(s.X, WX)
        x_new, rep = self.x_update(s.X, WX, Xhat, s.Lam, eps)
        X_new = Xhat
        X_new[g.owner, g.cols] = x_new
        if g.m:
            Z_new = s.Z + net.Lnu @ s.Lam
            V_new = None if s.V is None else net.v_update(s.V, s.Lam)
            x_old = g.own_actions(s.X)
            Ax = g.coupling_per_agent(2.0 * x_new - x_old)
            Lam_new = np.maximum(0.0, s.Lam + plan.delta[:, None]
                                 * (Ax - g.b_blocks - (2.0 * Z_new - s.Z)))
        else:
            Z_new, Lam_new = s.Z.copy(), s.Lam.copy()
            V_new = None if s.V is None else s.V.copy()
        return NetworkState(X_new, Z_new, Lam_new, V_new, s.k + 1, s.comms + 1), rep

    def error_bound(self, rep: InnerSolveReport) -> float:
        """Euclidean bound on the distance of the output from the exact resolvent."""
        ex = float(np.sqrt(np.sum(rep.error_bound() ** 2)))
        return ex * (1.0 + 2.0 * float(np.max(self.plan.delta * self.A_norm, initial=0.0)))

    def step_state(self, s: NetworkState, eps) -> tuple[NetworkState, InnerSolveReport]:
        return self.resolvent(s, eps)


def pppa_gne_step(game, graph, plan, state: NetworkState, eps=1e-12):
    it = GneIteration(game, graph, plan)
    return it.resolvent(state, eps)


def accelerated_gne_step(it: GneIteration, state: NetworkState, prev: NetworkState,
                         schedule: Schedule, eps=1e-12):
    """Inertial extrapolation, one resolvent evaluation, then relaxation.

    With ``gamma > 1`` the relaxed multipliers may leave the nonnegative
    orthant; the next lambda-update projects them back.
    """
    c = schedule.inertia(state.k)
    tilde = state if c == 0.0 else state.combine(prev, 1.0 + c, -c)
    T, rep = it.resolvent(tilde, eps)
    gamma = schedule.relaxation()
    if gamma == 1.0:
        out = T
    else:
        out = T.combine(state, gamma, 1.0 - gamma)
    out.k, out.comms = state.k + 1, state.comms + 1
    return out, rep


# --- NE-only algorithm --------------------------------------------------------

def pppa_ne_step(it: GneIteration, X: np.ndarray, gamma: float, eps=1e-12):
    """Averaging, proximal best response without dual terms, then relaxation."""
    if not 0 < gamma < 2:
        raise GammaOutOfRange("gamma must lie in (0, 2)")
    g = it.game
    _check_no_coupling(g)
    if np.any(1.0 / it.plan.tau <= it.net.d):
        raise NonpositiveInput("NE iteration requires 1/tau_i > d_i")
    WX = it.net.W @ X
    Xhat = it.estimates(X, WX)
    x_new, rep = it.x_update(X, WX, Xhat, None, eps, dual=False)
    Xb = Xhat
    Xb[g.owner, g.cols] = x_new
    return relax(X, Xb, gamma), rep


# --- projected pseudo-gradient baseline ----------------------------------------

def fb_ne_baseline_step(game: GameProblem, graph: CommGraph, X, alpha: float, tau_fb: float):
    """``proj(xbold - tau_fb * F_a(xbold))`` with projection on own slots only."""
    _check_no_coupling(game)
    Y = X - tau_fb * augmented_operator(game, graph, alpha, X)
    Y[game.owner, game.cols] = game.sets.project(Y[game.owner, game.cols])
    return Y


# --- resolvent-inclusion residual ---------------------------------------------

def _phi_vector(game, s: NetworkState):
    return np.concatenate([s.X.ravel(), s.V.ravel(), s.Lam.ravel()])


def single_valued_part(game: GameProblem, graph: CommGraph, plan: StepPlan, s: NetworkState):
    """The single-valued part of the KKT operator in the layout (xbold, v, lambda)."""
    Fa = augmented_operator(game, graph, plan.alpha, s.X)
    if game.m:
        Fa[game.owner, game.cols] += game.coupling_transpose(s.Lam)
    Vinc = graph._incidence
    v_part = -(Vinc @ s.Lam)
    lam_part = game.b_blocks + Vinc.T @ s.V - game.coupling_per_agent(game.own_actions(s.X))
    return np.concatenate([Fa.ravel(), v_part.ravel(), lam_part.ravel()])


def resolvent_inclusion_residual(game: GameProblem, graph: CommGraph, plan: StepPlan,
                                 state: NetworkState, state_next: NetworkState, Phi=None) -> float:
    """Max-norm violation of ``0 in Phi (w+ - w) + A(w+)`` over all blocks."""
    if state.V is None or state_next.V is None:
        raise MissingEdgeVariable("the edge variable v must be tracked")
    if Phi is None:
        Phi = assemble_phi(game, graph, plan)
    N, n, m, E = game.num_agents, game.n, game.m, graph.num_edges
    delta = _phi_vector(game, state_next) - _phi_vector(game, state)
    r = Phi @ delta + single_valued_part(game, graph, plan, state_next)
    rx = r[:N * n].reshape(N, n)
    rv = r[N * n:N * n + E * m]
    rl = r[N * n + E * m:]
    x_own = game.own_actions(state_next.X)
    r_own = rx[game.owner, game.cols]
    own_res = np.abs(x_own - game.sets.project(x_own - r_own))
    mask = np.ones((N, n), dtype=bool)
    mask[game.owner, game.cols] = False
    other_res = np.abs(rx[mask])
    lam = state_next.Lam.ravel()
    lam_res = np.abs(lam - np.maximum(0.0, lam - rl))
    parts = [own_res, other_res, np.abs(rv), lam_res]
    return float(max(p.max(initial=0.0) for p in parts))


# --- aggregative algorithm -----------------------------------------------------

class AggregativeIteration:
    """Aggregative iteration: agents exchange only ``(sigma_i, lambda_i)``."""

    def __init__(self, game: QuadraticAggregativeGame, graph: CommGraph, plan: StepPlan,
                 use_potential: bool = False, cap: int = EXACT_CAP):
        if plan.beta is None:
            raise NonpositiveInput("aggregative plan needs beta")
        self.game, self.graph, self.plan = game, graph, plan
        self.net = _Network(graph, plan, game.m)
        self.cap = cap
        self.use_potential = use_potential and game.has_potential
        N, nb = game.num_agents, game.nbar
        alpha, tau = plan.alpha, plan.tau
        th = game.theta_tilde()
        if np.any(1.0 / tau - alpha * np.sqrt(2.0) * th <= 0):
            raise AlphaTooLarge("inner inclusion is not strongly monotone: 1/tau_i <= alpha sqrt(2) theta~")
        # Jacobian of y -> alpha F~_i(y, y + s) + y / tau_i (exact for quadratic costs)
        J = alpha * (game.P + game.C + game.C.transpose(0, 2, 1) / N) + np.eye(nb)[None] / tau[:, None, None]
        sym = 0.5 * (J + J.transpose(0, 2, 1))
        m_i = np.array([np.linalg.eigvalsh(Si)[0] for Si in sym])
        L_i = np.array([np.linalg.norm(Ji, 2) for Ji in J])
        symmetric = bool(np.allclose(J, J.transpose(0, 2, 1)))
        self.step, self.rho = monotone_step_for(m_i, L_i, symmetric)
        self.owner = np.repeat(np.arange(N), nb)
        self.A_norm = np.array([np.linalg.norm(game.A_block(i), 2) if game.m else 0.0 for i in range(N)])

    def _dual(self, Lam):
        g = self.game
        if not g.m:
            return np.zeros((g.num_agents, g.nbar))
        return np.einsum("imk,im->ik", g.A.reshape(g.m, g.num_agents, g.nbar).transpose(1, 0, 2), Lam)

    def x_update(self, X, S_new, Lam, Lsig, eps):
        g, alpha, tau = self.game, self.plan.alpha, self.plan.tau
        N, nb = g.num_agents, g.nbar
        const = self._dual(Lam) + Lsig - X / tau[:, None]
        if self.use_potential:
            # gradient of phi_i(y, s_i) + ||y - x_i||^2 / (2 alpha tau_i) + lin' y / alpha, times alpha
            def grad(yflat):
                Y = yflat.reshape(N, nb)
                Cy = np.einsum("iab,ib->ia", g.C, Y)
                gphi = (np.einsum("iab,ib->ia", g.P, Y) + g.r + np.einsum("iab,ib->ia", g.C, S_new + Y)
                        + Cy - (N - 1) / N * Cy)
                return (alpha * gphi + Y / tau[:, None] + const).ravel()
        else:
            def grad(yflat):
                Y = yflat.reshape(N, nb)
                return (alpha * g.aggregative_gradient_all(Y, Y + S_new) + Y / tau[:, None] + const).ravel()
        x, rep = projected_gradient_batch(grad, g.sets, self.owner, X.ravel(), self.step, self.rho, eps, self.cap)
        return x.reshape(N, nb), rep

    def resolvent(self, s: AggState, eps) -> tuple[AggState, InnerSolveReport]:
        g, net, plan = self.game, self.net, self.plan
        sigma = s.X + s.S
        Lsig = net.L @ sigma                    # exchange of sigma
        S_new = s.S - plan.beta * Lsig
        X_new, rep = self.x_update(s.X, S_new, s.Lam, Lsig, eps)
        if g.m:
            Z_new = s.Z + net.Lnu @ s.Lam
            V_new = None if s.V is None else net.v_update(s.V, s.Lam)
            Ax = g.coupling_per_agent((2.0 * X_new - s.X).ravel())
            Lam_new = np.maximum(0.0, s.Lam + plan.delta[:, None] * (Ax - g.b_blocks - (2.0 * Z_new - s.Z)))
        else:
            Z_new, Lam_new, V_new = s.Z.copy(), s.Lam.copy(), None if s.V is None else s.V.copy()
        return AggState(X_new, S_new, Z_new, Lam_new, V_new, s.k + 1, s.comms + 1), rep

    def error_bound(self, rep: InnerSolveReport) -> float:
        ex = float(np.sqrt(np.sum(rep.error_bound() ** 2)))
        # sigma-consuming updates use x only through lambda in this iteration
        return ex * (1.0 + 2.0 * float(np.max(self.plan.delta * self.A_norm, initial=0.0)))


def pppa_aggregative_step(game, graph, plan, state: AggState, eps=1e-12, use_potential=False):
    return AggregativeIteration(game, graph, plan, use_potential).resolvent(state, eps)


# --- metrics -------------------------------------------------------------------

def disagreement(X: np.ndarray) -> float:
    """Largest pairwise distance between agents' rows."""
    if X.shape[0] < 2:
        return 0.0
    return float(pdist(X).max())


def sum_z(Z: np.ndarray) -> float:
    return float(np.abs(Z.sum(axis=0)).max(initial=0.0))


# --- flat views for the proximal-point driver ----------------------------------

class GneLayout:
    """Pack ``(X, Z, Lam[, V])`` into one vector and back."""

    def __init__(self, game: GameProblem, graph: CommGraph, track_v: bool):
        N, n, m, E = game.num_agents, game.n, game.m, graph.num_edges
        self.shapes = [(N, n), (N, m), (N, m)] + ([(E, m)] if track_v else [])
        sizes = [a * b for a, b in self.shapes]
        self.splits = np.cumsum(sizes)[:-1]
        self.size = int(sum(sizes))
        self.track_v = track_v

    def pack(self, s: NetworkState) -> np.ndarray:
        parts = [s.X.ravel(), s.Z.ravel(), s.Lam.ravel()]
        if self.track_v:
            parts.append(s.V.ravel())
        return np.concatenate(parts)

    def unpack(self, w: np.ndarray, k: int = 0, comms: int = 0) -> NetworkState:
        parts = [p.reshape(sh) for p, sh in zip(np.split(w, self.splits), self.shapes)]
        V = parts[3] if self.track_v else None
        return NetworkState(parts[0], parts[1], parts[2], V, k, comms)

    def phi_embed(self, w: np.ndarray) -> np.ndarray:
        """Coordinates in the preconditioner layout (xbold, v, lambda)."""
        if not self.track_v:
            raise MissingEdgeVariable("the edge variable v must be tracked for metric norms")
        X, Z, L, V = np.split(w, self.splits)
        return np.concatenate([X, V, L])


def gne_oracle(it: GneIteration, layout: GneLayout, eps_schedule: Callable[[int], float],
               on_report: Callable | None = None):
    """Resolvent oracle for the proximal-point driver; counts its own calls."""
    counter = {"k": 0}

    def oracle(w):
        counter["k"] += 1
        eps = eps_schedule(counter["k"])
        s = layout.unpack(w)
        out, rep = it.resolvent(s, eps)
        info = {"inner_max": rep.max_steps, "inner_mean": rep.mean_steps, "comms": 1,
                "error": it.error_bound(rep)}
        if on_report is not None:
            on_report(rep)
        return layout.pack(out), info["error"], info

    return oracle
