"""Games with affine coupling constraints and the maps the algorithms evaluate.

Layouts
-------
Joint action ``x`` is ``col(x_1, ..., x_N)``; agent ``i`` owns the slice
``offsets[i]:offsets[i+1]``. Estimates are an ``N x n`` array ``X`` whose row
``i`` is agent ``i``'s estimate of the whole joint action (its own slot is
``x_i``). The flattened form ``X.ravel()`` is ``col(xbold_1, ..., xbold_N)``.
Selection maps are index gathers: ``X[owner, cols]`` picks every agent's own
action out of its estimate row.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingConstants,
    NegativeMultiplier,
    NotStronglyMonotone,
    NotSymmetric,
)
from .graph import CommGraph
from .sets import ProductSet, local_set_from_dict

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class GameConstants:
    mu: float
    theta0: float
    theta: float


class GameProblem:
    """Shared structure of every game: dimensions, local sets and coupling."""

    def __init__(self, dims, local_sets, A_blocks, b_blocks):
        self.dims = np.asarray(dims, dtype=int)
        self.num_agents = int(self.dims.size)
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])
        self.n = int(self.offsets[-1])
        # owner[r] is the agent controlling coordinate r
        self.owner = np.repeat(np.arange(self.num_agents), self.dims)
        self.cols = np.arange(self.n)
        self.sets = ProductSet(local_sets, self.offsets)
        b_blocks = np.asarray(b_blocks, dtype=float)
        if b_blocks.size == 0:
            b_blocks = np.zeros((self.num_agents, 0))
        b_blocks = b_blocks.reshape(self.num_agents, -1) if b_blocks.ndim == 1 else b_blocks
        self.m = int(b_blocks.shape[1])
        if b_blocks.shape[0] != self.num_agents:
            raise DimensionMismatch("need one b_i per agent")
        self.b_blocks = b_blocks.reshape(self.num_agents, self.m)
        self.A = np.zeros((self.m, self.n))
        for i, Ai in enumerate(A_blocks):
            Ai = np.asarray(Ai, dtype=float).reshape(self.m, self.dims[i])
            self.A[:, self.offsets[i]:self.offsets[i + 1]] = Ai
        self.b = self.b_blocks.sum(axis=0)

    # --- layout helpers -------------------------------------------------
    def block(self, x, i):
        return x[self.offsets[i]:self.offsets[i + 1]]

    def A_block(self, i):
        return self.A[:, self.offsets[i]:self.offsets[i + 1]]

    def own_actions(self, X):
        """Gather each agent's own slot from its estimate row."""
        return X[self.owner, self.cols]

    def with_own_actions(self, X, x_own):
        out = np.array(X, dtype=float)
        out[self.owner, self.cols] = x_own
        return out

    def lift(self, x):
        """Consensus estimates ``1_N (x) x`` as an N x n array."""
        return np.tile(np.asarray(x, dtype=float), (self.num_agents, 1))

    def agent_sums(self, v):
        """Sum a per-coordinate vector (or rows of a matrix) within each agent."""
        return np.add.reduceat(v, self.offsets[:-1], axis=-1)

    def coupling_per_agent(self, x_own):
        """``A_i x_i`` for every agent, as an N x m array."""
        if self.m == 0:
            return np.zeros((self.num_agents, 0))
        return np.add.reduceat(self.A * x_own[None, :], self.offsets[:-1], axis=1).T

    def coupling_transpose(self, Lam):
        """``A_i^T lambda_i`` stacked over agents, from an N x m array."""
        if self.m == 0:
            return np.zeros(self.n)
        return np.einsum("mr,rm->r", self.A, Lam[self.owner])

    @property
    def has_coupling(self) -> bool:
        return self.m > 0 and bool(np.any(self.A != 0))

    def _check_x(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionMismatch(f"expected vector of length {self.n}, got {x.shape}")
        return x

    def _check_X(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1 and X.size == self.num_agents * self.n:
            X = X.reshape(self.num_agents, self.n)
        if X.shape != (self.num_agents, self.n):
            raise DimensionMismatch(f"expected estimates of shape {(self.num_agents, self.n)}, got {X.shape}")
        return X

    # --- subclass interface --------------------------------------------
    def extended_gradient(self, X) -> np.ndarray:
        raise NotImplementedError

    def pseudo_gradient(self, x) -> np.ndarray:
        x = self._check_x(x)
        # evaluated through the extended map so consensus inputs agree bit for bit
        return self.extended_gradient(np.broadcast_to(x, (self.num_agents, self.n)))

    def own_gradient_map(self, X) -> Callable[[np.ndarray], np.ndarray]:
        """Return ``y -> col(grad_{x_i} J_i(y_i, X[i, -i]))`` for fixed estimates."""
        X = np.array(self._check_X(X))

        def grad(y):
            Xy = X.copy()
            Xy[self.owner, self.cols] = y
            return self.extended_gradient(Xy)

        return grad

    def constants(self) -> GameConstants:
        raise NotImplementedError

    def agent_curvature(self):
        """Per-agent (mu_i, theta_i) of ``y -> grad_{x_i} J_i(y, .)``."""
        c = self.constants()
        return np.full(self.num_agents, c.mu), np.full(self.num_agents, c.theta)


class QuadraticGame(GameProblem):
    """Game with linear pseudo-gradient ``F(x) = Q x + q``.

    Agent ``i`` minimizes ``0.5 x_i' Q_ii x_i + x_i' sum_{j != i} Q_ij x_j + q_i' x_i``;
    the own blocks ``Q_ii`` must be symmetric.
    """

    def __init__(self, Q, q, local_sets, A_blocks, b_blocks, dims, constants=None):
        super().__init__(dims, local_sets, A_blocks, b_blocks)
        self.Q = np.asarray(Q, dtype=float)
        self.q = np.asarray(q, dtype=float)
        if self.Q.shape != (self.n, self.n) or self.q.shape != (self.n,):
            raise DimensionMismatch("Q must be n x n and q of length n")
        for i in range(self.num_agents):
            Qii = self.own_block(i)
            if not np.allclose(Qii, Qii.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Qii).max())):
                raise NotSymmetric(f"own block Q_{i}{i} is not symmetric")
        self._user_constants = constants
        self.Q.setflags(write=False)

    def own_block(self, i):
        a, b = self.offsets[i], self.offsets[i + 1]
        return self.Q[a:b, a:b]

    @cached_property
    def _own_blockdiag(self):
        D = np.zeros_like(self.Q)
        D[self.owner[:, None] == self.owner[None, :]] = self.Q[self.owner[:, None] == self.owner[None, :]]
        return D

    def cost(self, i, x):
        x = self._check_x(x)
        a, b = self.offsets[i], self.offsets[i + 1]
        xi = x[a:b]
        others = self.Q[a:b] @ x - self.own_block(i) @ xi
        return float(0.5 * xi @ self.own_block(i) @ xi + xi @ others + self.q[a:b] @ xi)

    def extended_gradient(self, X):
        X = self._check_X(X)
        return np.einsum("rc,rc->r", self.Q, X[self.owner]) + self.q

    def own_gradient_map(self, X):
        X = self._check_X(X)
        x_own = self.own_actions(X)
        base = self.extended_gradient(X) - self._own_blockdiag @ x_own
        D = self._own_blockdiag
        return lambda y: base + D @ y

    def extended_jacobian_norm(self) -> float:
        # the extended Jacobian is block diagonal in (agent rows, agent estimate)
        return max(np.linalg.norm(self.Q[self.offsets[i]:self.offsets[i + 1]], 2)
                   for i in range(self.num_agents))

    def constants(self) -> GameConstants:
        if self._user_constants is not None:
            return self._user_constants
        return _cached_constants(self)

    def agent_curvature(self):
        mus, thetas = [], []
        for i in range(self.num_agents):
            ev = np.linalg.eigvalsh(self.own_block(i))
            mus.append(ev[0])
            thetas.append(ev[-1])
        return np.array(mus), np.array(thetas)

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "type": "quadratic",
            "dims": self.dims.tolist(),
            "Q": self.Q.tolist(),
            "q": self.q.tolist(),
            "sets": [s.to_dict() for s in self.sets.sets],
            "A": self.A.tolist(),
            "b_blocks": self.b_blocks.tolist(),
        }


def _cached_constants(game: QuadraticGame) -> GameConstants:
    c = getattr(game, "_constants_cache", None)
    if c is None:
        Q = game.Q
        mu = float(np.linalg.eigvalsh(0.5 * (Q + Q.T))[0])
        if mu <= 0:
            raise NotStronglyMonotone(f"pseudo-gradient is not strongly monotone (mu = {mu:.3e})")
        theta0 = float(np.linalg.norm(Q, 2))
        theta = float(game.extended_jacobian_norm())
        c = GameConstants(mu, theta0, theta)
        game._constants_cache = c
    return c


class CallableGame(GameProblem):
    """Game given by per-agent gradient callables and user-supplied constants.

    ``grad(i, x_i, x_full)`` returns ``grad_{x_i} J_i`` at the joint point whose
    own slot is ``x_i``; ``cost(i, x_full)`` is optional.
    """

    def __init__(self, grad, dims, local_sets, A_blocks, b_blocks, constants=None, cost=None):
        super().__init__(dims, local_sets, A_blocks, b_blocks)
        self._grad = grad
        self._cost = cost
        self._user_constants = constants

    def cost(self, i, x):
        if self._cost is None:
            raise NotImplementedError("no cost callable supplied")
        return float(self._cost(i, self._check_x(x)))

    def extended_gradient(self, X):
        X = self._check_X(X)
        out = np.empty(self.n)
        for i in range(self.num_agents):
            a, b = self.offsets[i], self.offsets[i + 1]
            out[a:b] = self._grad(i, X[i, a:b], X[i])
        return out

    def constants(self):
        if self._user_constants is None:
            raise MissingConstants("nonlinear games must supply (mu, theta0, theta)")
        return self._user_constants


class QuadraticAggregativeGame(GameProblem):
    """Average-aggregative game with common dimension ``nbar``.

    ``f_i(x_i, xi) = 0.5 x_i' P_i x_i + (C_i xi)' x_i + r_i' x_i`` with
    ``xi = avg(x)``. ``P_i`` must be symmetric.
    """

    def __init__(self, P, C, r, local_sets, A_blocks, b_blocks, constants=None):
        P = np.asarray(P, dtype=float)
        C = np.asarray(C, dtype=float)
        r = np.asarray(r, dtype=float)
        N, nbar = r.shape
        if P.shape != (N, nbar, nbar) or C.shape != (N, nbar, nbar):
            raise DimensionMismatch("P and C must be N x nbar x nbar")
        if not np.allclose(P, P.transpose(0, 2, 1)):
            raise NotSymmetric("P_i must be symmetric")
        super().__init__([nbar] * N, local_sets, A_blocks, b_blocks)
        self.nbar = nbar
        self.P, self.C, self.r = P, C, r
        self._user_constants = constants

    def blocks(self, x):
        return np.asarray(x, dtype=float).reshape(self.num_agents, self.nbar)

    def cost(self, i, x):
        x = self._check_x(x)
        Xb = self.blocks(x)
        xi = Xb.mean(axis=0)
        xo = Xb[i]
        return float(0.5 * xo @ self.P[i] @ xo + (self.C[i] @ xi) @ xo + self.r[i] @ xo)

    def aggregative_gradient(self, i, x_i, xi_i):
        """``grad_x f_i(x_i, xi_i) + grad_xi f_i(x_i, xi_i) / N``."""
        x_i = np.asarray(x_i, dtype=float)
        xi_i = np.asarray(xi_i, dtype=float)
        if x_i.shape != (self.nbar,) or xi_i.shape != (self.nbar,):
            raise DimensionMismatch(f"expected vectors of length {self.nbar}")
        return (self.P[i] @ x_i + self.C[i] @ xi_i + self.r[i]
                + self.C[i].T @ x_i / self.num_agents)

    def aggregative_gradient_all(self, Xo, Xi):
        """Stacked map ``F~(x, xi)`` for N x nbar arrays of actions and aggregates."""
        return (np.einsum("iab,ib->ia", self.P, Xo) + np.einsum("iab,ib->ia", self.C, Xi)
                + self.r + np.einsum("iba,ib->ia", self.C, Xo) / self.num_agents)

    def potential(self, i, y, s_i):
        """Closed-form potential with gradient ``F~_i(y, y + s_i)``.

        Needs ``C_i`` symmetric; the quadratic own cost plays the role of the
        separable part.
        """
        N = self.num_agents
        Ci = self.C[i]
        return float(0.5 * y @ self.P[i] @ y + self.r[i] @ y + (Ci @ (s_i + y)) @ y
                     - (N - 1) / (2 * N) * y @ Ci @ y)

    @property
    def has_potential(self) -> bool:
        return bool(np.allclose(self.C, self.C.transpose(0, 2, 1)))

    def to_standard_form(self) -> QuadraticGame:
        N, nb = self.num_agents, self.nbar
        Q = np.zeros((self.n, self.n))
        q = self.r.ravel().copy()
        for i in range(N):
            ri = slice(i * nb, (i + 1) * nb)
            for j in range(N):
                Q[ri, j * nb:(j + 1) * nb] = self.C[i] / N
            Q[ri, ri] = self.P[i] + self.C[i] / N + self.C[i].T / N
        return QuadraticGame(Q, q, self.sets.sets, [self.A_block(i) for i in range(N)],
                             self.b_blocks, self.dims)

    def extended_gradient(self, X):
        # standard-form view, used by the oracle-facing helpers
        return self.to_standard_form_cached().extended_gradient(X)

    def pseudo_gradient(self, x):
        Xo = self.blocks(self._check_x(x))
        agg = np.broadcast_to(Xo.mean(axis=0), Xo.shape)
        return self.aggregative_gradient_all(Xo, agg).ravel()

    def to_standard_form_cached(self):
        std = getattr(self, "_std", None)
        if std is None:
            std = self.to_standard_form()
            self._std = std
        return std

    def theta_tilde(self) -> float:
        """Lipschitz constant of ``(x, xi) -> F~(x, xi)``; the Jacobian is agent-block diagonal."""
        N = self.num_agents
        return max(np.linalg.norm(np.hstack([self.P[i] + self.C[i].T / N, self.C[i]]), 2)
                   for i in range(N))

    def constants(self):
        if self._user_constants is not None:
            return self._user_constants
        return self.to_standard_form_cached().constants()

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "type": "quadratic_aggregative",
            "P": self.P.tolist(),
            "C": self.C.tolist(),
            "r": self.r.tolist(),
            "sets": [s.to_dict() for s in self.sets.sets],
            "A": self.A.tolist(),
            "b_blocks": self.b_blocks.tolist(),
        }


# --- module-level operations ------------------------------------------------

def pseudo_gradient(game: GameProblem, x) -> np.ndarray:
    return game.pseudo_gradient(x)


def extended_pseudo_gradient(game: GameProblem, xbold) -> np.ndarray:
    return game.extended_gradient(xbold)


def augmented_operator(game: GameProblem, graph: CommGraph, alpha: float, xbold) -> np.ndarray:
    """``alpha R' F(xbold) + (L (x) I_n) xbold`` as an N x n array."""
    X = game._check_X(xbold)
    if graph.num_agents != game.num_agents:
        raise DimensionMismatch("graph and game disagree on the number of agents")
    out = graph._laplacian @ X
    out[game.owner, game.cols] += alpha * game.extended_gradient(X)
    return out


def aggregative_gradient(game: QuadraticAggregativeGame, i: int, x_i, xi_i) -> np.ndarray:
    return game.aggregative_gradient(i, x_i, xi_i)


def kkt_residual(game: GameProblem, x, lam) -> float:
    """Natural-map residual of the KKT system of the v-GNE."""
    x = game._check_x(x)
    lam = np.asarray(lam, dtype=float).reshape(game.m)
    if np.any(lam < 0):
        raise NegativeMultiplier("multipliers must be nonnegative")
    g = game.pseudo_gradient(x) + game.A.T @ lam
    res_x = np.linalg.norm(x - game.sets.project(x - g))
    res_l = np.linalg.norm(lam - np.maximum(0.0, lam + game.A @ x - game.b)) if game.m else 0.0
    return float(max(res_x, res_l))


def game_constants(game: GameProblem) -> GameConstants:
    return game.constants()


# --- serialization -----------------------------------------------------------

def game_from_dict(d: dict) -> GameProblem:
    if d.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported instance schema {d.get('schema')!r}")
    sets = [local_set_from_dict(s) for s in d["sets"]]
    A = np.asarray(d["A"], dtype=float)
    b_blocks = np.asarray(d["b_blocks"], dtype=float)
    if d["type"] == "quadratic":
        dims = np.asarray(d["dims"], dtype=int)
        off = np.concatenate([[0], np.cumsum(dims)])
        A_blocks = [A[:, off[i]:off[i + 1]] for i in range(dims.size)]
        return QuadraticGame(np.asarray(d["Q"]), np.asarray(d["q"]), sets, A_blocks, b_blocks, dims)
    if d["type"] == "quadratic_aggregative":
        r = np.asarray(d["r"], dtype=float)
        nb = r.shape[1]
        A_blocks = [A[:, i * nb:(i + 1) * nb] for i in range(r.shape[0])]
        return QuadraticAggregativeGame(np.asarray(d["P"]), np.asarray(d["C"]), r, sets, A_blocks, b_blocks)
    raise ValueError(f"unknown game type {d['type']!r}")


def game_to_json(game) -> str:
    return json.dumps(game.to_dict())


def game_from_json(text: str) -> GameProblem:
    return game_from_dict(json.loads(text))
