"""Centralized reference solver for the variational equilibrium.

This module deliberately avoids the distributed code paths: the
pseudo-gradient is assembled directly from the joint action, the feasible set
is handled by alternating projections, and multipliers are recovered from the
stationarity conditions afterwards.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import lsq_linear

from .errors import Infeasible, ToleranceNotReached
from .game import CallableGame, GameProblem, QuadraticAggregativeGame, QuadraticGame, game_to_json
from .sets import BoxHyperplane

DYKSTRA_TOL = 1e-11
DYKSTRA_CAP = 100_000
RIDGE = 1e-12
STALL_CHECKS = 10


@dataclass
class OracleSolution:
    x: np.ndarray
    lam: np.ndarray
    kkt: float
    iterations: int
    tol: float
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["x"] = self.x.tolist()
        d["lam"] = self.lam.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["x"]), np.array(d["lam"]), d["kkt"], d["iterations"], d["tol"], d.get("meta", {}))


def _gradient_fn(game: GameProblem):
    """Pseudo-gradient on the joint action, independent of the estimate machinery."""
    if isinstance(game, QuadraticAggregativeGame):
        game = game.to_standard_form_cached()
    if isinstance(game, QuadraticGame):
        Q, q = np.array(game.Q), np.array(game.q)
        return lambda x: Q @ x + q
    if isinstance(game, CallableGame):
        off = game.offsets

        def F(x):
            return np.concatenate([game._grad(i, x[off[i]:off[i + 1]], x) for i in range(game.num_agents)])
        return F
    raise TypeError(f"unsupported game type {type(game).__name__}")


def orthogonal_row_groups(A) -> list[np.ndarray]:
    """Greedy partition of the rows of ``A`` into mutually orthogonal groups.

    Projecting onto the intersection of halfspaces with orthogonal normals is
    the composition of the individual projections, so each group acts as one
    set in Dykstra's cycle.
    """
    m = A.shape[0]
    nonzero = np.flatnonzero(np.any(A != 0, axis=1))
    gram = np.abs(A @ A.T) > 0
    groups: list[list[int]] = []
    for k in nonzero:
        for g in groups:
            if not gram[k, g].any():
                g.append(int(k))
                break
        else:
            groups.append([int(k)])
    return [np.array(g, dtype=int) for g in groups] if m else []


def dykstra_project(y, project_omega, A, b, tol=DYKSTRA_TOL, max_iter=DYKSTRA_CAP, increments=None,
                    groups=None):
    """Project ``y`` onto ``Omega`` intersected with ``{A x <= b}`` by Dykstra's method.

    Returns ``(x, sweeps)``. ``increments`` (a ``(p_omega, p_groups)`` pair,
    updated in place) warm-starts the correction terms; Dykstra is
    block-coordinate ascent on the dual of the projection problem, so any
    start converges. Raises :class:`Infeasible` when the sweep cap is hit.
    """
    y = np.asarray(y, dtype=float)
    if groups is None:
        groups = orthogonal_row_groups(A)
    if increments is None:
        p_omega, p_groups = np.zeros_like(y), np.zeros((len(groups), y.size))
    else:
        p_omega, p_groups = increments
    x = y - p_omega - p_groups.sum(axis=0)
    blocks = [(A[g], b[g], np.einsum("ij,ij->i", A[g], A[g])) for g in groups]
    for sweep in range(1, max_iter + 1):
        # x can return to the same point over a sweep while the corrections
        # still move, so both must settle
        x_start = x
        z = x + p_omega
        x = project_omega(z)
        moved = np.max(np.abs(z - x - p_omega), initial=0.0)
        p_omega[:] = z - x
        for k, (Ag, bg, sq) in enumerate(blocks):
            z = x + p_groups[k]
            viol = np.maximum(Ag @ z - bg, 0.0)
            x = z - (viol / sq) @ Ag
            moved = max(moved, np.max(np.abs(z - x - p_groups[k]), initial=0.0))
            p_groups[k] = z - x
        if max(moved, np.max(np.abs(x - x_start), initial=0.0)) <= tol:
            return x, sweep
    raise Infeasible(f"Dykstra projection did not converge in {max_iter} sweeps")


class WarmProjector:
    """Projection onto the feasible set reusing Dykstra corrections between calls."""

    def __init__(self, game: GameProblem, tol=DYKSTRA_TOL, max_iter=DYKSTRA_CAP):
        self.game, self.tol, self.max_iter = game, tol, max_iter
        self.groups = orthogonal_row_groups(game.A)
        self.increments = (np.zeros(game.n), np.zeros((len(self.groups), game.n)))
        self.sweeps = 0

    def __call__(self, y):
        g = self.game
        x, sw = dykstra_project(y, g.sets.project, g.A, g.b, self.tol, self.max_iter, self.increments,
                                self.groups)
        self.sweeps += sw
        return x


def feasibility_probe(game: GameProblem, start=None, tol=1e-8) -> np.ndarray:
    """Return a point of the feasible set, or raise :class:`Infeasible`."""
    y = np.zeros(game.n) if start is None else np.asarray(start, dtype=float)
    x, _ = dykstra_project(y, game.sets.project, game.A, game.b)
    if game.m and np.max(game.A @ x - game.b) > tol:
        raise Infeasible("coupling constraints violated at the projected point")
    if not game.sets.contains(x, tol=tol):
        raise Infeasible("local constraints violated at the projected point")
    return x


def _recover_multipliers(game, F, x, active_tol):
    """Fit ``lambda >= 0`` on active rows to the stationarity residual on free coordinates."""
    m = game.m
    if m == 0:
        return np.zeros(0), {"active_rows": 0, "ridge": False}
    g = F(x)
    free = (x > game.sets.lo + active_tol) & (x < game.sets.hi - active_tol)
    active = np.flatnonzero(game.A @ x >= game.b - active_tol)
    # one free-sign multiplier per hyperplane-constrained agent
    hyper = [i for i, s in enumerate(game.sets.sets) if isinstance(s, BoxHyperplane)]
    cols = [game.A[k][free] for k in active]
    lb, ub = [0.0] * len(active), [np.inf] * len(active)
    for i in hyper:
        col = np.zeros(game.n)
        col[game.offsets[i]:game.offsets[i + 1]] = 1.0
        cols.append(col[free])
        lb.append(-np.inf)
        ub.append(np.inf)
    lam = np.zeros(m)
    if not cols or not free.any():
        return lam, {"active_rows": int(active.size), "ridge": False}
    M = np.column_stack(cols)
    rhs = -g[free]
    k = M.shape[1]
    M_aug = np.vstack([M, np.sqrt(RIDGE) * np.eye(k)])
    rhs_aug = np.concatenate([rhs, np.zeros(k)])
    sol = lsq_linear(M_aug, rhs_aug, bounds=(lb, ub), method="bvls", tol=1e-14)
    lam[active] = np.maximum(sol.x[:active.size], 0.0)
    rank_def = np.linalg.matrix_rank(M) < k
    return lam, {"active_rows": int(active.size), "ridge": bool(rank_def)}


def _polish_linear(game, Q, q, x, active_tol):
    """Solve the equality-constrained KKT system on the identified active set."""
    lo, hi = game.sets.lo, game.sets.hi
    at_lo = x <= lo + active_tol
    at_hi = x >= hi - active_tol
    fixed = at_lo | at_hi
    free = ~fixed
    xf = np.where(at_lo, lo, np.where(at_hi, hi, x))
    active = np.flatnonzero(game.A @ x >= game.b - active_tol) if game.m else np.zeros(0, dtype=int)
    hyper = [i for i, s in enumerate(game.sets.sets) if isinstance(s, BoxHyperplane)]
    nf = int(free.sum())
    rows_A = game.A[active][:, free]
    rhs_A = game.b[active] - game.A[active][:, fixed] @ xf[fixed]
    H = np.zeros((len(hyper), game.n))
    levels = np.zeros(len(hyper))
    for r, i in enumerate(hyper):
        H[r, game.offsets[i]:game.offsets[i + 1]] = 1.0
        levels[r] = game.sets.sets[i].level
    Hf = H[:, free]
    rhs_H = levels - H[:, fixed] @ xf[fixed]
    C = np.vstack([rows_A, Hf])
    c = np.concatenate([rhs_A, rhs_H])
    k = C.shape[0]
    K = np.block([[Q[np.ix_(free, free)], C.T], [C, np.zeros((k, k))]])
    rhs = np.concatenate([-(Q[np.ix_(free, fixed)] @ xf[fixed] + q[free]), c])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    xn = xf.copy()
    xn[free] = sol[:nf]
    lam = np.zeros(game.m)
    lam[active] = np.maximum(sol[nf:nf + active.size], 0.0)
    return xn, lam


def solve_vgne_centralized(game: GameProblem, tol: float = 1e-10, max_iter: int = 200_000,
                           x0=None, polish: bool = True, check_every: int = 10) -> OracleSolution:
    """Extragradient on VI(F, X) with Dykstra projections, then multiplier recovery."""
    from .game import kkt_residual

    c = game.constants()
    F = _gradient_fn(game)
    step = 1.0 / (2.0 * c.theta0)

    proj = WarmProjector(game)
    check = WarmProjector(game)     # separate warm state for the residual probes

    x = proj(np.zeros(game.n) if x0 is None else np.asarray(x0, dtype=float))
    res = np.inf
    history = []
    stalled = False
    it = 0
    for it in range(1, max_iter + 1):
        y = proj(x - step * F(x))
        x = proj(x - step * F(y))
        if it % check_every == 0:
            res = float(np.linalg.norm(x - check(x - F(x))))
            history.append(res)
            if res <= tol:
                break
            # inexact projections leave a residual floor; hand over to the
            # exact KKT certificate below once progress stops
            if len(history) > STALL_CHECKS and res > 0.5 * history[-1 - STALL_CHECKS]:
                stalled = True
                break
    else:
        raise ToleranceNotReached(f"extragradient residual {res:.3e} > {tol:.1e} after {max_iter} iterations")
    active_tol = max(1e-7, 1e3 * res)
    lam, meta = _recover_multipliers(game, F, x, active_tol)
    kkt = kkt_residual(game, x, lam)
    meta.update({"natural_residual": res, "polished": False, "stalled": stalled,
                 "dykstra_sweeps": proj.sweeps + check.sweeps})
    if polish and isinstance(game, (QuadraticGame, QuadraticAggregativeGame)):
        std = game.to_standard_form_cached() if isinstance(game, QuadraticAggregativeGame) else game
        try:
            xp, lp = _polish_linear(game, np.asarray(std.Q), np.asarray(std.q), x, active_tol)
            feasible = game.sets.contains(xp, tol=1e-12) and (not game.m or np.max(game.A @ xp - game.b) <= 1e-12)
            if feasible:
                kp = kkt_residual(game, xp, lp)
                if kp < kkt:
                    x, lam, kkt = xp, lp, kp
                    meta["polished"] = True
        except np.linalg.LinAlgError:
            pass
    if stalled and kkt > tol:
        raise ToleranceNotReached(f"residual stalled at {res:.3e}; KKT residual {kkt:.3e} > {tol:.1e}")
    return OracleSolution(x, lam, float(kkt), it, tol, meta)


def solve_ne_unconstrained(game: QuadraticGame) -> np.ndarray:
    """Closed form ``-Q^{-1} q`` for games without any constraints."""
    return -np.linalg.solve(np.asarray(game.Q), np.asarray(game.q))


# --- disk cache ------------------------------------------------------------------

def instance_hash(game: GameProblem, tol: float) -> str:
    h = hashlib.sha256(game_to_json(game).encode())
    h.update(repr(float(tol)).encode())
    return h.hexdigest()[:24]


def solve_cached(game: GameProblem, tol: float = 1e-10, cache_dir: str | Path | None = None,
                 **kw) -> OracleSolution:
    if cache_dir is None:
        return solve_vgne_centralized(game, tol, **kw)
    path = Path(cache_dir) / f"oracle_{instance_hash(game, tol)}.json"
    if path.exists():
        return OracleSolution.from_dict(json.loads(path.read_text()))
    sol = solve_vgne_centralized(game, tol, **kw)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(sol.to_dict()))
    return sol
