"""Relaxed, inertial and inexact proximal-point iterations.

The driver works on flat vectors. A resolvent oracle maps ``w`` to
``(u, err, info)`` where ``u`` approximates a point of the (preconditioned)
resolvent at ``w`` and ``err`` bounds the error in the working metric. Norms in
the metric ``P`` are evaluated as quadratic forms only when a reference point
or metric is supplied; the iteration itself never touches ``P``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    InnerSolveFailure,
    NonfiniteIterate,
    OracleFailure,
    ScheduleOutOfRange,
    TooShort,
)

PLAIN = "plain"
OVERRELAX = "overrelax"
INERTIA = "inertia"
ALTERNATED = "alternated_inertia"


@dataclass(frozen=True)
class Schedule:
    kind: str = PLAIN
    gamma: float = 1.0
    zeta: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        if self.kind == PLAIN:
            if self.gamma != 1.0:
                raise ScheduleOutOfRange("plain iteration uses gamma = 1")
        elif self.kind == OVERRELAX:
            if not 1.0 <= self.gamma < 2.0:
                raise ScheduleOutOfRange("overrelaxation needs gamma in [1, 2)")
        elif self.kind == INERTIA:
            if not 0.0 <= self.zeta < 1.0 / 3.0:
                raise ScheduleOutOfRange("inertia needs zeta in [0, 1/3)")
        elif self.kind == ALTERNATED:
            if not 0.0 <= self.eta <= 1.0:
                raise ScheduleOutOfRange("alternated inertia needs eta in [0, 1]")
        else:
            raise ScheduleOutOfRange(f"unknown schedule {self.kind!r}")

    @classmethod
    def unchecked(cls, kind=OVERRELAX, gamma=1.0, zeta=0.0, eta=0.0):
        """Bypass range checks; for deliberately out-of-range test runs only."""
        obj = object.__new__(cls)
        for k, v in (("kind", kind), ("gamma", gamma), ("zeta", zeta), ("eta", eta)):
            object.__setattr__(obj, k, v)
        return obj

    def inertia(self, k: int) -> float:
        """Extrapolation coefficient at iteration ``k`` (alternated: odd ``k`` only)."""
        if self.kind == INERTIA:
            return self.zeta
        if self.kind == ALTERNATED:
            return self.eta if k % 2 == 1 else 0.0
        return 0.0

    def relaxation(self) -> float:
        # inertial variants apply the resolvent output without relaxation
        return self.gamma if self.kind in (PLAIN, OVERRELAX) else 1.0

    def to_dict(self):
        return {"kind": self.kind, "gamma": self.gamma, "zeta": self.zeta, "eta": self.eta}


def apply_schedule_point(schedule: Schedule, k: int, w, w_prev):
    """Extrapolated input ``w + c (w - w_prev)``; returns ``w`` itself when ``c == 0``."""
    c = schedule.inertia(k)
    if c == 0.0:
        return w
    return w + c * (w - w_prev)


def relax(w, u, gamma: float):
    if gamma == 1.0:
        return u
    return w + gamma * (u - w)


def km_step(oracle: Callable, w, gamma: float):
    """``w + gamma (u - w)`` with ``u`` from the (possibly inexact) oracle."""
    if not 0.0 <= gamma <= 2.0:
        raise ScheduleOutOfRange("gamma must lie in [0, 2]")
    try:
        out = oracle(w)
    except (InnerSolveFailure, NonfiniteIterate):
        raise
    except Exception as exc:  # pragma: no cover - defensive wrapper
        raise OracleFailure(str(exc)) from exc
    u = out[0]
    if gamma == 0.0:
        return np.array(w, copy=True)
    return relax(w, u, gamma)


@dataclass
class RunTrace:
    residual: list = field(default_factory=list)      # ||u^k - w~^k|| (unweighted)
    step_norm: list = field(default_factory=list)     # ||w^{k+1} - w^k|| (unweighted)
    gamma: list = field(default_factory=list)
    error_bound: list = field(default_factory=list)
    dist_ref: list = field(default_factory=list)      # ||w^k - w*||_P, k = 0..K
    residual_P: list = field(default_factory=list)    # ||u^k - w~^k||_P
    rows: list = field(default_factory=list)          # per-iteration info from the oracle
    final: np.ndarray | None = None
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""

    @property
    def fejer_gap(self):
        d = np.asarray(self.dist_ref)
        return d[1:] - d[:-1]


def metric_norm(P, v):
    if P is None:
        return float(np.linalg.norm(v))
    q = float(v @ (P @ v))
    return float(np.sqrt(max(q, 0.0)))


def run(oracle: Callable, w0, schedule: Schedule = Schedule(), *, max_iter: int = 100_000,
        tol: float = 1e-8, reference=None, P=None, embed: Callable | None = None,
        stop: Callable | None = None, callback: Callable | None = None,
        monitor_growth: int = 100) -> RunTrace:
    """Iterate the scheduled proximal-point map from ``w0``.

    ``embed`` maps the working vector into the space of ``P`` (identity by
    default); ``reference`` is given already embedded. ``stop(k, w, info)``
    may end the run early; ``callback(k, w, info)`` sees every iterate.
    """
    emb = embed if embed is not None else (lambda v: v)
    w = np.array(w0, dtype=float)
    w_prev = w.copy()
    trace = RunTrace()
    gamma = schedule.relaxation()
    if reference is not None:
        trace.dist_ref.append(metric_norm(P, emb(w) - reference))
    growth = 0
    for k in range(max_iter):
        wt = apply_schedule_point(schedule, k, w, w_prev)
        try:
            u, err, info = oracle(wt)
        except (InnerSolveFailure, NonfiniteIterate):
            raise
        except Exception as exc:
            raise OracleFailure(str(exc)) from exc
        w_next = relax(w, u, gamma) if schedule.kind in (PLAIN, OVERRELAX) else u
        if not np.all(np.isfinite(w_next)):
            raise NonfiniteIterate(f"iterate became non-finite at k={k}")
        res = float(np.linalg.norm(u - wt))
        stepn = float(np.linalg.norm(w_next - w))
        trace.residual.append(res)
        trace.step_norm.append(stepn)
        trace.gamma.append(gamma)
        trace.error_bound.append(float(err))
        if P is not None:
            trace.residual_P.append(metric_norm(P, emb(u) - emb(wt)))
        if reference is not None:
            trace.dist_ref.append(metric_norm(P, emb(w_next) - reference))
        trace.rows.append(info)
        if schedule.kind == INERTIA and k > 0:
            growth = growth + 1 if stepn > trace.step_norm[-2] else 0
            if growth >= monitor_growth:
                raise NonfiniteIterate(f"inertial steps grew for {monitor_growth} consecutive iterations")
        w_prev, w = w, w_next
        trace.iterations = k + 1
        if callback is not None:
            callback(k + 1, w, info)
        if stop is not None and stop(k + 1, w, info):
            trace.converged = True
            trace.stop_reason = "stop rule"
            break
        if stop is None and res <= tol:
            trace.converged = True
            trace.stop_reason = "residual"
            break
    else:
        trace.stop_reason = "max_iter"
    trace.final = w
    return trace


@dataclass
class FejerReport:
    ok: bool
    first_violation: int | None
    max_excess: float


def fejer_check(trace: RunTrace, slack: float = 1e-9, error_scale: float = 1.0) -> FejerReport:
    """Check ``d_{k+1} <= d_k + gamma_k * err_k`` with additive ``slack``.

    ``error_scale`` converts the recorded error bounds into the metric of
    ``dist_ref`` (e.g. ``sqrt(||P||)`` for Euclidean bounds).
    """
    d = np.asarray(trace.dist_ref)
    if d.size < 2:
        return FejerReport(True, None, -np.inf)
    allow = np.asarray(trace.gamma[:d.size - 1]) * np.asarray(trace.error_bound[:d.size - 1]) * error_scale
    excess = d[1:] - d[:-1] - allow - slack
    bad = np.flatnonzero(excess > 0)
    return FejerReport(bad.size == 0, int(bad[0]) if bad.size else None, float(excess.max()))


def contraction_check(trace: RunTrace, mu_B: float, slack: float = 1e-9, error_scale: float = 1.0):
    """Strongly monotone envelope ``d_{k+1} <= rho_k d_k + gamma_k err_k``."""
    d = np.asarray(trace.dist_ref)
    g = np.asarray(trace.gamma[:d.size - 1])
    rho = np.maximum(1.0 - g * mu_B / (1.0 + mu_B), g - 1.0)
    allow = g * np.asarray(trace.error_bound[:d.size - 1]) * error_scale
    excess = d[1:] - rho * d[:-1] - allow - slack
    bad = np.flatnonzero(excess > 0)
    return FejerReport(bad.size == 0, int(bad[0]) if bad.size else None,
                       float(excess.max()) if excess.size else -np.inf)


def residual_sum_check(trace: RunTrace):
    """Partial sums of ``gamma (2 - gamma) ||u - w||_P^2``; bounded for summable runs."""
    r = np.asarray(trace.residual_P if trace.residual_P else trace.residual)
    g = np.asarray(trace.gamma[:r.size])
    return np.cumsum(g * (2.0 - g) * r ** 2)


def residual_rate(steps) -> tuple[np.ndarray, float]:
    """Ergodic residual ``r_k = (1/k) sum_{i<k} ||w^{i+1} - w^i||^2`` and ``C = max k r_k``.

    Accepts a :class:`RunTrace` or a sequence of step norms.
    """
    s = np.asarray(steps.step_norm if isinstance(steps, RunTrace) else steps, dtype=float)
    if s.size < 10:
        raise TooShort("need at least 10 iterations")
    k = np.arange(1, s.size + 1)
    csum = np.cumsum(s ** 2)
    r = csum / k
    return r, float((k * r).max())


def solve_pseudomonotone_vi(psi: Callable, project: Callable, w0, tol: float = 1e-8,
                            lipschitz: float = 1.0, max_outer: int = 100_000,
                            max_inner: int = 1_000_000):
    """Proximal-point method for VI(psi, S) with psi continuous and pseudomonotone.

    Each outer step solves ``VI(psi + Id - w^k, S)`` by projected gradient with
    step ``1 / (1 + lipschitz)**2`` to accuracy ``min(tol, 1/k^2) / 10``.
    Returns ``(w, outer_iterations)``.
    """
    w = np.array(w0, dtype=float)
    step = 1.0 / (1.0 + lipschitz) ** 2
    # contraction of the inner projected-gradient map for a 1-strongly monotone,
    # (1 + lipschitz)-Lipschitz operator under monotone psi
    rho = np.sqrt(max(0.0, 1.0 - step))
    for k in range(1, max_outer + 1):
        acc = min(tol, 1.0 / k ** 2) / 10.0
        u = w.copy()
        for _ in range(max_inner):
            un = project(u - step * (psi(u) + u - w))
            if not np.all(np.isfinite(un)):
                raise InnerSolveFailure("inner VI iterate became non-finite")
            moved = np.linalg.norm(un - u)
            u = un
            if moved * rho / (1.0 - rho) <= acc or moved == 0.0:
                break
        else:
            raise InnerSolveFailure("inner VI did not reach the requested accuracy")
        if np.linalg.norm(u - w) <= tol:
            return u, k
        w = u
    raise InnerSolveFailure("outer proximal-point loop did not converge")


def natural_map_residual(psi: Callable, project: Callable, w) -> float:
    return float(np.linalg.norm(w - project(w - psi(w))))
