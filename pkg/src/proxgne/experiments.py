"""Seeded instance generators and the run harness.

Random draws use ``numpy.random.Generator(numpy.random.Philox(seed))``.
Draw order is fixed: the communication graph first, then global fields, then
agents in index order with fields in the order listed in each generator, and
finally the initial point.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import algorithms as alg
from .errors import DegenerateDraw, Infeasible, NotStronglyMonotone
from .game import GameProblem, QuadraticAggregativeGame, QuadraticGame, kkt_residual
from .graph import CommGraph, random_connected_graph
from .oracle import OracleSolution, feasibility_probe, solve_cached, solve_ne_unconstrained
from .ppa import ALTERNATED, INERTIA, OVERRELAX, PLAIN, Schedule
from .ppa import run as ppa_run
from .sets import Box, BoxHyperplane, FullSpace
from .stepsizes import (
    assemble_phi,
    best_fb_alpha,
    fb_step_bound,
    make_aggregative_plan,
    make_gne_plan,
    mu_Fa,
    theta_Fa,
)

log = logging.getLogger(__name__)

TRACE_HEADER = ["k", "dist_x", "kkt_res", "disagreement", "fp_res", "fejer_gap",
                "inner_max", "inner_mean", "comms", "wall_ms"]
TRACE_VERSION = 1
THRESHOLDS = (1e-1, 1e-2, 1e-4)
PEV_CAPACITY_SCALE = 8.0
MAX_REDRAWS = 1000
MAX_SUBSEEDS = 100


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class Instance:
    kind: str
    game: GameProblem
    graph: CommGraph
    x0: np.ndarray
    seed: int
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return {"kind": self.kind, "seed": self.seed, "params": self.params,
                "graph": self.graph.to_dict(), "game": self.game.to_dict(), "x0": self.x0.tolist()}


def instance_from_dict(d: dict) -> Instance:
    from .game import game_from_dict
    from .graph import graph_from_dict
    return Instance(d["kind"], game_from_dict(d["game"]), graph_from_dict(d["graph"]),
                    np.array(d["x0"]), int(d["seed"]), d.get("params", {}))


# --- Nash-Cournot -----------------------------------------------------------------

def cournot_price(P_bar, chi, supply):
    """Market prices ``P_bar - chi * supply``."""
    return np.asarray(P_bar) - np.asarray(chi) * np.asarray(supply)


def gen_nash_cournot(seed: int, N: int = 20, m: int = 7, edge_prob: float = 0.3,
                     mean_markets: float = 1.6) -> Instance:
    """Firms selling into capacity-limited markets.

    Draw order: graph; r, P_bar, chi (per market); per firm: number of markets,
    market set, diag(Q_i), q_i, X_i; initial point. A degenerate draw is
    repeated on the sub-seed stream ``(seed, attempt)``.
    """
    if N < 2 or m < 1:
        raise ValueError("need N >= 2 and m >= 1")
    for attempt in range(MAX_SUBSEEDS):
        rng = make_rng(seed) if attempt == 0 else np.random.Generator(
            np.random.Philox(np.random.SeedSequence([int(seed), attempt])))
        try:
            inst = _draw_cournot(rng, N, m, edge_prob, mean_markets)
        except (DegenerateDraw, Infeasible) as exc:
            log.warning("seed %d attempt %d degenerate (%s); redrawing", seed, attempt, exc)
            continue
        inst.seed = seed
        inst.params["attempt"] = attempt
        return inst
    raise DegenerateDraw(f"no admissible draw in {MAX_SUBSEEDS} sub-seeds")


def _draw_cournot(rng, N, m, edge_prob, mean_markets) -> Instance:
    graph = random_connected_graph(rng, N, edge_prob)
    r = rng.uniform(1.0, 2.0, m)
    P_bar = rng.uniform(10.0, 20.0, m)
    chi = rng.uniform(1.0, 3.0, m)
    extra_p = 0.0 if m == 1 else min(1.0, (mean_markets - 1.0) / (m - 1))
    dims, A_blocks, Qd, qv, caps = [], [], [], [], []
    for _ in range(N):
        ni = 1 + (rng.binomial(m - 1, extra_p) if m > 1 else 0)
        markets = np.sort(rng.choice(m, size=ni, replace=False))
        Ai = np.zeros((m, ni))
        Ai[markets, np.arange(ni)] = 1.0
        Qd.append(rng.uniform(1.0, 8.0, ni))
        qv.append(rng.uniform(1.0, 2.0, ni))
        caps.append(rng.uniform(5.0, 10.0))
        dims.append(ni)
        A_blocks.append(Ai)
    A = np.hstack(A_blocks)
    # gradient of 1e-3 (c_i(x_i) - p(Ax)' A_i x_i), stacked
    Q = 1e-3 * (2.0 * _blockdiag([np.diag(v) for v in Qd])
                + _blockdiag([Ai.T @ (chi[:, None] * Ai) for Ai in A_blocks])
                + A.T @ (chi[:, None] * A))
    q = 1e-3 * np.concatenate([qv[i] - A_blocks[i].T @ P_bar for i in range(N)])
    sets = [Box(np.zeros(ni), np.full(ni, cap)) for ni, cap in zip(dims, caps)]
    b_blocks = np.tile(r / N, (N, 1))
    game = QuadraticGame(Q, q, sets, A_blocks, b_blocks, dims)
    if game.constants().mu <= 0:
        raise DegenerateDraw("pseudo-gradient not strongly monotone")
    feasibility_probe(game)
    x0 = rng.uniform(0.0, 1.0, game.n) * game.sets.hi
    params = {"N": N, "m": m, "edge_prob": edge_prob, "n": game.n, "r": r.tolist(),
              "P_bar": P_bar.tolist(), "chi": chi.tolist()}
    return Instance("nash_cournot", game, graph, x0, -1, params)


def _blockdiag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n))
    o = 0
    for b in blocks:
        k = b.shape[0]
        out[o:o + k, o:o + k] = b
        o += k
    return out


def drop_coupling(game: QuadraticGame) -> QuadraticGame:
    """Same costs and local sets, no coupling rows."""
    N = game.num_agents
    return QuadraticGame(game.Q, game.q, game.sets.sets, [np.zeros((0, d)) for d in game.dims],
                         np.zeros((N, 0)), game.dims)


def unconstrained_variant(game: QuadraticGame) -> QuadraticGame:
    """Same costs with no local sets and no coupling rows."""
    N = game.num_agents
    return QuadraticGame(game.Q, game.q, [FullSpace(int(d)) for d in game.dims],
                         [np.zeros((0, d)) for d in game.dims], np.zeros((N, 0)), game.dims)


def gen_quadratic_ne(seed: int, N: int = 5, dim: int = 2, edge_prob: float = 0.5,
                     coupling_strength: float = 0.3) -> Instance:
    """Unconstrained strongly monotone quadratic game.

    Draw order: graph; own blocks (agents in order); cross blocks (row-major);
    linear terms; initial point. Cross blocks are rescaled until the symmetric
    part of ``Q`` has smallest eigenvalue at least 0.1.
    """
    rng = make_rng(seed)
    graph = random_connected_graph(rng, N, edge_prob)
    n = N * dim
    Q = np.zeros((n, n))
    for i in range(N):
        B = rng.normal(size=(dim, dim))
        Q[i * dim:(i + 1) * dim, i * dim:(i + 1) * dim] = B @ B.T / dim + np.eye(dim)
    cross = rng.normal(size=(n, n)) * coupling_strength / np.sqrt(n)
    for i in range(N):
        cross[i * dim:(i + 1) * dim, i * dim:(i + 1) * dim] = 0.0
    q = rng.normal(size=n)
    for _ in range(60):
        Qc = Q + cross
        if np.linalg.eigvalsh(0.5 * (Qc + Qc.T))[0] >= 0.1:
            break
        cross *= 0.8
    else:
        raise DegenerateDraw("could not make the quadratic game strongly monotone")
    game = QuadraticGame(Qc, q, [FullSpace(dim)] * N, [np.zeros((0, dim))] * N, np.zeros((N, 0)), [dim] * N)
    x0 = rng.normal(size=n) * 2.0
    return Instance("quadratic_ne", game, graph, x0, seed, {"N": N, "dim": dim})


# --- plug-in electric vehicles --------------------------------------------------------

def default_demand(nbar: int = 12) -> np.ndarray:
    data = json.loads(resources.files("proxgne").joinpath("data/pev_demand.json").read_text())
    d = np.asarray(data["values"], dtype=float)
    if nbar == d.size:
        return d
    return np.interp(np.linspace(0, d.size - 1, nbar), np.arange(d.size), d)


def pev_capacity(nbar: int = 12) -> np.ndarray:
    """Per-interval line capacity per vehicle: 0.04 on intervals 1-3 and 11-12, else 0.01."""
    c = np.full(nbar, 0.01)
    for j in (1, 2, 3, 11, 12):
        if j <= nbar:
            c[j - 1] = 0.04
    return c


def pev_price(xi, a=0.38, b=0.6, demand=None):
    d = default_demand(np.size(xi)) if demand is None else np.asarray(demand)
    return a * (np.asarray(xi) + d) + b


def gen_pev(seed: int, N: int = 50, nbar: int = 12, a: float = 0.38, b: float = 0.6,
            demand=None, capacity_scale: float = PEV_CAPACITY_SCALE, edge_prob: float = 0.3) -> Instance:
    """Charging game with line-capacity coupling.

    Draw order: graph; per vehicle: c_i, diag(Q_i), upper off-diagonal of Q_i,
    gamma_i, availability mask (redrawing the vehicle while Q_i is not positive
    definite or its availability cannot reach gamma_i); initial point.
    """
    if N < 2:
        raise ValueError("need N >= 2")
    rng = make_rng(seed)
    graph = random_connected_graph(rng, N, edge_prob)
    d = default_demand(nbar) if demand is None else np.asarray(demand, dtype=float)
    P, C, r, sets = [], [], [], []
    redraws = 0
    iu = np.triu_indices(nbar, k=1)
    for _ in range(N):
        while True:
            ci = rng.uniform(0.55, 0.95, nbar)
            Qi = np.diag(rng.uniform(0.2, 0.8, nbar))
            Qi[iu] = rng.uniform(0.0, 0.05, iu[0].size)
            Qi = np.triu(Qi) + np.triu(Qi, 1).T
            gam = rng.uniform(0.6, 1.0)
            xbar = np.where(rng.random(nbar) < 0.2, 0.25, 0.0)
            if np.linalg.eigvalsh(Qi)[0] > 0 and xbar.sum() >= gam:
                break
            redraws += 1
            if redraws > MAX_REDRAWS * N:
                raise DegenerateDraw("too many vehicle redraws")
        P.append(2.0 * Qi)
        C.append(a * np.eye(nbar))
        r.append(ci + a * d + b)
        sets.append(BoxHyperplane(np.zeros(nbar), xbar, gam))
    cap = pev_capacity(nbar) * capacity_scale
    Ai = np.vstack([np.eye(nbar), -np.eye(nbar)])
    bi = np.concatenate([cap, np.zeros(nbar)])
    game = QuadraticAggregativeGame(np.array(P), np.array(C), np.array(r), sets,
                                    [Ai] * N, np.tile(bi, (N, 1)))
    try:
        game.constants()
    except NotStronglyMonotone as exc:
        raise DegenerateDraw(str(exc)) from exc
    try:
        feasibility_probe(game)
    except Infeasible as exc:
        raise DegenerateDraw(f"coupling constraints infeasible: {exc}") from exc
    x0 = game.sets.project(rng.uniform(0.0, 0.25, game.n))
    params = {"N": N, "nbar": nbar, "a": a, "b": b, "capacity_scale": capacity_scale,
              "demand": d.tolist(), "redraws": redraws}
    return Instance("pev", game, graph, x0, seed, params)


# --- run harness ------------------------------------------------------------------------

@dataclass
class RunConfig:
    kind: str = "nash_cournot"          # nash_cournot | pev | quadratic_ne | file
    seed: int = 1
    N: int = 20
    m: int = 7
    nbar: int = 12
    instance_path: str | None = None
    alg: str = "pppa"                   # pppa | pppa-ne | fb-ne | pppa-agg
    accel: str = "none"                 # none | overrelax | inertia | alternated-inertia
    gamma: float = 1.0
    zeta: float = 0.0
    eta: float = 0.0
    eta_safe: float = 0.99
    alpha_scale: float = 1.0
    eps0: float = 1e-2                  # inner accuracy eps0 / k**eps_power; 0 means exact
    eps_power: float = 2.0
    max_iter: int = 20_000
    tol: float = 1e-4                   # stop once ||x - x*|| <= tol
    step_scale: float = 1.0             # baseline step multiplier
    unconstrained: bool = False         # drop coupling constraints
    track_v: bool = True
    timing: bool = False
    use_potential: bool = False
    capacity_scale: float = PEV_CAPACITY_SCALE
    oracle_tol: float = 1e-10
    cache_dir: str | None = None
    out_csv: str | None = None
    out_json: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunResult:
    rows: list
    summary: dict
    converged: bool

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in self.rows:
            w.writerow([_fmt(row.get(h)) for h in TRACE_HEADER])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def build_instance(cfg: RunConfig) -> Instance:
    if cfg.kind == "nash_cournot":
        inst = gen_nash_cournot(cfg.seed, cfg.N, cfg.m)
    elif cfg.kind == "pev":
        inst = gen_pev(cfg.seed, cfg.N, cfg.nbar, capacity_scale=cfg.capacity_scale)
    elif cfg.kind == "quadratic_ne":
        inst = gen_quadratic_ne(cfg.seed, cfg.N)
    elif cfg.kind == "file":
        inst = instance_from_dict(json.loads(Path(cfg.instance_path).read_text()))
    else:
        raise ValueError(f"unknown experiment kind {cfg.kind!r}")
    if cfg.unconstrained or cfg.alg in ("pppa-ne", "fb-ne"):
        if isinstance(inst.game, QuadraticAggregativeGame):
            raise ValueError("NE algorithms need a standard-form game")
        inst = Instance(inst.kind, drop_coupling(inst.game), inst.graph, inst.x0, inst.seed,
                        dict(inst.params, coupling="dropped"))
    return inst


def eps_schedule(cfg: RunConfig):
    if cfg.eps0 <= 0:
        return lambda k: 1e-12
    return lambda k: cfg.eps0 / float(k) ** cfg.eps_power


def reference_point(game: GameProblem, graph: CommGraph, sol: OracleSolution, alpha: float) -> np.ndarray:
    """A zero of the KKT operator in the preconditioner layout (xbold, v, lambda).

    The iteration scales the pseudo-gradient by ``alpha``, so its multiplier is ``alpha * lam``.
    """
    N, m = game.num_agents, game.m
    X = game.lift(sol.x)
    Lam = np.tile(alpha * sol.lam, (N, 1))
    if m == 0 or graph.num_edges == 0:
        return np.concatenate([X.ravel(), np.zeros(graph.num_edges * m), Lam.ravel()])
    Ax = game.coupling_per_agent(sol.x)
    Zs = Ax - game.b_blocks - (game.A @ sol.x - game.b)[None, :] / N
    V, *_ = np.linalg.lstsq(graph._incidence.T, Zs, rcond=None)
    return np.concatenate([X.ravel(), V.ravel(), Lam.ravel()])


def _schedule(cfg: RunConfig) -> Schedule:
    if cfg.accel == "none":
        return Schedule(PLAIN)
    if cfg.accel == "overrelax":
        return Schedule(OVERRELAX, gamma=cfg.gamma)
    if cfg.accel == "inertia":
        return Schedule(INERTIA, zeta=cfg.zeta)
    if cfg.accel == "alternated-inertia":
        return Schedule(ALTERNATED, eta=cfg.eta)
    raise ValueError(f"unknown acceleration {cfg.accel!r}")


def _iters_to(rows, thresholds=THRESHOLDS):
    out = {}
    for t in thresholds:
        hit = next((r["k"] for r in rows if r["dist_x"] <= t), None)
        out[f"{t:g}"] = hit
    return out


def run_experiment(cfg: RunConfig, instance: Instance | None = None,
                   oracle_solution: OracleSolution | None = None) -> RunResult:
    inst = build_instance(cfg) if instance is None else instance
    game, graph = inst.game, inst.graph
    sol = oracle_solution
    if sol is None:
        if not game.has_coupling and isinstance(game, QuadraticGame) and isinstance(game.sets.sets[0], FullSpace):
            x_star = solve_ne_unconstrained(game)
            sol = OracleSolution(x_star, np.zeros(game.m), kkt_residual(game, x_star, np.zeros(game.m)), 0, 0.0)
        else:
            sol = solve_cached(game, cfg.oracle_tol, cfg.cache_dir)
    runners = {"pppa": _run_gne, "pppa-ne": _run_ne, "fb-ne": _run_fb, "pppa-agg": _run_agg}
    if cfg.alg not in runners:
        raise ValueError(f"unknown algorithm {cfg.alg!r}")
    rows, extra = runners[cfg.alg](cfg, inst, sol)
    converged = bool(rows) and rows[-1]["dist_x"] <= cfg.tol
    final = rows[-1] if rows else {}
    summary = {
        "trace_version": TRACE_VERSION,
        "config": asdict(cfg),
        "instance": {"kind": inst.kind, "seed": inst.seed, "N": game.num_agents, "n": game.n, "m": game.m,
                     "lambda2": float(graph._lambda2)},
        "iterations": len(rows),
        "converged": converged,
        "final": final,
        "iterations_to": _iters_to(rows),
        "total_inner_steps_max": int(sum(r["inner_max"] or 0 for r in rows)),
        "total_inner_steps_mean": float(sum(r["inner_mean"] or 0 for r in rows)),
        "communications": int(final.get("comms", 0)),
        "oracle": {"kkt": sol.kkt, "iterations": sol.iterations, "meta": sol.meta},
    }
    summary.update(extra)
    res = RunResult(rows, summary, converged)
    if cfg.out_csv:
        Path(cfg.out_csv).write_text(res.csv_text())
    if cfg.out_json:
        Path(cfg.out_json).write_text(json.dumps(summary, indent=2, default=_json_default))
    return res


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def _row(k, dist, kkt, dis, fp, fejer, imax, imean, comms, wall):
    return {"k": k, "dist_x": dist, "kkt_res": kkt, "disagreement": dis, "fp_res": fp,
            "fejer_gap": fejer, "inner_max": imax, "inner_mean": imean, "comms": comms, "wall_ms": wall}


def _run_gne(cfg, inst, sol):
    game, graph = inst.game, inst.graph
    plan = make_gne_plan(game, graph, eta_safe=cfg.eta_safe, alpha_scale=cfg.alpha_scale)
    it = alg.GneIteration(game, graph, plan)
    layout = alg.GneLayout(game, graph, cfg.track_v)
    state = alg.initial_state(game, graph, inst.x0, track_v=cfg.track_v)
    schedule = _schedule(cfg)
    Phi = assemble_phi(game, graph, plan) if cfg.track_v else None
    ref = reference_point(game, graph, sol, plan.alpha) if cfg.track_v else None
    rows = []
    t0 = time.perf_counter()
    prev_dist = [None]
    if ref is not None:
        d0 = layout.phi_embed(layout.pack(state)) - ref
        prev_dist[0] = float(np.sqrt(d0 @ (Phi @ d0)))

    def callback(k, w, info):
        s = layout.unpack(w)
        x = game.own_actions(s.X)
        lam_bar = np.maximum(s.Lam.mean(axis=0), 0.0) / plan.alpha
        fejer = None
        if ref is not None:
            dv = layout.phi_embed(w) - ref
            dist = float(np.sqrt(max(dv @ (Phi @ dv), 0.0)))
            fejer = dist - prev_dist[0]
            prev_dist[0] = dist
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else None
        rows.append(_row(k, float(np.linalg.norm(x - sol.x)), kkt_residual(game, x, lam_bar),
                         max(alg.disagreement(s.X), alg.disagreement(s.Lam)),
                         None, fejer, info["inner_max"], info["inner_mean"], k, wall))

    def stop(k, w, info):
        return rows[-1]["dist_x"] <= cfg.tol

    oracle = alg.gne_oracle(it, layout, eps_schedule(cfg))
    trace = ppa_run(oracle, layout.pack(state), schedule, max_iter=cfg.max_iter, stop=stop, callback=callback)
    for r, s in zip(rows, trace.step_norm):
        r["fp_res"] = s
    return rows, {"step_plan": plan.to_dict(), "schedule": schedule.to_dict()}


def _run_ne(cfg, inst, sol):
    game, graph = inst.game, inst.graph
    plan = make_gne_plan(game, graph, eta_safe=cfg.eta_safe, alpha_scale=cfg.alpha_scale)
    it = alg.GneIteration(game, graph, plan)
    X = game.lift(inst.x0)
    eps = eps_schedule(cfg)
    rows = []
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iter + 1):
        Xn, rep = alg.pppa_ne_step(it, X, cfg.gamma, eps(k))
        x = game.own_actions(Xn)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else None
        rows.append(_row(k, float(np.linalg.norm(x - sol.x)), kkt_residual(game, x, np.zeros(game.m)),
                         alg.disagreement(Xn), float(np.linalg.norm(Xn - X)), None,
                         rep.max_steps, rep.mean_steps, k, wall))
        X = Xn
        if rows[-1]["dist_x"] <= cfg.tol:
            break
    return rows, {"step_plan": plan.to_dict(), "gamma": cfg.gamma}


def _run_fb(cfg, inst, sol):
    game, graph = inst.game, inst.graph
    alpha, step = best_fb_alpha(game, graph)
    step *= cfg.step_scale
    X = game.lift(inst.x0)
    rows = []
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iter + 1):
        Xn = alg.fb_ne_baseline_step(game, graph, X, alpha, step)
        x = game.own_actions(Xn)
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else None
        rows.append(_row(k, float(np.linalg.norm(x - sol.x)), kkt_residual(game, x, np.zeros(game.m)),
                         alg.disagreement(Xn), float(np.linalg.norm(Xn - X)), None, None, None, k, wall))
        X = Xn
        if rows[-1]["dist_x"] <= cfg.tol:
            break
    return rows, {"fb_alpha": alpha, "fb_step": step}


def _run_agg(cfg, inst, sol):
    game, graph = inst.game, inst.graph
    plan = make_aggregative_plan(game, graph, eta_safe=cfg.eta_safe, alpha_scale=cfg.alpha_scale)
    it = alg.AggregativeIteration(game, graph, plan, use_potential=cfg.use_potential)
    state = alg.initial_agg_state(game, graph, inst.x0)
    eps = eps_schedule(cfg)
    rows = []
    t0 = time.perf_counter()
    for k in range(1, cfg.max_iter + 1):
        sn, rep = it.resolvent(state, eps(k))
        x = sn.X.ravel()
        fp = float(np.sqrt(sum(np.sum((a - b) ** 2) for a, b in
                               ((sn.X, state.X), (sn.S, state.S), (sn.Z, state.Z), (sn.Lam, state.Lam)))))
        wall = (time.perf_counter() - t0) * 1e3 if cfg.timing else None
        rows.append(_row(k, float(np.linalg.norm(x - sol.x)),
                         kkt_residual(game, x, np.maximum(sn.Lam.mean(axis=0), 0.0) / plan.alpha),
                         max(alg.disagreement(sn.X + sn.S), alg.disagreement(sn.Lam)), fp, None,
                         rep.max_steps, rep.mean_steps, sn.comms, wall))
        state = sn
        if rows[-1]["dist_x"] <= cfg.tol:
            break
    return rows, {"step_plan": plan.to_dict()}


# --- sweeps -------------------------------------------------------------------------

def step_bound_table(Ns=(10, 20, 40), seed: int = 1, m: int = 7) -> list[dict]:
    """Per-N step sizes: PPPA steps from the Gershgorin bounds vs the baseline bound."""
    out = []
    for N in Ns:
        inst = gen_nash_cournot(seed, N, m)
        game = drop_coupling(inst.game)
        plan = make_gne_plan(game, inst.graph)
        a_fb, s_fb = best_fb_alpha(game, inst.graph)
        out.append({"N": N, "alpha_max": plan.alpha_bound, "tau_min": float(plan.tau.min()),
                    "tau_mean": float(plan.tau.mean()), "fb_alpha": a_fb, "fb_step": s_fb})
    return out


def sweep(base: RunConfig, grid: dict) -> list[dict]:
    """Run every combination of the grid (keys are RunConfig fields)."""
    import itertools
    keys = list(grid)
    out = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = RunConfig(**{**asdict(base), **dict(zip(keys, combo)), "out_csv": None, "out_json": None})
        res = run_experiment(cfg)
        out.append({**dict(zip(keys, combo)), "iterations": res.summary["iterations"],
                    "converged": res.converged, **{f"iters_to_{k}": v for k, v in res.summary["iterations_to"].items()}})
    return out
