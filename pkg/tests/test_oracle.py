import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxgne.errors import Infeasible
from proxgne.experiments import gen_nash_cournot
from proxgne.game import QuadraticGame, kkt_residual
from proxgne.oracle import (
    OracleSolution,
    dykstra_project,
    feasibility_probe,
    instance_hash,
    orthogonal_row_groups,
    solve_cached,
    solve_ne_unconstrained,
    solve_vgne_centralized,
)
from proxgne.sets import Box, FullSpace

from reference import kkt_two_player_scalar
import shared


def scalar_pair(Q, q, a, b_total):
    return QuadraticGame(np.asarray(Q, float), np.asarray(q, float), [FullSpace(1)] * 2,
                         [np.array([[a[0]]]), np.array([[a[1]]])], np.array([[b_total / 2], [b_total / 2]]), [1, 1])


def test_unconstrained_matches_closed_form(rng):
    n = 4
    B = rng.normal(size=(n, n))
    Q = B @ B.T + n * np.eye(n)
    game = QuadraticGame(Q, rng.normal(size=n), [FullSpace(1)] * n, [np.zeros((0, 1))] * n, np.zeros((n, 0)), [1] * n)
    sol = solve_vgne_centralized(game, tol=1e-11)
    assert np.allclose(sol.x, solve_ne_unconstrained(game), atol=1e-9)
    assert sol.lam.size == 0


@pytest.mark.parametrize("b_total", [-1.0, 0.5, 10.0])
def test_two_player_scalar_matches_case_enumeration(b_total):
    Q = np.array([[2.0, 0.5], [0.3, 1.5]])
    q = np.array([-2.0, -1.0])
    a = np.array([1.0, 1.0])
    game = scalar_pair(Q, q, a, b_total)
    sol = solve_vgne_centralized(game, tol=1e-11)
    x_ref, lam_ref = kkt_two_player_scalar(Q, q, a, b_total)
    assert np.allclose(sol.x, x_ref, atol=1e-8)
    assert sol.lam[0] == pytest.approx(lam_ref, abs=1e-8)


def test_two_player_solution_satisfies_vi_on_grid():
    Q = np.array([[2.0, 0.5], [0.3, 1.5]])
    q = np.array([-2.0, -1.0])
    game = scalar_pair(Q, q, [1.0, 1.0], 0.5)
    x = solve_vgne_centralized(game, tol=1e-11).x
    g = Q @ x + q
    u, v = np.meshgrid(np.linspace(-5, 5, 201), np.linspace(-5, 5, 201))
    Y = np.column_stack([u.ravel(), v.ravel()])
    Y = Y[Y.sum(axis=1) <= 0.5]
    assert np.min((Y - x) @ g) >= -1e-8


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_cournot_kkt_residual(seed):
    game = shared.cournot(seed).game
    sol = shared.cournot_solution(seed)
    assert sol.kkt <= 1e-8
    assert kkt_residual(game, sol.x, sol.lam) == pytest.approx(sol.kkt)
    assert game.sets.contains(sol.x, tol=1e-10)
    assert np.max(game.A @ sol.x - game.b) <= 1e-10
    assert np.all(sol.lam >= 0)


def test_tightened_tolerance_is_self_consistent():
    game = gen_nash_cournot(11, N=6, m=3).game
    a = solve_vgne_centralized(game, tol=1e-9)
    b = solve_vgne_centralized(game, tol=1e-10)
    assert np.linalg.norm(a.x - b.x) <= 1e-7


def polytope_projection_enumerated(y, A, b):
    """Closest point of {A x <= b} to y over all active-set equality projections."""
    best, best_d = None, np.inf
    m = A.shape[0]
    for r in range(0, y.size + 1):
        for act in itertools.combinations(range(m), r):
            Aa = A[list(act)]
            if r:
                try:
                    x = y - Aa.T @ np.linalg.solve(Aa @ Aa.T, Aa @ y - b[list(act)])
                except np.linalg.LinAlgError:
                    continue
            else:
                x = y.copy()
            d = np.linalg.norm(x - y)
            if np.all(A @ x <= b + 1e-10) and d < best_d:
                best, best_d = x, d
    return best


def test_dykstra_matches_enumeration(rng):
    n, m = 4, 3
    box_rows = np.vstack([np.eye(n), -np.eye(n)])
    for _ in range(30):
        A = rng.normal(size=(m, n))
        b = rng.uniform(0.1, 1.0, m)
        box = Box(-np.ones(n), np.ones(n))
        y = rng.normal(size=n) * 3
        x, _ = dykstra_project(y, box.project, A, b, tol=1e-13)
        ref = polytope_projection_enumerated(y, np.vstack([A, box_rows]), np.concatenate([b, np.ones(2 * n)]))
        assert np.linalg.norm(x - ref) <= 1e-9


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_row_groups_are_orthogonal_partitions(seed):
    rng = np.random.default_rng(seed)
    A = (rng.uniform(size=(8, 10)) < 0.2) * rng.normal(size=(8, 10))
    groups = orthogonal_row_groups(A)
    covered = np.sort(np.concatenate(groups)) if groups else np.zeros(0, int)
    assert np.array_equal(covered, np.flatnonzero(np.any(A != 0, axis=1)))
    for g in groups:
        G = A[g] @ A[g].T
        assert np.all(G[~np.eye(len(g), dtype=bool)] == 0)


def test_feasibility_probe():
    game = scalar_pair(np.eye(2), np.zeros(2), [1.0, 1.0], 0.5)
    x = feasibility_probe(game, start=np.array([3.0, 3.0]))
    assert x.sum() <= 0.5 + 1e-8
    boxed = QuadraticGame(np.eye(2), np.zeros(2), [Box([0.0], [1.0])] * 2, [np.array([[-1.0]])] * 2,
                          np.array([[-1.5], [-1.5]]), [1, 1])
    with pytest.raises(Infeasible):
        feasibility_probe(boxed)


def test_cache_round_trip(tmp_path):
    game = gen_nash_cournot(12, N=5, m=3).game
    a = solve_cached(game, 1e-9, tmp_path)
    files = list(tmp_path.glob("oracle_*.json"))
    assert len(files) == 1 and instance_hash(game, 1e-9) in files[0].name
    b = solve_cached(game, 1e-9, tmp_path)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.lam, b.lam) and a.kkt == b.kkt
    assert instance_hash(game, 1e-9) != instance_hash(game, 1e-10)
    c = OracleSolution.from_dict(json.loads(files[0].read_text()))
    assert c.iterations == a.iterations
