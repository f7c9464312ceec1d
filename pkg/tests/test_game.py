import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxgne.errors import DimensionMismatch, MissingConstants, NegativeMultiplier, NotStronglyMonotone
from proxgne.experiments import cournot_price, default_demand, gen_pev, pev_price
from proxgne.game import (
    CallableGame,
    GameConstants,
    QuadraticAggregativeGame,
    QuadraticGame,
    augmented_operator,
    extended_pseudo_gradient,
    game_constants,
    game_from_json,
    game_to_json,
    kkt_residual,
    pseudo_gradient,
)
from proxgne.graph import build_graph, path_graph
from proxgne.sets import Box, BoxHyperplane, FullSpace
from proxgne.stepsizes import make_gne_plan

from reference import dense_augmented_operator, finite_difference_grad
import shared


def decoupled(N=3, dim=2):
    n = N * dim
    return QuadraticGame(np.eye(n), np.zeros(n), [FullSpace(dim)] * N,
                         [np.zeros((0, dim))] * N, np.zeros((N, 0)), [dim] * N)


def two_firm_cournot():
    """Two single-market firms, c_i(x) = x^2, price 10 - (x1 + x2), cost scaled by 1e-3."""
    def cost(i, x):
        return 1e-3 * (x[i] ** 2 - cournot_price(10.0, 1.0, x.sum()) * x[i])
    Q = 1e-3 * np.array([[4.0, 1.0], [1.0, 4.0]])
    q = -1e-2 * np.ones(2)
    game = QuadraticGame(Q, q, [Box([0.0], [10.0])] * 2, [np.ones((1, 1))] * 2,
                         np.full((2, 1), 0.5), [1, 1])
    return game, cost


def random_quadratic(rng, N=3, dim=2, shift=3.0):
    n = N * dim
    M = rng.normal(size=(n, n))
    Q = M + shift * np.eye(n)
    for i in range(N):
        b = slice(i * dim, (i + 1) * dim)
        Q[b, b] = 0.5 * (Q[b, b] + Q[b, b].T)
    return QuadraticGame(Q, rng.normal(size=n), [FullSpace(dim)] * N,
                         [np.zeros((0, dim))] * N, np.zeros((N, 0)), [dim] * N)


def test_decoupled_pseudo_gradient_is_identity():
    x = np.arange(6.0)
    assert np.array_equal(pseudo_gradient(decoupled(), x), x)


def test_two_firm_gradient_matches_finite_differences():
    game, cost = two_firm_cournot()
    for x in ([1.0, 2.0], [3.5, 0.25], [0.0, 7.0]):
        x = np.array(x)
        fd = [finite_difference_grad(lambda y, i=i: cost(i, np.where(np.arange(2) == i, y[0], x)), x[i:i + 1])[0]
              for i in range(2)]
        assert np.allclose(pseudo_gradient(game, x), fd, atol=1e-6)
        assert cost(0, x) == pytest.approx(game.cost(0, x), abs=1e-12)


def test_unconstrained_solution_zeroes_gradient(rng):
    game = random_quadratic(rng)
    x_star = -np.linalg.solve(game.Q, game.q)
    assert np.max(np.abs(pseudo_gradient(game, x_star))) <= 1e-8


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        pseudo_gradient(decoupled(), np.zeros(5))
    with pytest.raises(DimensionMismatch):
        extended_pseudo_gradient(decoupled(), np.zeros((2, 6)))


def test_extended_gradient_consensus_bitwise(rng):
    inst = shared.cournot(1)
    x = rng.uniform(0, 5, inst.game.n)
    X = inst.game.lift(x)
    assert np.array_equal(extended_pseudo_gradient(inst.game, X), pseudo_gradient(inst.game, x))


def test_extended_gradient_hand_layout():
    game, cost = two_firm_cournot()
    X = np.array([[1.0, 3.0], [2.5, 0.5]])  # agent 0 believes x2 = 3, agent 1 believes x1 = 2.5
    F = extended_pseudo_gradient(game, X)
    fd0 = finite_difference_grad(lambda y: cost(0, np.array([y[0], 3.0])), [1.0])[0]
    fd1 = finite_difference_grad(lambda y: cost(1, np.array([2.5, y[0]])), [0.5])[0]
    assert F == pytest.approx([fd0, fd1], abs=1e-6)


def test_extended_gradient_lipschitz_sampling(rng):
    game = shared.cournot(2).game
    theta = game.constants().theta
    N, n = game.num_agents, game.n
    for _ in range(1000):
        U, W = rng.normal(size=(2, N, n)) * 3
        lhs = np.linalg.norm(game.extended_gradient(U) - game.extended_gradient(W))
        assert lhs <= theta * np.linalg.norm(U - W) * (1 + 1e-12)


def test_augmented_operator_consensus_drops_laplacian(rng):
    inst = shared.cournot(1)
    x = rng.uniform(0, 5, inst.game.n)
    Fa = augmented_operator(inst.game, inst.graph, 0.7, inst.game.lift(x))
    expected = np.zeros_like(Fa)
    expected[inst.game.owner, inst.game.cols] = 0.7 * pseudo_gradient(inst.game, x)
    assert np.allclose(Fa, expected, rtol=0, atol=1e-13)


def test_augmented_operator_matches_dense_assembly(rng):
    game = random_quadratic(rng, N=3, dim=2)
    W = np.array([[0, 1.0, 2.0], [1.0, 0, 0], [2.0, 0, 0]])
    g = build_graph(W)
    X = rng.normal(size=(3, 6))
    ours = augmented_operator(game, g, 0.3, X).ravel()
    ref = dense_augmented_operator(game.Q, game.q, game.dims, W, 0.3, X)
    assert np.max(np.abs(ours - ref)) <= 1e-12


def test_restricted_strong_monotonicity_at_alpha_max(rng):
    inst = shared.cournot(1)
    game, graph = inst.game, inst.graph
    plan = make_gne_plan(game, graph)
    Xs = game.lift(shared.cournot_solution(1).x)
    F_star = augmented_operator(game, graph, plan.alpha, Xs)
    for _ in range(1000):
        X = Xs + rng.normal(size=Xs.shape) * rng.uniform(0.01, 5)
        D = X - Xs
        lhs = np.sum(D * (augmented_operator(game, graph, plan.alpha, X) - F_star))
        assert lhs >= plan.mu_Fa * np.sum(D * D) - 1e-9


def test_aggregative_gradient_without_aggregate_dependence():
    N, nb = 3, 2
    game = QuadraticAggregativeGame(np.tile(np.eye(nb), (N, 1, 1)), np.zeros((N, nb, nb)), np.zeros((N, nb)),
                                    [FullSpace(nb)] * N, [np.zeros((0, nb))] * N, np.zeros((N, 0)))
    assert np.array_equal(game.aggregative_gradient(1, np.array([0.3, -2.0]), np.array([5.0, 5.0])), [0.3, -2.0])


def pev_cost_fn(game, i, a=0.38, b=0.6, demand=None):
    """Three-vehicle charging cost written from the price law, not the package's coefficients."""
    def J(x):
        X = game.blocks(x)
        xi = X.mean(axis=0)
        return 0.5 * X[i] @ game.P[i] @ X[i] + (game.r[i] - a * demand - b) @ X[i] + pev_price(xi, a, b, demand) @ X[i]
    return J


def test_pev_aggregative_gradient_matches_finite_differences(rng):
    inst = gen_pev(3, N=3, capacity_scale=100.0)
    game = inst.game
    d = default_demand(game.nbar)
    for i in range(3):
        x = rng.uniform(0, 0.25, game.n)
        J = pev_cost_fn(game, i, demand=d)
        X = game.blocks(x)

        def Ji(y, i=i, X=X):
            Z = X.copy()
            Z[i] = y
            return J(Z.ravel())
        fd = finite_difference_grad(Ji, X[i])
        ours = game.aggregative_gradient(i, X[i], X.mean(axis=0))
        assert np.allclose(ours, fd, atol=1e-6)


def test_aggregative_lipschitz_sampling(rng):
    game = shared.pev(1).game
    th = game.theta_tilde()
    N, nb = game.num_agents, game.nbar
    for _ in range(300):
        U = rng.normal(size=(2, N, nb))
        V = rng.normal(size=(2, N, nb))
        lhs = np.linalg.norm(game.aggregative_gradient_all(U[0], U[1]) - game.aggregative_gradient_all(V[0], V[1]))
        assert lhs <= th * np.linalg.norm(U - V) * (1 + 1e-12)


def test_potential_gradient_matches_tracked_map(rng):
    game = shared.pev(1).game
    for _ in range(20):
        i = rng.integers(game.num_agents)
        y = rng.uniform(0, 0.25, game.nbar)
        s = rng.normal(size=game.nbar) * 0.1
        fd = finite_difference_grad(lambda z: game.potential(i, z, s), y)
        assert np.allclose(fd, game.aggregative_gradient(i, y, y + s), atol=1e-6)


def test_kkt_residual_cases():
    game = decoupled()
    x = np.array([1.0, -2, 0, 3, 0.5, 0])
    assert kkt_residual(game, x, np.zeros(0)) == pytest.approx(np.linalg.norm(x))
    g2, _ = two_firm_cournot()
    with pytest.raises(NegativeMultiplier):
        kkt_residual(g2, np.zeros(2), [-1.0])


def test_kkt_residual_at_oracle_and_perturbed():
    game = shared.cournot(1).game
    sol = shared.cournot_solution(1)
    assert kkt_residual(game, sol.x, sol.lam) <= 1e-6
    x = sol.x.copy()
    x[0] += 0.1
    assert kkt_residual(game, x, sol.lam) > 1e-6


def test_constants():
    assert game_constants(decoupled()) == GameConstants(1.0, 1.0, 1.0)
    Q = np.array([[2.0, 1.0], [0.0, 2.0]])
    g = QuadraticGame(Q, np.zeros(2), [FullSpace(1)] * 2, [np.zeros((0, 1))] * 2, np.zeros((2, 0)), [1, 1])
    c = game_constants(g)
    assert c.mu == pytest.approx(1.5)
    assert c.theta0 == pytest.approx(np.linalg.svd(Q, compute_uv=False)[0])
    bad = QuadraticGame(-np.eye(2), np.zeros(2), [FullSpace(1)] * 2, [np.zeros((0, 1))] * 2, np.zeros((2, 0)), [1, 1])
    with pytest.raises(NotStronglyMonotone):
        game_constants(bad)


def test_callable_game_needs_constants():
    g = CallableGame(lambda i, xi, x: xi, [1, 1], [FullSpace(1)] * 2, [np.zeros((0, 1))] * 2, np.zeros((2, 0)))
    with pytest.raises(MissingConstants):
        g.constants()
    c = GameConstants(1.0, 2.0, 1.5)
    g2 = CallableGame(lambda i, xi, x: xi, [1, 1], [FullSpace(1)] * 2, [np.zeros((0, 1))] * 2, np.zeros((2, 0)), c)
    assert g2.constants() is c


@pytest.mark.parametrize("seed", range(1, 21))
def test_constant_ordering_on_generated_instances(seed):
    c = shared.cournot(seed).game.constants()
    assert c.mu <= c.theta + 1e-12 <= c.theta0 + 2e-12


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_strong_monotonicity_sampling(seed):
    game = shared.cournot(seed).game
    mu = game.constants().mu
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        u, w = rng.normal(size=(2, game.n)) * 5
        assert (game.pseudo_gradient(u) - game.pseudo_gradient(w)) @ (u - w) >= mu * np.sum((u - w) ** 2) - 1e-9


def test_json_roundtrip():
    game = shared.cournot(1).game
    h = game_from_json(game_to_json(game))
    assert np.array_equal(h.Q, game.Q) and np.array_equal(h.A, game.A)
    agg = gen_pev(2, N=4, capacity_scale=100.0).game
    h = game_from_json(game_to_json(agg))
    assert np.array_equal(h.P, agg.P) and isinstance(h.sets.sets[0], BoxHyperplane)


@given(st.integers(0, 2**32 - 1))
def test_standard_form_matches_aggregative_map(seed):
    rng = np.random.default_rng(seed)
    N, nb = 4, 3
    P = np.array([np.diag(rng.uniform(1, 2, nb)) for _ in range(N)])
    C = rng.normal(size=(N, nb, nb)) * 0.3
    r = rng.normal(size=(N, nb))
    game = QuadraticAggregativeGame(P, C, r, [FullSpace(nb)] * N, [np.zeros((0, nb))] * N, np.zeros((N, 0)),
                                    constants=GameConstants(1, 1, 1))
    x = rng.normal(size=N * nb)
    std = game.to_standard_form()
    assert np.allclose(std.pseudo_gradient(x), game.pseudo_gradient(x), atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_extended_equals_pseudo_at_consensus_property(seed):
    rng = np.random.default_rng(seed)
    game = random_quadratic(rng, N=rng.integers(1, 5), dim=rng.integers(1, 4))
    x = rng.normal(size=game.n)
    assert np.array_equal(game.extended_gradient(game.lift(x)), game.pseudo_gradient(x))
    g = path_graph(game.num_agents) if game.num_agents > 1 else None
    if g is not None:
        Fa = augmented_operator(game, g, 0.5, game.lift(x))
        assert np.allclose(Fa.sum(axis=0)[game.cols], 0.5 * game.pseudo_gradient(x))
