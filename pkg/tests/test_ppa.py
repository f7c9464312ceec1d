"""Proximal-point engine on toy operators with known resolvents."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxgne.errors import ScheduleOutOfRange, TooShort
from proxgne.ppa import (
    ALTERNATED,
    INERTIA,
    OVERRELAX,
    PLAIN,
    Schedule,
    contraction_check,
    fejer_check,
    km_step,
    natural_map_residual,
    residual_rate,
    residual_sum_check,
    run,
    solve_pseudomonotone_vi,
)

SKEW = np.array([[0.0, -1.0], [1.0, 0.0]])


def scaled_identity_oracle(c):
    """Resolvent of B(w) = c w."""
    return lambda w: (w / (1.0 + c), 0.0, {})


def linear_oracle(B):
    R = np.linalg.inv(np.eye(B.shape[0]) + B)
    return lambda w: (R @ w, 0.0, {})


def noisy(oracle, scale=1.0):
    """Wrap an exact oracle with a deterministic error of norm scale / k^2."""
    state = {"k": 0}

    def wrapped(w):
        state["k"] += 1
        u, _, info = oracle(w)
        e = np.ones_like(u) / np.sqrt(u.size) * scale / state["k"] ** 2
        return u + e, scale / state["k"] ** 2, info
    return wrapped


def test_km_step_cases():
    orc = scaled_identity_oracle(1.0)
    w = np.array([2.0])
    assert np.array_equal(km_step(orc, w, 0.0), w)
    assert km_step(orc, w, 1.0)[0] == 1.0
    assert km_step(orc, km_step(orc, w, 1.0), 1.0)[0] == 0.5
    with pytest.raises(ScheduleOutOfRange):
        km_step(orc, w, 2.5)


def test_schedule_ranges():
    for bad in (dict(kind=OVERRELAX, gamma=2.0), dict(kind=INERTIA, zeta=1 / 3),
                dict(kind=ALTERNATED, eta=1.2), dict(kind=PLAIN, gamma=1.5), dict(kind="nope")):
        with pytest.raises(ScheduleOutOfRange):
            Schedule(**bad)


@pytest.mark.parametrize("sched", [Schedule(INERTIA, zeta=0.0), Schedule(ALTERNATED, eta=0.0),
                                   Schedule(OVERRELAX, gamma=1.0)])
def test_zero_acceleration_reproduces_plain(sched):
    orc = linear_oracle(SKEW + 0.1 * np.eye(2))
    w0 = np.array([1.0, -2.0])
    a = run(orc, w0, Schedule(), max_iter=50, tol=0)
    b = run(orc, w0, sched, max_iter=50, tol=0)
    assert np.array_equal(a.final, b.final) and a.step_norm == b.step_norm


def test_strongly_monotone_toy_contracts_at_predicted_rate():
    mu = 2.0
    tr = run(scaled_identity_oracle(mu), np.array([3.0, -1.0]), max_iter=20, tol=0, reference=np.zeros(2))
    d = np.asarray(tr.dist_ref)
    assert np.allclose(d[1:] / d[:-1], 1 - mu / (1 + mu))
    assert contraction_check(tr, mu).ok


@pytest.mark.parametrize("gamma", [1.0, 1.5, 1.9])
def test_contraction_envelope_relaxed(gamma):
    mu = 0.5
    sched = Schedule(OVERRELAX, gamma=gamma) if gamma != 1.0 else Schedule()
    tr = run(linear_oracle(SKEW + mu * np.eye(2)), np.array([1.0, 1.0]), sched, max_iter=60, tol=0,
             reference=np.zeros(2))
    assert contraction_check(tr, mu).ok


def test_fejer_exact_skew_run():
    tr = run(linear_oracle(SKEW), np.array([1.0, 2.0]), max_iter=200, tol=0, reference=np.zeros(2))
    assert fejer_check(tr).ok
    sums = residual_sum_check(tr)
    assert sums[-1] - sums[len(sums) // 2] <= 1e-6 * sums[-1]


def test_fejer_flags_overscaled_gamma():
    tr = run(linear_oracle(SKEW), np.array([1.0, 2.0]), Schedule.unchecked(OVERRELAX, gamma=2.5),
             max_iter=20, tol=0, reference=np.zeros(2))
    rep = fejer_check(tr)
    assert not rep.ok and rep.first_violation == 0


def test_fejer_inexact_needs_error_term():
    ref = np.zeros(2)
    tr = run(noisy(linear_oracle(SKEW), 1e-2), np.array([1.0, 2.0]), max_iter=300, tol=0, reference=ref)
    assert fejer_check(tr).ok
    assert tr.dist_ref[-1] <= 1e-2


def test_residual_rate_cases():
    r, C = residual_rate(np.zeros(20))
    assert np.all(r == 0) and C == 0
    with pytest.raises(TooShort):
        residual_rate(np.ones(5))
    tr = run(linear_oracle(SKEW + 0.05 * np.eye(2)), np.array([1.0, 0.0]), max_iter=300, tol=0)
    r, C = residual_rate(tr)
    k = np.arange(1, r.size + 1)
    assert np.all(np.diff(r[10:]) <= 1e-15)         # averages of a decreasing sequence
    assert (k * r)[-1] <= 1.0001 * (k * r)[100]      # cumulative sum has settled


def test_solve_pseudomonotone_vi_linear():
    c = np.array([0.3, -0.2])
    proj = lambda w: np.clip(w, -1, 1)  # noqa: E731
    w, _ = solve_pseudomonotone_vi(lambda w: w - c, proj, np.array([1.0, 1.0]), tol=1e-9)
    assert np.allclose(w, c, atol=1e-8)


def test_solve_pseudomonotone_vi_rotation():
    M = np.array([[0.1, -1.0], [1.0, 0.1]])
    proj = lambda w: np.clip(w, -1, 1)  # noqa: E731
    psi = lambda w: M @ w  # noqa: E731
    w, _ = solve_pseudomonotone_vi(psi, proj, np.array([1.0, -1.0]), tol=1e-9, lipschitz=np.linalg.norm(M, 2))
    assert np.linalg.norm(w) <= 1e-7
    assert natural_map_residual(psi, proj, w) <= 1e-8


def scalar_vi_solutions_on_grid(psi, lo, hi, npts=4001):
    """Grid points w where psi(w) (y - w) >= 0 for every grid y."""
    grid = np.linspace(lo, hi, npts)
    vals = psi(grid)
    ok = [w for w, v in zip(grid, vals) if np.all(v * (grid - w) >= -1e-12)]
    return np.array(ok)


@pytest.mark.parametrize("psi", [lambda w: w / (1 + w), lambda w: w * np.exp(-w)],
                         ids=["saturating", "nonmonotone"])
def test_pseudomonotone_scalar_examples(psi):
    assert np.array_equal(scalar_vi_solutions_on_grid(psi, 0.0, 4.0), [0.0])
    proj = lambda w: np.clip(w, 0.0, 4.0)  # noqa: E731
    w, _ = solve_pseudomonotone_vi(psi, proj, np.array([3.5]), tol=1e-9)
    assert abs(w[0]) <= 1e-7


def test_nonmonotone_example_is_not_monotone():
    psi = lambda w: w * np.exp(-w)  # noqa: E731
    a, b = 1.0, 3.0
    assert (psi(b) - psi(a)) * (b - a) < 0


def test_run_determinism():
    orc = linear_oracle(SKEW + 0.2 * np.eye(2))
    a = run(orc, np.array([1.0, 2.0]), Schedule(ALTERNATED, eta=0.7), max_iter=100, tol=0)
    b = run(orc, np.array([1.0, 2.0]), Schedule(ALTERNATED, eta=0.7), max_iter=100, tol=0)
    assert a.step_norm == b.step_norm and np.array_equal(a.final, b.final)


def test_alternated_inertia_extrapolates_only_on_odd_iterations():
    s = Schedule(ALTERNATED, eta=0.8)
    assert [s.inertia(k) for k in range(4)] == [0.0, 0.8, 0.0, 0.8]


@given(st.floats(0.05, 5.0), st.floats(1.0, 1.95), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_relaxed_contraction_property(mu, gamma, w0):
    sched = Schedule(OVERRELAX, gamma=gamma)
    tr = run(linear_oracle(mu * np.eye(2) + SKEW), np.array(w0), sched, max_iter=30, tol=0, reference=np.zeros(2))
    assert contraction_check(tr, mu).ok
    assert fejer_check(tr).ok


@given(st.floats(0.0, 0.33), st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_inertial_runs_converge_on_monotone_toy(zeta, w0):
    tr = run(linear_oracle(SKEW + 0.3 * np.eye(2)), np.array(w0), Schedule(INERTIA, zeta=zeta), max_iter=400, tol=0)
    assert np.linalg.norm(tr.final) <= 1e-6 * max(1.0, np.linalg.norm(w0))
