import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from proxgne.errors import BadBounds, Infeasible
from proxgne.sets import (
    Box,
    BoxHyperplane,
    FullSpace,
    ProductSet,
    local_set_from_dict,
    project_box,
    project_box_hyperplane,
)

from reference import box_hyperplane_projection_enumerated, box_projection_enumerated


def test_box_inside_is_identity():
    y = np.array([0.2, 0.7])
    assert np.array_equal(project_box(y, [0, 0], [1, 1]), y)


def test_box_clamps():
    assert project_box([-1.0, 5.0], [0, 0], [1, 1]).tolist() == [0.0, 1.0]


def test_box_bad_bounds():
    with pytest.raises(BadBounds):
        project_box([0.0], [1.0], [0.0])


def test_box_hyperplane_feasible_point_unchanged():
    y = np.array([0.3, 0.7])
    assert np.allclose(project_box_hyperplane(y, [0, 0], [1, 1], 1.0), y, atol=1e-14)


def test_box_hyperplane_hand_case():
    # active sets: z = (1, 0) with z_1 at its upper bound and z_2 at its lower bound
    assert np.allclose(project_box_hyperplane([2.0, 0.0], [0, 0], [1, 1], 1.0), [1.0, 0.0])


def test_box_hyperplane_infeasible_level():
    with pytest.raises(Infeasible):
        project_box_hyperplane([0.0, 0.0], [0, 0], [1, 1], 3.0)
    with pytest.raises(Infeasible):
        BoxHyperplane(np.zeros(2), np.ones(2), -0.5)


def test_box_matches_enumeration(rng):
    for _ in range(100):
        n = rng.integers(1, 5)
        lo = rng.uniform(-2, 0, n)
        hi = lo + rng.uniform(0, 3, n)
        y = rng.normal(size=n) * 3
        assert np.allclose(project_box(y, lo, hi), box_projection_enumerated(y, lo, hi), atol=1e-10)


def test_box_hyperplane_matches_enumeration(rng):
    for _ in range(200):
        n = rng.integers(1, 5)
        lo = rng.uniform(-1, 0, n)
        hi = lo + rng.uniform(0.1, 2, n)
        level = rng.uniform(lo.sum(), hi.sum())
        y = rng.normal(size=n) * 2
        z = project_box_hyperplane(y, lo, hi, level)
        assert np.allclose(z, box_hyperplane_projection_enumerated(y, lo, hi, level), atol=1e-8)


vec = st.integers(1, 8).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-5, 5), min_size=n, max_size=n),
    st.lists(st.floats(-2, 0), min_size=n, max_size=n),
    st.lists(st.floats(0.01, 2), min_size=n, max_size=n),
    st.floats(0, 1)))


@given(vec)
def test_box_hyperplane_properties(data):
    y, lo, width, frac = (np.array(v) if isinstance(v, list) else v for v in data)
    hi = lo + width
    level = lo.sum() + frac * width.sum()
    z = project_box_hyperplane(y, lo, hi, level)
    assert np.all(z >= lo) and np.all(z <= hi)
    assert abs(z.sum() - level) <= 1e-9 * max(1.0, abs(level))
    # idempotent
    assert np.allclose(project_box_hyperplane(z, lo, hi, level), z, atol=1e-10)
    # variational inequality: <y - z, w - z> <= 0 for feasible w
    w = project_box_hyperplane(np.zeros_like(y), lo, hi, level)
    assert (y - z) @ (w - z) <= 1e-8


@given(vec)
def test_box_projection_idempotent(data):
    y, lo, width, _ = (np.array(v) if isinstance(v, list) else v for v in data)
    z = project_box(y, lo, lo + width)
    assert np.array_equal(project_box(z, lo, lo + width), z)


def test_product_set_vectorized_matches_blockwise(rng):
    sets = [Box(np.zeros(2), np.ones(2)), BoxHyperplane(np.zeros(3), np.full(3, 0.5), 1.0),
            FullSpace(1), BoxHyperplane(np.zeros(3), np.ones(3), 2.0)]
    P = ProductSet(sets, [0, 2, 5, 6, 9])
    for _ in range(50):
        y = rng.normal(size=9) * 2
        blockwise = np.concatenate([sets[0].project(y[:2]), sets[1].project(y[2:5]), y[5:6],
                                    sets[3].project(y[6:9])])
        assert np.allclose(P.project(y), blockwise, atol=1e-12)
        assert P.contains(P.project(y))
        assert np.allclose(P.project_masked(y, np.arange(4)), blockwise, atol=1e-12)


def test_set_serialization_roundtrip():
    for s in [Box(np.zeros(2), np.ones(2)), BoxHyperplane(np.zeros(2), np.ones(2), 1.0), FullSpace(3)]:
        t = local_set_from_dict(s.to_dict())
        y = np.array([2.0, -1.0, 0.5][:s.dim])
        assert np.allclose(t.project(y), s.project(y))
