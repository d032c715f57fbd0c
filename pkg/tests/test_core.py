"""Projections, block arithmetic, and instance validation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gnepsolve.core import (
    BlockLayout,
    GameInstance,
    PlayerProblem,
    SimpleSet,
    project,
    validate_instance,
)
from gnepsolve import library


# ---------------------------------------------------------------------------
# projections
# ---------------------------------------------------------------------------


def test_box_projection_clamps():
    box = SimpleSet.box([0.0, 0.0], [1.0, np.inf])
    np.testing.assert_array_equal(project(box, np.array([3.0, -2.0])), [1.0, 0.0])


def test_simplex_projection_identity_on_simplex():
    s = SimpleSet.simplex(3)
    v = np.array([1 / 3, 1 / 3, 1 / 3])
    np.testing.assert_allclose(project(s, v), v, atol=1e-15)


def brute_force_simplex_projection(v, steps=400):
    """Dense grid search over the 2-simplex for the nearest point."""
    best, best_d = None, np.inf
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            p = np.array([i / steps, j / steps, 1.0 - (i + j) / steps])
            d = float(np.sum((p - v) ** 2))
            if d < best_d:
                best, best_d = p, d
    return best


@pytest.mark.parametrize("v", [np.array([1.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0])])
def test_simplex_projection_vertex_cases(v):
    # both project to the vertex (1,0,0); cross-checked by grid search
    got = project(SimpleSet.simplex(3), v)
    ref = brute_force_simplex_projection(v)
    np.testing.assert_allclose(got, [1.0, 0.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(got, ref, atol=5e-3)


def test_simplex_projection_generic_matches_grid():
    v = np.array([0.9, 0.4, -0.2])
    got = project(SimpleSet.simplex(3), v)
    ref = brute_force_simplex_projection(v)
    assert abs(np.sum(got) - 1.0) <= 1e-12
    np.testing.assert_allclose(got, ref, atol=5e-3)


def test_ball_projection_fixed_point():
    b = SimpleSet.ball(3, radius=2.0)
    v = np.array([3.0, -1.0, 4.0])
    p = b.project(v)
    assert np.all(p >= 0)
    assert np.linalg.norm(p) <= 2.0 + 1e-12
    np.testing.assert_allclose(b.project(p), p, atol=1e-12)


def test_projection_dimension_mismatch():
    with pytest.raises(ValueError):
        SimpleSet.nonneg(3).project(np.zeros(2))


_sets = [
    SimpleSet.box([-1.0, 0.0, -np.inf], [2.0, 0.5, np.inf]),
    SimpleSet.nonneg(3),
    SimpleSet.simplex(3),
    SimpleSet.ball(3, 1.5),
]


@settings(deadline=None, max_examples=60)
@given(
    st.lists(st.floats(-50, 50), min_size=3, max_size=3),
    st.lists(st.floats(-50, 50), min_size=3, max_size=3),
    st.integers(0, len(_sets) - 1),
)
def test_projection_idempotent_and_nonexpansive(u, v, idx):
    s = _sets[idx]
    u, v = np.array(u), np.array(v)
    pu, pv = s.project(u), s.project(v)
    np.testing.assert_allclose(s.project(pu), pu, atol=1e-12)
    assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12


# ---------------------------------------------------------------------------
# block layout
# ---------------------------------------------------------------------------


def test_block_get_and_offsets():
    layout = BlockLayout((2, 1))
    x = np.array([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(layout.get_block(x, 1), [3.0])
    assert BlockLayout((3, 3)).offsets == (0, 3)
    assert BlockLayout((3, 3)).n == 6


@settings(deadline=None, max_examples=40)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=4), st.integers(0, 10**6))
def test_block_set_then_get_round_trip(dims, seed):
    layout = BlockLayout(tuple(dims))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(layout.n)
    for i in range(len(dims)):
        vals = rng.standard_normal(dims[i])
        y = layout.set_block(x, i, vals)
        np.testing.assert_array_equal(layout.get_block(y, i), vals)
        # other blocks untouched
        for j in range(len(dims)):
            if j != i:
                np.testing.assert_array_equal(layout.get_block(y, j), layout.get_block(x, j))


def test_block_index_out_of_range():
    layout = BlockLayout((2, 1))
    with pytest.raises(IndexError):
        layout.get_block(np.zeros(3), 2)


def test_layout_rejects_empty_blocks():
    with pytest.raises(ValueError):
        BlockLayout((2, 0))


# ---------------------------------------------------------------------------
# instance validation
# ---------------------------------------------------------------------------


def test_validate_example3_gradients():
    rep = validate_instance(library.make_example3(), samples=100, seed=0)
    assert rep.all_finite
    assert rep.gradient_error <= 1e-6
    assert rep.jacobian_error <= 1e-6


def test_validate_a18_convexity():
    rep = validate_instance(library.make_a18_electricity(), samples=100, seed=1)
    assert rep.all_finite
    assert rep.convexity_violation <= 1e-9   # objectives convex-quadratic per block


def test_validate_flags_nan_oracle():
    layout = BlockLayout((1,))

    def bad_objective(x):
        return float("nan") if abs(x[0]) < 0.5 else float(x[0] ** 2)

    player = PlayerProblem(
        objective=bad_objective,
        gradient=lambda x: 2.0 * x,
        constraints=lambda x: np.zeros(0),
        constraint_jacobian=lambda x: np.zeros((0, 1)),
        private_set=SimpleSet.box([-1.0], [1.0]),
        m=0,
    )
    game = GameInstance((player,), layout, "nan-at-origin")
    rep = validate_instance(game, samples=40, seed=3)
    assert not rep.all_finite
    assert any("non-finite" in n for n in rep.notes)


def test_oracle_determinism_bitwise():
    game = library.make_a18_electricity()
    x = np.random.default_rng(5).standard_normal(12)
    for p in game.players:
        assert p.objective(x) == p.objective(x)
        np.testing.assert_array_equal(p.gradient(x), p.gradient(x))
        np.testing.assert_array_equal(p.constraints(x), p.constraints(x))
