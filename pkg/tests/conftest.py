"""Shared instances and solver runs (session-scoped: several are expensive)."""

import numpy as np
import pytest

import gnepsolve as G
from gnepsolve import library


def fast_config(**kw):
    base = dict(sigma=G.SigmaSchedule.constant())
    base.update(kw)
    return G.SolverConfig(**base)


@pytest.fixture(scope="session")
def ex3_game():
    return library.make_example3()


@pytest.fixture(scope="session")
def ex3_runs(ex3_game):
    """Default-protocol runs from the three canonical starts."""
    out = {}
    for x0 in [(0.0, 0.0), (2.0, 1.0), (-1.0, -1.0)]:
        out[x0] = G.solve(ex3_game, np.array(x0), G.SolverConfig())
    return out


@pytest.fixture(scope="session")
def ex3_tight(ex3_game):
    return G.solve(ex3_game, np.zeros(2), fast_config(outer_tol=1e-8, max_outer=40000))


@pytest.fixture(scope="session")
def a18_game():
    return library.make_a18_electricity()


@pytest.fixture(scope="session")
def a18_run(a18_game):
    return G.solve(a18_game, np.zeros(12), fast_config(max_outer=2500))


def ad_start(game, I=5, J=2, K=3):
    x0 = np.zeros(game.n)
    x0[: I * K] = 1.0
    for j in range(J):
        x0[(I + j) * K:(I + j + 1) * K] = np.sqrt(10.0 * (j + 1)) / np.sqrt(K)
    x0[-K:] = 1.0 / K
    return x0


@pytest.fixture(scope="session")
def ad_game():
    return library.gen_arrow_debreu(5, 2, 3, seed=0)


@pytest.fixture(scope="session")
def ad_run(ad_game):
    # Two-time-scale proximal weights: the price setter has no own-block
    # curvature, so it is slowed relative to consumers and firms; the rest of
    # the economy then settles quasi-statically while the price adjusts.
    cfg = fast_config(max_outer=60000,
                      gamma=G.GammaPolicy.fixed(np.array([30.0] * 5 + [260.0] * 2 + [300.0])))
    return G.solve(ad_game, ad_start(ad_game), cfg)


QUAD_SHAPES = [(1, 2, 2), (2, 2, 1), (2, 3, 2), (3, 2, 1), (2, 2, 2)]


@pytest.fixture(scope="session")
def quad_suite():
    """Twenty seeded quadratic games solved tightly from their planted points."""
    games = []
    for si, (N, npp, mpp) in enumerate(QUAD_SHAPES):
        for seed in range(4):
            game, plant = library.gen_random_quadratic_with_plant(
                N, npp, mpp, seed=100 + seed * 7 + si)
            res = G.solve(game, plant, fast_config(outer_tol=1e-6, max_outer=30000))
            games.append((game, plant, res))
    return games
