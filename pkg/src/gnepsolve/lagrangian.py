"""Perturbed Lagrangian with proximal dual regularization.

For player ``nu`` with duals ``(z, lam, mu)`` and penalty weights
``(alpha, beta)`` the function evaluated here is::

    L_nu(x, z, lam, mu) = theta_nu(x) + lam.(g_nu(x) - z) + mu.z
                          + alpha/2 ||z||^2 - beta/2 ||lam - mu||^2

The quadratic ``z``-penalty enforces the perturbation constraint ``z = 0``
softly; the negative proximal term makes the function strongly concave in
each multiplier block, which keeps multiplier steps bounded even when the
multiplier set of a player is unbounded.

Minimizing over ``z`` in closed form gives the reduced version::

    theta_nu(x) + lam.g_nu(x) - (1 + alpha*beta) / (2*alpha) ||lam - mu||^2

which agrees with the full form at ``z = (lam - mu) / alpha``.

All evaluations here are pure functions of immutable inputs; per-player
calls may run concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Array, GameInstance, OracleFailure, PlayerDualState

__all__ = [
    "PenaltyParams",
    "lagrangian_value",
    "lagrangian_value_reduced",
    "lagrangian_grad_x",
    "QuadraticAnchor",
    "PointEval",
    "evaluate_point",
    "build_anchor",
]


@dataclass(frozen=True)
class PenaltyParams:
    """Per-player penalty weight ``alpha`` and proximal weight ``beta``, all > 0."""

    alpha: Array
    beta: Array

    def __post_init__(self):
        if np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise ValueError("alpha and beta must be strictly positive")

    @staticmethod
    def uniform(num_players: int, alpha: float = 10.0, beta: float = 1.0) -> "PenaltyParams":
        return PenaltyParams(np.full(num_players, float(alpha)), np.full(num_players, float(beta)))


def _check_finite(value, player: int, what: str):
    if not np.all(np.isfinite(value)):
        raise OracleFailure(f"player {player}: non-finite {what}", player=player)


def lagrangian_value(
    game: GameInstance, player: int, x: Array, dual: PlayerDualState, penalty: PenaltyParams
) -> float:
    """Evaluate player ``player``'s regularized Lagrangian at ``(x, dual)``."""
    if np.any(dual.lam < 0):
        raise ValueError("lam must be nonnegative")
    p = game.players[player]
    theta = float(p.objective(x))
    _check_finite(theta, player, "objective value")
    val = theta
    if p.m:
        g = np.asarray(p.constraints(x), dtype=float)
        _check_finite(g, player, "constraint value")
        diff = dual.lam - dual.mu
        val += float(dual.lam @ (g - dual.z)) + float(dual.mu @ dual.z)
        val += 0.5 * penalty.alpha[player] * float(dual.z @ dual.z)
        val -= 0.5 * penalty.beta[player] * float(diff @ diff)
    return val


def lagrangian_value_reduced(
    game: GameInstance, player: int, x: Array, lam: Array, mu: Array, penalty: PenaltyParams
) -> float:
    """Evaluate the reduced form obtained by exact minimization over ``z``."""
    if np.any(lam < 0):
        raise ValueError("lam must be nonnegative")
    p = game.players[player]
    theta = float(p.objective(x))
    _check_finite(theta, player, "objective value")
    val = theta
    if p.m:
        g = np.asarray(p.constraints(x), dtype=float)
        _check_finite(g, player, "constraint value")
        a, b = penalty.alpha[player], penalty.beta[player]
        diff = lam - mu
        val += float(lam @ g) - (1.0 + a * b) / (2.0 * a) * float(diff @ diff)
    return val


def lagrangian_grad_x(game: GameInstance, player: int, x: Array, lam: Array) -> Array:
    """Full x-gradient: ``grad theta + J(x)^T lam``.

    The perturbation and proximal terms do not depend on ``x``, so only the
    multiplier ``lam`` enters.
    """
    p = game.players[player]
    grad = np.asarray(p.gradient(x), dtype=float)
    _check_finite(grad, player, "objective gradient")
    if p.m:
        J = np.asarray(p.constraint_jacobian(x), dtype=float)
        _check_finite(J, player, "constraint Jacobian")
        grad = grad + J.T @ lam
    return grad


# ---------------------------------------------------------------------------
# One oracle sweep at a point, shared by the solver's bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class PointEval:
    """Raw oracle output of every player at one joint point."""

    x: Array
    theta: Array                 # (N,) objective values
    theta_grads: list[Array]     # per player, (n,)
    g_values: list[Array]        # per player, (m_nu,)
    g_jacobians: list[Array]     # per player, (m_nu, n)


def evaluate_point(game: GameInstance, x: Array) -> PointEval:
    """Run every player's oracles once at ``x`` (values, gradients, Jacobians)."""
    theta = np.zeros(game.num_players)
    grads, gvals, jacs = [], [], []
    for i, p in enumerate(game.players):
        theta[i] = float(p.objective(x))
        _check_finite(theta[i], i, "objective value")
        gr = np.asarray(p.gradient(x), dtype=float)
        _check_finite(gr, i, "objective gradient")
        grads.append(gr)
        if p.m:
            gv = np.asarray(p.constraints(x), dtype=float)
            J = np.asarray(p.constraint_jacobian(x), dtype=float)
            _check_finite(gv, i, "constraint value")
            _check_finite(J, i, "constraint Jacobian")
        else:
            gv = np.zeros(0)
            J = np.zeros((0, game.n))
        gvals.append(gv)
        jacs.append(J)
    return PointEval(np.array(x, copy=True), theta, grads, gvals, jacs)


# ---------------------------------------------------------------------------
# Quadratic surrogate anchored at the current outer iterate
# ---------------------------------------------------------------------------


@dataclass
class QuadraticAnchor:
    """Cached data of the per-player quadratic model at an anchor point ``y``.

    The model for player ``nu`` is::

        Lhat_nu(x) = L_nu(y) + grad_x L_nu(y) . (x - y) + gamma_nu/2 ||x - y||^2

    Values and full gradients of every ``L_nu`` at ``y`` are computed once
    (per outer iteration) and reused by the inner loop, which holds the
    anchor fixed. The anchor is read-only after construction.

    The model gradient is affine with slope ``gamma_nu * I``; its Lipschitz
    constant and strong-convexity modulus both equal ``gamma_nu``.
    """

    y: Array
    values: Array            # (N,) L_nu(y, duals)
    grads: list[Array]       # per player, full gradient of L_nu at y
    gamma: Array             # (N,)
    own_grad: Array          # (n,) player-own blocks of grads, stacked
    gamma_by_coord: Array    # (n,) gamma_nu repeated over the player's block
    point: PointEval         # raw oracle sweep at y
    lams: list[Array]        # multipliers frozen into the anchor
    dual_terms: Array        # (N,) x-independent part of each L_nu at the duals
    grad_norms: Array        # (N,) Euclidean norms of grads

    def model_value(self, player: int, x: Array) -> float:
        d = x - self.y
        return float(
            self.values[player]
            + self.grads[player] @ d
            + 0.5 * self.gamma[player] * (d @ d)
        )

    def model_grad_block(self, player: int, u: Array, layout) -> Array:
        sl = layout.block_slice(player)
        return self.grads[player][sl] + self.gamma[player] * (u[sl] - self.y[sl])

    def own_model_grad(self, u: Array) -> Array:
        """Stacked own-block model gradients of all players at ``u``."""
        return self.own_grad + self.gamma_by_coord * (u - self.y)

    def verify(self, game: GameInstance, duals, penalty: PenaltyParams, tol: float = 1e-9):
        """Recompute cached values and compare; raises on a stale cache."""
        for i in range(game.num_players):
            fresh = lagrangian_value(game, i, self.y, duals[i], penalty)
            if abs(fresh - self.values[i]) > tol * max(1.0, abs(fresh)):
                raise RuntimeError(f"anchor cache stale for player {i}")


def build_anchor(
    game: GameInstance,
    duals: list[PlayerDualState],
    penalty: PenaltyParams,
    gamma: Array,
    point: PointEval,
) -> QuadraticAnchor:
    """Assemble the surrogate anchor from a completed oracle sweep."""
    n = game.n
    N = game.num_players
    values = np.zeros(N)
    dual_terms = np.zeros(N)
    grads: list[Array] = []
    lams: list[Array] = []
    own_grad = np.zeros(n)
    gamma_by_coord = np.zeros(n)
    for i, p in enumerate(game.players):
        d = duals[i]
        val = point.theta[i]
        grad = point.theta_grads[i]
        if p.m:
            diff = d.lam - d.mu
            const = (-float(d.lam @ d.z) + float(d.mu @ d.z)
                     + 0.5 * penalty.alpha[i] * float(d.z @ d.z)
                     - 0.5 * penalty.beta[i] * float(diff @ diff))
            val += const + float(d.lam @ point.g_values[i])
            dual_terms[i] = const
            grad = grad + point.g_jacobians[i].T @ d.lam
        values[i] = val
        grads.append(grad)
        lams.append(d.lam.copy())
        sl = game.layout.block_slice(i)
        own_grad[sl] = grad[sl]
        gamma_by_coord[sl] = gamma[i]
    grad_norms = np.array([float(np.linalg.norm(g)) for g in grads])
    return QuadraticAnchor(point.x, values, grads, np.asarray(gamma, dtype=float),
                           own_grad, gamma_by_coord, point, lams, dual_terms, grad_norms)
