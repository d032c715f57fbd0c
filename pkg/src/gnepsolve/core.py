"""Game model for N-player continuous games with coupling constraints.

A game couples ``N`` players. Player ``nu`` controls a block ``x^nu`` of the
joint strategy vector ``x``, minimizes an objective ``theta_nu(x)`` over a
projectable private set, and is additionally restricted by inequality
constraints ``g^nu(x) <= 0`` that may depend on every player's block.

All model objects are immutable after construction and safe to share across
threads. Oracles are required to be pure functions of their input vector;
this is a documented contract enforced by determinism tests rather than by
the runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class OracleFailure(RuntimeError):
    """An oracle returned a non-finite value.

    Carries the index of the offending player so callers can report which
    subproblem misbehaved.
    """

    def __init__(self, message: str, player: int | None = None):
        super().__init__(message)
        self.player = player


class AdmissibilityError(ValueError):
    """An instance violates a structural requirement (e.g. indefinite own block)."""


# ---------------------------------------------------------------------------
# Block layout of the joint strategy vector
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlockLayout:
    """Partition of the joint vector into per-player blocks.

    ``dims[i]`` is the dimension of player ``i``'s block; ``offsets[i]`` its
    starting index. ``n`` is the total dimension.
    """

    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) == 0:
            raise ValueError("layout needs at least one block")
        if any(d <= 0 for d in self.dims):
            raise ValueError(f"block dims must be positive, got {self.dims}")

    @property
    def n(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for d in self.dims:
            out.append(acc)
            acc += d
        return tuple(out)

    @property
    def num_blocks(self) -> int:
        return len(self.dims)

    def block_slice(self, i: int) -> slice:
        if not 0 <= i < len(self.dims):
            raise IndexError(f"player index {i} out of range for {len(self.dims)} blocks")
        start = self.offsets[i]
        return slice(start, start + self.dims[i])

    def get_block(self, x: Array, i: int) -> Array:
        """Extract player ``i``'s block of ``x``."""
        if x.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got shape {x.shape}")
        return x[self.block_slice(i)]

    def set_block(self, x: Array, i: int, values: Array) -> Array:
        """Return a copy of ``x`` with player ``i``'s block overwritten."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.dims[i],):
            raise ValueError(
                f"block {i} has dimension {self.dims[i]}, got shape {values.shape}"
            )
        out = np.array(x, dtype=float, copy=True)
        out[self.block_slice(i)] = values
        return out

    def split(self, x: Array) -> list[Array]:
        return [self.get_block(x, i) for i in range(len(self.dims))]


# ---------------------------------------------------------------------------
# Projectable private sets
# ---------------------------------------------------------------------------

_SET_KINDS = ("box", "nonneg", "simplex", "ball")

# Fixed point tolerance for the alternating orthant/ball projection.
_BALL_FIXED_POINT_TOL = 1e-12


@dataclass(frozen=True)
class SimpleSet:
    """A closed convex set with a cheap Euclidean projection.

    Supported kinds:

    - ``box``: ``{v : lower <= v <= upper}`` with infinite bounds allowed,
    - ``nonneg``: the nonnegative orthant,
    - ``simplex``: the unit simplex ``{v >= 0, sum(v) = 1}``,
    - ``ball``: the nonnegative part of the Euclidean ball of given radius.
    """

    kind: str
    dim: int
    lower: Array | None = None
    upper: Array | None = None
    radius: float = 0.0

    def __post_init__(self):
        if self.kind not in _SET_KINDS:
            raise ValueError(f"unknown set kind {self.kind!r}")
        if self.dim <= 0:
            raise ValueError("set dimension must be positive")
        if self.kind == "box":
            lo, up = self.lower, self.upper
            if lo is None or up is None or lo.shape != (self.dim,) or up.shape != (self.dim,):
                raise ValueError("box needs lower/upper bounds of the set dimension")
            if np.any(lo > up):
                raise ValueError("box requires lower <= upper componentwise")
        if self.kind == "ball" and not self.radius > 0:
            raise ValueError("ball radius must be positive")

    # -- constructors -------------------------------------------------------

    @staticmethod
    def box(lower: Sequence[float] | Array, upper: Sequence[float] | Array) -> "SimpleSet":
        lo = np.asarray(lower, dtype=float)
        up = np.asarray(upper, dtype=float)
        return SimpleSet("box", lo.shape[0], lower=lo, upper=up)

    @staticmethod
    def free(dim: int) -> "SimpleSet":
        return SimpleSet.box(np.full(dim, -np.inf), np.full(dim, np.inf))

    @staticmethod
    def nonneg(dim: int) -> "SimpleSet":
        return SimpleSet("nonneg", dim)

    @staticmethod
    def simplex(dim: int) -> "SimpleSet":
        return SimpleSet("simplex", dim)

    @staticmethod
    def ball(dim: int, radius: float) -> "SimpleSet":
        return SimpleSet("ball", dim, radius=float(radius))

    # -- projection ---------------------------------------------------------

    def project(self, v: Array) -> Array:
        """Euclidean projection of ``v`` onto the set."""
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"cannot project shape {v.shape} onto set of dimension {self.dim}")
        if self.kind == "box":
            return np.clip(v, self.lower, self.upper)
        if self.kind == "nonneg":
            return np.maximum(v, 0.0)
        if self.kind == "simplex":
            return project_simplex(v)
        # Nonnegative ball: alternate the orthant clamp and the radial rescale
        # until the point stops moving. The pair converges in one or two
        # sweeps; the loop is kept as the correctness contract.
        p = v
        for _ in range(64):
            q = np.maximum(p, 0.0)
            norm = float(np.linalg.norm(q))
            if norm > self.radius:
                q = q * (self.radius / norm)
            if np.linalg.norm(q - p) <= _BALL_FIXED_POINT_TOL:
                return q
            p = q
        return p

    def contains(self, v: Array, tol: float = 1e-9) -> bool:
        return bool(np.linalg.norm(self.project(v) - v) <= tol)

    def sample_interior(self, rng: np.random.Generator, scale: float = 1.0) -> Array:
        """Draw a point safely inside the set (used by validation sampling)."""
        raw = rng.standard_normal(self.dim) * scale
        if self.kind == "box":
            lo = np.where(np.isfinite(self.lower), self.lower, -2.0 * scale)
            up = np.where(np.isfinite(self.upper), self.upper, 2.0 * scale)
            width = up - lo
            pad = np.minimum(0.05 * width, 0.1)
            u = rng.uniform(size=self.dim)
            return lo + pad + u * np.maximum(width - 2 * pad, 0.0)
        if self.kind == "nonneg":
            return np.abs(raw) + 0.1
        if self.kind == "simplex":
            p = self.project(np.abs(raw))
            return 0.9 * p + 0.1 / self.dim
        p = self.project(np.abs(raw))
        return 0.9 * p


def project_simplex(v: Array) -> Array:
    """Project onto the unit simplex via the sorting algorithm.

    Solves ``min ||w - v||^2`` subject to ``w >= 0`` and ``sum(w) = 1``.
    """
    n = v.shape[0]
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u)
    rho_candidates = np.nonzero(u * np.arange(1, n + 1) > (cssv - 1.0))[0]
    rho = rho_candidates[-1]
    theta = (cssv[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project(simple_set: SimpleSet, v: Array) -> Array:
    """Functional form of :meth:`SimpleSet.project`."""
    return simple_set.project(v)


# ---------------------------------------------------------------------------
# Players and games
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlayerProblem:
    """One player's optimization data.

    Oracles take the full joint vector ``x`` of length ``n``:

    - ``objective(x) -> float``
    - ``gradient(x) -> (n,)`` full gradient of the objective,
    - ``constraints(x) -> (m,)`` values of ``g(x)`` with the convention
      ``g <= 0`` feasible,
    - ``constraint_jacobian(x) -> (m, n)`` rows are constraint gradients.

    Full gradients (not just the own block) are required because the
    surrogate-model machinery needs cross-block derivative information.
    ``objective_hessian``/``constraint_hessians`` may carry constant Hessians
    when the data is quadratic; estimators then use exact spectral norms
    instead of sampling.
    """

    objective: Callable[[Array], float]
    gradient: Callable[[Array], Array]
    constraints: Callable[[Array], Array]
    constraint_jacobian: Callable[[Array], Array]
    private_set: SimpleSet
    m: int
    objective_hessian: Array | None = None
    constraint_hessians: Array | None = None

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("constraint count must be nonnegative")

    @property
    def is_quadratic(self) -> bool:
        return self.objective_hessian is not None and (
            self.m == 0 or self.constraint_hessians is not None
        )


@dataclass(frozen=True)
class GameInstance:
    """An N-player game: players, block layout, and a display name."""

    players: tuple[PlayerProblem, ...]
    layout: BlockLayout
    name: str = "game"

    def __post_init__(self):
        if len(self.players) == 0:
            raise ValueError("game needs at least one player")
        if len(self.players) != self.layout.num_blocks:
            raise ValueError("layout block count must match number of players")
        for i, p in enumerate(self.players):
            if p.private_set.dim != self.layout.dims[i]:
                raise ValueError(f"player {i} private set dimension mismatch")

    @property
    def num_players(self) -> int:
        return len(self.players)

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def total_constraints(self) -> int:
        return sum(p.m for p in self.players)

    def project_private(self, x: Array) -> Array:
        """Project each player's block onto its private set."""
        out = np.array(x, dtype=float, copy=True)
        for i, p in enumerate(self.players):
            sl = self.layout.block_slice(i)
            out[sl] = p.private_set.project(out[sl])
        return out

    def feasibility_violation(self, x: Array) -> float:
        """Largest positive constraint value over all players; 0 if feasible."""
        worst = 0.0
        for p in self.players:
            if p.m:
                worst = max(worst, float(np.max(np.maximum(p.constraints(x), 0.0), initial=0.0)))
        return worst


@dataclass
class PlayerDualState:
    """Per-player perturbation variables and multipliers.

    ``lam`` is the multiplier of the relaxed inequality constraints and must
    stay nonnegative; ``mu`` is the multiplier of the perturbation equality.
    When the solver starts from ``lam == mu``, every completed outer iteration
    restores ``lam == mu`` and ``z == 0`` exactly.
    """

    z: Array
    lam: Array
    mu: Array

    @staticmethod
    def zeros(m: int) -> "PlayerDualState":
        return PlayerDualState(np.zeros(m), np.zeros(m), np.zeros(m))

    def copy(self) -> "PlayerDualState":
        return PlayerDualState(self.z.copy(), self.lam.copy(), self.mu.copy())


@dataclass
class IterateState:
    """Joint primal point plus every player's dual state."""

    x: Array
    duals: list[PlayerDualState]
    outer_k: int = 0

    def copy(self) -> "IterateState":
        return IterateState(self.x.copy(), [d.copy() for d in self.duals], self.outer_k)


def initial_state(game: GameInstance, x0: Array) -> IterateState:
    """Build the starting state: ``x0`` projected onto the private sets, zero duals."""
    x = game.project_private(np.asarray(x0, dtype=float))
    duals = [PlayerDualState.zeros(p.m) for p in game.players]
    return IterateState(x, duals, 0)


# ---------------------------------------------------------------------------
# Finite differences and instance validation
# ---------------------------------------------------------------------------

FD_STEP = 1e-6


def central_gradient(f: Callable[[Array], float], x: Array, h: float = FD_STEP) -> Array:
    """Central finite-difference gradient of a scalar function."""
    g = np.zeros_like(x, dtype=float)
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def central_jacobian(f: Callable[[Array], Array], x: Array, m: int, h: float = FD_STEP) -> Array:
    """Central finite-difference Jacobian of a vector function, shape (m, n)."""
    J = np.zeros((m, x.shape[0]))
    for i in range(x.shape[0]):
        e = np.zeros_like(x)
        e[i] = h
        J[:, i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return J


@dataclass
class ValidationReport:
    """Outcome of sampling-based instance checks."""

    gradient_error: float
    jacobian_error: float
    convexity_violation: float
    all_finite: bool
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.all_finite and self.gradient_error <= 1e-6 and self.convexity_violation <= 1e-9


def _rel_err(approx: Array, exact: Array) -> float:
    denom = max(1.0, float(np.max(np.abs(exact), initial=0.0)))
    return float(np.max(np.abs(approx - exact), initial=0.0)) / denom


def validate_instance(game: GameInstance, samples: int = 100, seed: int = 0) -> ValidationReport:
    """Check oracle consistency on sampled points.

    Compares analytic gradients/Jacobians against central finite differences,
    tests midpoint convexity of objectives and constraints along random
    own-block segments, and flags non-finite oracle output. Oracle failures
    are reported, not raised.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    grad_err = 0.0
    jac_err = 0.0
    conv_viol = 0.0
    finite = True
    notes: list[str] = []

    def sample_point() -> Array:
        blocks = [p.private_set.sample_interior(rng) for p in game.players]
        return np.concatenate(blocks)

    for _ in range(samples):
        x = sample_point()
        for i, p in enumerate(game.players):
            try:
                ana_g = np.asarray(p.gradient(x), dtype=float)
                val = float(p.objective(x))
            except FloatingPointError:
                finite = False
                notes.append(f"player {i}: objective oracle raised at sampled point")
                continue
            if not (np.all(np.isfinite(ana_g)) and np.isfinite(val)):
                finite = False
                notes.append(f"player {i}: non-finite objective oracle output")
                continue
            with np.errstate(all="ignore"):
                fd_g = central_gradient(p.objective, x)
            if np.all(np.isfinite(fd_g)):
                grad_err = max(grad_err, _rel_err(fd_g, ana_g))
            else:
                finite = False
                notes.append(f"player {i}: non-finite objective near sampled point")
            if p.m:
                gv = np.asarray(p.constraints(x), dtype=float)
                J = np.asarray(p.constraint_jacobian(x), dtype=float)
                if not (np.all(np.isfinite(gv)) and np.all(np.isfinite(J))):
                    finite = False
                    notes.append(f"player {i}: non-finite constraint oracle output")
                    continue
                with np.errstate(all="ignore"):
                    fd_J = central_jacobian(p.constraints, x, p.m)
                if np.all(np.isfinite(fd_J)):
                    jac_err = max(jac_err, _rel_err(fd_J, J))
                else:
                    finite = False
                    notes.append(f"player {i}: non-finite constraint near sampled point")

        # Midpoint convexity along a random own-block segment for each player.
        for i, p in enumerate(game.players):
            a_block = p.private_set.sample_interior(rng)
            b_block = p.private_set.sample_interior(rng)
            xa = game.layout.set_block(x, i, a_block)
            xb = game.layout.set_block(x, i, b_block)
            xm = game.layout.set_block(x, i, 0.5 * (a_block + b_block))
            try:
                fa, fb, fm = p.objective(xa), p.objective(xb), p.objective(xm)
            except FloatingPointError:
                finite = False
                continue
            if np.isfinite(fa) and np.isfinite(fb) and np.isfinite(fm):
                conv_viol = max(conv_viol, fm - 0.5 * (fa + fb))
            else:
                finite = False
                notes.append(f"player {i}: non-finite objective along segment")
            if p.m:
                ga, gb, gm = p.constraints(xa), p.constraints(xb), p.constraints(xm)
                if np.all(np.isfinite(ga)) and np.all(np.isfinite(gb)) and np.all(np.isfinite(gm)):
                    conv_viol = max(conv_viol, float(np.max(gm - 0.5 * (ga + gb))))
                else:
                    finite = False
                    notes.append(f"player {i}: non-finite constraint along segment")

    return ValidationReport(grad_err, jac_err, conv_viol, finite, notes)
