"""Backward induction for BSDEs with frozen mean-field inputs, g-evaluations
over stopping rules, and the exhaustive optimal-stopping oracle.

One backward step on level ``i`` reads the children on level ``i + 1``::

    z_i = (y_up - y_down) / (2 sqrt(dt))
    y_i = E_i[y_{i+1}] + f(t_i, y_hat, law_i, z_i) * dt

with ``y_hat`` either a frozen process or ``y_i`` itself (implicit in ``y``,
explicit in ``z``). The implicit scalar equations are solved node by node with
a damped fixed-point iteration.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dsl import CompiledExpr, compile_expr
from .errors import ConfigError, ContractError, ConvergenceError, NumericError, ParameterError, StepSizeError
from .lattice import Lattice, conditional_expectation, z_projection

log = logging.getLogger(__name__)

INNER_TOL = 1e-13
INNER_MAX_ITER = 500
MAX_ORACLE_DEPTH = 4
MAX_ENUM_DEPTH = 5

REGIMES = ("lipschitz", "quadratic")
CONVEXITIES = ("concave", "convex", "none")


def _as_expr(expr) -> CompiledExpr:
    return expr if isinstance(expr, CompiledExpr) else compile_expr(expr)


@dataclass(frozen=True)
class DriverSpec:
    """Driver ``f(t, y, law, z)`` plus its declared constants.

    ``lam`` is the Lipschitz constant in ``(y, law)`` (and in ``z`` for the
    Lipschitz regime); ``alpha``, ``beta``, ``gamma`` are the quadratic growth
    constants in ``|f| <= alpha + beta(|y| + W1(law, delta_0)) + gamma/2 |z|^2``.
    ``kappa`` (local Lipschitz constant in ``z``) is carried for reporting only.
    """

    expr: CompiledExpr
    lam: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    convexity: str = "none"
    regime: str = "lipschitz"
    kappa: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "expr", _as_expr(self.expr))
        for name in ("lam", "alpha", "beta", "gamma"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"driver.{name} must be a finite non-negative number, got {v!r}")
            object.__setattr__(self, name, v)
        if self.regime not in REGIMES:
            raise ConfigError(f"driver regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "quadratic" and self.gamma <= 0:
            raise ConfigError("a quadratic driver needs gamma > 0")
        if self.convexity not in CONVEXITIES:
            raise ConfigError(f"driver.convexity must be one of {CONVEXITIES}, got {self.convexity!r}")

    def __call__(self, t, y, z, b, m1=0.0, am=0.0):
        return self.expr(t=t, y=y, z=z, b=b, m1=m1, am=am)

    @property
    def uses_law(self) -> bool:
        return self.expr.uses("m1", "am")

    @property
    def uses_y(self) -> bool:
        return self.expr.uses("y")

    @property
    def y_lipschitz(self) -> float:
        """Lipschitz constant in ``y`` that governs the implicit step."""
        return self.lam if self.regime == "lipschitz" else max(self.lam, self.beta)


@dataclass(frozen=True)
class TerminalCondition:
    """Terminal payoff as an expression of the terminal Brownian state ``b``."""

    expr: CompiledExpr

    def __post_init__(self):
        e = _as_expr(self.expr)
        extra = e.free - {"b"}
        if extra:
            raise ConfigError(f"terminal expression may only use 'b', found {sorted(extra)}")
        object.__setattr__(self, "expr", e)

    def realize(self, lat: Lattice) -> np.ndarray:
        b = lat.values[lat.n]
        vals = np.broadcast_to(np.asarray(self.expr(b=b), dtype=float), b.shape).copy()
        if not np.all(np.isfinite(vals)):
            raise ConfigError("terminal condition is not finite on every terminal node")
        return vals


@dataclass
class BsdePair:
    y: list
    z: list


@dataclass(frozen=True)
class StoppingRule:
    """Stop marks on the non-recombining binary tree of a given depth.

    ``stops[i]`` is a boolean array over the ``2**i`` tree nodes of level ``i``;
    node ``k`` has children ``2k`` (down) and ``2k + 1`` (up). Every
    root-to-leaf path carries exactly one mark.
    """

    stops: tuple

    def __post_init__(self):
        stops = tuple(np.asarray(s, dtype=bool) for s in self.stops)
        for i, s in enumerate(stops):
            if s.shape != (1 << i,):
                raise ContractError(f"rule level {i} must have {1 << i} marks, got shape {s.shape}")
        object.__setattr__(self, "stops", stops)
        if not _exactly_once(stops):
            raise ContractError("stopping rule must stop exactly once on every root-to-leaf path")

    @property
    def depth(self) -> int:
        return len(self.stops) - 1

    @classmethod
    def at_level(cls, depth: int, level: int) -> "StoppingRule":
        return cls(tuple(np.full(1 << i, i == level) for i in range(depth + 1)))


def _exactly_once(stops) -> bool:
    count = stops[0].astype(np.int64)
    for s in stops[1:]:
        count = np.repeat(count, 2, axis=-1) + s
        if np.any(count > 1):
            return False
    return bool(np.all(count == 1))


# ------------------------------------------------------------- the step

def _law_moments(laws, level):
    law = laws[level] if laws is not None else None
    if law is None:
        return 0.0, 0.0
    return law.mean, law.abs_mean


def check_step_size(driver: DriverSpec, dt: float):
    c = driver.y_lipschitz * dt
    if c >= 1.0:
        raise StepSizeError(
            f"lambda*dt = {c:.4g} >= 1; increase n_steps so that the implicit step is a contraction"
        )


def implicit_step(driver, t, cont, z, b, m1, am, dt, frozen_y=None, where=None):
    """Solve ``y = cont + f(t, y_hat, law, z) dt`` elementwise.

    ``where`` is a (level, ...) label used in error messages.
    """
    if frozen_y is not None:
        return cont + dt * driver(t, frozen_y, z, b, m1, am)
    if not driver.uses_y:
        return cont + dt * driver(t, cont, z, b, m1, am)

    shape = cont.shape
    c = cont.ravel()
    zz = np.broadcast_to(z, shape).ravel()
    bb = np.broadcast_to(b, shape).ravel()
    y = c.copy()
    omega = np.ones_like(c)
    prev = np.full_like(c, np.inf)
    active = np.arange(c.size)
    for _ in range(INNER_MAX_ITER):
        g = c[active] + dt * driver(t, y[active], zz[active], bb[active], m1, am)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite driver value in implicit step at {where}")
        r = g - y[active]
        absr = np.abs(r)
        done = absr <= INNER_TOL * np.maximum(1.0, np.abs(y[active]))
        y[active[done]] = g[done]
        keep = ~done
        grew = absr[keep] >= prev[active[keep]]
        idx = active[keep]
        omega[idx[grew]] *= 0.5
        y[idx] += omega[idx] * r[keep]
        prev[idx] = absr[keep]
        active = idx
        if active.size == 0:
            return y.reshape(shape)
    node = np.unravel_index(int(active[0]), shape)
    raise NumericError(f"implicit step did not converge at {where}, node {tuple(int(k) for k in node)}")


def _check_window(lat, start, end):
    end = lat.n if end is None else end
    if not 0 <= start < end <= lat.n:
        raise ContractError(f"window [{start}, {end}] is not inside 0..{lat.n}")
    return start, end


def _check_laws(driver, laws, start, end):
    if driver.uses_law:
        if laws is None or any(laws[i] is None for i in range(start, end)):
            raise ContractError("the driver depends on the law; frozen laws are required on every level")


def solve_bsde(lat: Lattice, driver: DriverSpec, frozen_laws, terminal, frozen_y=None, *, start=0, end=None) -> BsdePair:
    """Backward recursion from ``terminal`` (values on level ``end``) down to ``start``.

    Levels outside the window are left at zero.
    """
    start, end = _check_window(lat, start, end)
    check_step_size(driver, lat.dt)
    _check_laws(driver, frozen_laws, start, end)
    term = np.asarray(terminal, dtype=float)
    if term.shape != (end + 1,):
        raise ContractError(f"terminal must have {end + 1} values on level {end}, got shape {term.shape}")
    y = lat.zeros()
    z = [np.zeros(i + 1) for i in range(lat.n)]
    y[end] = term.copy()
    for i in range(end - 1, start - 1, -1):
        z[i] = z_projection(lat, i, y[i + 1])
        cont = conditional_expectation(lat, i, y[i + 1])
        m1, am = _law_moments(frozen_laws, i)
        fy = None if frozen_y is None else frozen_y[i]
        y[i] = implicit_step(driver, lat.time(i), cont, z[i], lat.values[i], m1, am, lat.dt, fy, where=f"level {i}")
    return BsdePair(y, z)


# ------------------------------------------------------ non-recombining tree

def lattice_index(level: int) -> np.ndarray:
    """Lattice node index (number of up-moves) of each tree node on ``level``."""
    k = np.arange(1 << level, dtype=np.int64)
    counts = np.zeros_like(k)
    for bit in range(level):
        counts += (k >> bit) & 1
    return counts


def expand_to_tree(process, depth: int) -> list:
    """Duplicate lattice node values onto the ``2**i`` tree nodes of each level."""
    return [np.asarray(process[i])[lattice_index(i)] for i in range(depth + 1)]


def _rule_count(depth: int) -> int:
    c = 1
    for _ in range(depth):
        c = 1 + c * c
    return c


def _stacked_rules(depth: int) -> list:
    """All stopping rules of ``depth`` as per-level boolean arrays of shape (count, 2**i)."""
    if depth == 0:
        return [np.ones((1, 1), dtype=bool)]
    sub = _stacked_rules(depth - 1)
    m = sub[0].shape[0]
    ia = np.repeat(np.arange(m), m)
    ib = np.tile(np.arange(m), m)
    total = 1 + m * m
    levels = [np.zeros((total, 1), dtype=bool)]
    levels[0][0, 0] = True
    for i in range(1, depth + 1):
        lvl = np.zeros((total, 1 << i), dtype=bool)
        lvl[1:] = np.concatenate((sub[i - 1][ia], sub[i - 1][ib]), axis=1)
        levels.append(lvl)
    return levels


def enumerate_stopping_rules(depth: int) -> list:
    """Every stopping rule on the binary tree of ``depth`` (count ``f(k) = 1 + f(k-1)^2``)."""
    if not isinstance(depth, (int, np.integer)) or depth < 0:
        raise ParameterError(f"depth must be a non-negative integer, got {depth!r}")
    if depth > MAX_ENUM_DEPTH:
        raise ParameterError(f"refusing to enumerate rules beyond depth {MAX_ENUM_DEPTH} ({_rule_count(depth)} rules)")
    stacked = _stacked_rules(depth)
    return [StoppingRule(tuple(lvl[r] for lvl in stacked)) for r in range(stacked[0].shape[0])]


def _tree_lattice(lat: Lattice):
    if lat.n > MAX_ORACLE_DEPTH:
        raise ParameterError(f"tree oracles are limited to depth {MAX_ORACLE_DEPTH}, lattice has {lat.n} steps")
    return lat.n


def _g_evaluate_stacked(lat, driver, laws, stops, payoff_tree, frozen_tree):
    """Backward induction for a batch of rules at once; arrays are (rules, 2**i)."""
    depth = lat.n
    count = stops[0].shape[0]
    values = [None] * (depth + 1)
    values[depth] = np.broadcast_to(payoff_tree[depth], (count, 1 << depth)).copy()
    b_tree = expand_to_tree(lat.values, depth)
    for i in range(depth - 1, -1, -1):
        nxt = values[i + 1]
        down, up = nxt[:, 0::2], nxt[:, 1::2]
        cont = 0.5 * (down + up)
        z = (up - down) / (2.0 * lat.sqrt_dt)
        m1, am = _law_moments(laws, i)
        fy = None if frozen_tree is None else np.broadcast_to(frozen_tree[i], cont.shape)
        step = implicit_step(driver, lat.time(i), cont, z, b_tree[i], m1, am, lat.dt, fy, where=f"tree level {i}")
        values[i] = np.where(stops[i], payoff_tree[i], step)
    return values


def g_evaluate(lat, driver, frozen_laws, rule: StoppingRule, payoff, frozen_y=None) -> list:
    """Value process on the tree of the BSDE stopped by ``rule``.

    ``payoff`` is a lattice node process; the value at a stopped node is the
    payoff there. Returns per-level arrays over the ``2**i`` tree nodes.
    """
    depth = _tree_lattice(lat)
    if rule.depth != depth:
        raise ContractError(f"rule depth {rule.depth} does not match lattice depth {depth}")
    check_step_size(driver, lat.dt)
    _check_laws(driver, frozen_laws, 0, depth)
    stops = [s[None, :] for s in rule.stops]
    frozen_tree = None if frozen_y is None else expand_to_tree(frozen_y, depth)
    values = _g_evaluate_stacked(lat, driver, frozen_laws, stops, expand_to_tree(payoff, depth), frozen_tree)
    return [v[0] for v in values]


@dataclass
class SnellResult:
    value: float
    rule_values: np.ndarray = field(repr=False)
    best_rule: int
    rule_count: int


def snell_bruteforce(lat, driver, frozen_laws, terminal, obstacle, frozen_y=None) -> SnellResult:
    """Maximum over every stopping rule of the g-evaluation of (obstacle before T, terminal at T)."""
    depth = _tree_lattice(lat)
    check_step_size(driver, lat.dt)
    _check_laws(driver, frozen_laws, 0, depth)
    term = np.asarray(terminal, dtype=float)
    obstacle_T = np.asarray(obstacle[depth], dtype=float)
    bad = obstacle_T > term
    if np.any(bad):
        j = int(np.argmax(obstacle_T - term))
        raise ConfigError(f"terminal compatibility violated: obstacle {obstacle_T[j]!r} > terminal {term[j]!r} at node {j}")
    payoff = [np.asarray(obstacle[i], dtype=float) for i in range(depth)] + [term]
    stacked = _stacked_rules(depth)
    frozen_tree = None if frozen_y is None else expand_to_tree(frozen_y, depth)
    values = _g_evaluate_stacked(lat, driver, frozen_laws, stacked, expand_to_tree(payoff, depth), frozen_tree)
    roots = values[0][:, 0]
    best = int(np.argmax(roots))
    return SnellResult(float(roots[best]), roots, best, roots.size)
