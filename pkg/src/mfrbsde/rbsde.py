"""Discretely reflected backward scheme: the Skorokhod triple (Y, Z, K) above a frozen obstacle."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .bsde_core import (
    DriverSpec,
    _as_expr,
    _check_laws,
    _check_window,
    _law_moments,
    check_step_size,
    implicit_step,
)
from .dsl import CompiledExpr
from .errors import ConfigError, ContractError
from .lattice import Lattice, conditional_expectation, z_projection


@dataclass(frozen=True)
class ObstacleSpec:
    """Obstacle ``h(t, y, law)`` with Lipschitz constants in ``y`` and in W1 of the law."""

    expr: CompiledExpr
    gamma1: float = 0.0
    gamma2: float = 0.0
    bound: float | None = None

    def __post_init__(self):
        e = _as_expr(self.expr)
        if "z" in e.free:
            raise ConfigError("the obstacle may not depend on z")
        object.__setattr__(self, "expr", e)
        for name in ("gamma1", "gamma2"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"obstacle.{name} must be a finite non-negative number, got {v!r}")
            object.__setattr__(self, name, v)
        if self.bound is not None and not (np.isfinite(self.bound) and self.bound >= 0):
            raise ConfigError(f"obstacle.bound must be a non-negative number, got {self.bound!r}")

    def __call__(self, t, y, b, m1=0.0, am=0.0):
        return self.expr(t=t, y=y, b=b, m1=m1, am=am)

    @property
    def uses_law(self) -> bool:
        return self.expr.uses("m1", "am")


@dataclass
class SolutionTriple:
    """``y`` on levels 0..n; ``z`` and the pushes ``dk`` on levels 0..n-1.

    ``dk[i]`` is the push applied at a level-``i`` node, so the cumulative
    process satisfies ``K_{i+1} = K_i + dk_i`` along every path. ``k`` stores
    its conditional mean given the lattice node (path identity is lost by
    recombination).
    """

    y: list
    z: list
    dk: list
    obstacle: list | None = field(default=None, repr=False)
    _k: list | None = field(default=None, init=False, repr=False)

    @property
    def k(self) -> list:
        if self._k is None:
            n = len(self.dk)
            square = _kernels.accumulate_k(_kernels.pad_levels(self.dk, n))
            self._k = _kernels.unpad_levels(square)
        return self._k

    @property
    def n(self) -> int:
        return len(self.dk)


def solve_reflected(
    lat: Lattice,
    driver: DriverSpec,
    frozen_laws,
    obstacle_process,
    terminal,
    frozen_y=None,
    *,
    start: int = 0,
    end: int | None = None,
    check_terminal: bool = True,
) -> SolutionTriple:
    """Implicit step followed by projection onto the obstacle, level by level."""
    start, end = _check_window(lat, start, end)
    check_step_size(driver, lat.dt)
    _check_laws(driver, frozen_laws, start, end)
    term = np.asarray(terminal, dtype=float)
    if term.shape != (end + 1,):
        raise ContractError(f"terminal must have {end + 1} values on level {end}, got shape {term.shape}")
    if check_terminal:
        h_end = np.asarray(obstacle_process[end], dtype=float)
        if np.any(h_end > term):
            j = int(np.argmax(h_end - term))
            raise ConfigError(
                f"terminal compatibility violated at level {end}, node {j}: obstacle {h_end[j]!r} > terminal {term[j]!r}"
            )
    y = lat.zeros()
    z = [np.zeros(i + 1) for i in range(lat.n)]
    dk = [np.zeros(i + 1) for i in range(lat.n)]
    y[end] = term.copy()
    for i in range(end - 1, start - 1, -1):
        z[i] = z_projection(lat, i, y[i + 1])
        cont = conditional_expectation(lat, i, y[i + 1])
        m1, am = _law_moments(frozen_laws, i)
        fy = None if frozen_y is None else frozen_y[i]
        free = implicit_step(driver, lat.time(i), cont, z[i], lat.values[i], m1, am, lat.dt, fy, where=f"level {i}")
        y[i] = np.maximum(free, obstacle_process[i])
        dk[i] = y[i] - free
    return SolutionTriple(y, z, dk, obstacle=[np.asarray(h, dtype=float) for h in obstacle_process])


def skorokhod_residual(lat: Lattice, triple: SolutionTriple, obstacle_process) -> float:
    """Probability-weighted sum of ``(y - obstacle) * dk``: zero iff pushes happen only on the obstacle."""
    total = 0.0
    for i in range(triple.n):
        gap = np.abs(triple.y[i] - obstacle_process[i])
        total += float(np.dot(lat.probs[i], gap * triple.dk[i]))
    return total


def triple_violations(lat: Lattice, triple: SolutionTriple, terminal, obstacle_process=None, tol: float = 1e-12) -> list:
    """Structural checks on a triple; returns human-readable violations (empty when sound)."""
    problems = []
    if any(np.any(d < 0) for d in triple.dk):
        problems.append("negative push: K decreases along some path")
    k = triple.k
    if k[0][0] != 0.0:
        problems.append(f"K_0 = {k[0][0]!r} != 0")
    if not np.array_equal(triple.y[lat.n], np.asarray(terminal, dtype=float)):
        problems.append("terminal identity y_n == xi fails")
    obstacle_process = triple.obstacle if obstacle_process is None else obstacle_process
    if obstacle_process is not None:
        for i in range(lat.n):
            if np.any(triple.y[i] < obstacle_process[i] - tol):
                problems.append(f"y below the obstacle on level {i}")
                break
        res = skorokhod_residual(lat, triple, obstacle_process)
        if res > 1e-10:
            problems.append(f"Skorokhod residual {res:.3e} > 1e-10")
    return problems
