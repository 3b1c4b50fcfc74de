"""Recombining Bernoulli random walk standing in for one-dimensional Brownian motion.

Level ``i`` carries the ``i + 1`` values ``(2j - i) * sqrt(dt)`` with binomial
weights ``C(i, j) / 2**i``. Conditional expectations on this filtration are
exact two-point averages, so everything built on top is deterministic.

Adapted processes ("node processes") are plain lists of 1-D arrays, one per
level, aligned with :attr:`Lattice.values`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, ContractError
from .marginal_law import MarginalLaw

NodeProcess = list  # list[np.ndarray], one array per level

ATOM_MERGE_TOL = 1e-14


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    n_steps: int
    dt: float = field(init=False)

    def __post_init__(self):
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ConfigError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not (math.isfinite(self.horizon) and self.horizon > 0):
            raise ConfigError(f"horizon T must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "dt", self.horizon / self.n_steps)

    def time(self, level: int) -> float:
        return level * self.dt


@dataclass(frozen=True, eq=False)
class Lattice:
    grid: TimeGrid
    values: tuple
    probs: tuple
    sqrt_dt: float

    @property
    def n(self) -> int:
        return self.grid.n_steps

    @property
    def dt(self) -> float:
        return self.grid.dt

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def time(self, level: int) -> float:
        return self.grid.time(level)

    def level_size(self, level: int) -> int:
        return level + 1

    def zeros(self) -> NodeProcess:
        return [np.zeros(i + 1) for i in range(self.n + 1)]

    def constant(self, c: float) -> NodeProcess:
        return [np.full(i + 1, float(c)) for i in range(self.n + 1)]

    def expectation(self, level: int, values) -> float:
        """Unconditional mean of a level slice."""
        _check_len(values, level + 1, "values")
        return float(np.dot(self.probs[level], values))


MAX_STEPS = 1024  # beyond this the extreme binomial weights underflow


def build_lattice(T: float, n: int) -> Lattice:
    grid = TimeGrid(float(T), n)
    if n > MAX_STEPS:
        raise ConfigError(f"n_steps={n} exceeds the supported maximum {MAX_STEPS}")
    sqrt_dt = math.sqrt(grid.dt)
    values = []
    probs = []
    row = [1]
    for i in range(n + 1):
        j = np.arange(i + 1)
        values.append((2 * j - i) * sqrt_dt)
        denom = 1 << i
        # exact big-int binomials (Pascal's rule), then one correctly rounded division each
        probs.append(np.array([c / denom for c in row]))
        row = [1] + [a + b for a, b in zip(row, row[1:])] + [1]
    for arr in values + probs:
        arr.setflags(write=False)
    return Lattice(grid=grid, values=tuple(values), probs=tuple(probs), sqrt_dt=sqrt_dt)


def _check_len(arr, expected, name):
    if np.ndim(arr) != 1 or len(arr) != expected:
        raise ContractError(f"{name} must be a 1-D array of length {expected}, got shape {np.shape(arr)}")


def conditional_expectation(lat: Lattice, level: int, next_values) -> np.ndarray:
    """``E_level[X]`` for ``X`` given on ``level + 1``: the two-child average."""
    _check_level(lat, level)
    nxt = np.asarray(next_values, dtype=float)
    _check_len(nxt, level + 2, "next_values")
    return 0.5 * (nxt[:-1] + nxt[1:])


def z_projection(lat: Lattice, level: int, next_values) -> np.ndarray:
    """Martingale-increment coefficient ``E_level[X * dB] / dt`` on the two-point branch."""
    _check_level(lat, level)
    nxt = np.asarray(next_values, dtype=float)
    _check_len(nxt, level + 2, "next_values")
    return (nxt[1:] - nxt[:-1]) / (2.0 * lat.sqrt_dt)


def _check_level(lat, level):
    if not 0 <= level < lat.n:
        raise ContractError(f"level {level} outside 0..{lat.n - 1}")


def node_marginal(lat: Lattice, level: int, values) -> MarginalLaw:
    if not 0 <= level <= lat.n:
        raise ContractError(f"level {level} outside 0..{lat.n}")
    vals = np.asarray(values, dtype=float)
    _check_len(vals, level + 1, "values")
    atoms, weights = _kernels.merge_atoms(vals, np.asarray(lat.probs[level]), ATOM_MERGE_TOL)
    return MarginalLaw(atoms, weights)


def marginals(lat: Lattice, process, start: int = 0, end: int | None = None) -> list:
    """Per-level laws of a node process; levels outside ``[start, end]`` are ``None``."""
    end = lat.n if end is None else end
    return [node_marginal(lat, i, process[i]) if start <= i <= end else None for i in range(lat.n + 1)]


def expectation_process(lat: Lattice, terminal, end: int | None = None) -> NodeProcess:
    """The martingale ``E_i[terminal]`` for ``i = 0..end``; levels above ``end`` are copies of ``terminal``'s level."""
    end = lat.n if end is None else end
    term = np.asarray(terminal, dtype=float)
    _check_len(term, end + 1, "terminal")
    square = _kernels.backward_accumulate(np.zeros((end + 1, end + 1)), term)
    out = _kernels.unpad_levels(square)
    for i in range(end + 1, lat.n + 1):
        out.append(np.zeros(i + 1))
    return out


def sup_norm(a, b, start: int = 0, end: int | None = None) -> float:
    end = len(a) - 1 if end is None else end
    return max(float(np.max(np.abs(a[i] - b[i]))) for i in range(start, end + 1))
