"""Mean-field coupling: the solution map, windowed Picard iteration and the law-frozen recursion.

The solution map ``gamma_map`` takes a candidate process ``U``, freezes its
per-level marginals (and, in ``freeze_full`` mode, its values in the driver's
``y`` slot), realizes the obstacle at ``U`` and solves the resulting reflected
equation. A solution of the coupled problem is a fixed point of this map.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .analysis import (
    GateParams,
    GateResult,
    find_contraction_window,
    lipschitz_gate,
    quadratic_bounded_gate,
    quadratic_unbounded_gate,
    quadratic_window,
)
from .bsde_core import DriverSpec, TerminalCondition
from .errors import ConfigError, ContractError, ConvergenceError, GateError, NumericError
from .lattice import Lattice, build_lattice, expectation_process, marginals, node_marginal, sup_norm
from .rbsde import ObstacleSpec, SolutionTriple, solve_reflected

log = logging.getLogger(__name__)

REGIMES = ("lipschitz", "quadratic_bounded", "quadratic_unbounded")
MODES = ("freeze_full", "freeze_law_only")
RATIO_FLOOR = 1e-14
SELF_CONSISTENCY_TOL = 1e-8


@dataclass(frozen=True)
class Problem:
    T: float
    n: int
    terminal: TerminalCondition
    driver: DriverSpec
    obstacle: ObstacleSpec
    regime: str = "lipschitz"
    p_exponent: float = 2.0
    tol: float = 1e-9
    max_iter: int = 50
    window_override: float | None = None
    warnings: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.regime == "lipschitz" and self.driver.regime != "lipschitz":
            raise ConfigError("regime 'lipschitz' needs a Lipschitz driver")
        if self.regime != "lipschitz" and self.driver.regime != "quadratic":
            raise ConfigError(f"regime {self.regime!r} needs a quadratic driver (gamma > 0)")
        if not self.p_exponent > 1:
            raise ConfigError(f"p_exponent must be > 1, got {self.p_exponent!r}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ConfigError(f"tol must be positive, got {self.tol!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ConfigError(f"max_iter must be a positive integer, got {self.max_iter!r}")
        if self.window_override is not None and not self.window_override > 0:
            raise ConfigError(f"window_override must be positive, got {self.window_override!r}")
        self.check_terminal_compatibility()

    @cached_property
    def lattice(self) -> Lattice:
        return build_lattice(self.T, self.n)

    @cached_property
    def xi(self) -> np.ndarray:
        return self.terminal.realize(self.lattice)

    def check_terminal_compatibility(self):
        """``xi >= h(T, xi, law of xi)`` on every terminal node."""
        lat = self.lattice
        law = node_marginal(lat, lat.n, self.xi)
        h = np.broadcast_to(self.obstacle(lat.horizon, self.xi, lat.values[lat.n], law.mean, law.abs_mean), self.xi.shape)
        gap = h - self.xi
        if np.any(gap > 0):
            j = int(np.argmax(gap))
            raise ConfigError(
                f"terminal compatibility violated at terminal node {j} (b = {lat.values[lat.n][j]:.6g}): "
                f"obstacle {h[j]!r} > terminal {self.xi[j]!r}"
            )

    @property
    def gate_params(self) -> GateParams:
        d, o = self.driver, self.obstacle
        return GateParams(
            gamma1=o.gamma1, gamma2=o.gamma2, lam=d.lam, beta=d.beta,
            alpha=d.alpha, gamma=d.gamma, p=self.p_exponent, T=self.T,
        )

    def gate(self) -> GateResult:
        gp = self.gate_params
        if self.regime == "lipschitz":
            return lipschitz_gate(gp)
        if self.regime == "quadratic_bounded":
            return quadratic_bounded_gate(gp)
        return quadratic_unbounded_gate(gp)

    def require_gate(self) -> GateResult:
        g = self.gate()
        if not g.accept:
            raise GateError(f"{self.regime} gate rejected: {g.condition} evaluates to {g.value:.6g}")
        return g


@dataclass
class WindowReport:
    start: int
    end: int
    bound: float | None
    diffs: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.diffs)


@dataclass
class IterationReport:
    method: str
    windows: list = field(default_factory=list)
    converged: bool = False
    self_consistency_gap: float | None = None

    @property
    def iterations(self) -> int:
        return sum(w.iterations for w in self.windows)

    @property
    def diffs(self) -> list:
        return [d for w in self.windows for d in w.diffs]

    @property
    def ratios(self) -> list:
        return [r for w in self.windows for r in w.ratios]

    @property
    def max_window_iterations(self) -> int:
        return max((w.iterations for w in self.windows), default=0)

    def as_dict(self) -> dict:
        return {
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
            "self_consistency_gap": self.self_consistency_gap,
            "windows": [
                {"start": w.start, "end": w.end, "bound": w.bound, "iterations": w.iterations,
                 "converged": w.converged, "diffs": list(w.diffs), "ratios": list(w.ratios)}
                for w in self.windows
            ],
        }


# ------------------------------------------------------------ solution map

def obstacle_process(prob: Problem, U, laws, start: int = 0, end: int | None = None) -> list:
    """``H_i = h(t_i, U_i, law_i)`` on levels ``start..end``; zeros elsewhere."""
    lat = prob.lattice
    end = lat.n if end is None else end
    out = lat.zeros()
    for i in range(start, end + 1):
        law = laws[i]
        h = prob.obstacle(lat.time(i), np.asarray(U[i], dtype=float), lat.values[i], law.mean, law.abs_mean)
        out[i] = np.broadcast_to(np.asarray(h, dtype=float), (i + 1,)).copy()
    return out


def gamma_map(prob: Problem, U, mode: str = "freeze_full", start: int = 0, end: int | None = None) -> SolutionTriple:
    """Solve the reflected equation with law (and in ``freeze_full`` also ``y``) frozen at ``U``.

    Only levels ``start..end`` are touched; ``U[end]`` is the terminal data of
    the window and must equal ``xi`` when ``end`` is the last level.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    lat = prob.lattice
    end = lat.n if end is None else end
    if len(U) != lat.n + 1:
        raise ContractError(f"U must have {lat.n + 1} levels, got {len(U)}")
    if end == lat.n and not np.array_equal(np.asarray(U[end], dtype=float), prob.xi):
        raise ContractError("U must equal the terminal condition on the last level")
    laws = marginals(lat, U, start, end)
    H = obstacle_process(prob, U, laws, start, end)
    frozen_y = U if mode == "freeze_full" else None
    return solve_reflected(
        lat, prob.driver, laws, H, np.asarray(U[end], dtype=float), frozen_y,
        start=start, end=end, check_terminal=(end == lat.n),
    )


@dataclass(frozen=True)
class ResidualReport:
    sup: float
    weighted: float

    def __float__(self):
        return self.sup


def fixed_point_residual(prob: Problem, Y, mode: str = "freeze_full") -> ResidualReport:
    """Sup-norm of ``gamma_map(Y) - Y``; ``weighted`` is the largest per-level mean absolute gap."""
    lat = prob.lattice
    out = gamma_map(prob, Y, mode)
    gaps = [np.abs(out.y[i] - Y[i]) for i in range(lat.n + 1)]
    sup = max(float(np.max(g)) for g in gaps)
    weighted = max(float(np.dot(lat.probs[i], gaps[i])) for i in range(lat.n + 1))
    return ResidualReport(sup, weighted)


def self_consistency_gap(prob: Problem, triple: SolutionTriple) -> float:
    """Largest amount by which ``y`` falls below the obstacle evaluated at ``y`` and its own laws (0 if never)."""
    lat = prob.lattice
    laws = marginals(lat, triple.y)
    H = obstacle_process(prob, triple.y, laws)
    return max(0.0, max(float(np.max(H[i] - triple.y[i])) for i in range(lat.n + 1)))


def _finish(prob, triple, report):
    gap = self_consistency_gap(prob, triple)
    report.self_consistency_gap = gap
    if gap > SELF_CONSISTENCY_TOL:
        raise NumericError(f"returned Y sits {gap:.3e} below its own obstacle (tolerance {SELF_CONSISTENCY_TOL:g})")
    return triple, report


# ------------------------------------------------------------------ Picard

def window_steps(prob: Problem, window_override: float | None = None) -> tuple:
    """Grid steps per window and the contraction bound used for reporting."""
    gp = prob.gate_params
    prob.require_gate()
    if prob.regime == "lipschitz":
        w = find_contraction_window(gp)
        length, bound = w.delta, w.lambda_at_mu_star
    elif prob.regime == "quadratic_bounded":
        w = quadratic_window(gp, "bounded")
        length, bound = w.window_len, w.contraction_bound
    else:
        raise ConfigError("Picard iteration covers the lipschitz and quadratic_bounded regimes; use theta_sequence_solve")
    override = window_override if window_override is not None else prob.window_override
    if override is not None:
        length = override
    steps = min(prob.n, int(math.floor(length / prob.lattice.dt + 1e-6)))
    if steps < 1:
        raise ConfigError(
            f"window length {length:.4g} is shorter than one grid step dt = {prob.lattice.dt:.4g}; increase n_steps"
        )
    return steps, bound


def picard_solve(prob: Problem, tol: float | None = None, max_iter: int | None = None,
                 window_override: float | None = None) -> tuple:
    """Windowed fixed-point iteration in ``freeze_full`` mode, stitched backward from ``T``."""
    tol = prob.tol if tol is None else tol
    max_iter = prob.max_iter if max_iter is None else max_iter
    steps, bound = window_steps(prob, window_override)
    lat = prob.lattice
    n = lat.n
    Y = lat.zeros()
    Y[n] = prob.xi.copy()
    Z = [np.zeros(i + 1) for i in range(n)]
    dK = [np.zeros(i + 1) for i in range(n)]
    H = lat.zeros()
    report = IterationReport("picard")
    end = n
    while end > 0:
        start = max(0, end - steps)
        wrep = WindowReport(start, end, bound)
        report.windows.append(wrep)
        init = expectation_process(lat, Y[end], end)
        U = init[: end + 1] + Y[end + 1:]
        for _ in range(max_iter):
            triple = gamma_map(prob, U, "freeze_full", start, end)
            d = sup_norm(triple.y, U, start, end)
            if wrep.diffs and wrep.diffs[-1] > RATIO_FLOOR:
                wrep.ratios.append(d / wrep.diffs[-1])
            wrep.diffs.append(d)
            U = triple.y[: end + 1] + U[end + 1:]
            if d <= tol:
                wrep.converged = True
                break
        log.info("window [%d, %d]: %d iterations, last diff %.3e", start, end, wrep.iterations, wrep.diffs[-1])
        if not wrep.converged:
            raise ConvergenceError(
                f"Picard iteration on window [{start}, {end}] did not reach tol {tol:g} in {max_iter} iterations "
                f"(last difference {wrep.diffs[-1]:.3e})",
                report=report,
            )
        for i in range(start, end):
            Y[i], Z[i], dK[i] = triple.y[i], triple.z[i], triple.dk[i]
        # keep the obstacle each level was actually reflected against
        for i in range(start, end + (end == n)):
            H[i] = triple.obstacle[i]
        end = start
    report.converged = True
    return _finish(prob, SolutionTriple(Y, Z, dK, obstacle=H), report)


# ------------------------------------------------------------ theta method

def theta_sequence_solve(prob: Problem, tol: float | None = None, m_max: int | None = None) -> tuple:
    """``Y^(m) = gamma_map(Y^(m-1), freeze_law_only)`` from ``Y^(0) = E_t[xi]``."""
    if prob.regime != "quadratic_unbounded":
        raise ConfigError(f"the law-frozen recursion needs regime quadratic_unbounded, got {prob.regime!r}")
    if prob.driver.convexity not in ("concave", "convex"):
        raise ConfigError("the law-frozen recursion needs a driver declared concave or convex")
    prob.require_gate()
    tol = prob.tol if tol is None else tol
    m_max = prob.max_iter if m_max is None else m_max
    lat = prob.lattice
    Y = expectation_process(lat, prob.xi)
    wrep = WindowReport(0, lat.n, None)
    report = IterationReport("theta", [wrep])
    for _ in range(m_max):
        triple = gamma_map(prob, Y, "freeze_law_only")
        d = sup_norm(triple.y, Y)
        if wrep.diffs and wrep.diffs[-1] > RATIO_FLOOR:
            wrep.ratios.append(d / wrep.diffs[-1])
        wrep.diffs.append(d)
        Y = triple.y
        if d <= tol:
            wrep.converged = True
            break
    if not wrep.converged:
        raise ConvergenceError(
            f"law-frozen recursion did not reach tol {tol:g} in {m_max} steps (last difference {wrep.diffs[-1]:.3e})",
            report=report,
        )
    report.converged = True
    return _finish(prob, triple, report)


def solve(prob: Problem) -> tuple:
    """Dispatch on the regime."""
    if prob.regime == "quadratic_unbounded":
        return theta_sequence_solve(prob)
    return picard_solve(prob)
