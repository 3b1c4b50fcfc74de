"""Configuration loading, the solve/oracle/study drivers and CSV/JSON output."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis
from .bsde_core import DriverSpec, TerminalCondition, check_step_size, snell_bruteforce, solve_bsde
from .errors import ConfigError, MfrbsdeError
from .lattice import build_lattice, node_marginal
from .meanfield import REGIMES, Problem, picard_solve, solve
from .rbsde import ObstacleSpec, skorokhod_residual, solve_reflected

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLOAT_FORMAT = ".17g"
ORACLE_TOLERANCES = {"snell": 1e-12, "colehopf": 5e-2, "meanfield_linear": 5e-3}
ORACLE_DEFAULTS = {"snell": 3, "colehopf": 64, "meanfield_linear": 128}
SNELL_BATTERY = 50

_TOP_KEYS = {"schema_version", "T", "n_steps", "p_exponent", "regime", "terminal", "driver", "obstacle", "solver", "reference"}
_DRIVER_KEYS = {"expr", "lambda", "alpha", "beta", "gamma", "convexity", "kappa"}
_OBSTACLE_KEYS = {"expr", "gamma1", "gamma2", "bound"}
_SOLVER_KEYS = {"tol", "max_iter", "window_override"}


def fmt(x) -> str:
    return format(float(x), FLOAT_FORMAT)


# ------------------------------------------------------------------ config

def read_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} at line {exc.lineno}, column {exc.colno}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    return cfg


def _section(cfg, name, allowed, required=("expr",)):
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing or non-object section {name!r}")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    for key in required:
        if key not in sec:
            raise ConfigError(f"missing key {name}.{key}")
    return sec


def _number(sec, key, where, default=None, required=False):
    if key not in sec or sec[key] is None:
        if required:
            raise ConfigError(f"missing key {where}{key}")
        return default
    v = sec[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}{key} must be a finite number, got {v!r}")
    return float(v)


def _nonneg(sec, key, where, default=0.0):
    v = _number(sec, key, where, default)
    if v is not None and v < 0:
        raise ConfigError(f"{where}{key} must be non-negative, got {v!r}")
    return v


def _expr(sec, where):
    e = sec["expr"]
    if not isinstance(e, str):
        raise ConfigError(f"{where}expr must be a string")
    return e


def problem_from_config(cfg: dict, n_steps: int | None = None, probe: bool = True) -> Problem:
    """Validate a parsed config and build the problem; the regime gate is enforced here."""
    unknown = set(cfg) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}")
    T = _number(cfg, "T", "", required=True)
    if T <= 0:
        raise ConfigError(f"T must be positive, got {T!r}")
    n = cfg.get("n_steps") if n_steps is None else n_steps
    if isinstance(n, bool) or not isinstance(n, int) or n < 1:
        raise ConfigError(f"n_steps must be a positive integer, got {n!r}")
    regime = cfg.get("regime")
    if regime not in REGIMES:
        raise ConfigError(f"regime must be one of {list(REGIMES)}, got {regime!r}")
    p = _number(cfg, "p_exponent", "", default=None, required=(regime == "lipschitz"))
    p = 2.0 if p is None else p

    tsec = _section(cfg, "terminal", {"expr"})
    terminal = TerminalCondition(_expr(tsec, "terminal."))

    dsec = _section(cfg, "driver", _DRIVER_KEYS)
    quadratic = regime != "lipschitz"
    if quadratic and "gamma" not in dsec:
        raise ConfigError(f"missing key driver.gamma (required for regime {regime})")
    if regime == "quadratic_unbounded" and "convexity" not in dsec:
        raise ConfigError("missing key driver.convexity (required for regime quadratic_unbounded)")
    convexity = dsec.get("convexity", "none")
    if not isinstance(convexity, str):
        raise ConfigError("driver.convexity must be a string")
    driver = DriverSpec(
        _expr(dsec, "driver."),
        lam=_nonneg(dsec, "lambda", "driver."),
        alpha=_nonneg(dsec, "alpha", "driver."),
        beta=_nonneg(dsec, "beta", "driver."),
        gamma=_nonneg(dsec, "gamma", "driver."),
        convexity=convexity,
        regime="quadratic" if quadratic else "lipschitz",
        kappa=_nonneg(dsec, "kappa", "driver.", default=None),
    )
    osec = _section(cfg, "obstacle", _OBSTACLE_KEYS)
    obstacle = ObstacleSpec(
        _expr(osec, "obstacle."),
        gamma1=_nonneg(osec, "gamma1", "obstacle."),
        gamma2=_nonneg(osec, "gamma2", "obstacle."),
        bound=_nonneg(osec, "bound", "obstacle.", default=None),
    )
    ssec = cfg.get("solver", {})
    if not isinstance(ssec, dict) or set(ssec) - _SOLVER_KEYS:
        raise ConfigError(f"solver must be an object with keys among {sorted(_SOLVER_KEYS)}")
    max_iter = ssec.get("max_iter", 50)
    if isinstance(max_iter, bool) or not isinstance(max_iter, int):
        raise ConfigError(f"solver.max_iter must be an integer, got {max_iter!r}")

    warnings = []
    if probe:
        for label, spec in (("driver", driver), ("obstacle", obstacle)):
            rep = analysis.lipschitz_probe(spec, T=T)
            for var, got, declared in rep.flags:
                msg = f"{label}: finite-difference slope in {var} reaches {got:.4g}, declared constant {declared:.4g}"
                log.warning(msg)
                warnings.append(msg)
    check_step_size(driver, T / n)
    prob = Problem(
        T, n, terminal, driver, obstacle, regime=regime, p_exponent=p,
        tol=_number(ssec, "tol", "solver.", default=1e-9),
        max_iter=max_iter,
        window_override=_number(ssec, "window_override", "solver.", default=None),
        warnings=tuple(warnings),
    )
    prob.require_gate()
    return prob


def load_problem(path, n_steps: int | None = None) -> Problem:
    return problem_from_config(read_config(path), n_steps)


def reference_value(cfg: dict, prob: Problem) -> float | None:
    """Optional closed-form reference for ``Y_0`` declared in the config.

    ``{"kind": "constant", "value": v}`` or ``{"kind": "cole_hopf", "gamma": g}``;
    the latter is ``log E[exp(g xi)] / g`` computed exactly on the terminal level.
    """
    ref = cfg.get("reference")
    if ref is None:
        return None
    if not isinstance(ref, dict) or ref.get("kind") not in ("constant", "cole_hopf"):
        raise ConfigError('reference must be {"kind": "constant" | "cole_hopf", ...}')
    if ref["kind"] == "constant":
        return _number(ref, "value", "reference.", required=True)
    g = _number(ref, "gamma", "reference.", required=True)
    if g <= 0:
        raise ConfigError("reference.gamma must be positive")
    lat = prob.lattice
    return cole_hopf_value(lat.probs[lat.n], prob.xi, g)


def cole_hopf_value(probs, xi, gamma) -> float:
    shift = float(np.max(gamma * xi))
    return (shift + math.log(float(np.dot(probs, np.exp(gamma * xi - shift))))) / gamma


# ------------------------------------------------------------------- solve

@dataclass
class RunResult:
    y0: float
    y_sup: float
    y_inf: float
    k_T_mean: float
    bmo_norm: float
    skorokhod_residual: float
    gate: dict
    iteration: dict
    wall_time: float
    warnings: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def gate_report(prob: Problem) -> dict:
    g = prob.gate()
    out = {"regime": prob.regime, "condition": g.condition, "value": g.value, "accept": g.accept}
    gp = prob.gate_params
    if g.accept and prob.regime == "lipschitz":
        w = analysis.find_contraction_window(gp)
        out.update(mu_star=w.mu_star, window=w.delta, lambda_at_mu_star=w.lambda_at_mu_star)
    elif g.accept:
        w = analysis.quadratic_window(gp, "bounded" if prob.regime == "quadratic_bounded" else "unbounded")
        out.update(window=w.window_len, nu=w.nu, nu_tilde=w.nu_tilde)
    if prob.driver.kappa is not None:
        out["kappa"] = prob.driver.kappa
    return out


def solution_csv(prob: Problem, triple) -> str:
    lat = prob.lattice
    k = triple.k
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "node", "t", "b", "y", "z", "k"])
    for i in range(lat.n + 1):
        t = fmt(lat.time(i))
        for j in range(i + 1):
            z = fmt(triple.z[i][j]) if i < lat.n else ""
            w.writerow([i, j, t, fmt(lat.values[i][j]), fmt(triple.y[i][j]), z, fmt(k[i][j])])
    return buf.getvalue()


def run_solve(prob: Problem, out_csv=None) -> RunResult:
    """Solve per regime, write the node CSV if requested and return the summary."""
    start = time.perf_counter()
    triple, report = solve(prob)
    lat = prob.lattice
    if out_csv is not None:
        Path(out_csv).write_text(solution_csv(prob, triple), encoding="utf-8")
    ys = np.concatenate(triple.y)
    return RunResult(
        y0=float(triple.y[0][0]),
        y_sup=float(ys.max()),
        y_inf=float(ys.min()),
        k_T_mean=float(np.dot(lat.probs[lat.n], triple.k[lat.n])),
        bmo_norm=analysis.bmo_norm(lat, triple.z),
        skorokhod_residual=skorokhod_residual(lat, triple, triple.obstacle),
        gate=gate_report(prob),
        iteration=report.as_dict(),
        wall_time=time.perf_counter() - start,
        warnings=list(prob.warnings),
    )


# ------------------------------------------------------------------ oracle

@dataclass
class OracleResult:
    case: str
    rows: list  # (label, solver value, oracle value)
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def max_gap(self) -> float:
        return max(abs(a - b) for _, a, b in self.rows)

    @property
    def passed(self) -> bool:
        return self.max_gap <= self.tolerance


def random_lipschitz_instance(rng: np.random.Generator, lam_max: float = 1.0):
    """A seeded random Lipschitz driver, obstacle and compatible terminal payoff.

    Returns ``(driver, obstacle_expr, terminal_expr)``; the driver's declared
    constant bounds its slopes in ``y``, ``z`` and the law.
    """
    a, c, g = (float(x) for x in rng.uniform(-1, 1, 3) * lam_max / 3)
    d, e, f0 = (float(x) for x in rng.uniform(-1, 1, 3))
    kink = rng.choice(["y", "min(y, 0)", "max(y, 0)"])
    zterm = rng.choice(["z", "abs(z)", "min(z, 1)"])
    driver = (
        f"{abs(a)!r}*{kink} {'-' if c < 0 else '+'} {abs(c)!r}*{zterm} + {abs(g)!r}*am"
        f" {'-' if d < 0 else '+'} {abs(d)!r}*b {'-' if e < 0 else '+'} {abs(e)!r}*t + {abs(f0)!r}"
    )
    s, u, v, w = (float(x) for x in rng.uniform(0, 1, 4))
    strike = float(rng.uniform(-0.5, 0.5))
    payoff = f"{s!r}*max(b {'+' if strike < 0 else '-'} {abs(strike)!r}, 0)"
    obstacle = f"{payoff} + {u!r}*(1 - t) - {v!r}"
    terminal = f"{payoff} - {v!r} + {w!r}*sq(b)"
    lam = float(abs(a) + abs(c) + abs(g))
    return DriverSpec(driver, lam=lam), obstacle, terminal


def snell_battery(depth: int, count: int = SNELL_BATTERY, seed: int = 0, T: float = 1.0) -> OracleResult:
    lat = build_lattice(T, depth)
    laws = [node_marginal(lat, i, lat.values[i]) for i in range(depth + 1)]
    rng = np.random.default_rng(seed)
    rows, counts = [], set()
    for k in range(count):
        driver, h_src, xi_src = random_lipschitz_instance(rng)
        ob = ObstacleSpec(h_src)
        H = [np.broadcast_to(ob(lat.time(i), 0.0, lat.values[i]), (i + 1,)).astype(float) for i in range(depth + 1)]
        xi = TerminalCondition(xi_src).realize(lat)
        tri = solve_reflected(lat, driver, laws, H, xi)
        snell = snell_bruteforce(lat, driver, laws, xi, H)
        counts.add(snell.rule_count)
        rows.append((f"instance {k}", float(tri.y[0][0]), snell.value))
    return OracleResult("snell", rows, ORACLE_TOLERANCES["snell"], {"depth": depth, "rule_count": sorted(counts)})


def run_oracle(case: str, depth: int | None = None, steps: int | None = None, seed: int = 0) -> OracleResult:
    if case == "snell":
        depth = ORACLE_DEFAULTS["snell"] if depth is None else depth
        if not 1 <= depth <= 4:
            raise ConfigError(f"snell oracle depth must be in 1..4, got {depth}")
        return snell_battery(depth, seed=seed)
    if case not in ORACLE_DEFAULTS:
        raise ConfigError(f"unknown oracle case {case!r}; choose from {sorted(ORACLE_DEFAULTS)}")
    n = ORACLE_DEFAULTS[case] if steps is None else steps
    if case == "colehopf":
        lat = build_lattice(1.0, n)
        pair = solve_bsde(lat, DriverSpec("0.5*sq(z)", gamma=1.0, regime="quadratic"), None, lat.values[n])
        lattice_ref = cole_hopf_value(lat.probs[n], lat.values[n], 1.0)
        return OracleResult(case, [("y0 vs T/2", float(pair.y[0][0]), 0.5)], ORACLE_TOLERANCES[case],
                            {"n": n, "lattice_cole_hopf": lattice_ref})
    prob = Problem(1.0, n, TerminalCondition("1"), DriverSpec("0.5*m1", lam=0.5), ObstacleSpec("-1000000"), tol=1e-12)
    triple, report = picard_solve(prob)
    return OracleResult(case, [("y0 vs exp(1/2)", float(triple.y[0][0]), math.exp(0.5))], ORACLE_TOLERANCES[case],
                        {"n": n, "iterations": report.iterations})


# ------------------------------------------------------------------- study

STUDY_COLUMNS = ["n", "y0", "diff_to_finest", "error", "iterations", "ratio"]


def run_study(cfg: dict, steps: list) -> list:
    """One solve per resolution. ``ratio`` compares consecutive errors (or consecutive increments without a reference)."""
    if not steps:
        raise ConfigError("--steps needs at least one value")
    if len(set(steps)) != len(steps) or any(n < 1 for n in steps):
        raise ConfigError(f"steps must be distinct positive integers, got {steps}")
    steps = sorted(steps)
    rows = []
    for n in steps:
        prob = problem_from_config(cfg, n_steps=n, probe=False)
        triple, report = solve(prob)
        ref = reference_value(cfg, prob)
        y0 = float(triple.y[0][0])
        rows.append({"n": n, "y0": y0, "error": None if ref is None else abs(y0 - ref), "iterations": report.iterations})
    finest = rows[-1]["y0"]
    for k, r in enumerate(rows):
        r["diff_to_finest"] = abs(r["y0"] - finest)
        r["ratio"] = None
        if k == 0:
            continue
        if r["error"] is not None:
            prev = rows[k - 1]["error"]
            r["ratio"] = r["error"] / prev if prev > 0 else None
        elif k >= 2:
            num = abs(r["y0"] - rows[k - 1]["y0"])
            den = abs(rows[k - 1]["y0"] - rows[k - 2]["y0"])
            r["ratio"] = num / den if den > 0 else None
    return rows


def study_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STUDY_COLUMNS)
    for r in rows:
        w.writerow([
            r["n"], fmt(r["y0"]), fmt(r["diff_to_finest"]),
            "" if r["error"] is None else fmt(r["error"]),
            r["iterations"],
            "" if r["ratio"] is None else fmt(r["ratio"]),
        ])
    return buf.getvalue()


__all__ = [
    "MfrbsdeError", "OracleResult", "RunResult", "load_problem", "problem_from_config", "read_config",
    "run_oracle", "run_solve", "run_study", "solution_csv", "study_csv",
]
