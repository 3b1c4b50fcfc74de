"""Well-posedness gates, contraction windows and numeric certificates."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import GateError, NumericError, ParameterError
from .lattice import Lattice

BISECT_TOL = 1e-10
BMO_SLACK = 1.10
EXP_MOMENT_SLACK = 0.02
PROBE_REL_SLACK = 0.01


@dataclass(frozen=True)
class GateParams:
    gamma1: float = 0.0
    gamma2: float = 0.0
    lam: float = 0.0
    beta: float = 0.0
    alpha: float = 0.0
    gamma: float = 0.0
    p: float = 2.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "lam", "beta", "alpha", "gamma"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ParameterError(f"{name} must be finite and non-negative, got {v!r}")
        if not self.T > 0:
            raise ParameterError(f"T must be positive, got {self.T!r}")


@dataclass(frozen=True)
class GateResult:
    accept: bool
    value: float
    condition: str


@dataclass(frozen=True)
class ContractionWindow:
    mu_star: float
    delta: float
    lambda_at_mu_star: float


@dataclass(frozen=True)
class QuadraticWindow:
    window_len: float
    nu: float | None = None
    nu_tilde: float | None = None
    contraction_bound: float | None = None


# ---------------------------------------------------------------- gates

def _check_p(p):
    if not p > 1:
        raise ParameterError(f"the Lipschitz gate needs p > 1, got p = {p!r}")


def lipschitz_gate(gp: GateParams) -> GateResult:
    p = gp.p
    _check_p(p)
    g1, g2 = gp.gamma1, gp.gamma2
    value = (g1 + g2) ** ((p - 1) / p) * ((p / (p - 1)) ** p * g1 + g2) ** (1 / p)
    return GateResult(value < 1, value, "(g1+g2)^((p-1)/p) * ((p/(p-1))^p g1 + g2)^(1/p) < 1")


def quadratic_bounded_gate(gp: GateParams) -> GateResult:
    value = gp.gamma1 + gp.gamma2
    return GateResult(value < 1, value, "gamma1 + gamma2 < 1")


def quadratic_unbounded_gate(gp: GateParams) -> GateResult:
    value = 4 * (gp.gamma1 + gp.gamma2)
    return GateResult(value < 1, value, "4 (gamma1 + gamma2) < 1")


def lambda_mu(gp: GateParams, mu: float, _allow_endpoint: bool = False) -> float:
    """Contraction constant of the solution map on a window of length ``(mu - 1)^2``."""
    p = gp.p
    _check_p(p)
    if not (1 < mu < p or (_allow_endpoint and mu == 1)):
        raise ParameterError(f"mu must lie in (1, p) = (1, {p}), got {mu!r}")
    lam, g1, g2 = gp.lam, gp.gamma1, gp.gamma2
    d = (mu - 1) ** 2
    doob = (p / (p - mu)) ** (p / mu)
    return (
        math.exp(lam * lam * (mu - 1) / 2)
        * (g1 + g2 + 2 * lam * d) ** ((p - 1) / p)
        * ((g1 + lam * d) * doob + (g2 + lam * d)) ** (1 / p)
    )


def find_contraction_window(gp: GateParams, margin: float = 0.05) -> ContractionWindow:
    """Largest ``mu`` in (1, p) with ``lambda_mu(mu) <= 1 - margin``, and ``delta = (mu - 1)^2``."""
    gate = lipschitz_gate(gp)
    if not gate.accept:
        raise GateError(f"Lipschitz gate rejected: {gate.condition} evaluates to {gate.value:.6g}")
    target = 1.0 - margin
    at_one = lambda_mu(gp, 1.0, _allow_endpoint=True)
    if at_one > target:
        raise ParameterError(
            f"no mu with Lambda(mu) <= {target:g} (Lambda(1+) = {at_one:.6g}); try a smaller margin"
        )
    lo, hi = 1.0, gp.p
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if lambda_mu(gp, mid, _allow_endpoint=True) <= target:
            lo = mid
        else:
            hi = mid
    mu_star = lo
    if mu_star <= 1.0:
        raise ParameterError("contraction window collapsed to zero length; try a smaller margin")
    return ContractionWindow(mu_star, min((mu_star - 1) ** 2, gp.T), lambda_mu(gp, mu_star))


def unbounded_window_inequalities(gp: GateParams, h: float, nu: float, nu_tilde: float) -> tuple:
    """Left-hand sides of the two window conditions of the unbounded regime (both must be < 1)."""
    growth = math.exp(gp.beta * h)
    return (
        4 * growth * nu_tilde * (gp.gamma1 + gp.gamma2 + gp.beta * h),
        4 * growth * nu * nu_tilde * gp.gamma1,
    )


def quadratic_window(gp: GateParams, regime: str) -> QuadraticWindow:
    if regime == "bounded":
        gate = quadratic_bounded_gate(gp)
        if not gate.accept:
            raise GateError(f"bounded quadratic gate rejected: gamma1 + gamma2 = {gate.value:.6g} >= 1")
        slack = 1.0 - gate.value
        length = gp.T if gp.beta == 0 else min(0.5 * slack / (2 * gp.beta), gp.T)
        return QuadraticWindow(length, contraction_bound=gp.gamma1 + gp.gamma2 + 2 * gp.beta * length)
    if regime == "unbounded":
        gate = quadratic_unbounded_gate(gp)
        if not gate.accept:
            raise GateError(f"unbounded quadratic gate rejected: 4(gamma1 + gamma2) = {gate.value:.6g} >= 1")
        nu = nu_tilde = 1.0 + (1.0 - gate.value) / 4
        ok = lambda h: max(unbounded_window_inequalities(gp, h, nu, nu_tilde)) < 1
        if not ok(0.0):
            raise GateError("no positive window satisfies the unbounded-regime inequalities")
        if ok(gp.T):
            length = gp.T
        else:
            lo, hi = 0.0, gp.T
            while hi - lo > BISECT_TOL:
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if ok(mid) else (lo, mid)
            length = 0.99 * lo
        return QuadraticWindow(length, nu, nu_tilde)
    raise ParameterError(f"regime must be 'bounded' or 'unbounded', got {regime!r}")


# ------------------------------------------------------------ certificates

def bmo_norm(lat: Lattice, z) -> float:
    """``max_node sqrt(E_node[sum_{s >= level} z_s^2 dt])`` by one backward sweep."""
    n = lat.n
    rows = [np.asarray(z[i], dtype=float) ** 2 * lat.dt for i in range(n)]
    source = _kernels.pad_levels(rows + [np.zeros(n + 1)], n + 1)
    acc = _kernels.backward_accumulate(source, np.zeros(n + 1))
    return math.sqrt(max(0.0, float(np.max(acc))))


@dataclass(frozen=True)
class BoundReport:
    lhs: float
    rhs: float
    passed: bool


def bmo_bound_check(lat: Lattice, triple, gp: GateParams, slack: float = BMO_SLACK) -> BoundReport:
    """Compare the squared BMO norm of ``z`` against the a-priori bound for bounded quadratic solutions."""
    if gp.gamma <= 0:
        raise ParameterError("the BMO bound needs a quadratic growth constant gamma > 0")
    y_sup = max(float(np.max(np.abs(row))) for row in triple.y)
    g = gp.gamma
    rhs = (1 + 2 * g * gp.T * (gp.alpha + gp.beta * y_sup)) * math.exp(4 * g * y_sup) / (g * g)
    lhs = bmo_norm(lat, triple.z) ** 2
    return BoundReport(lhs, rhs, lhs <= slack * rhs)


@dataclass(frozen=True)
class ExpMomentReport:
    max_violation: float
    passed: bool
    worst_node: tuple = field(default=(0, 0))


def exp_moment_check(lat: Lattice, pair, gp: GateParams, p: float, variant: str = "abs", slack: float = EXP_MOMENT_SLACK) -> ExpMomentReport:
    """Nodewise check of ``exp(p g |y_t|) <= E_t[exp(p g e^{b(T-t)} |eta| + p g int_t^T alpha e^{b(s-t)} ds)]``.

    ``variant="plus"`` uses positive parts. ``eta`` is the terminal value of ``pair.y``.
    """
    if variant not in ("abs", "plus"):
        raise ParameterError(f"variant must be 'abs' or 'plus', got {variant!r}")
    if gp.gamma <= 0:
        raise ParameterError("the exponential-moment check needs gamma > 0")
    if p < 1:
        raise ParameterError(f"p must be >= 1, got {p!r}")
    part = np.abs if variant == "abs" else (lambda x: np.maximum(x, 0.0))
    n, T = lat.n, lat.horizon
    pg = p * gp.gamma
    eta = part(np.asarray(pair.y[n], dtype=float))
    zero_source = np.zeros((n + 1, n + 1))

    def exponent(level):
        tau = T - lat.time(level)
        growth = math.exp(gp.beta * tau)
        drift = gp.alpha * tau if gp.beta == 0 else gp.alpha * math.expm1(gp.beta * tau) / gp.beta
        return growth, drift

    with np.errstate(over="raise"):
        try:
            if gp.beta == 0:
                # the terminal function differs by level only through a deterministic factor
                sweep = _kernels.backward_accumulate(zero_source, np.exp(pg * eta))
                rows = []
                for i in range(n + 1):
                    _, drift = exponent(i)
                    rows.append(sweep[i, : i + 1] * math.exp(pg * drift))
            else:
                rows = []
                for i in range(n + 1):
                    growth, drift = exponent(i)
                    sweep = _kernels.backward_accumulate(zero_source, np.exp(pg * (growth * eta) + pg * drift))
                    rows.append(sweep[i, : i + 1])
            worst, where = -math.inf, (0, 0)
            for i in range(n + 1):
                lhs = np.exp(pg * (1.0 * part(np.asarray(pair.y[i], dtype=float))))
                viol = (lhs - rows[i]) / rows[i]
                j = int(np.argmax(viol))
                if viol[j] > worst:
                    worst, where = float(viol[j]), (i, j)
        except FloatingPointError:
            raise NumericError("exponential moments overflow; reduce p or gamma") from None
    return ExpMomentReport(worst, worst <= slack, where)


# ------------------------------------------------------------------ probe

@dataclass
class ProbeReport:
    max_quotients: dict
    flags: list
    skipped: int = 0

    @property
    def ok(self) -> bool:
        return not self.flags


def _probe_grid(sample_count: int, T: float):
    span = np.linspace(-2.0, 2.0, max(2, sample_count))
    pts = []
    for t, y, z, b, m1, am in itertools.product(
        (0.0, 0.5 * T, T), span, span, (-1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), (0.0, 1.0, 2.0)
    ):
        if am >= abs(m1):
            pts.append((t, y, z, b, m1, am))
    arr = np.array(pts)
    return {k: arr[:, i] for i, k in enumerate(("t", "y", "z", "b", "m1", "am"))}


def lipschitz_probe(spec, sample_count: int = 5, T: float = 1.0, h: float = 1e-6) -> ProbeReport:
    """Finite-difference sanity check of declared Lipschitz constants.

    ``spec`` is a DriverSpec (``y``/law against ``lam`` or ``beta``, ``z``
    against ``lam`` in the Lipschitz regime) or an ObstacleSpec (``y`` against
    ``gamma1``, law against ``gamma2``). Points where the expression is
    undefined are skipped and counted.
    """
    from .bsde_core import DriverSpec

    if isinstance(spec, DriverSpec):
        const = spec.lam if spec.regime == "lipschitz" else spec.beta
        checks = {"y": const, "law": const}
        if spec.regime == "lipschitz":
            checks["z"] = spec.lam
    else:
        checks = {"y": spec.gamma1, "law": spec.gamma2}
    expr = spec.expr
    env = _probe_grid(sample_count, T)

    def f(e):
        try:
            return np.asarray(expr(**e), dtype=float) * np.ones(len(env["t"]))
        except ArithmeticError:
            out = np.full(len(env["t"]), np.nan)
            for idx in range(len(out)):
                try:
                    out[idx] = float(expr(**{k: v[idx] for k, v in e.items()}))
                except ArithmeticError:
                    pass
            return out

    base = f(env)
    directions = {
        "y": [{"y": h}],
        "z": [{"z": h}],
        "law": [{"m1": h}, {"am": h}, {"m1": h, "am": h}, {"m1": h, "am": -h}],
    }
    maxq, flags = {}, []
    skipped = int(np.sum(~np.isfinite(base)))
    for var, declared in checks.items():
        worst = 0.0
        for d in directions[var]:
            shifted = {k: (v + d.get(k, 0.0)) for k, v in env.items()}
            q = np.abs(f(shifted) - base) / h
            q = q[np.isfinite(q)]
            if q.size:
                worst = max(worst, float(np.max(q)))
        maxq[var] = worst
        if worst > declared * (1 + PROBE_REL_SLACK) + 1e-6:
            flags.append((var, worst, declared))
    return ProbeReport(maxq, flags, skipped)
