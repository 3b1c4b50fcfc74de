"""Finitely supported laws on the real line and the Wasserstein-1 metric between them."""
from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import ContractError

WEIGHT_TOL = 1e-12


class MarginalLaw:
    """Weighted atoms sorted by strictly increasing value, weights summing to one."""

    __slots__ = ("values", "weights")

    def __init__(self, values, weights):
        v = np.array(values, dtype=float).ravel()
        w = np.array(weights, dtype=float).ravel()
        if v.shape != w.shape or v.size == 0:
            raise ContractError("a law needs matching, non-empty value and weight arrays")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ContractError("atom values and weights must be finite")
        if np.any(w <= 0) or np.any(w > 1 + WEIGHT_TOL):
            raise ContractError("atom weights must lie in (0, 1]")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ContractError(f"weights sum to {w.sum()!r}, not 1")
        if np.any(np.diff(v) <= 0):
            raise ContractError("atom values must be strictly increasing")
        v.setflags(write=False)
        w.setflags(write=False)
        self.values = v
        self.weights = w

    @classmethod
    def from_samples(cls, values, weights=None) -> "MarginalLaw":
        """Build a law from unsorted, possibly repeated atoms (merging exact ties)."""
        v = np.asarray(values, dtype=float).ravel()
        w = np.full(v.size, 1.0 / v.size) if weights is None else np.asarray(weights, dtype=float).ravel()
        atoms, mass = _kernels.merge_atoms(v, w / w.sum(), 0.0)
        return cls(atoms, mass)

    @classmethod
    def dirac(cls, x: float = 0.0) -> "MarginalLaw":
        return cls([x], [1.0])

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, MarginalLaw):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.weights, other.weights)

    def __repr__(self):
        pairs = ", ".join(f"{v:g}:{w:g}" for v, w in zip(self.values, self.weights))
        return f"MarginalLaw({{{pairs}}})"

    def shifted(self, c: float) -> "MarginalLaw":
        return MarginalLaw(self.values + c, self.weights)

    @property
    def mean(self) -> float:
        return float(np.dot(self.weights, self.values))

    @property
    def abs_mean(self) -> float:
        return float(np.dot(self.weights, np.abs(self.values)))


def wasserstein1(a: MarginalLaw, b: MarginalLaw) -> float:
    """W1 on the line as the L1 distance between the two quantile functions."""
    if a is b:
        return 0.0
    return float(_kernels.w1_quantile(a.values, a.weights, b.values, b.weights))


def moment(a: MarginalLaw, kind: str) -> float:
    if kind == "mean":
        return a.mean
    if kind == "abs_mean":
        return a.abs_mean
    raise ContractError(f"unknown moment kind {kind!r}; expected 'mean' or 'abs_mean'")
