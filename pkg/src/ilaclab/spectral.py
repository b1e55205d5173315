"""Empirical density of states, correlation measure ρ and the ILAC.

Measures are stored as exact weighted point sets.  Interval masses are
summed with ``math.fsum`` (correctly rounded), so they do not depend on
atom order and are monotone under interval inclusion.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eigensolver import EigenDecomposition
from .lattice import BoxSpec

PROP3_TOL = 1e-12


class EstimatorMismatch(ValueError):
    pass


class Estimator(str, enum.Enum):
    COUNT_PER_VOLUME = "count_per_volume"
    LOCAL_AT_SITE = "local_at_site"


class Closed(str, enum.Enum):
    """Which endpoints an interval query includes; the default is (a, b]."""

    RIGHT = "right"
    LEFT = "left"
    BOTH = "both"
    NEITHER = "neither"


def interval_mask(x: np.ndarray, lo: float, hi: float, closed: Closed | str = Closed.RIGHT) -> np.ndarray:
    closed = Closed(closed)
    left = x >= lo if closed in (Closed.LEFT, Closed.BOTH) else x > lo
    right = x <= hi if closed in (Closed.RIGHT, Closed.BOTH) else x < hi
    return left & right


def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True)
class EmpiricalMeasure1D:
    positions: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    estimator: str = Estimator.COUNT_PER_VOLUME.value

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pos.shape != w.shape or pos.ndim != 1:
            raise ValueError("positions and weights must be 1-d arrays of equal length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        order = np.lexsort((w, pos))
        pos, w = pos[order], w[order]
        pos.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "estimator", Estimator(self.estimator).value)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def mass(self, lo: float, hi: float, closed: Closed | str = Closed.RIGHT) -> float:
        if not lo < hi and Closed(closed) is not Closed.BOTH:
            return 0.0
        return math.fsum(self.weights[interval_mask(self.positions, lo, hi, closed)])

    def cdf(self, x: float) -> float:
        """F(x) = mass of (-∞, x]."""
        return self.mass(-math.inf, x)

    def histogram(self, edges: Sequence[float]) -> np.ndarray:
        edges = np.asarray(edges, dtype=float)
        return np.array([self.mass(a, b) for a, b in zip(edges[:-1], edges[1:])])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["position", "weight"])
        for p, w in zip(self.positions, self.weights):
            writer.writerow([_fmt(p), _fmt(w)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": "EmpiricalMeasure1D",
                "estimator": self.estimator,
                "total_mass": self.total_mass,
                "positions": [float(p) for p in self.positions],
                "weights": [float(w) for w in self.weights],
            },
            indent=1,
        )


@dataclass(frozen=True)
class EmpiricalMeasure2D:
    """Atoms at (λ⁺, λ⁻) pairs; x is the H₊ coordinate, y the H₋ coordinate."""

    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    estimator: str = Estimator.COUNT_PER_VOLUME.value

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        if not x.shape == y.shape == w.shape:
            raise ValueError("x, y and weights must have equal length")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        order = np.lexsort((w, y, x))
        x, y, w = x[order], y[order], w[order]
        for arr in (x, y, w):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "estimator", Estimator(self.estimator).value)

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    def mass(
        self,
        a: tuple[float, float],
        b: tuple[float, float],
        closed: Closed | str = Closed.RIGHT,
    ) -> float:
        """ρ(A × B) for intervals A (H₊ axis) and B (H₋ axis)."""
        mask = interval_mask(self.x, a[0], a[1], closed) & interval_mask(self.y, b[0], b[1], closed)
        return math.fsum(self.weights[mask])

    def marginal(self, axis: int) -> EmpiricalMeasure1D:
        pos = self.x if axis == 0 else self.y
        return EmpiricalMeasure1D(pos, self.weights, self.estimator)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["position", "position2", "weight"])
        for x, y, w in zip(self.x, self.y, self.weights):
            writer.writerow([_fmt(x), _fmt(y), _fmt(w)])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "type": "EmpiricalMeasure2D",
                "estimator": self.estimator,
                "total_mass": self.total_mass,
                "x": [float(v) for v in self.x],
                "y": [float(v) for v in self.y],
                "weights": [float(w) for w in self.weights],
            },
            indent=1,
        )


@dataclass(frozen=True)
class IlacCurve:
    """Right-continuous distribution function of λ⁺ + λ⁻ under ρ."""

    sums: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.sums, dtype=float).ravel()
        w = np.asarray(self.weights, dtype=float).ravel()
        order = np.lexsort((w, s))
        s, w = s[order], w[order]
        s.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "sums", s)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return math.fsum(self.weights)

    @property
    def breakpoints(self) -> np.ndarray:
        return np.unique(self.sums)

    def cumulative(self) -> tuple[np.ndarray, np.ndarray]:
        """Breakpoints s_k and A(s_k)."""
        cum = np.cumsum(self.weights)
        last = np.flatnonzero(np.append(self.sums[1:] != self.sums[:-1], True))
        return self.sums[last], cum[last]

    def __call__(self, energy: float) -> float:
        k = int(np.searchsorted(self.sums, energy, side="right"))
        return math.fsum(self.weights[:k])

    def mass(self, lo: float, hi: float, closed: Closed | str = Closed.RIGHT) -> float:
        """ρ-mass of {lo < λ₁ + λ₂ <= hi}; A(hi) - A(lo) for the default convention."""
        return math.fsum(self.weights[interval_mask(self.sums, lo, hi, closed)])

    def increment(self, energy: float, delta: float) -> float:
        """A(E + δ) - A(E - δ)."""
        return self.mass(energy - delta, energy + delta, Closed.RIGHT)

    def to_csv(self) -> str:
        s, a = self.cumulative()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["energy", "ilac"])
        for e, v in zip(s, a):
            writer.writerow([_fmt(e), _fmt(v)])
        return buf.getvalue()


def dos_estimate(
    dec: EigenDecomposition,
    box: BoxSpec,
    estimator: Estimator | str = Estimator.COUNT_PER_VOLUME,
) -> EmpiricalMeasure1D:
    estimator = Estimator(estimator)
    n = dec.size
    if estimator is Estimator.COUNT_PER_VOLUME:
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.square(dec._vectors()[box.center_site, :])
    return EmpiricalMeasure1D(dec.eigenvalues, weights, estimator)


def rho_estimate(
    dec_plus: EigenDecomposition,
    dec_minus: EigenDecomposition,
    overlaps: np.ndarray,
    box: BoxSpec | None = None,
) -> EmpiricalMeasure2D:
    """Atom w_ij / |Λ| at (λ⁺_i, λ⁻_j)."""
    n = dec_plus.size
    if dec_minus.size != n or overlaps.shape != (n, n):
        raise ValueError("dimension mismatch between decompositions and overlap matrix")
    if box is not None and box.n_sites != n:
        raise ValueError(f"box has {box.n_sites} sites but decompositions have size {n}")
    x = np.repeat(dec_plus.eigenvalues, n)
    y = np.tile(dec_minus.eigenvalues, n)
    return EmpiricalMeasure2D(x, y, overlaps.ravel() / n)


def ilac_curve(rho: EmpiricalMeasure2D) -> IlacCurve:
    return IlacCurve(rho.x + rho.y, rho.weights)


def ilac_double_sum(
    eig_plus: np.ndarray, eig_minus: np.ndarray, overlaps: np.ndarray, energies: np.ndarray
) -> np.ndarray:
    """(1/|Λ|) Σ_{λ⁺_i + λ⁻_j <= E} w_ij evaluated row by row.

    For each λ⁺_i the sums λ⁺_i + λ⁻_j are nondecreasing in j, so the
    admissible j form a prefix located by binary search; the row's prefix
    sums of w then give its contribution.
    """
    eig_plus = np.asarray(eig_plus, dtype=float)
    eig_minus = np.asarray(eig_minus, dtype=float)
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    n = eig_plus.shape[0]
    prefix = np.concatenate([np.zeros((n, 1)), np.cumsum(overlaps, axis=1)], axis=1)
    total = np.zeros(energies.shape[0])
    for i in range(n):
        row_sums = eig_plus[i] + eig_minus
        k = np.searchsorted(row_sums, energies, side="right")
        total += prefix[i, k]
    return total / n


def prop3_check(
    rho: EmpiricalMeasure2D,
    dos_plus: EmpiricalMeasure1D,
    dos_minus: EmpiricalMeasure1D,
    rect: tuple[tuple[float, float], tuple[float, float]],
    closed: Closed | str = Closed.RIGHT,
) -> dict:
    """ρ(A×B) <= min(n₊(A), n₋(B)) on one rectangle."""
    for m in (rho, dos_plus, dos_minus):
        if m.estimator != Estimator.COUNT_PER_VOLUME.value:
            raise EstimatorMismatch(f"prop3_check needs count_per_volume measures, got {m.estimator}")
    a, b = rect
    lhs = rho.mass(a, b, closed)
    rhs_plus = dos_plus.mass(a[0], a[1], closed)
    rhs_minus = dos_minus.mass(b[0], b[1], closed)
    return {
        "lhs": lhs,
        "rhs_plus": rhs_plus,
        "rhs_minus": rhs_minus,
        "holds": lhs <= min(rhs_plus, rhs_minus) + PROP3_TOL,
    }


def merge_measures(measures, weights: Sequence[float] | None = None):
    """Convex combination of measures of one type (equal weights by default)."""
    measures = list(measures)
    if not measures:
        raise ValueError("nothing to merge")
    kinds = {type(m) for m in measures}
    if len(kinds) != 1:
        raise TypeError("cannot merge measures of different types")
    if isinstance(measures[0], (EmpiricalMeasure1D, EmpiricalMeasure2D)):
        estimators = {m.estimator for m in measures}
        if len(estimators) != 1:
            raise EstimatorMismatch(f"cannot mix estimators {sorted(estimators)}")
    if weights is None:
        weights = [1.0 / len(measures)] * len(measures)
    if len(weights) != len(measures):
        raise ValueError("one weight per measure is required")
    first = measures[0]
    if isinstance(first, EmpiricalMeasure1D):
        return EmpiricalMeasure1D(
            np.concatenate([m.positions for m in measures]),
            np.concatenate([m.weights * c for m, c in zip(measures, weights)]),
            first.estimator,
        )
    if isinstance(first, EmpiricalMeasure2D):
        return EmpiricalMeasure2D(
            np.concatenate([m.x for m in measures]),
            np.concatenate([m.y for m in measures]),
            np.concatenate([m.weights * c for m, c in zip(measures, weights)]),
            first.estimator,
        )
    if isinstance(first, IlacCurve):
        return IlacCurve(
            np.concatenate([m.sums for m in measures]),
            np.concatenate([m.weights * c for m, c in zip(measures, weights)]),
        )
    raise TypeError(f"unsupported measure type {type(first).__name__}")
