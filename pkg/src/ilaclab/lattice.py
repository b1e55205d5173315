"""Finite-box Anderson model: lattice Laplacian, i.i.d. site potentials, H± = Δ ± V."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

DEFAULT_MAX_SITES = 20000


class LatticeError(ValueError):
    pass


class PeriodicDoubleEdgeError(LatticeError):
    """Periodic wrap on an axis of length 2 would connect the same pair twice."""


class DistributionError(ValueError):
    pass


class Boundary(str, enum.Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class BoxSpec:
    dimension: int
    side_length: int
    boundary: Boundary = Boundary.DIRICHLET
    max_sites: int = DEFAULT_MAX_SITES

    def __post_init__(self):
        object.__setattr__(self, "boundary", Boundary(self.boundary))
        if not 1 <= self.dimension <= 3:
            raise LatticeError(f"dimension must be 1, 2 or 3, got {self.dimension}")
        if self.side_length < 1:
            raise LatticeError(f"side_length must be positive, got {self.side_length}")
        if self.n_sites > self.max_sites:
            raise LatticeError(
                f"box has {self.n_sites} sites, above the limit of {self.max_sites}"
            )

    @property
    def n_sites(self) -> int:
        return self.side_length**self.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.side_length,) * self.dimension

    def index(self, coords: Sequence[int]) -> int:
        """Row-major site index of ``coords``."""
        return int(np.ravel_multi_index(tuple(coords), self.shape))

    def coords(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(index, self.shape))

    @property
    def center_site(self) -> int:
        return self.index([self.side_length // 2] * self.dimension)


class DistributionKind(str, enum.Enum):
    UNIFORM = "uniform"
    BERNOULLI = "bernoulli"
    TWO_INTERVAL = "two_interval"


@dataclass(frozen=True)
class PotentialDistribution:
    """Single-site law μ of the i.i.d. potential.

    ``uniform``: uniform on [a1, b1] (a1 == b1 is a point mass).
    ``bernoulli``: v1 with probability p, else v0.
    ``two_interval``: with probability p uniform on [a1, b1], else uniform on [a2, b2].
    """

    kind: DistributionKind
    a1: float = 0.0
    b1: float = 1.0
    a2: float | None = None
    b2: float | None = None
    v0: float | None = None
    v1: float | None = None
    p: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", DistributionKind(self.kind))
        if not 0.0 <= self.p <= 1.0:
            raise DistributionError(f"probability p must lie in [0, 1], got {self.p}")
        if self.kind is DistributionKind.BERNOULLI:
            if self.v0 is None or self.v1 is None:
                raise DistributionError("bernoulli needs both v0 and v1")
            return
        if not self.a1 <= self.b1:
            raise DistributionError(f"need a1 <= b1, got [{self.a1}, {self.b1}]")
        if self.kind is DistributionKind.TWO_INTERVAL:
            if self.a2 is None or self.b2 is None:
                raise DistributionError("two_interval needs a2 and b2")
            if not (self.b1 < self.a2 <= self.b2):
                raise DistributionError(
                    f"need b1 < a2 <= b2, got [{self.a1}, {self.b1}] and [{self.a2}, {self.b2}]"
                )

    @classmethod
    def uniform(cls, a: float, b: float) -> "PotentialDistribution":
        return cls(DistributionKind.UNIFORM, a1=a, b1=b)

    @classmethod
    def bernoulli(cls, v0: float, v1: float, p: float = 0.5) -> "PotentialDistribution":
        return cls(DistributionKind.BERNOULLI, v0=v0, v1=v1, p=p)

    @classmethod
    def two_interval(
        cls, first: tuple[float, float], second: tuple[float, float], p: float = 0.5
    ) -> "PotentialDistribution":
        return cls(
            DistributionKind.TWO_INTERVAL,
            a1=first[0],
            b1=first[1],
            a2=second[0],
            b2=second[1],
            p=p,
        )

    def support(self) -> list[tuple[float, float]]:
        """Support of μ as sorted disjoint closed intervals (points as [v, v])."""
        if self.kind is DistributionKind.UNIFORM:
            return [(self.a1, self.b1)]
        if self.kind is DistributionKind.TWO_INTERVAL:
            first, second = (self.a1, self.b1), (self.a2, self.b2)
            if self.p == 1.0:
                return [first]
            if self.p == 0.0:
                return [second]
            return [first, second]
        points = set()
        if self.p < 1.0:
            points.add(self.v0)
        if self.p > 0.0:
            points.add(self.v1)
        return [(v, v) for v in sorted(points)]

    def contains(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        inside = np.zeros(values.shape, dtype=bool)
        for lo, hi in self.support():
            inside |= (values >= lo) & (values <= hi)
        return inside

    def draw(self, uniforms: np.ndarray) -> np.ndarray:
        """Map an (n, 2) array of U[0,1) variates to n samples of μ."""
        u0, u1 = uniforms[:, 0], uniforms[:, 1]
        if self.kind is DistributionKind.UNIFORM:
            return self.a1 + (self.b1 - self.a1) * u0
        if self.kind is DistributionKind.BERNOULLI:
            return np.where(u0 < self.p, self.v1, self.v0).astype(float)
        first = self.a1 + (self.b1 - self.a1) * u1
        second = self.a2 + (self.b2 - self.a2) * u1
        return np.where(u0 < self.p, first, second)


@dataclass(frozen=True)
class DisorderRealization:
    master_seed: int
    realization_index: int
    values: np.ndarray = field(repr=False)

    @property
    def key(self) -> tuple[int, int]:
        return (self.master_seed, self.realization_index)


@dataclass(frozen=True)
class HamiltonianPair:
    h_plus: np.ndarray = field(repr=False)
    h_minus: np.ndarray = field(repr=False)
    box: BoxSpec | None = None
    realization: DisorderRealization | None = None

    @property
    def n_sites(self) -> int:
        return self.h_plus.shape[0]


@dataclass(frozen=True)
class BandStructure:
    """Sorted disjoint closed bands with exact rational edges."""

    bands: tuple[tuple[Fraction, Fraction], ...]
    gap_condition_met: bool = False

    def __post_init__(self):
        bands = tuple((Fraction(lo), Fraction(hi)) for lo, hi in self.bands)
        if not bands:
            raise ValueError("a band structure needs at least one band")
        for lo, hi in bands:
            if lo > hi:
                raise ValueError(f"inverted band [{lo}, {hi}]")
        for (_, hi), (lo, _) in zip(bands, bands[1:]):
            if not hi < lo:
                raise ValueError("bands must be sorted and pairwise disjoint")
        object.__setattr__(self, "bands", bands)

    def __len__(self) -> int:
        return len(self.bands)

    @property
    def inf(self) -> Fraction:
        return self.bands[0][0]

    @property
    def sup(self) -> Fraction:
        return self.bands[-1][1]

    @property
    def width(self) -> Fraction:
        return self.sup - self.inf

    def as_floats(self) -> list[tuple[float, float]]:
        return [(float(lo), float(hi)) for lo, hi in self.bands]

    def contains(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        inside = np.zeros(values.shape, dtype=bool)
        for lo, hi in self.as_floats():
            inside |= (values >= lo) & (values <= hi)
        return inside


def build_laplacian(box: BoxSpec) -> np.ndarray:
    """Adjacency matrix of the box graph (hopping 1 between nearest neighbours)."""
    L = box.side_length
    if L < 2:
        raise LatticeError(f"side_length must be at least 2 to build a Laplacian, got {L}")
    periodic = box.boundary is Boundary.PERIODIC
    if periodic and L == 2:
        raise PeriodicDoubleEdgeError("periodic boundary with L = 2 connects each pair twice")
    n = box.n_sites
    lap = np.zeros((n, n))
    sites = np.arange(n)
    grid = np.array(np.unravel_index(sites, box.shape))
    for axis in range(box.dimension):
        nxt = grid.copy()
        nxt[axis] += 1
        if periodic:
            nxt[axis] %= L
            keep = np.ones(n, dtype=bool)
        else:
            keep = nxt[axis] < L
        targets = np.ravel_multi_index(tuple(nxt[:, keep]), box.shape)
        lap[sites[keep], targets] = 1.0
        lap[targets, sites[keep]] = 1.0
    return lap


def _generator(master_seed: int, realization_index: int) -> np.random.Generator:
    key = np.array([master_seed, realization_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_potential(
    dist: PotentialDistribution, box: BoxSpec, master_seed: int, realization_index: int
) -> DisorderRealization:
    """Draw q(n) for every site.

    A Philox stream keyed by (master_seed, realization_index) supplies two
    uniforms per site, consumed in site order, so q(n) depends only on the
    key and the site index.
    """
    if not 0 <= master_seed < 2**64:
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    if not 0 <= realization_index < 2**64:
        raise ValueError(f"realization_index must be unsigned, got {realization_index}")
    uniforms = _generator(master_seed, realization_index).random((box.n_sites, 2))
    values = dist.draw(uniforms)
    values.setflags(write=False)
    return DisorderRealization(master_seed, realization_index, values)


def assemble_hamiltonians(
    laplacian: np.ndarray,
    realization: DisorderRealization | np.ndarray,
    box: BoxSpec | None = None,
) -> HamiltonianPair:
    if isinstance(realization, DisorderRealization):
        q, ref = np.asarray(realization.values, dtype=float), realization
    else:
        q, ref = np.asarray(realization, dtype=float), None
    n = laplacian.shape[0]
    if laplacian.shape != (n, n) or q.shape != (n,):
        raise ValueError(
            f"dimension mismatch: Laplacian {laplacian.shape}, potential {q.shape}"
        )
    h_plus = laplacian.copy()
    h_minus = laplacian.copy()
    idx = np.arange(n)
    h_plus[idx, idx] += q
    h_minus[idx, idx] -= q
    return HamiltonianPair(h_plus, h_minus, box, ref)


def _merge_intervals(intervals: list[tuple[Fraction, Fraction]]) -> list[tuple[Fraction, Fraction]]:
    merged: list[list[Fraction]] = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def almost_sure_bands(dist: PotentialDistribution, dimension: int, sign: int = +1) -> BandStructure:
    """Almost-sure spectrum [-2d, 2d] + supp(±μ) as merged bands.

    ``gap_condition_met`` is true when supp(±μ) has at least two pieces and
    the widened pieces [s - 2d, t + 2d] stay pairwise disjoint.
    """
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    pieces = [(Fraction(lo), Fraction(hi)) for lo, hi in dist.support()]
    if sign < 0:
        pieces = sorted((-hi, -lo) for lo, hi in pieces)
    reach = 2 * dimension
    widened = [(lo - reach, hi + reach) for lo, hi in pieces]
    gap = len(widened) >= 2 and all(
        a[1] < b[0] for a, b in itertools.pairwise(widened)
    )
    return BandStructure(tuple(_merge_intervals(widened)), gap_condition_met=gap)
