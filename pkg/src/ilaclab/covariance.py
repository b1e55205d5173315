"""Covariant operator families on a finite torus (Z/NZ)^d.

The probability space is one shift orbit {T_n ω} of a base potential with
the uniform measure, so every expectation below is a finite average and
the trace identities can be checked to rounding error.  Shifts act by
(U_n f)(y) = f(y - n) and (T_n ω)(y) = ω(y + n), which makes
multiplication by ω covariant: M_{T_n ω} = U_n* M_ω U_n.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .eigensolver import eig_symmetric
from .lattice import Boundary, BoxSpec, build_laplacian

EQUIVARIANCE_TOL = 1e-12
IDENTITY_TOL = 1e-10
POSITIVITY_TOL = 1e-12
MAX_TORUS_SITES = 4096


class NotCovariantError(ValueError):
    pass


@dataclass(frozen=True)
class TorusSpace:
    dimension: int
    size: int

    def __post_init__(self):
        if self.size < 3:
            raise ValueError("torus side must be at least 3")
        if self.n_sites > MAX_TORUS_SITES:
            raise ValueError(f"torus has {self.n_sites} sites, above {MAX_TORUS_SITES}")

    @property
    def n_sites(self) -> int:
        return self.size**self.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.size,) * self.dimension

    def group(self) -> list[tuple[int, ...]]:
        """All elements n of (Z/NZ)^d in row-major order."""
        return [self.coords(k) for k in range(self.n_sites)]

    def coords(self, k: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(k, self.shape))

    @functools.cached_property
    def _grid(self) -> np.ndarray:
        return np.array(np.unravel_index(np.arange(self.n_sites), self.shape))

    def translate(self, n: Sequence[int]) -> np.ndarray:
        """perm[x] = index of x + n."""
        moved = (self._grid + np.asarray(n, dtype=int)[:, None]) % self.size
        return np.ravel_multi_index(tuple(moved), self.shape)

    def shift(self, n: Sequence[int]) -> np.ndarray:
        """Permutation matrix of U_n: U_n e_z = e_{z+n}."""
        perm = self.translate(n)
        u = np.zeros((self.n_sites, self.n_sites))
        u[perm, np.arange(self.n_sites)] = 1.0
        return u

    def projector(self) -> np.ndarray:
        p = np.zeros((self.n_sites, self.n_sites))
        p[0, 0] = 1.0
        return p

    def shift_potential(self, omega: np.ndarray, n: Sequence[int]) -> np.ndarray:
        """(T_n ω)(y) = ω(y + n)."""
        return np.asarray(omega)[self.translate(n)]

    def partition_sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Σ_n U_n* P U_n and Σ_n U_n P U_n*."""
        p = self.projector()
        first = np.zeros_like(p)
        second = np.zeros_like(p)
        for n in self.group():
            u = self.shift(n)
            first += u.T @ p @ u
            second += u @ p @ u.T
        return first, second

    @functools.cached_property
    def laplacian(self) -> np.ndarray:
        return build_laplacian(BoxSpec(self.dimension, self.size, Boundary.PERIODIC, MAX_TORUS_SITES))

    def hamiltonian(self, omega: np.ndarray, sign: int) -> np.ndarray:
        return self.laplacian + sign * np.diag(np.asarray(omega, dtype=float))


# -- recipes ------------------------------------------------------------------


class Recipe:
    """Rule producing an operator A_ω from a potential ω on a torus."""

    def build(self, torus: TorusSpace, omega: np.ndarray, cache: dict) -> np.ndarray:
        raise NotImplementedError

    def realize(self, torus: TorusSpace, omega: np.ndarray) -> np.ndarray:
        return self.build(torus, np.asarray(omega, dtype=float), {})


def _spectral(torus, omega, sign, cache):
    key = ("eig", sign)
    if key not in cache:
        cache[key] = eig_symmetric(torus.hamiltonian(omega, sign))
    return cache[key]


@dataclass(frozen=True)
class Identity(Recipe):
    def build(self, torus, omega, cache):
        return np.eye(torus.n_sites)


@dataclass(frozen=True)
class Multiplication(Recipe):
    """Multiplication by f(ω(x)); f defaults to the identity."""

    func: Callable[[np.ndarray], np.ndarray] | None = None

    def build(self, torus, omega, cache):
        values = omega if self.func is None else self.func(omega)
        return np.diag(np.asarray(values, dtype=float))


@dataclass(frozen=True)
class FunctionOfH(Recipe):
    """φ(H±_ω) with H±_ω = Δ ± ω on the torus."""

    func: Callable[[np.ndarray], np.ndarray]
    sign: int = 1

    def build(self, torus, omega, cache):
        dec = _spectral(torus, omega, self.sign, cache)
        q = dec.eigenvectors
        return (q * self.func(dec.eigenvalues)) @ q.T


@dataclass(frozen=True)
class SpectralProjection(Recipe):
    """E_{H±_ω}((lo, hi])."""

    lo: float
    hi: float
    sign: int = 1

    def build(self, torus, omega, cache):
        dec = _spectral(torus, omega, self.sign, cache)
        keep = (dec.eigenvalues > self.lo) & (dec.eigenvalues <= self.hi)
        q = dec.eigenvectors[:, keep]
        return q @ q.T


@dataclass(frozen=True)
class Kernel(Recipe):
    """Matrix elements M[x, y] = k(ω(x), ω(y), y - x)."""

    func: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]

    def build(self, torus, omega, cache):
        grid = torus._grid
        offset = (grid[:, None, :] - grid[:, :, None]) % torus.size
        offset_index = np.ravel_multi_index(tuple(offset), torus.shape)
        return np.asarray(self.func(omega[:, None], omega[None, :], offset_index), dtype=float)


@dataclass(frozen=True)
class Product(Recipe):
    factors: tuple[Recipe, ...]

    def build(self, torus, omega, cache):
        out = np.eye(torus.n_sites)
        for f in self.factors:
            out = out @ f.build(torus, omega, cache)
        return out


@dataclass(frozen=True)
class Transpose(Recipe):
    inner: Recipe

    def build(self, torus, omega, cache):
        return self.inner.build(torus, omega, cache).T


@dataclass(frozen=True)
class Fixed(Recipe):
    """An ω-independent operator; covariant only if it commutes with all shifts."""

    matrix: np.ndarray = field(repr=False)

    def build(self, torus, omega, cache):
        return np.asarray(self.matrix, dtype=float)


# -- checks -------------------------------------------------------------------


def equivariance_error(
    recipe: Recipe, torus: TorusSpace, omega: np.ndarray, shifts: Sequence[Sequence[int]]
) -> float:
    """max over n of ||A_{T_n ω} - U_n* A_ω U_n||_max."""
    base = recipe.realize(torus, omega)
    worst = 0.0
    for n in shifts:
        perm = torus.translate(n)
        moved = recipe.realize(torus, torus.shift_potential(omega, n))
        worst = max(worst, float(np.abs(moved - base[np.ix_(perm, perm)]).max()))
    return worst


def check_covariant(
    recipe: Recipe,
    torus: TorusSpace,
    omega: np.ndarray,
    rng: np.random.Generator | None = None,
    samples: int = 3,
    tol: float = EQUIVARIANCE_TOL,
) -> float:
    rng = rng or np.random.default_rng(0)
    shifts = [tuple(int(v) for v in rng.integers(0, torus.size, torus.dimension)) for _ in range(samples)]
    shifts.append((1,) + (0,) * (torus.dimension - 1))
    err = equivariance_error(recipe, torus, omega, shifts)
    scale = max(1.0, float(np.abs(recipe.realize(torus, omega)).max()))
    if err > tol * scale:
        raise NotCovariantError(f"{recipe!r} fails shift equivariance (error {err:.3e})")
    return err


def orbit_expectation(
    factors: Sequence[Recipe], torus: TorusSpace, omega: np.ndarray, check: bool = True
) -> float:
    """(1/N^d) Σ_n Tr(P A¹_{T_n ω} ⋯ A^k_{T_n ω} P)."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (torus.n_sites,):
        raise ValueError(f"potential has shape {omega.shape}, torus has {torus.n_sites} sites")
    if check:
        for f in factors:
            check_covariant(f, torus, omega)
    terms = []
    for n in torus.group():
        shifted = torus.shift_potential(omega, n)
        cache: dict = {}
        row = np.zeros(torus.n_sites)
        row[0] = 1.0
        for f in factors:
            row = row @ f.build(torus, shifted, cache)
        terms.append(row[0])
    return math.fsum(terms) / torus.n_sites


def orbit_trace(factors: Sequence[Recipe], torus: TorusSpace, omega: np.ndarray) -> float:
    """(1/N^d) Tr(A¹_ω ⋯ A^k_ω); equals the orbit expectation on the torus."""
    return float(np.trace(Product(tuple(factors)).realize(torus, omega))) / torus.n_sites


@dataclass(frozen=True)
class IdentityCheck:
    identity: str
    lhs: float
    rhs: float
    diff: float
    passed: bool
    extra: dict = field(default_factory=dict)

    @property
    def max_abs_diff(self) -> float:
        return self.diff

    def as_json(self) -> dict:
        out = {"identity": self.identity, "lhs": self.lhs, "rhs": self.rhs,
               "max_abs_diff": self.diff, "pass": self.passed}
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_json())


def prop1_identity_check(a: Recipe, b: Recipe, torus: TorusSpace, omega: np.ndarray) -> IdentityCheck:
    """E Tr(P A B P) = E Tr(P B A P) on the orbit of ω."""
    lhs = orbit_expectation([a, b], torus, omega)
    rhs = orbit_expectation([b, a], torus, omega, check=False)
    trace = orbit_trace([a, b], torus, omega)
    diff = abs(lhs - rhs)
    return IdentityCheck(
        "E Tr(PABP) = E Tr(PBAP)",
        lhs,
        rhs,
        diff,
        diff <= IDENTITY_TOL,
        {"orbit_trace": trace, "trace_diff": abs(lhs - trace)},
    )


def _min_eigenvalue(m: np.ndarray) -> float:
    return float(eig_symmetric((m + m.T) / 2, compute_vectors=False).eigenvalues[0])


def cor2_checks(
    a: Recipe, b: Recipe, c: Recipe, torus: TorusSpace, omega: np.ndarray, positivity: bool = True
) -> dict:
    """Cyclic identity E Tr(P ABC P) = E Tr(P CAB P) and E Tr(P AB P) >= 0 for A, B >= 0."""
    lhs = orbit_expectation([a, b, c], torus, omega)
    rhs = orbit_expectation([c, a, b], torus, omega, check=False)
    out = {
        "cyclic": IdentityCheck("E Tr(PABCP) = E Tr(PCABP)", lhs, rhs, abs(lhs - rhs),
                                abs(lhs - rhs) <= IDENTITY_TOL),
        "cyclic_diff": abs(lhs - rhs),
    }
    if positivity:
        for name, r in (("A", a), ("B", b)):
            lowest = _min_eigenvalue(r.realize(torus, omega))
            scale = max(1.0, float(np.abs(r.realize(torus, omega)).max()))
            if lowest < -1e-10 * scale:
                raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {lowest:.3e})")
        value = orbit_expectation([a, b], torus, omega, check=False)
        out["positivity_value"] = value
        out["positivity"] = IdentityCheck("E Tr(PABP) >= 0", value, 0.0, min(value, 0.0),
                                          value >= -POSITIVITY_TOL)
    return out


# -- random families ----------------------------------------------------------


@dataclass(frozen=True)
class Poly:
    coeffs: tuple[float, ...]

    def __call__(self, x):
        return np.polyval(self.coeffs, x)


@dataclass(frozen=True)
class Bump:
    center: float
    width: float

    def __call__(self, x):
        return np.exp(-((x - self.center) / self.width) ** 2)


@dataclass(frozen=True)
class RandomKernel:
    """k(u, v, off) = table[off] * (1 + s u v) + t (u + v) [off == 0]."""

    table: tuple[float, ...]
    s: float
    t: float

    def __call__(self, u, v, off):
        table = np.asarray(self.table)
        return table[off] * (1.0 + self.s * u * v) + self.t * (u + v) * (off == 0)


def random_recipe(rng: np.random.Generator, torus: TorusSpace, depth: int = 0) -> Recipe:
    """A random covariant family, including spectral projections of H±."""
    choice = int(rng.integers(0, 6 if depth == 0 else 5))
    sign = int(rng.choice([-1, 1]))
    if choice == 0:
        return Multiplication(Poly(tuple(rng.normal(size=3))))
    if choice == 1:
        return FunctionOfH(Bump(float(rng.uniform(-3, 3)), float(rng.uniform(0.5, 2.0))), sign)
    if choice == 2:
        lo = float(rng.uniform(-4, 2))
        return SpectralProjection(lo, lo + float(rng.uniform(0.5, 3.0)), sign)
    if choice == 3:
        return FunctionOfH(Poly(tuple(rng.normal(size=3) * 0.3)), sign)
    if choice == 4:
        table = np.zeros(torus.n_sites)
        picks = rng.integers(0, torus.n_sites, 4)
        table[picks] = rng.normal(size=4)
        return Kernel(RandomKernel(tuple(table), float(rng.normal()), float(rng.normal())))
    return Product((random_recipe(rng, torus, 1), random_recipe(rng, torus, 1)))


def random_positive_recipe(rng: np.random.Generator, torus: TorusSpace) -> Recipe:
    """M* M for a random covariant M, or a spectral projection."""
    if rng.random() < 0.5:
        lo = float(rng.uniform(-4, 2))
        return SpectralProjection(lo, lo + float(rng.uniform(0.5, 3.0)), int(rng.choice([-1, 1])))
    m = random_recipe(rng, torus, 1)
    return Product((Transpose(m), m))
