"""Geometry of the support Σ = ⋃ R_ij of the correlation measure.

All comparisons are exact: band edges are ``Fraction``s, and so are
corners, anti-diagonal lines and strip cover checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .lattice import BandStructure
from .spectral import Closed, EmpiricalMeasure1D

Point = tuple[Fraction, Fraction]


class NotACornerError(ValueError):
    pass


class BadCornerError(ValueError):
    pass


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def _point(p) -> Point:
    return (_frac(p[0]), _frac(p[1]))


@dataclass(frozen=True)
class Rectangle:
    i: int
    j: int
    x_lo: Fraction
    x_hi: Fraction
    y_lo: Fraction
    y_hi: Fraction

    @property
    def shape(self) -> str:
        flat_x, flat_y = self.x_lo == self.x_hi, self.y_lo == self.y_hi
        if flat_x and flat_y:
            return "point"
        if flat_x or flat_y:
            return "segment"
        return "rectangle"

    @property
    def lower_left(self) -> Point:
        return (self.x_lo, self.y_lo)

    @property
    def top_right(self) -> Point:
        return (self.x_hi, self.y_hi)

    def corners(self) -> set[Point]:
        return {(x, y) for x in (self.x_lo, self.x_hi) for y in (self.y_lo, self.y_hi)}

    def contains(self, p: Point) -> bool:
        return self.x_lo <= p[0] <= self.x_hi and self.y_lo <= p[1] <= self.y_hi

    def line_section(self, s: Fraction) -> tuple[Fraction, Fraction] | None:
        """x-range of the intersection with the line λ₁ + λ₂ = s, or None."""
        lo = max(self.x_lo, s - self.y_hi)
        hi = min(self.x_hi, s - self.y_lo)
        return (lo, hi) if lo <= hi else None

    def as_json(self) -> dict:
        return {
            "index": [self.i, self.j],
            "x": [str(self.x_lo), str(self.x_hi)],
            "y": [str(self.y_lo), str(self.y_hi)],
            "shape": self.shape,
        }


@dataclass(frozen=True)
class RectangleSet:
    rectangles: tuple[Rectangle, ...]
    bands_plus: BandStructure | None = field(default=None, repr=False)
    bands_minus: BandStructure | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.rectangles)

    def corners(self) -> list[Point]:
        found = set()
        for r in self.rectangles:
            found |= r.corners()
        return sorted(found)

    def is_corner(self, p: Point) -> bool:
        return any(p in r.corners() for r in self.rectangles)

    def contains(self, p: Point) -> bool:
        return any(r.contains(p) for r in self.rectangles)

    def corners_on_line(self, s: Fraction) -> list[Point]:
        return [p for p in self.corners() if p[0] + p[1] == s]


@dataclass(frozen=True)
class GoodCornerReport:
    corner: Point
    is_good: bool
    k_set: tuple[Point, ...]
    witness: Rectangle | None = None

    def as_json(self) -> dict:
        return {
            "corner": [str(c) for c in self.corner],
            "is_good": self.is_good,
            "K": [[str(c) for c in p] for p in self.k_set],
            "witness": None if self.witness is None else self.witness.as_json(),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_json())


def build_sigma(bands_plus: BandStructure, bands_minus: BandStructure) -> RectangleSet:
    rects = tuple(
        Rectangle(i, j, ap, bp, am, bm)
        for i, (ap, bp) in enumerate(bands_plus.bands)
        for j, (am, bm) in enumerate(bands_minus.bands)
    )
    return RectangleSet(rects, bands_plus, bands_minus)


def classify_corner(sigma: RectangleSet, corner) -> GoodCornerReport:
    """Decide whether the anti-diagonal through ``corner`` meets Σ only in corners."""
    corner = _point(corner)
    if not sigma.is_corner(corner):
        raise NotACornerError(f"{corner} is not a corner of any rectangle in Σ")
    s = corner[0] + corner[1]
    witness = None
    for rect in sigma.rectangles:
        section = rect.line_section(s)
        if section is None:
            continue
        lo, hi = section
        if lo < hi or not sigma.is_corner((lo, s - lo)):
            witness = rect
            break
    k_set = tuple(sigma.corners_on_line(s))
    return GoodCornerReport(corner, witness is None, k_set, witness)


def theorem23_predicate(bands_plus: BandStructure, bands_minus: BandStructure) -> dict:
    """Evaluate the two-band ordering chain and cross-check its corners.

    With two bands per side, the chain
    a1⁺+a1⁻ < b1⁺+b1⁻ < max(a2⁺+a1⁻, a1⁺+a2⁻) < max(b2⁺+b1⁻, b1⁺+b2⁻) < a2⁺+a2⁻ < b2⁺+b2⁻
    makes the four diagonal corners good; with equal bands the four mixed
    corners are good as well.

    The chain is evaluated exactly as written.  With unequal bands it does
    not force b1⁺+b1⁻ below both mixed sums, so a returned corner can still
    be bad; such corners are listed under ``refuted``.
    """
    if len(bands_plus) != 2 or len(bands_minus) != 2:
        raise ValueError("theorem23_predicate needs exactly two bands per side")
    (a1p, b1p), (a2p, b2p) = bands_plus.bands
    (a1m, b1m), (a2m, b2m) = bands_minus.bands
    chain = [
        a1p + a1m,
        b1p + b1m,
        max(a2p + a1m, a1p + a2m),
        max(b2p + b1m, b1p + b2m),
        a2p + a2m,
        b2p + b2m,
    ]
    ordering = all(u < v for u, v in zip(chain, chain[1:]))
    good: list[Point] = []
    extras: list[Point] = []
    if ordering:
        good = [(a1p, a1m), (b1p, b1m), (a2p, a2m), (b2p, b2m)]
        if bands_plus.bands == bands_minus.bands:
            extras = [(a2p, a1m), (a1p, a2m), (b2p, b1m), (b1p, b2m)]
    sigma = build_sigma(bands_plus, bands_minus)
    reports = [classify_corner(sigma, c) for c in good + extras]
    return {
        "chain": chain,
        "ordering_holds": ordering,
        "good_corners": good,
        "symmetric_extras": extras,
        "reports": reports,
        "refuted": [r.corner for r in reports if not r.is_good],
        "cross_validated": all(r.is_good for r in reports),
    }


@dataclass(frozen=True)
class Square:
    x_lo: Fraction
    y_lo: Fraction
    side: Fraction
    anchor: Point

    @property
    def x_hi(self) -> Fraction:
        return self.x_lo + self.side

    @property
    def y_hi(self) -> Fraction:
        return self.y_lo + self.side

    def contains(self, p: Point) -> bool:
        return self.x_lo <= p[0] <= self.x_hi and self.y_lo <= p[1] <= self.y_hi


@dataclass(frozen=True)
class StripCover:
    corner: Point
    half_width: Fraction
    squares: tuple[Square, ...]
    contained: bool
    counterexample: Point | None = None


def _y_components(squares: Iterable[Square]) -> list[tuple[Fraction, Fraction]]:
    merged: list[list[Fraction]] = []
    for lo, hi in sorted((q.y_lo, q.y_hi) for q in squares):
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(lo, hi) for lo, hi in merged]


def _uncovered(lo: Fraction, hi: Fraction, comps) -> Fraction | None:
    """A y in [lo, hi] outside every component, or None."""
    for c_lo, c_hi in comps:
        if c_lo <= lo and hi <= c_hi:
            return None
    candidates = [lo, hi]
    for (_, h1), (l2, _) in zip(comps, comps[1:]):
        candidates.append((h1 + l2) / 2)
    for c_lo, c_hi in comps:
        candidates += [c_lo - (c_lo - lo) / 2, c_hi + (hi - c_hi) / 2]
    for y in candidates:
        if lo <= y <= hi and not any(c_lo <= y <= c_hi for c_lo, c_hi in comps):
            return y
    # [lo, hi] meets several components and no gap point was found above
    return (lo + hi) / 2


def _component_index(lo: Fraction, hi: Fraction, comps) -> int | None:
    for k, (c_lo, c_hi) in enumerate(comps):
        if c_lo <= lo and hi <= c_hi:
            return k
    return None


def _section(rect: Rectangle, s_lo: Fraction, s_hi: Fraction, x: Fraction):
    """Vertical cross-section of rect ∩ {s_lo <= λ₁+λ₂ <= s_hi} at abscissa x."""
    if not rect.x_lo <= x <= rect.x_hi:
        return None
    lo = max(rect.y_lo, s_lo - x)
    hi = min(rect.y_hi, s_hi - x)
    return (lo, hi) if lo <= hi else None


def _verify_cover(sigma: RectangleSet, s_lo: Fraction, s_hi: Fraction, squares) -> Point | None:
    """Exact check that Σ ∩ {s_lo <= λ₁+λ₂ <= s_hi} ⊂ ⋃ squares.

    Within a vertical slab between consecutive breakpoints the section of
    each clipped rectangle is an interval with linear endpoints and the set
    of squares spanning the slab is fixed, so containment at both slab ends
    in one y-component of the square union implies it for the whole slab.
    Returns an uncovered point, or None.
    """
    for rect in sigma.rectangles:
        xs = {rect.x_lo, rect.x_hi}
        for y in (rect.y_lo, rect.y_hi):
            xs |= {s_lo - y, s_hi - y}
        for q in squares:
            xs |= {q.x_lo, q.x_hi}
        xs = sorted(x for x in xs if rect.x_lo <= x <= rect.x_hi)
        for x in xs:
            sec = _section(rect, s_lo, s_hi, x)
            if sec is None:
                continue
            comps = _y_components(q for q in squares if q.x_lo <= x <= q.x_hi)
            y = _uncovered(sec[0], sec[1], comps)
            if y is not None:
                return (x, y)
        for x0, x1 in zip(xs, xs[1:]):
            mid = (x0 + x1) / 2
            if _section(rect, s_lo, s_hi, mid) is None:
                continue
            comps = _y_components(q for q in squares if q.x_lo <= x0 and x1 <= q.x_hi)
            samples = []
            for x in (x0, mid, x1):
                lo = max(rect.y_lo, s_lo - x)
                hi = min(rect.y_hi, s_hi - x)
                y = _uncovered(lo, hi, comps)
                if y is not None:
                    return (x, y)
                samples.append((x, (lo + hi) / 2, _component_index(lo, hi, comps)))
            for (xa, ca, ka), (xb, cb, kb) in zip(samples, samples[1:]):
                if ka == kb:
                    continue
                # the section slides across the gap next to component ka
                step = 1 if kb > ka else -1
                g = (comps[ka][1] + comps[ka + 1][0]) / 2 if step > 0 else (
                    comps[ka - 1][1] + comps[ka][0]
                ) / 2
                x = xa + (g - ca) / (cb - ca) * (xb - xa)
                return (x, g)
    return None


def strip_cover(sigma: RectangleSet, corner, a) -> StripCover:
    """Squares of side 2a anchored at each K-corner, pointing into Σ.

    A corner that is the lower-left corner of a rectangle gets the square
    [c, c+2a] × [d, d+2a]; a top-right corner gets [c-2a, c] × [d-2a, d].
    Containment is checked for the closed two-sided strip
    {c+d-a <= λ₁+λ₂ <= c+d+a} ∩ Σ.
    """
    a = _frac(a)
    if a <= 0:
        raise ValueError("half-width a must be positive")
    report = classify_corner(sigma, corner)
    if not report.is_good:
        raise BadCornerError(f"corner {report.corner} is not good")
    side = 2 * a
    squares: list[Square] = []
    for kc in report.k_set:
        for rect in sigma.rectangles:
            if kc == rect.lower_left:
                sq = Square(kc[0], kc[1], side, kc)
            elif kc == rect.top_right:
                sq = Square(kc[0] - side, kc[1] - side, side, kc)
            else:
                continue
            if sq not in squares:
                squares.append(sq)
    s = report.corner[0] + report.corner[1]
    bad = _verify_cover(sigma, s - a, s + a, squares)
    return StripCover(report.corner, a, tuple(squares), bad is None, bad)


def theorem22_bound(
    k_set: Sequence[Point],
    dos_plus: EmpiricalMeasure1D,
    dos_minus: EmpiricalMeasure1D,
    a: float,
) -> float:
    """Σ over K-corners of min(n₊((c - 2a, c + 2a)), n₋((d - 2a, d + 2a)))."""
    if not k_set:
        raise ValueError("k_set is empty")
    a = float(a)
    terms = []
    for c, d in k_set:
        c, d = float(c), float(d)
        terms.append(
            min(
                dos_plus.mass(c - 2 * a, c + 2 * a, Closed.NEITHER),
                dos_minus.mass(d - 2 * a, d + 2 * a, Closed.NEITHER),
            )
        )
    return math.fsum(terms)
