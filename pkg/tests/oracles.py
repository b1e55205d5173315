"""Independent reference implementations used only by the tests.

* Eigenvalues of small symmetric matrices from the exact characteristic
  polynomial (Faddeev-LeVerrier over Fractions), a square-free
  decomposition, and Sturm-sequence bisection.
* Good-corner classification by sampling the anti-diagonal at every
  candidate abscissa with exact rational comparisons.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np

Poly = list  # coefficients, lowest degree first


def _trim(p: Poly) -> Poly:
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p


def _evaluate(p: Poly, x: Fraction) -> Fraction:
    acc = Fraction(0)
    for c in reversed(p):
        acc = acc * x + c
    return acc


def _derivative(p: Poly) -> Poly:
    return _trim([k * p[k] for k in range(1, len(p))] or [Fraction(0)])


def _sub(p: Poly, q: Poly) -> Poly:
    n = max(len(p), len(q))
    p = p + [Fraction(0)] * (n - len(p))
    q = q + [Fraction(0)] * (n - len(q))
    return _trim([a - b for a, b in zip(p, q)])


def _divmod(p: Poly, q: Poly) -> tuple[Poly, Poly]:
    p, q = _trim(p), _trim(q)
    if len(q) == 1 and q[0] == 0:
        raise ZeroDivisionError
    quot = [Fraction(0)] * max(1, len(p) - len(q) + 1)
    rem = list(p)
    while len(rem) >= len(q) and not (len(rem) == 1 and rem[0] == 0):
        shift = len(rem) - len(q)
        coef = rem[-1] / q[-1]
        quot[shift] = coef
        for k, c in enumerate(q):
            rem[k + shift] -= coef * c
        rem = _trim(rem[:-1] if len(rem) > 1 else rem)
        if len(rem) < len(q):
            break
    return _trim(quot), _trim(rem)


def _is_zero(p: Poly) -> bool:
    return len(p) == 1 and p[0] == 0


def _gcd(p: Poly, q: Poly) -> Poly:
    while not _is_zero(q):
        p, q = q, _divmod(p, q)[1]
    return [c / p[-1] for c in p]


def charpoly(matrix) -> Poly:
    """det(x I - A) for a matrix of exactly representable entries."""
    a = [[Fraction(float(v)) for v in row] for row in np.asarray(matrix, dtype=float)]
    n = len(a)
    coeffs = [Fraction(0)] * (n + 1)
    coeffs[n] = Fraction(1)
    m = [[Fraction(0)] * n for _ in range(n)]
    for k in range(1, n + 1):
        # M_k = A M_{k-1} + c_{n-k+1} I ;  c_{n-k} = -tr(A M_k) / k
        prod = [[sum(a[i][t] * m[t][j] for t in range(n)) for j in range(n)] for i in range(n)]
        for i in range(n):
            prod[i][i] += coeffs[n - k + 1]
        m = prod
        am = [[sum(a[i][t] * m[t][j] for t in range(n)) for j in range(n)] for i in range(n)]
        coeffs[n - k] = -sum(am[i][i] for i in range(n)) / k
    return coeffs


def squarefree_factors(p: Poly) -> list[tuple[Poly, int]]:
    """Yun's algorithm: p = Π f_k^k with f_k square-free and coprime."""
    out = []
    dp = _derivative(p)
    a = _gcd(p, dp)
    b = _divmod(p, a)[0]
    c = _divmod(dp, a)[0]
    d = _sub(c, _derivative(b))
    k = 1
    while len(b) > 1:
        f = _gcd(b, d)
        if len(f) > 1:
            out.append((f, k))
        b = _divmod(b, f)[0]
        c = _divmod(d, f)[0]
        d = _sub(c, _derivative(b))
        k += 1
    return out


def _sturm_chain(p: Poly) -> list[Poly]:
    chain = [p, _derivative(p)]
    while not _is_zero(chain[-1]) and len(chain[-1]) > 1:
        rem = _divmod(chain[-2], chain[-1])[1]
        if _is_zero(rem):
            break
        chain.append([-c for c in rem])
    return chain


def _sign_changes(chain: list[Poly], x: Fraction) -> int:
    signs = [v for v in (_evaluate(q, x) for q in chain) if v != 0]
    return sum(1 for u, v in zip(signs, signs[1:]) if (u > 0) != (v > 0))


def sturm_eigenvalues(matrix, tol: float = 1e-13) -> np.ndarray:
    """All eigenvalues, with multiplicity, by bisection on root counts."""
    p = charpoly(matrix)
    n = len(p) - 1
    bound = 1 + max(abs(c) for c in p[:-1]) if n else Fraction(1)
    factors = [(_sturm_chain(f), k) for f, k in squarefree_factors(p)]

    def count_le(x: Fraction) -> int:
        # roots of each square-free factor in (-bound, x]
        return sum(k * (_sign_changes(ch, -bound) - _sign_changes(ch, x)) for ch, k in factors)

    roots = []
    for target in range(1, n + 1):
        lo, hi = -bound, bound
        while hi - lo > tol:
            mid = (lo + hi) / 2
            mid = Fraction(float(mid))  # keep denominators small
            if mid <= lo or mid >= hi:
                break
            if count_le(mid) >= target:
                hi = mid
            else:
                lo = mid
        roots.append(float(hi))
    return np.array(roots)


# -- corners -------------------------------------------------------------------


def _rects(bands_plus, bands_minus):
    return [
        (Fraction(xl), Fraction(xh), Fraction(yl), Fraction(yh))
        for xl, xh in bands_plus
        for yl, yh in bands_minus
    ]


def brute_force_good(bands_plus, bands_minus, corner) -> bool:
    """Is line ∩ Σ finite and made only of rectangle corners?"""
    rects = _rects(bands_plus, bands_minus)
    s = Fraction(corner[0]) + Fraction(corner[1])
    corners = {(x, y) for xl, xh, yl, yh in rects for x in (xl, xh) for y in (yl, yh)}
    candidates = sorted({v for xl, xh, yl, yh in rects for v in (xl, xh, s - yl, s - yh)})

    def in_sigma(x):
        y = s - x
        return any(xl <= x <= xh and yl <= y <= yh for xl, xh, yl, yh in rects)

    # a positive-length piece of the line inside Σ contains a midpoint
    for u, v in zip(candidates, candidates[1:]):
        if in_sigma((u + v) / 2):
            return False
    hits = [x for x in candidates if in_sigma(x)]
    return all((x, s - x) in corners for x in hits)


def brute_force_k_set(bands_plus, bands_minus, corner) -> set:
    rects = _rects(bands_plus, bands_minus)
    s = Fraction(corner[0]) + Fraction(corner[1])
    corners = {(x, y) for xl, xh, yl, yh in rects for x in (xl, xh) for y in (yl, yh)}
    return {c for c in corners if c[0] + c[1] == s}
