"""Dense real-symmetric eigendecomposition.

Householder reduction to tridiagonal form, then implicit-shift QL sweeps
on the tridiagonal matrix with the plane rotations accumulated into the
reduction's orthogonal factor.  The kernels are compiled with numba.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

MAX_SWEEPS = 50
SYMMETRY_TOL = 1e-12


class NotSymmetricError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    def __init__(self, index: int, sweeps: int):
        super().__init__(f"eigenvalue {index} did not converge within {sweeps} sweeps")
        self.index = index
        self.sweeps = sweeps


@dataclass(frozen=True)
class EigenDecomposition:
    """Ascending eigenvalues; column k of ``eigenvectors`` belongs to eigenvalue k."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def residual(self, a: np.ndarray) -> float:
        """max_k ||A v_k - λ_k v_k||₂."""
        q = self._vectors()
        return float(np.linalg.norm(a @ q - q * self.eigenvalues, axis=0).max())

    def reconstruct(self) -> np.ndarray:
        q = self._vectors()
        return (q * self.eigenvalues) @ q.T

    def orthogonality_error(self) -> float:
        q = self._vectors()
        return float(np.abs(q.T @ q - np.eye(self.size)).max())

    def _vectors(self) -> np.ndarray:
        if self.eigenvectors is None:
            raise ValueError("decomposition was computed without eigenvectors")
        return self.eigenvectors


@njit(cache=True)
def _householder(a, want_vectors):
    """Reduce symmetric ``a`` (overwritten) to tridiagonal form.

    Returns (diag, offdiag, qt) with A = Q T Qᵀ and qt = Qᵀ stored row-wise.
    Columns already in tridiagonal shape are skipped, so a tridiagonal
    input costs O(n²).
    """
    n = a.shape[0]
    qt = np.eye(n) if want_vectors else np.empty((0, 0))
    for k in range(n - 2):
        tail = 0.0
        for i in range(k + 2, n):
            tail += a[i, k] * a[i, k]
        if tail == 0.0:
            continue
        x0 = a[k + 1, k]
        norm = np.sqrt(tail + x0 * x0)
        alpha = -norm if x0 >= 0.0 else norm
        m = n - k - 1
        v = np.empty(m)
        v[0] = x0 - alpha
        for i in range(1, m):
            v[i] = a[k + 1 + i, k]
        vnorm = np.sqrt(v[0] * v[0] + tail)
        for i in range(m):
            v[i] /= vnorm
        # p = A_sub v, w = p - (vᵀp) v, A_sub <- A_sub - 2 v wᵀ - 2 w vᵀ
        p = np.zeros(m)
        for i in range(m):
            s = 0.0
            for j in range(m):
                s += a[k + 1 + i, k + 1 + j] * v[j]
            p[i] = s
        kk = 0.0
        for i in range(m):
            kk += v[i] * p[i]
        for i in range(m):
            p[i] -= kk * v[i]
        for i in range(m):
            for j in range(m):
                a[k + 1 + i, k + 1 + j] -= 2.0 * (v[i] * p[j] + p[i] * v[j])
        a[k + 1, k] = alpha
        a[k, k + 1] = alpha
        for i in range(k + 2, n):
            a[i, k] = 0.0
            a[k, i] = 0.0
        if want_vectors:
            # Qᵀ <- H Qᵀ acting on rows k+1..n-1
            for c in range(n):
                s = 0.0
                for i in range(m):
                    s += v[i] * qt[k + 1 + i, c]
                s *= 2.0
                if s != 0.0:
                    for i in range(m):
                        qt[k + 1 + i, c] -= s * v[i]
    d = np.empty(n)
    e = np.zeros(n)
    for i in range(n):
        d[i] = a[i, i]
    for i in range(n - 1):
        e[i] = a[i + 1, i]
    return d, e, qt


@njit(cache=True)
def _tridiagonal_ql(d, e, zt, want_vectors, max_sweeps):
    """Implicit-shift QL on (d, e); e[i] couples i and i+1, e[n-1] unused.

    Rotations are applied to rows of ``zt``.  Returns -1 on success or the
    index of the eigenvalue that failed to converge.
    """
    n = d.shape[0]
    eps = np.finfo(np.float64).eps
    for l in range(n):
        sweeps = 0
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            sweeps += 1
            if sweeps > max_sweeps:
                return l
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            g = d[m] - d[l] + e[l] / (g + (r if g >= 0.0 else -r))
            s = 1.0
            c = 1.0
            p = 0.0
            underflow = False
            i = m - 1
            while i >= l:
                f = s * e[i]
                b = c * e[i]
                r = np.hypot(f, g)
                e[i + 1] = r
                if r == 0.0:
                    d[i + 1] -= p
                    e[m] = 0.0
                    underflow = True
                    break
                s = f / r
                c = g / r
                g = d[i + 1] - p
                r = (d[i] - g) * s + 2.0 * c * b
                p = s * r
                d[i + 1] = g + p
                g = c * r - b
                if want_vectors:
                    for k in range(zt.shape[1]):
                        f = zt[i + 1, k]
                        zt[i + 1, k] = s * zt[i, k] + c * f
                        zt[i, k] = c * zt[i, k] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return -1


def check_symmetric(a: np.ndarray, tol: float = SYMMETRY_TOL) -> None:
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] == 0:
        raise NotSymmetricError("matrix must have size at least 1")
    scale = max(1.0, float(np.abs(a).max()))
    asym = float(np.abs(a - a.T).max())
    if asym > tol * scale:
        raise NotSymmetricError(f"matrix is not symmetric (max |A - Aᵀ| = {asym:.3e})")


def eig_symmetric(
    a: np.ndarray,
    *,
    compute_vectors: bool = True,
    max_sweeps: int = MAX_SWEEPS,
) -> EigenDecomposition:
    """Full eigendecomposition of a dense real symmetric matrix."""
    a = np.asarray(a, dtype=np.float64)
    check_symmetric(a)
    work = np.array((a + a.T) * 0.5, dtype=np.float64, order="C")
    d, e, qt = _householder(work, compute_vectors)
    code = _tridiagonal_ql(d, e, qt, compute_vectors, max_sweeps)
    if code >= 0:
        raise ConvergenceError(int(code), max_sweeps)
    order = np.argsort(d, kind="stable")
    values = d[order]
    if not compute_vectors:
        return EigenDecomposition(values)
    vectors = np.ascontiguousarray(qt[order].T)
    return EigenDecomposition(values, vectors)


def eigvals_symmetric(a: np.ndarray) -> np.ndarray:
    return eig_symmetric(a, compute_vectors=False).eigenvalues


def overlap_matrix(dec_plus: EigenDecomposition, dec_minus: EigenDecomposition) -> np.ndarray:
    """w[i, j] = ⟨ψ_i, φ_j⟩² with ψ_i the i-th eigenvector of H₊ and φ_j of H₋.

    Rows and columns each sum to 1 since both eigenbases are complete.
    """
    qp, qm = dec_plus._vectors(), dec_minus._vectors()
    if qp.shape != qm.shape:
        raise ValueError(f"dimension mismatch: {qp.shape} vs {qm.shape}")
    return np.square(qp.T @ qm)
