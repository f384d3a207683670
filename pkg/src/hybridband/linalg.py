"""Dense complex linear algebra substrate.

Matrices are plain ``numpy`` arrays (complex128 for Hermitian operators).
The Jacobi eigensolver in this module is an independent oracle: it shares no
code with the Householder path and is only used for verification.
"""
from __future__ import annotations

import numpy as np
from numba import jit

from . import accounting
from .accounting import DEFAULT_PLAN, ProcedurePlan
from .errors import ConvergenceError, DimensionError, NotHermitianError

HERMITIAN_TOL = 1e-13


def as_matrix(a, dtype=np.complex128) -> np.ndarray:
    a = np.asarray(a, dtype=dtype)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    return a


def frobenius(a) -> float:
    return float(np.linalg.norm(a))


def hermitian_defect(a: np.ndarray) -> float:
    """Largest |a_ij - conj(a_ji)|, diagonal imaginary parts included."""
    return float(np.max(np.abs(a - a.conj().T))) if a.size else 0.0


def hermitize(a, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``(a + a^H)/2`` if ``a`` is Hermitian up to rounding.

    The tolerance is absolute for entries of order one and scales with the
    largest entry otherwise.
    """
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"Hermitian matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    defect = hermitian_defect(a)
    if defect > tol * scale:
        raise NotHermitianError(f"matrix is not Hermitian (defect {defect:.3e})")
    out = 0.5 * (a + a.conj().T)
    # the diagonal of (a + a^H)/2 is exactly real; drop the zero imaginary parts
    # produced by rounding in the average
    idx = np.diag_indices_from(out)
    out[idx] = out[idx].real
    return out


def check_hermitian(a, tol: float = HERMITIAN_TOL) -> np.ndarray:
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"Hermitian matrix must be square, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    defect = hermitian_defect(a)
    if defect > tol * scale:
        raise NotHermitianError(f"matrix is not Hermitian (defect {defect:.3e})")
    return a


def _charge_gemm(kind, plan, m, k, n):
    nbytes = 16.0 * (m * k + k * n + m * n)
    accounting.charge(kind, plan.tag(kind), flops=8.0 * m * k * n, nbytes=nbytes,
                      footprint=nbytes, regions=1)


def matmul(a, b, *, plan: ProcedurePlan = DEFAULT_PLAN, kind: str = "zgemm") -> np.ndarray:
    """Complex matrix product ``a @ b`` (BLAS-backed)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    _charge_gemm(kind, plan, a.shape[0], a.shape[1], b.shape[1])
    return np.matmul(a, b)


def matmul_naive(a, b) -> np.ndarray:
    """Reference triple loop, used as a test oracle only."""
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    m, kk = a.shape
    n = b.shape[1]
    c = np.zeros((m, n), dtype=np.complex128)
    for i in range(m):
        for j in range(n):
            s = 0j
            for k in range(kk):
                s += a[i, k] * b[k, j]
            c[i, j] = s
    return c


def matmul_blocked(a, b, block: int = 64, *, plan: ProcedurePlan = DEFAULT_PLAN,
                   kind: str = "zgemm") -> np.ndarray:
    """Cache-blocked product; same contract as :func:`matmul`."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    if block < 1:
        raise ValueError("block size must be positive")
    m, kk = a.shape
    n = b.shape[1]
    _charge_gemm(kind, plan, m, kk, n)
    c = np.zeros((m, n), dtype=np.result_type(a, b))
    for i0 in range(0, m, block):
        for j0 in range(0, n, block):
            acc = c[i0:i0 + block, j0:j0 + block]
            for k0 in range(0, kk, block):
                acc += a[i0:i0 + block, k0:k0 + block] @ b[k0:k0 + block, j0:j0 + block]
    return c


def triple_product(t, h, *, plan: ProcedurePlan = DEFAULT_PLAN) -> np.ndarray:
    """Hermitian ``t^H h t``, re-symmetrized and validated."""
    t = as_matrix(t)
    h = check_hermitian(h)
    if t.shape[0] != h.shape[0]:
        raise DimensionError(f"transform has {t.shape[0]} rows, matrix has dim {h.shape[0]}")
    ht = matmul(h, t, plan=plan)
    out = matmul(t.conj().T, ht, plan=plan)
    m = out.shape[0]
    accounting.charge("hermitize", plan.tag("hermitize"), flops=2.0 * m * m,
                      nbytes=48.0 * m * m, footprint=16.0 * m * m)
    return hermitize(out)


@jit(nopython=True, cache=True)
def _jacobi_sweeps(a, v, max_sweeps, tol):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += abs(a[p, q]) ** 2
        if off <= tol:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                r = abs(apq)
                if r == 0.0:
                    continue
                ph = apq / r  # e^{i phi}
                app = a[p, p].real
                aqq = a[q, q].real
                theta = (aqq - app) / (2.0 * r)
                t = 1.0 / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                phc = ph.conjugate()
                # G = [[c, s], [-s*conj(ph), c*conj(ph)]] on columns (p, q)
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * phc * akq
                    a[k, q] = s * akp + c * phc * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * ph * aqk
                    a[q, k] = s * apk + c * ph * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                a[p, p] = a[p, p].real
                a[q, q] = a[q, q].real
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * phc * vkq
                    v[k, q] = s * vkp + c * phc * vkq
    return -1


def jacobi_eigen(a, max_sweeps: int = 100):
    """Cyclic complex Jacobi eigensolver (verification oracle).

    Returns ascending eigenvalues and a unitary matrix of eigenvectors.
    """
    a = check_hermitian(a)
    n = a.shape[0]
    if n > 512:
        raise ValueError("jacobi_eigen is an oracle for dim <= 512")
    work = np.array(hermitize(a), dtype=np.complex128, copy=True)
    v = np.eye(n, dtype=np.complex128)
    norm = frobenius(work)
    tol = (np.finfo(float).eps * max(norm, np.finfo(float).tiny)) ** 2
    if n > 1:
        sweeps = _jacobi_sweeps(work, v, max_sweeps, tol)
        if sweeps < 0:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
    w = np.real(np.diag(work)).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]
