"""Real symmetric tridiagonal eigensolver (implicit-shift QL)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import jit

from . import accounting
from .accounting import BackendTag
from .errors import ConvergenceError, DimensionError

SPLIT_EPS = 1e-15


@dataclass(frozen=True)
class TridiagProblem:
    d: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.d, dtype=np.float64)
        e = np.ascontiguousarray(self.e, dtype=np.float64)
        if d.ndim != 1 or d.size < 1:
            raise DimensionError("diagonal must be a non-empty vector")
        if e.shape != (d.size - 1,):
            raise DimensionError(f"off-diagonal must have length {d.size - 1}, got {e.shape}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise ValueError("tridiagonal entries must be finite")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "e", e)

    @property
    def n(self) -> int:
        return self.d.size

    def dense(self) -> np.ndarray:
        return np.diag(self.d) + np.diag(self.e, 1) + np.diag(self.e, -1)


@jit(nopython=True, cache=True)
def _tql(d, e, z, want_vectors, max_iter, eps):
    """In-place implicit QL with Wilkinson-type shift (tql2 layout).

    ``e`` has length n with e[n-1] scratch. Returns (rotations, failed index)
    where failed index is -1 on success.
    """
    n = d.shape[0]
    rotations = 0
    iters = 0
    for l in range(n):
        while True:
            m = l
            while m < n - 1:
                dd = abs(d[m]) + abs(d[m + 1])
                if abs(e[m]) <= eps * dd:
                    break
                m += 1
            if m == l:
                break
            iters += 1
            if iters > max_iter:
                return rotations, l
            g = (d[l + 1] - d[l]) / (2.0 * e[l])
            r = np.hypot(g, 1.0)
            if g >= 0.0:
                g = d[m] - d[l] + e[l] / (g + r)
            else:
                g = d[m] - d[l] + e[l] / (g - r)
            s = 1.0
            c = 1.0
            p = 0.0
            i = m - 1
            underflow = False
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
                rotations += 1
                if want_vectors:
                    # z holds eigenvectors as rows
                    for k in range(z.shape[1]):
                        f = z[i + 1, k]
                        z[i + 1, k] = s * z[i, k] + c * f
                        z[i, k] = c * z[i, k] - s * f
                i -= 1
            if underflow:
                continue
            d[l] -= p
            e[l] = g
            e[m] = 0.0
    return rotations, -1


def solve_tridiag(problem: TridiagProblem, want_vectors: bool = False):
    """Eigenvalues (ascending) and optionally orthogonal eigenvectors.

    Runs single-threaded by design; the shift chain of QL is sequential.
    """
    n = problem.n
    d = problem.d.copy()
    e = np.zeros(n, dtype=np.float64)
    e[:n - 1] = problem.e
    z = np.eye(n) if want_vectors else np.zeros((0, 0))
    rotations, failed = _tql(d, e, z, want_vectors, 30 * n, SPLIT_EPS)
    if failed >= 0:
        raise ConvergenceError(
            f"implicit QL failed to converge for eigenvalue index {failed}", index=int(failed))
    flops = 25.0 * rotations + (6.0 * n * rotations if want_vectors else 0.0)
    nbytes = 24.0 * n + (16.0 * n * rotations if want_vectors else 0.0)
    footprint = 24.0 * n + (8.0 * n * n if want_vectors else 0.0)
    accounting.charge("trid.solve", BackendTag.HOST_SERIAL, flops=flops, nbytes=nbytes,
                      footprint=footprint, regions=0)
    order = np.argsort(d, kind="stable")
    w = d[order]
    if want_vectors:
        return w, np.ascontiguousarray(z[order].T)
    return w, None


def sturm_count(problem: TridiagProblem, x: float) -> int:
    """Number of eigenvalues strictly below ``x`` (Sturm sequence)."""
    d, e = problem.d, problem.e
    scale = max(float(np.max(np.abs(d))), float(np.max(np.abs(e))) if e.size else 0.0, 1.0)
    pivmin = np.finfo(float).tiny * max(1.0, scale * scale)
    count = 0
    q = d[0] - x
    if abs(q) < pivmin:
        q = -pivmin
    if q < 0:
        count += 1
    for i in range(1, d.size):
        q = d[i] - x - e[i - 1] * e[i - 1] / q
        if abs(q) < pivmin:
            q = -pivmin
        if q < 0:
            count += 1
    return count


def gershgorin_bounds(problem: TridiagProblem) -> tuple[float, float]:
    d, e = problem.d, np.abs(problem.e)
    radius = np.zeros_like(d)
    radius[:-1] += e
    radius[1:] += e
    return float(np.min(d - radius)), float(np.max(d + radius))
