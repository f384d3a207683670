"""Hermitian eigensolver in four steps: Householder tridiagonalization,
tridiagonal solve, rearrangement (back-transformation) of eigenvectors and
column normalization.

Each stage ``i`` of the reduction runs six procedures on the working matrix
``B``:

1. copy the column tail ``x = B[i+1:, i]`` into ``u``
2. ``s = ||x||`` and ``u[0] -= alpha`` with ``alpha = -phase(x[0]) * s``
3. store the scalars needed by the back-transformation
4. ``p = beta * B22 @ u`` and the dot product ``u^H p``
5. ``q = p - (beta/2) (u^H p) u``
6. ``B22 -= u q^H + q u^H``

with ``beta = 2 / ||u||^2``. Backend tags only affect work accounting.
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
from numba import jit

from . import accounting
from .accounting import DEFAULT_PLAN, BackendTag, ProcedurePlan
from .errors import DimensionError, ReflectionError
from .linalg import check_hermitian, hermitize
from .tridiag import TridiagProblem, solve_tridiag

TINY_TAIL = 1e-300

_faults: set[str] = set()


@contextlib.contextmanager
def inject_fault(name: str):
    """Test hook. ``"p6_sign"`` flips the sign of the procedure-6 update."""
    _faults.add(name)
    try:
        yield
    finally:
        _faults.discard(name)


@dataclass(frozen=True)
class HouseholderRecord:
    """Reflector ``I - beta u u^H`` of stage ``index`` plus the phase that
    makes the stage's off-diagonal real."""

    index: int
    u: np.ndarray  # length n, zero at positions <= index
    beta: float
    s: float  # norm of the column tail before reflection
    alpha: complex  # new subdiagonal entry B[i+1, i]
    phase: complex  # cumulative phase of basis vector index+1

    @property
    def trivial(self) -> bool:
        return self.beta == 0.0


@dataclass(frozen=True)
class TridiagReal:
    d: np.ndarray
    e: np.ndarray
    records: tuple

    @property
    def problem(self) -> TridiagProblem:
        return TridiagProblem(self.d, self.e)

    @property
    def n(self) -> int:
        return self.d.size

    def dense(self) -> np.ndarray:
        return self.problem.dense()


def tridiagonalize(a, plan: ProcedurePlan = DEFAULT_PLAN) -> TridiagReal:
    """Reduce a Hermitian matrix to real symmetric tridiagonal form."""
    b = np.array(hermitize(check_hermitian(a)), dtype=np.complex128, copy=True)
    n = b.shape[0]
    if n < 1:
        raise DimensionError("matrix must have dim >= 1")
    flip = -1.0 if "p6_sign" in _faults else 1.0
    records = []
    alphas = np.zeros(max(n - 1, 0), dtype=np.complex128)
    work = _StageWork(plan)
    for i in range(n - 1):
        m = n - 1 - i
        # procedure 1
        x = b[i + 1:, i].copy()
        # procedure 2
        s = float(np.sqrt(np.sum(x.real * x.real + x.imag * x.imag)))
        if not np.isfinite(s):
            raise ReflectionError(f"non-finite column norm at stage {i}", stage=i)
        x0 = x[0]
        ph0 = x0 / abs(x0) if x0 != 0 else 1.0 + 0j
        if s < TINY_TAIL or not np.any(x[1:]):
            # already reduced: only the phase of x0 needs chasing
            alphas[i] = x0
            records.append(HouseholderRecord(i, np.zeros(n, np.complex128), 0.0, s, x0, 1.0 + 0j))
            work.add(m, trivial=True)
            continue
        alpha = -ph0 * s
        u = x
        u[0] = x0 - alpha
        unorm2 = float(np.sum(u.real * u.real + u.imag * u.imag))
        beta = 2.0 / unorm2
        if not (np.isfinite(beta) and beta > 0.0):
            raise ReflectionError(f"degenerate reflector at stage {i}", stage=i)
        # procedure 3
        full_u = np.zeros(n, dtype=np.complex128)
        full_u[i + 1:] = u
        records.append(HouseholderRecord(i, full_u, beta, s, alpha, 1.0 + 0j))
        alphas[i] = alpha
        # procedures 4-6
        if not _stage_update(b, i + 1, u, beta, flip):
            raise ReflectionError(f"non-finite update at stage {i}", stage=i)
        b[i + 1, i] = alpha
        b[i, i + 1] = np.conj(alpha)
        b[i + 2:, i] = 0.0
        b[i, i + 2:] = 0.0
        work.add(m, trivial=False)
    work.commit(n)

    d = np.real(np.diag(b)).copy()
    e = np.abs(alphas)
    # phase chasing: phi[i+1] = phi[i] * alpha_i / |alpha_i|
    phase = 1.0 + 0j
    chased = []
    for rec, al in zip(records, alphas):
        if al != 0:
            phase = phase * (al / abs(al))
        chased.append(HouseholderRecord(rec.index, rec.u, rec.beta, rec.s, rec.alpha, phase))
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
        raise ReflectionError("non-finite tridiagonal entries", stage=n - 1)
    return TridiagReal(d, e, tuple(chased))


@jit(nopython=True, cache=True)
def _stage_update(b, lo, u, beta, flip):
    """``p = beta B22 u``, ``q = p - (beta/2)(u^H p) u`` and
    ``B22 -= flip (u q^H + q u^H)`` in place. False if q is not finite."""
    m = u.shape[0]
    p = np.empty(m, dtype=np.complex128)
    for r in range(m):
        acc = 0j
        for c in range(m):
            acc += b[lo + r, lo + c] * u[c]
        p[r] = beta * acc
    up = 0j
    for r in range(m):
        up += np.conj(u[r]) * p[r]
    q = p - (0.5 * beta * up) * u
    for r in range(m):
        if not (np.isfinite(q[r].real) and np.isfinite(q[r].imag)):
            return False
    uc = np.conj(u)
    qc = np.conj(q)
    for r in range(m):
        ur = flip * u[r]
        qr = flip * q[r]
        for c in range(m):
            b[lo + r, lo + c] -= ur * qc[c] + qr * uc[c]
    return True


@jit(nopython=True, cache=True)
def _apply_reflectors(zt, us, betas, los):
    """Apply reflectors in the given order to the rows of ``zt`` (vectors
    stored as rows)."""
    n = zt.shape[1]
    for j in range(us.shape[0]):
        u = us[j]
        beta = betas[j]
        lo = los[j]
        for col in range(zt.shape[0]):
            w = 0j
            for r in range(lo, n):
                w += np.conj(u[r]) * zt[col, r]
            w *= beta
            for r in range(lo, n):
                zt[col, r] -= u[r] * w


class _StageWork:
    """Accumulates per-procedure counts over all stages, charged once."""

    def __init__(self, plan):
        self.plan = plan
        self.m1 = 0.0  # sum of tail lengths
        self.m2 = 0.0  # sum of squared tail lengths
        self.stages = 0
        self.max_m = 0

    def add(self, m, trivial):
        if trivial:
            return
        self.m1 += m
        self.m2 += m * m
        self.stages += 1
        self.max_m = max(self.max_m, m)

    def commit(self, n):
        plan, k, m1, m2 = self.plan, self.stages, self.m1, self.m2
        if k == 0:
            return
        mat = 16.0 * (self.max_m + 1) ** 2
        c = accounting.charge
        lb, lc = _scaled(plan.link("hh.p1", "hh.p2", 16.0), m1, k)
        c("hh.p1", plan.tag("hh.p1"), flops=0.0, nbytes=32.0 * m1, footprint=mat,
          regions=k)
        lb2, lc2 = _scaled(plan.link("hh.p2", "hh.p4_mul", 16.0), k, k)
        c("hh.p2", plan.tag("hh.p2"), flops=4.0 * m1 + 4.0 * k, nbytes=16.0 * m1,
          footprint=mat, regions=k, link_bytes=lb + lb2, link_count=lc + lc2)
        c("hh.p3", plan.tag("hh.p3"), flops=10.0 * k, nbytes=64.0 * k, footprint=64.0,
          regions=0)
        c("hh.p4_mul", plan.tag("hh.p4_mul"), flops=8.0 * m2 + 6.0 * m1,
          nbytes=16.0 * m2 + 48.0 * m1, footprint=mat, regions=2 * k)
        lb, lc = _scaled(plan.link("hh.p4_mul", "hh.p4_add", 16.0), m1, k)
        lb2, lc2 = _scaled(plan.link("hh.p4_add", "hh.p5", 16.0), k, k)
        c("hh.p4_add", plan.tag("hh.p4_add"), flops=2.0 * m1, nbytes=16.0 * m1,
          footprint=16.0 * self.max_m, regions=k, link_bytes=lb + lb2, link_count=lc + lc2)
        c("hh.p5", plan.tag("hh.p5"), flops=8.0 * m1, nbytes=48.0 * m1, footprint=mat,
          regions=k)
        c("hh.p6", plan.tag("hh.p6"), flops=16.0 * m2, nbytes=32.0 * m2, footprint=mat,
          regions=k)


def _scaled(link, volume, count):
    nbytes, transfers = link
    if transfers == 0:
        return 0.0, 0
    return nbytes * volume, count


def back_transform(records, y, plan: ProcedurePlan = DEFAULT_PLAN) -> np.ndarray:
    """Map tridiagonal-basis vectors ``y`` to the original basis: ``Q D y``."""
    y = np.asarray(y)
    if y.ndim != 2:
        raise DimensionError("expected a matrix of column vectors")
    records = list(records)
    if not records:
        return y.astype(np.complex128, copy=True)
    n = records[0].u.size
    if len(records) != n - 1 or y.shape[0] != n:
        raise DimensionError(
            f"{len(records)} records and {y.shape[0]} rows do not describe a dim-{n} transform")
    ncols = y.shape[1]
    phases = np.ones(n, dtype=np.complex128)
    for rec in records:
        phases[rec.index + 1] = rec.phase
    z = phases[:, None] * y.astype(np.complex128)
    flops = 6.0 * n * ncols
    nbytes = 32.0 * n * ncols
    launches = 1
    active = [rec for rec in reversed(records) if not rec.trivial]
    if active:
        us = np.stack([rec.u for rec in active])
        betas = np.array([rec.beta for rec in active])
        los = np.array([rec.index + 1 for rec in active], dtype=np.int64)
        zt = np.ascontiguousarray(z.T)
        _apply_reflectors(zt, us, betas, los)
        z = zt.T.copy()
        m = n - los
        flops += 16.0 * float(np.sum(m)) * ncols
        nbytes += 32.0 * float(np.sum(m)) * ncols
        launches += 2 * len(active)
    accounting.charge("rearrange", plan.tag("rearrange"), flops=flops, nbytes=nbytes,
                      footprint=16.0 * n * ncols + 16.0 * n, regions=launches)
    return z


def normalize_columns(c, plan: ProcedurePlan = DEFAULT_PLAN) -> np.ndarray:
    c = np.asarray(c)
    if c.ndim != 2:
        raise DimensionError("expected a matrix")
    norms = np.sqrt(np.sum(c.real ** 2 + c.imag ** 2, axis=0)) if np.iscomplexobj(c) \
        else np.sqrt(np.sum(c * c, axis=0))
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise ValueError(f"cannot normalize zero column {int(bad[0])}")
    n, ncols = c.shape
    accounting.charge("normalize", plan.tag("normalize"), flops=6.0 * n * ncols,
                      nbytes=32.0 * n * ncols, footprint=16.0 * n * ncols, regions=2)
    return c / norms


def eigen_hh(a, want_vectors: bool = False, plan: ProcedurePlan = DEFAULT_PLAN):
    """Eigenvalues (ascending) and, on request, unitary eigenvectors."""
    with accounting.step("householder"):
        t = tridiagonalize(a, plan)
    n = t.n
    link = plan.link("hh.p6", "trid.solve", 16.0 * n)
    with accounting.step("trid_solve"):
        w, y = solve_tridiag(t.problem, want_vectors)
        if link[1]:
            accounting.charge("trid.solve", BackendTag.HOST_SERIAL, regions=0,
                              link_bytes=link[0], link_count=link[1])
    if not want_vectors:
        return w, None
    with accounting.step("rearrange"):
        lb, lc = plan.link("trid.solve", "rearrange", 8.0 * n * n)
        c = back_transform(t.records, y, plan)
        if lc:
            accounting.charge("rearrange", plan.tag("rearrange"), regions=0,
                              link_bytes=lb, link_count=lc)
    with accounting.step("normalize"):
        c = normalize_columns(c, plan)
    return w, c
