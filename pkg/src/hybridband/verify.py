"""Self-check suite run by ``hybridband verify``.

Every check is independent of the code path it verifies: eigenvalues are
compared against the cyclic Jacobi solver, electron counts are re-summed from
density matrices, and determinism compares full pipeline outputs across
worker counts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .householder import eigen_hh, tridiagonalize
from .linalg import frobenius, jacobi_eigen
from .pipeline import band_dft_col, electron_count, solve_k, bloch_transform
from .scenario import generate_scenario
from .scheduling import Group, Scheme, WorkerTopology, overlap_makespan, partition_kpoints, \
    plan_scheme
from .tridiag import TridiagProblem, solve_tridiag, sturm_count


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:24s} {self.detail}"


def _random_hermitian(rng, n):
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def check_spectrum_preservation(rng) -> CheckResult:
    worst = 0.0
    for n in (2, 3, 7, 16, 40):
        a = _random_hermitian(rng, n)
        t = tridiagonalize(a)
        got, _ = solve_tridiag(t.problem)
        ref, _ = jacobi_eigen(a)
        worst = max(worst, float(np.max(np.abs(got - ref))) / max(1.0, float(np.max(np.abs(ref)))))
    return CheckResult("spectrum-preservation", worst <= 1e-10, f"max rel dev {worst:.2e}")


def check_eigensolver_residual(rng) -> CheckResult:
    worst = 0.0
    for n in (1, 2, 5, 16, 48):
        a = _random_hermitian(rng, n)
        w, c = eigen_hh(a, want_vectors=True)
        res = float(np.max(np.linalg.norm(a @ c - c * w, axis=0))) / max(frobenius(a), 1e-300)
        orth = float(np.max(np.abs(c.conj().T @ c - np.eye(n))))
        worst = max(worst, res, orth)
    return CheckResult("eigensolver-residual", worst <= 1e-10, f"max residual {worst:.2e}")


def check_tridiagonal_solver(rng) -> CheckResult:
    n = 12
    p = TridiagProblem(np.zeros(n), np.ones(n - 1))
    w, _ = solve_tridiag(p)
    exact = np.sort(2 * np.cos(np.arange(1, n + 1) * np.pi / (n + 1)))
    dev = float(np.max(np.abs(w - exact)))
    q = TridiagProblem(rng.standard_normal(20), rng.standard_normal(19))
    wq, _ = solve_tridiag(q)
    mids = 0.5 * (wq[:-1] + wq[1:])
    sturm_ok = all(sturm_count(q, x) == i + 1 for i, x in enumerate(mids))
    return CheckResult("tridiagonal-solver", dev <= 1e-12 and sturm_ok,
                       f"chebyshev dev {dev:.2e}, sturm {'ok' if sturm_ok else 'mismatch'}")


def check_generalized_residual(rng) -> CheckResult:
    sc = generate_scenario(24, 2, seed=int(rng.integers(1 << 30)))
    worst = 0.0
    for k in sc.kset.points:
        s = bloch_transform(sc.overlap, k)
        h = bloch_transform(sc.hams[0], k)
        eps, c, m = solve_k(h, s, want_vectors=True)
        res = float(np.max(np.linalg.norm(h @ c - (s @ c) * eps, axis=0))) / frobenius(h)
        orth = float(np.max(np.abs(c.conj().T @ s @ c - np.eye(m))))
        worst = max(worst, res, orth)
    return CheckResult("generalized-residual", worst <= 1e-9, f"max residual {worst:.2e}")


def check_electron_count(rng) -> CheckResult:
    sc = generate_scenario(16, 3, seed=int(rng.integers(1 << 30)))
    res = band_dft_col(sc.hams, sc.overlap, sc.kset, sc.occ)
    n_mu = electron_count(res.solution, sc.occ, res.mu)
    n_rho = res.density.electron_count(sc.kset.weights)
    dev = max(abs(n_mu - sc.occ.n_electrons), abs(n_rho - sc.occ.n_electrons))
    return CheckResult("electron-count", dev <= 1e-8, f"deviation {dev:.2e}")


def _outputs_equal(a, b) -> bool:
    if a.mu != b.mu or a.band_energy != b.band_energy:
        return False
    for s in range(len(a.density.rho)):
        for r in a.density.rho[s]:
            if not (np.array_equal(a.density.rho[s][r], b.density.rho[s][r])
                    and np.array_equal(a.density.energy[s][r], b.density.energy[s][r])):
                return False
    return True


def check_determinism(rng) -> CheckResult:
    sc = generate_scenario(12, 4, seed=int(rng.integers(1 << 30)))
    ref = band_dft_col(sc.hams, sc.overlap, sc.kset, sc.occ)
    ok = True
    for cores in (2, 4):
        topo = WorkerTopology((Group(cores, True),), Scheme.RANK_ONLY)
        for scheme in (Scheme.RANK_ONLY, Scheme.TWO_WAY_RANK_DEVICE):
            plan = plan_scheme(topo.with_scheme(scheme), len(sc.kset), 2)
            ok &= _outputs_equal(ref, band_dft_col(sc.hams, sc.overlap, sc.kset, sc.occ, plan))
    return CheckResult("determinism", bool(ok), "1, 2 and 4 workers agree bitwise" if ok
                       else "outputs differ across worker counts")


def check_scheduling(rng) -> CheckResult:
    ok = partition_kpoints(64, [4, 1, 1, 1]) == [37, 9, 9, 9]
    for _ in range(200):
        w = rng.uniform(0.1, 5.0, size=int(rng.integers(1, 9)))
        c = partition_kpoints(int(rng.integers(0, 200)), w)
        quota = sum(c) * w / w.sum()
        ok &= bool(np.all(np.abs(np.array(c) - quota) < 1))
        t = rng.uniform(0, 10, size=5)
        ok &= overlap_makespan(*t, mode="async") <= overlap_makespan(*t, mode="sync")
    return CheckResult("scheduling", bool(ok), "partition quota and async <= sync")


CHECKS: tuple[Callable, ...] = (
    check_spectrum_preservation,
    check_eigensolver_residual,
    check_tridiagonal_solver,
    check_generalized_residual,
    check_electron_count,
    check_determinism,
    check_scheduling,
)


def run_checks(seed: int = 0) -> list[CheckResult]:
    out = []
    for check in CHECKS:
        rng = np.random.default_rng([seed, len(out)])
        name = check.__name__.removeprefix("check_").replace("_", "-")
        try:
            out.append(check(rng))
        except Exception as exc:  # a crash counts as a failed invariant
            out.append(CheckResult(name, False, f"raised {type(exc).__name__}: {exc}"))
    return out
