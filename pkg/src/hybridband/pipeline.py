"""Band diagonalization over spins and k-points.

``band_dft_col`` runs six parts in two passes over the assigned k-points:

    pass 1: Bloch transform (1), overlap diagonalization (2), projection (3),
            eigenvalues of the projected Hamiltonian (4)
    part 5: chemical potential and band energy (coordinator)
    pass 2: parts 1-4 again, now with eigenvectors
    part 6: charge and energy density matrices, folded to real space

Parts 1-4 are recomputed in the second pass instead of caching eigenvectors.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import accounting, ranks
from .accounting import DEFAULT_PLAN, BackendTag, ProcedurePlan, WorkRecorder
from .errors import DimensionError, InfeasibleError, NotHermitianError
from .householder import eigen_hh
from .linalg import check_hermitian, hermitize, matmul, triple_product
from .scheduling import (CostModel, ExecutionPlan, TaskWork, Workload, WorkerTopology,
                         plan_scheme, serial_topology)

DEFAULT_TAU = 1e-12
DEFAULT_KT = 0.025
BRACKET_KT = 30.0


class SpinMode(str, enum.Enum):
    COLLINEAR = "collinear-two-channel"
    UNPOLARIZED = "unpolarized-degeneracy-2"

    @property
    def channels(self) -> int:
        return 2 if self is SpinMode.COLLINEAR else 1

    @property
    def degeneracy(self) -> int:
        return 1 if self is SpinMode.COLLINEAR else 2


@dataclass
class RealSpaceOperator:
    """Blocks ``M_R`` of a lattice-periodic operator keyed by integer offset R."""

    dim: int
    blocks: dict

    def __post_init__(self):
        blocks = {}
        for r, m in self.blocks.items():
            key = tuple(int(x) for x in r)
            if len(key) != 3:
                raise DimensionError(f"offset {r} is not a 3-vector")
            m = np.asarray(m, dtype=np.complex128)
            if m.shape != (self.dim, self.dim):
                raise DimensionError(f"block {key} has shape {m.shape}, expected {self.dim}")
            blocks[key] = m
        self.blocks = dict(sorted(blocks.items()))
        self.validate()

    def validate(self, tol: float = 1e-13) -> None:
        if (0, 0, 0) not in self.blocks:
            raise ValueError("operator lacks the R=0 block")
        for r, m in self.blocks.items():
            neg = (-r[0], -r[1], -r[2])
            if neg not in self.blocks:
                raise ValueError(f"offset {r} has no partner {neg}")
            partner = self.blocks[neg]
            scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
            if m.size and np.max(np.abs(partner - m.conj().T)) > tol * scale:
                raise NotHermitianError(f"block {neg} is not the adjoint of block {r}")

    @property
    def offsets(self) -> list:
        return list(self.blocks)


@dataclass
class KPointSet:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.points.shape[1] != 3 or self.points.shape[0] != self.weights.size:
            raise DimensionError("need one fractional 3-vector per weight")
        if np.any(self.weights <= 0):
            raise ValueError("k-point weights must be positive")
        if abs(math.fsum(self.weights) - 1.0) > 1e-12:
            raise ValueError(f"k-point weights sum to {math.fsum(self.weights)}, not 1")

    @classmethod
    def uniform(cls, points) -> "KPointSet":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(points, np.full(points.shape[0], 1.0 / points.shape[0]))

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class OccupationParams:
    kT: float = DEFAULT_KT
    n_electrons: float = 0.0
    spin_mode: SpinMode = SpinMode.COLLINEAR

    def __post_init__(self):
        object.__setattr__(self, "spin_mode", SpinMode(self.spin_mode))
        if not self.kT > 0:
            raise ValueError("kT must be positive")
        if self.n_electrons < 0:
            raise InfeasibleError("electron count must be nonnegative")


@dataclass
class BandSolution:
    """Per (spin, k) eigenvalues, optional eigenvectors and kept-column count."""

    weights: np.ndarray
    spins: int
    eigenvalues: dict = field(default_factory=dict)
    vectors: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)

    def add(self, spin, k, eps, c=None):
        self.eigenvalues[(spin, k)] = np.asarray(eps, dtype=np.float64)
        self.counts[(spin, k)] = int(len(eps))
        if c is not None:
            self.vectors[(spin, k)] = c


@dataclass
class DensityMatrices:
    """Real-space charge (``rho``) and energy (``energy``) density blocks per
    spin, plus per-task checks computed before folding."""

    rho: list
    energy: list
    traces: dict  # (spin, k) -> Tr(rho_k S_k)
    occupied: dict  # (spin, k) -> sum of occupations

    def electron_count(self, weights) -> float:
        return math.fsum(weights[k] * t.real for (s, k), t in sorted(self.traces.items()))


@dataclass
class PipelineResult:
    mu: float
    band_energy: float
    density: DensityMatrices
    solution: BandSolution
    ledger: "object"
    workload: Workload
    plan: ExecutionPlan


def fermi(x):
    """Fermi-Dirac occupation of reduced energy ``x = (e - mu)/kT``."""
    return 0.5 * (1.0 - np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def bloch_transform(op: RealSpaceOperator, k, *, plan: ProcedurePlan = DEFAULT_PLAN,
                    kind: str = "bloch.H") -> np.ndarray:
    """``M(k) = sum_R exp(+2 pi i k.R) M_R`` as a validated Hermitian matrix."""
    k = np.asarray(k, dtype=np.float64).ravel()
    if k.size != 3:
        raise DimensionError("k must be a 3-vector")
    op.validate()
    n = op.dim
    out = np.zeros((n, n), dtype=np.complex128)
    for r, m in op.blocks.items():
        phase = np.exp(2j * np.pi * float(np.dot(k, r)))
        out += phase * m
    nb = len(op.blocks)
    accounting.charge(kind, plan.tag(kind), flops=8.0 * n * n * nb, nbytes=16.0 * n * n * (nb + 1),
                      footprint=16.0 * n * n * (nb + 1), regions=nb)
    return hermitize(out)


def orthogonalizer(s_k, tau: float = DEFAULT_TAU, plan: ProcedurePlan = DEFAULT_PLAN):
    """``T`` with ``T^H S T = I`` on the span of overlap eigenvalues above tau.

    Returns ``(T, dropped)``.
    """
    s_k = check_hermitian(s_k)
    s, u = eigen_hh(s_k, True, plan)
    if s.size and s[0] < -tau:
        raise ValueError(f"overlap matrix is not positive semidefinite (eigenvalue {s[0]:.3e})")
    keep = s > tau
    n, m = u.shape[0], int(np.count_nonzero(keep))
    t = u[:, keep] / np.sqrt(s[keep])
    accounting.charge("ortho.scale", plan.tag("ortho.scale"), flops=2.0 * n * m,
                      nbytes=32.0 * n * m, footprint=16.0 * n * n, regions=1)
    return t, int(s.size - m)


def project_hamiltonian(h_k, t, plan: ProcedurePlan = DEFAULT_PLAN) -> np.ndarray:
    return triple_product(t, h_k, plan=plan)


def solve_k(h_k, s_k, want_vectors: bool = False, tau: float = DEFAULT_TAU,
            plan: ProcedurePlan = DEFAULT_PLAN):
    """Generalized problem ``H c = e S c`` through the orthogonalized basis.

    Returns ``(eigenvalues, C or None, m)``; ``C = T Y`` is S-orthonormal.
    """
    h_k = check_hermitian(h_k)
    s_k = check_hermitian(s_k)
    if h_k.shape != s_k.shape:
        raise DimensionError(f"H is {h_k.shape} but S is {s_k.shape}")
    with accounting.section("part2"):
        t, _dropped = orthogonalizer(s_k, tau, plan)
    with accounting.section("part3"):
        hp = project_hamiltonian(h_k, t, plan)
    with accounting.section("part4"):
        eps, y = eigen_hh(hp, want_vectors, plan)
        c = matmul(t, y, plan=plan) if want_vectors else None
    return eps, c, t.shape[1]


def _flat_states(solution: BandSolution, occ: OccupationParams):
    eps, wts = [], []
    g = occ.spin_mode.degeneracy
    for (s, k) in sorted(solution.eigenvalues):
        e = solution.eigenvalues[(s, k)]
        eps.append(e)
        wts.append(np.full(e.size, g * solution.weights[k]))
    if not eps:
        raise ValueError("band solution has no eigenvalues")
    return np.concatenate(eps), np.concatenate(wts)


def electron_count(solution: BandSolution, occ: OccupationParams, mu: float) -> float:
    eps, wts = _flat_states(solution, occ)
    return float(np.sum(wts * fermi((eps - mu) / occ.kT)))


def find_mu(solution: BandSolution, occ: OccupationParams, tol: float = 1e-12,
            max_iter: int = 400):
    """Chemical potential by bisection and the band energy at it."""
    eps, wts = _flat_states(solution, occ)
    capacity = float(np.sum(wts))
    ne = float(occ.n_electrons)
    if ne < 0 or ne > capacity * (1 + 1e-12):
        raise InfeasibleError(f"cannot place {ne} electrons in {capacity} states")
    lo = float(eps.min()) - BRACKET_KT * occ.kT
    hi = float(eps.max()) + BRACKET_KT * occ.kT
    target = tol * max(1.0, ne)
    mu = 0.5 * (lo + hi)
    iters = 0
    for iters in range(1, max_iter + 1):
        mu = 0.5 * (lo + hi)
        count = float(np.sum(wts * fermi((eps - mu) / occ.kT)))
        if abs(count - ne) <= target or not lo < mu < hi:
            break
        if count < ne:
            lo = mu
        else:
            hi = mu
    f = wts * fermi((eps - mu) / occ.kT)
    accounting.charge("occupy", BackendTag.HOST_SERIAL, flops=30.0 * eps.size * (iters + 1),
                      nbytes=16.0 * eps.size * (iters + 1), footprint=16.0 * eps.size, regions=0)
    return mu, float(np.sum(f * eps))


def occupations(eps, mu: float, occ: OccupationParams) -> np.ndarray:
    return occ.spin_mode.degeneracy * fermi((np.asarray(eps) - mu) / occ.kT)


def density_k(c, eps, mu: float, occ: OccupationParams, s_k=None,
              plan: ProcedurePlan = DEFAULT_PLAN):
    """``rho_k = sum_i f_i c_i c_i^H`` and ``E_k`` (weighted by e_i).

    Returns ``(rho_k, E_k, trace)`` with ``trace = Tr(rho_k S_k)`` (or the
    occupation sum when no overlap is given).
    """
    if c is None:
        raise ValueError("density matrices need eigenvectors")
    f = occupations(eps, mu, occ)
    n, m = c.shape
    cf = c * f
    rho = cf @ c.conj().T
    ener = (cf * eps) @ c.conj().T
    link = plan.link("density", "fold", 2 * 16.0 * n * n)
    accounting.charge("density", plan.tag("density"), flops=2 * (8.0 * n * n * m + 6.0 * n * m),
                      nbytes=2 * 16.0 * (n * m * 2 + n * n), footprint=16.0 * (2 * n * m + n * n),
                      regions=2, link_bytes=link[0], link_count=link[1])
    if s_k is not None:
        trace = complex(np.sum(rho * np.asarray(s_k).T))
        accounting.charge("trace", plan.tag("trace"), flops=8.0 * n * n, nbytes=32.0 * n * n,
                          footprint=32.0 * n * n, regions=1)
    else:
        trace = complex(np.sum(f))
    return rho, ener, trace


def fold_density(contributions, offsets, spins: int, n: int) -> DensityMatrices:
    """Fold per-k matrices into real-space blocks in the given order.

    ``contributions`` yields ``(spin, k, kvec, weight, rho_k, E_k, trace, occ)``.
    """
    rho = [{r: np.zeros((n, n), np.complex128) for r in offsets} for _ in range(spins)]
    ener = [{r: np.zeros((n, n), np.complex128) for r in offsets} for _ in range(spins)]
    traces, occupied = {}, {}
    for s, k, kvec, w, rho_k, e_k, trace, occ_sum in contributions:
        for r in offsets:
            ph = w * np.exp(-2j * np.pi * float(np.dot(kvec, r)))
            rho[s][r] += ph * rho_k
            ener[s][r] += ph * e_k
        traces[(s, k)] = trace
        occupied[(s, k)] = occ_sum
        accounting.charge("fold", BackendTag.HOST_SERIAL, flops=2 * 8.0 * n * n * len(offsets),
                          nbytes=2 * 48.0 * n * n * len(offsets),
                          footprint=2 * 16.0 * n * n * (len(offsets) + 1), regions=0)
    return DensityMatrices(rho, ener, traces, occupied)


def density_matrices(solution: BandSolution, mu: float, occ: OccupationParams, offsets,
                     kset: KPointSet, overlaps=None, plan: ProcedurePlan = DEFAULT_PLAN
                     ) -> DensityMatrices:
    """Serial assembly from a solution that carries eigenvectors."""
    if not solution.vectors:
        raise ValueError("density matrices need eigenvectors")
    n = next(iter(solution.vectors.values())).shape[0]

    def contributions():
        for (s, k) in sorted(solution.eigenvalues):
            if (s, k) not in solution.vectors:
                raise ValueError(f"missing eigenvectors for spin {s}, k-point {k}")
            eps = solution.eigenvalues[(s, k)]
            s_k = overlaps[k] if overlaps is not None else None
            rho_k, e_k, trace = density_k(solution.vectors[(s, k)], eps, mu, occ, s_k, plan)
            occ_sum = float(np.sum(occupations(eps, mu, occ)))
            yield s, k, kset.points[k], kset.weights[k], rho_k, e_k, trace, occ_sum

    return fold_density(contributions(), list(offsets), solution.spins, n)


# --------------------------------------------------------------------------
# orchestration


@dataclass
class _TaskOutput:
    eps: np.ndarray
    m: int
    recorder: WorkRecorder
    rho: np.ndarray | None = None
    energy: np.ndarray | None = None
    trace: complex = 0j
    occupied: float = 0.0

    @property
    def message_bytes(self) -> float:
        out = 8.0 * self.eps.size
        if self.rho is not None:
            out += 2 * 16.0 * self.rho.size + 16.0
        return out


def _run_task(hams, overlap, kset, spin, k, want_vectors, tau, plan, mu=None, occ=None):
    rec = WorkRecorder()
    with accounting.recording(rec):
        with accounting.section("part1"):
            s_k = bloch_transform(overlap, kset.points[k], plan=plan, kind="bloch.S")
            h_k = bloch_transform(hams[spin], kset.points[k], plan=plan, kind="bloch.H")
            lb, lc = plan.link("bloch.H", "zgemm", 16.0 * h_k.size)
            if lc:
                accounting.charge("bloch.H", plan.tag("bloch.H"), regions=0, link_bytes=lb,
                                  link_count=lc)
        eps, c, m = solve_k(h_k, s_k, want_vectors, tau, plan)
        out = _TaskOutput(eps, m, rec)
        if want_vectors:
            with accounting.section("part6"):
                out.rho, out.energy, out.trace = density_k(c, eps, mu, occ, s_k, plan)
                out.occupied = float(np.sum(occupations(eps, mu, occ)))
    return out


def band_dft_col(hams, overlap: RealSpaceOperator, kset: KPointSet, occ: OccupationParams,
                 plan: ExecutionPlan | None = None, topology: WorkerTopology | None = None,
                 *, tau: float = DEFAULT_TAU, cm: CostModel | None = None) -> PipelineResult:
    """Run the two-pass band diagonalization.

    ``hams`` holds one real-space Hamiltonian per spin channel (two for the
    collinear mode, one for the unpolarized mode). Results are bitwise
    identical for every plan and topology.
    """
    from .perf import TimingLedger

    hams = list(hams) if isinstance(hams, (list, tuple)) else [hams]
    spins = occ.spin_mode.channels
    if len(hams) != spins:
        raise DimensionError(f"{occ.spin_mode.value} needs {spins} Hamiltonian(s), got {len(hams)}")
    n = overlap.dim
    for h in hams:
        if h.dim != n:
            raise DimensionError("Hamiltonian and overlap dimensions differ")
    if len(kset) == 0:
        raise ValueError("empty k-point set")
    if plan is None:
        plan = plan_scheme(topology or serial_topology(), len(kset), spins, cm or CostModel())
    expected = {(s, k) for s in range(spins) for k in range(len(kset))}
    if set(plan.assignment) != expected:
        raise ValueError("execution plan does not cover every (spin, k) task exactly once")
    procedures = plan.procedures
    runner = ranks.run_stealing if plan.dynamic else ranks.run_static
    workload = Workload(n, len(kset), spins)
    ledger = TimingLedger()
    solution = BandSolution(kset.weights.copy(), spins)
    offsets = overlap.offsets

    with threadpool_limits(limits=1, user_api="blas"):
        # pass 1: eigenvalues
        def first(key):
            s, k = key
            return _run_task(hams, overlap, kset, s, k, False, tau, procedures)

        for (s, k), out in runner(plan.assignment, first, plan.n_workers):
            solution.add(s, k, out.eps)
            workload.tasks[(1, s, k)] = TaskWork(out.recorder.work(), out.message_bytes)
            ledger.absorb(out.recorder)

        coord = WorkRecorder()
        with accounting.recording(coord), accounting.section("part5"):
            mu, band_energy = find_mu(solution, occ)
        workload.coordinator["part5"] = coord.work()
        ledger.absorb(coord)

        # pass 2: eigenvectors and densities
        def second(key):
            s, k = key
            return _run_task(hams, overlap, kset, s, k, True, tau, procedures, mu, occ)

        def contributions():
            for (s, k), out in runner(plan.assignment, second, plan.n_workers):
                if out.eps.shape != solution.eigenvalues[(s, k)].shape or not np.array_equal(
                        out.eps, solution.eigenvalues[(s, k)]):
                    raise RuntimeError(f"second pass changed the eigenvalues of task {(s, k)}")
                solution.counts[(s, k)] = out.m
                workload.tasks[(2, s, k)] = TaskWork(out.recorder.work(), out.message_bytes)
                ledger.absorb(out.recorder)
                yield s, k, kset.points[k], kset.weights[k], out.rho, out.energy, out.trace, \
                    out.occupied

        reduce_rec = WorkRecorder()
        with accounting.recording(reduce_rec), accounting.section("part6"):
            density = fold_density(contributions(), offsets, spins, n)
        workload.coordinator["reduce"] = reduce_rec.work()
        ledger.absorb(reduce_rec)

    ledger.workload = workload
    return PipelineResult(mu, band_energy, density, solution, ledger, workload, plan)
