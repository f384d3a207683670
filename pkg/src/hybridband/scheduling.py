"""Hybrid rank/thread/device scheduling and its cost model.

A :class:`WorkerTopology` describes the hardware: groups of cores (one group
per socket) with an optional attached device. A scheme maps the topology to
logical ranks (:class:`WorkerSpec`), and :func:`plan_scheme` distributes
k-points over the ranks. :func:`simulate_plan` prices a recorded
:class:`Workload` on a plan with a :class:`CostModel`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field, fields

from .accounting import DEFAULT_PLAN, BackendTag, ProcedurePlan, WorkItem
from .errors import ConfigError


class Scheme(str, enum.Enum):
    RANK_ONLY = "RankOnly"
    THREAD_ONLY = "ThreadOnly"
    THREAD_PLUS_RANK = "ThreadPlusRank"
    DEVICE_PLUS_THREAD = "DevicePlusThread"
    THREE_WAY_HYBRID = "ThreeWayHybrid"
    TWO_WAY_RANK_DEVICE = "TwoWayRankDevice"


@dataclass(frozen=True)
class Group:
    cores: int
    device: bool = False


@dataclass(frozen=True)
class WorkerTopology:
    groups: tuple
    scheme: Scheme = Scheme.RANK_ONLY

    def __post_init__(self):
        groups = tuple(g if isinstance(g, Group) else Group(**g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not groups:
            raise ConfigError("topology needs at least one group")
        for g in groups:
            if g.cores < 1:
                raise ConfigError("every group needs at least one core")
        devices = [g.device for g in groups]
        if self.scheme is Scheme.THREE_WAY_HYBRID:
            if len({g.cores for g in groups}) != 1:
                raise ConfigError("ThreeWayHybrid needs equal cores per group")
            if any(devices) and not all(devices):
                raise ConfigError("ThreeWayHybrid needs a device on every group or on none")
        if self.scheme in (Scheme.TWO_WAY_RANK_DEVICE, Scheme.DEVICE_PLUS_THREAD) and not any(devices):
            raise ConfigError(f"{self.scheme.value} needs at least one device-attached group")

    @property
    def total_cores(self) -> int:
        return sum(g.cores for g in self.groups)

    @property
    def n_devices(self) -> int:
        return sum(1 for g in self.groups if g.device)

    def with_scheme(self, scheme) -> "WorkerTopology":
        return WorkerTopology(self.groups, Scheme(scheme))

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value,
                "groups": [{"cores": g.cores, "device": g.device} for g in self.groups]}

    @classmethod
    def from_dict(cls, d: dict) -> "WorkerTopology":
        return cls(tuple(Group(int(g["cores"]), bool(g.get("device", False))) for g in d["groups"]),
                   Scheme(d.get("scheme", "RankOnly")))


def serial_topology() -> WorkerTopology:
    return WorkerTopology((Group(1, False),), Scheme.RANK_ONLY)


@dataclass(frozen=True)
class CostModel:
    """Hardware throughput parameters.

    The first four fields default to a Xeon E5606 core and a Quadro 4000;
    the rest are modelling assumptions for that class of machine.
    """

    host_flops_per_core: float = 17.06e9
    host_bandwidth: float = 6.48e9  # single-core STREAM, bytes/s
    device_flops: float = 243.2e9
    device_bandwidth: float = 89.6e9
    link_bandwidth: float = 6.0e9  # PCIe 2.0 x16, sustained
    link_latency: float = 10e-6
    rank_latency: float = 2e-6  # intra-node message
    rank_bandwidth: float = 4.0e9
    socket_bandwidth: float = 15.0e9  # sustained, shared by a group's cores
    llc_bytes: float = 8 * 2**20  # last-level cache per group
    device_launch_latency: float = 5e-6
    thread_sync_latency: float = 1e-6  # fork/join of one parallel loop

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and v > 0 and math.isfinite(v)):
                raise ConfigError(f"cost model field {f.name} must be positive, got {v!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CostModel":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown cost model fields {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class WorkerSpec:
    """One logical rank: the cores it owns per group and its device."""

    rank: int
    slices: tuple  # ((group index, cores), ...)
    device: bool = False
    weight: float = 1.0

    @property
    def cores(self) -> int:
        return sum(c for _, c in self.slices)


class OverlapMode(str, enum.Enum):
    SYNC = "sync"
    ASYNC = "async"


@dataclass
class ExecutionPlan:
    topology: WorkerTopology
    workers: list
    assignment: dict  # (spin, k) -> rank
    procedures: ProcedurePlan = field(default_factory=ProcedurePlan)
    overlap: OverlapMode = OverlapMode.ASYNC
    device_resident: bool = True
    dynamic: bool = False

    @property
    def n_workers(self) -> int:
        return len(self.workers)

    def counts(self, spin: int = 0) -> list[int]:
        out = [0] * len(self.workers)
        for (s, _k), w in self.assignment.items():
            if s == spin:
                out[w] += 1
        return out

    def tasks_of(self, rank: int) -> list:
        return sorted(key for key, w in self.assignment.items() if w == rank)

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.to_dict(),
            "workers": [{"rank": w.rank, "cores": w.cores, "device": w.device, "weight": w.weight,
                         "slices": [list(s) for s in w.slices]} for w in self.workers],
            "kpoints_per_worker": self.counts(0),
            "assignment": {f"{s},{k}": w for (s, k), w in sorted(self.assignment.items())},
            "procedures": {k: v.value for k, v in sorted(self.procedures.tags.items())},
            "overlap": self.overlap.value,
            "device_resident": self.device_resident,
            "dynamic": self.dynamic,
        }


@dataclass(frozen=True)
class LoopDescriptor:
    extent: int
    depth: int = 1  # nesting over the basis index
    transfer_bytes: float = 0.0
    flops: float = 0.0
    coalesced_feasible: bool = True

    def __post_init__(self):
        if self.extent < 0 or self.depth < 0 or self.transfer_bytes < 0 or self.flops < 0:
            raise ValueError("loop descriptor fields must be nonnegative")


def partition_kpoints(n_k: int, weights) -> list[int]:
    """Largest-remainder apportionment of ``n_k`` items by ``weights``.

    Ties in the remainder go to the lower worker index.
    """
    weights = [float(w) for w in weights]
    if n_k < 0:
        raise ValueError("n_k must be nonnegative")
    if not weights:
        raise ValueError("need at least one worker")
    if any(not (w > 0) or not math.isfinite(w) for w in weights):
        raise ValueError("weights must be positive and finite")
    total = math.fsum(weights)
    quotas = [n_k * w / total for w in weights]
    counts = [int(math.floor(q)) for q in quotas]
    left = n_k - sum(counts)
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return counts


def choose_backend(loop: LoopDescriptor, cm: CostModel = CostModel(),
                   threshold_threads: int = 64) -> BackendTag:
    """Backend policy for one parallelizable loop.

    Nested loops over the basis index always go to the device; a single long
    loop goes there when access can be coalesced and the transfer is cheaper
    than the device computation it feeds.
    """
    if loop.depth >= 2:
        return BackendTag.DEVICE_OFFLOAD
    if loop.extent > 1000 and loop.coalesced_feasible:
        t_xfer = loop.transfer_bytes / cm.link_bandwidth
        t_dev = loop.flops / cm.device_flops
        if t_xfer < t_dev:
            return BackendTag.DEVICE_OFFLOAD
    if loop.extent > threshold_threads:
        return BackendTag.HOST_THREADED
    return BackendTag.HOST_SERIAL


def overlap_makespan(t_dev, t_xfer, t_host, t_comm_host, t_comm_dev, mode="async") -> float:
    """Time of one device/host round: device compute, result transfer, host
    compute, rank communication of host results, then of device results."""
    for t in (t_dev, t_xfer, t_host, t_comm_host, t_comm_dev):
        if t < 0:
            raise ValueError("times must be nonnegative")
    mode = OverlapMode(mode)
    if mode is OverlapMode.ASYNC:
        return max(t_dev + t_xfer, t_host + t_comm_host) + t_comm_dev
    return max(t_dev, t_host + t_comm_host) + t_xfer + t_comm_dev


def scheme_workers(topology: WorkerTopology, device_weight: float = 4.0) -> list[WorkerSpec]:
    groups = topology.groups
    scheme = topology.scheme
    all_slices = tuple((g, groups[g].cores) for g in range(len(groups)))
    if scheme is Scheme.RANK_ONLY:
        specs = [((g, 1), False) for g in range(len(groups)) for _ in range(groups[g].cores)]
        return [WorkerSpec(r, (s,), d) for r, (s, d) in enumerate(specs)]
    if scheme is Scheme.THREAD_ONLY:
        return [WorkerSpec(0, all_slices, False)]
    if scheme is Scheme.DEVICE_PLUS_THREAD:
        return [WorkerSpec(0, all_slices, True)]
    if scheme in (Scheme.THREAD_PLUS_RANK, Scheme.THREE_WAY_HYBRID):
        dev = scheme is Scheme.THREE_WAY_HYBRID
        return [WorkerSpec(g, ((g, groups[g].cores),), dev and groups[g].device)
                for g in range(len(groups))]
    # two-way: one rank per core, device ranks first
    device_ranks = [g for g in range(len(groups)) if groups[g].device]
    host_ranks = []
    for g in range(len(groups)):
        extra = groups[g].cores - (1 if groups[g].device else 0)
        host_ranks.extend([g] * extra)
    specs = [((g, 1), True, device_weight) for g in device_ranks]
    specs += [((g, 1), False, 1.0) for g in host_ranks]
    return [WorkerSpec(r, (s,), d, w) for r, (s, d, w) in enumerate(specs)]


def plan_scheme(topology: WorkerTopology, n_k: int, spins: int = 1, cm: CostModel = CostModel(),
                *, device_weight: float = 4.0, procedures: ProcedurePlan = DEFAULT_PLAN,
                overlap="async", dynamic: bool = False) -> ExecutionPlan:
    """Assign every (spin, k) task to a rank.

    k-points are apportioned by rank weight (all equal except device ranks of
    the two-way scheme) as contiguous blocks; a rank handles every spin of its
    k-points.
    """
    if n_k < 0 or spins < 1:
        raise ValueError("need n_k >= 0 and spins >= 1")
    workers = scheme_workers(topology, device_weight)
    counts = partition_kpoints(n_k, [w.weight for w in workers])
    assignment = {}
    k = 0
    for rank, c in enumerate(counts):
        for _ in range(c):
            for s in range(spins):
                assignment[(s, k)] = rank
            k += 1
    return ExecutionPlan(topology, workers, assignment, procedures, OverlapMode(overlap),
                         True, dynamic)


# --------------------------------------------------------------------------
# workload and simulation


@dataclass
class TaskWork:
    items: list
    message_bytes: float = 0.0


@dataclass
class Workload:
    """Recorded work of one pipeline run.

    ``tasks`` maps ``(pass, spin, k)`` to the task's work; ``coordinator``
    maps the coordinator phase (``"part5"``, ``"reduce"``) to its items.
    """

    n: int
    n_k: int
    spins: int
    tasks: dict = field(default_factory=dict)
    coordinator: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "n_k": self.n_k, "spins": self.spins,
            "tasks": [{"pass": p, "spin": s, "k": k, "message_bytes": t.message_bytes,
                       "items": [i.to_dict() for i in t.items]}
                      for (p, s, k), t in sorted(self.tasks.items())],
            "coordinator": {ph: [i.to_dict() for i in items]
                            for ph, items in sorted(self.coordinator.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Workload":
        w = cls(int(d["n"]), int(d["n_k"]), int(d["spins"]))
        for t in d["tasks"]:
            w.tasks[(int(t["pass"]), int(t["spin"]), int(t["k"]))] = TaskWork(
                [WorkItem.from_dict(i) for i in t["items"]], float(t["message_bytes"]))
        w.coordinator = {ph: [WorkItem.from_dict(i) for i in items]
                         for ph, items in d["coordinator"].items()}
        return w


class _Pricing:
    """Per-worker resources after accounting for socket sharing."""

    def __init__(self, plan: ExecutionPlan, cm: CostModel, worker: WorkerSpec):
        groups = plan.topology.groups
        active = [0] * len(groups)
        for w in plan.workers:
            for g, c in w.slices:
                active[g] += c
        self.cm = cm
        self.worker = worker
        self.cores = worker.cores
        g0 = worker.slices[0][0]
        self.bw_serial = min(cm.host_bandwidth, cm.socket_bandwidth / active[g0])
        self.bw_threads = sum(min(c * cm.host_bandwidth, cm.socket_bandwidth * c / active[g])
                              for g, c in worker.slices)
        self.llc = cm.llc_bytes * sum(c / active[g] for g, c in worker.slices)
        self.device = worker.device
        self.resident = plan.device_resident

    def effective(self, tag: BackendTag) -> BackendTag:
        if tag is BackendTag.DEVICE_OFFLOAD and self.device:
            return tag
        if tag is BackendTag.HOST_SERIAL or self.cores == 1:
            return BackendTag.HOST_SERIAL
        return BackendTag.HOST_THREADED

    def item_time(self, item: WorkItem) -> float:
        cm = self.cm
        tag = self.effective(item.tag)
        if tag is BackendTag.DEVICE_OFFLOAD:
            t = max(item.flops / cm.device_flops, item.bytes / cm.device_bandwidth)
            t += item.regions * cm.device_launch_latency
            if not self.resident:
                t += item.bytes / cm.link_bandwidth + item.calls * cm.link_latency
        elif tag is BackendTag.HOST_THREADED:
            dram = _dram_bytes(item, self.llc)
            t = max(item.flops / (self.cores * cm.host_flops_per_core), dram / self.bw_threads)
            t += item.regions * cm.thread_sync_latency
        else:
            dram = _dram_bytes(item, self.llc)
            t = max(item.flops / cm.host_flops_per_core, dram / self.bw_serial)
        if self.device:
            t += item.link_bytes / cm.link_bandwidth + item.link_count * cm.link_latency
        return t


def _dram_bytes(item: WorkItem, llc: float) -> float:
    if item.footprint <= llc:
        return min(item.bytes, 2.0 * item.footprint * max(item.calls, 1))
    return item.bytes


def _overlap_saving(items, pricing: _Pricing, mode: OverlapMode) -> float:
    """Procedure 4's multiply runs on the device while procedure 3 runs on
    the host; asynchronous mode hides the shorter of the two."""
    if mode is not OverlapMode.ASYNC or not pricing.device:
        return 0.0
    saving = 0.0
    by_step: dict = {}
    for it in items:
        if it.kind in ("hh.p3", "hh.p4_mul"):
            by_step.setdefault((it.section, it.step), {})[it.kind] = it
    for pair in by_step.values():
        p3, p4 = pair.get("hh.p3"), pair.get("hh.p4_mul")
        if p3 is None or p4 is None:
            continue
        if pricing.effective(p3.tag) is BackendTag.DEVICE_OFFLOAD:
            continue
        if pricing.effective(p4.tag) is not BackendTag.DEVICE_OFFLOAD:
            continue
        saving += min(pricing.item_time(p3), max(pricing.item_time(p4) - p4.regions
                                                 * pricing.cm.device_launch_latency, 0.0))
    return saving


def task_time(work: TaskWork, plan: ExecutionPlan, worker: WorkerSpec, cm: CostModel) -> float:
    pricing = _Pricing(plan, cm, worker)
    t = sum(pricing.item_time(it) for it in work.items)
    t -= _overlap_saving(work.items, pricing, plan.overlap)
    if worker.rank != 0:
        t += cm.rank_latency + work.message_bytes / cm.rank_bandwidth
    return t


@dataclass
class SimulationResult:
    makespan: float
    worker_times: dict  # pass -> list of per-worker seconds
    coordinator_times: dict  # phase -> seconds


def simulate_plan(plan: ExecutionPlan, workload: Workload, cm: CostModel = CostModel()
                  ) -> SimulationResult:
    """Modeled makespan: both task passes are bounded by their slowest rank
    and separated by the coordinator's serial phases."""
    passes = sorted({p for p, _, _ in workload.tasks})
    for key in plan.assignment:
        for p in passes:
            if (p,) + tuple(key) not in workload.tasks:
                raise KeyError(f"workload has no entry for pass {p}, task {key}")
    worker_times = {}
    for p in passes:
        per = [0.0] * plan.n_workers
        for (s, k), rank in sorted(plan.assignment.items()):
            per[rank] += task_time(workload.tasks[(p, s, k)], plan, plan.workers[rank], cm)
        worker_times[p] = per
    coord = {}
    pricing = _Pricing(plan, cm, plan.workers[0])
    for phase, items in sorted(workload.coordinator.items()):
        coord[phase] = sum(_Pricing.item_time(_serial_view(pricing), it) for it in items)
    makespan = sum(max(v) if v else 0.0 for v in worker_times.values()) + sum(coord.values())
    return SimulationResult(makespan, worker_times, coord)


def _serial_view(pricing: _Pricing) -> _Pricing:
    view = object.__new__(_Pricing)
    view.__dict__.update(pricing.__dict__)
    view.cores = 1
    view.device = False
    return view


def calibrate_device_weight(work: TaskWork, cm: CostModel = CostModel()) -> float:
    """Ratio of one-core to one-core-plus-device modeled time on a probe task."""
    topo = WorkerTopology((Group(1, True), Group(1, False)), Scheme.TWO_WAY_RANK_DEVICE)
    plan = plan_scheme(topo, 0)
    dev, host = plan.workers
    probe = TaskWork(work.items, 0.0)
    return task_time(probe, plan, host, cm) / task_time(probe, plan, dev, cm)


# --------------------------------------------------------------------------
# memory


@dataclass(frozen=True)
class MemoryEstimate:
    scheme: Scheme
    ranks: int
    replicated: float
    shared: float

    @property
    def total(self) -> float:
        return self.replicated + self.shared


def memory_estimate(topology: WorkerTopology, n: int, n_k: int, *, buffers: int = 6,
                    spins: int = 2, offsets: int = 7) -> MemoryEstimate:
    """Host memory of a scheme.

    Each rank holds ``buffers`` dense complex n x n work matrices; the
    real-space operators (spins + overlap, ``offsets`` blocks each) and the
    eigenvalue table are stored once.
    """
    ranks = len(scheme_workers(topology))
    replicated = ranks * buffers * n * n * 16.0
    shared = (spins + 1) * offsets * n * n * 16.0 + n_k * spins * n * 8.0
    return MemoryEstimate(topology.scheme, ranks, replicated, shared)


def memory_table(topology: WorkerTopology, n: int, n_k: int, **kw) -> list[MemoryEstimate]:
    out = []
    for scheme in Scheme:
        try:
            topo = topology.with_scheme(scheme)
        except ConfigError:
            continue
        out.append(memory_estimate(topo, n, n_k, **kw))
    return out
