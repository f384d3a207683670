"""Operation-level work accounting.

Every numerical kernel charges the flops and bytes it performs to the
recorder active in the calling context (if any). Charges are aggregated by
``(section, step, kind, tag)`` so a whole pipeline task yields a few dozen
:class:`WorkItem` rows that the cost model can price on any worker.
"""
from __future__ import annotations

import contextlib
import contextvars
import enum
import time
from dataclasses import dataclass, field, replace


class BackendTag(str, enum.Enum):
    HOST_SERIAL = "HostSerial"
    HOST_THREADED = "HostThreaded"
    DEVICE_OFFLOAD = "DeviceOffload"


HOUSEHOLDER_PROCEDURES = ("hh.p1", "hh.p2", "hh.p3", "hh.p4_mul", "hh.p4_add", "hh.p5", "hh.p6")

# Every kind a kernel may charge, with the default backend assignment.
DEFAULT_TAGS: dict[str, BackendTag] = {
    # Householder procedures 1-6 (procedure 4 split into multiply and sum).
    "hh.p1": BackendTag.DEVICE_OFFLOAD,
    "hh.p2": BackendTag.HOST_THREADED,
    "hh.p3": BackendTag.HOST_SERIAL,
    "hh.p4_mul": BackendTag.DEVICE_OFFLOAD,
    "hh.p4_add": BackendTag.HOST_SERIAL,
    "hh.p5": BackendTag.DEVICE_OFFLOAD,
    "hh.p6": BackendTag.DEVICE_OFFLOAD,
    # remaining Eigen_HH steps
    "trid.solve": BackendTag.HOST_SERIAL,
    "rearrange": BackendTag.DEVICE_OFFLOAD,
    "normalize": BackendTag.DEVICE_OFFLOAD,
    # band pipeline
    "bloch.S": BackendTag.DEVICE_OFFLOAD,
    "bloch.H": BackendTag.HOST_THREADED,
    "ortho.scale": BackendTag.DEVICE_OFFLOAD,
    "zgemm": BackendTag.DEVICE_OFFLOAD,
    "hermitize": BackendTag.DEVICE_OFFLOAD,
    "density": BackendTag.DEVICE_OFFLOAD,
    "trace": BackendTag.DEVICE_OFFLOAD,
    # coordinator-only work
    "occupy": BackendTag.HOST_SERIAL,
    "fold": BackendTag.HOST_SERIAL,
}

# Kinds whose implementation cannot run anywhere but a single host thread.
PINNED_SERIAL = frozenset({"trid.solve", "hh.p3", "occupy", "fold"})


@dataclass(frozen=True)
class ProcedurePlan:
    """Backend tag for every chargeable kind.

    Tags only change accounting; arithmetic is identical for every plan.
    """

    tags: dict = field(default_factory=lambda: dict(DEFAULT_TAGS))

    def __post_init__(self):
        missing = set(DEFAULT_TAGS) - set(self.tags)
        if missing:
            raise ValueError(f"procedure plan lacks tags for {sorted(missing)}")
        for kind, tag in self.tags.items():
            BackendTag(tag)
            if kind in PINNED_SERIAL and BackendTag(tag) is not BackendTag.HOST_SERIAL:
                raise ValueError(f"{kind} can only run as HostSerial")

    def tag(self, kind: str) -> BackendTag:
        return BackendTag(self.tags[kind])

    def with_tags(self, **overrides) -> "ProcedurePlan":
        tags = dict(self.tags)
        for key, value in overrides.items():
            tags[key.replace("__", ".")] = BackendTag(value)
        return ProcedurePlan(tags)

    def link(self, producer: str, consumer: str, nbytes: float) -> tuple[float, int]:
        """Host/device traffic when data flows from ``producer`` to ``consumer``."""
        a = self.tag(producer) is BackendTag.DEVICE_OFFLOAD
        b = self.tag(consumer) is BackendTag.DEVICE_OFFLOAD
        return (float(nbytes), 1) if a != b else (0.0, 0)


DEFAULT_PLAN = ProcedurePlan()


def all_host_plan(tag: BackendTag = BackendTag.HOST_SERIAL) -> ProcedurePlan:
    tags = {k: (BackendTag.HOST_SERIAL if k in PINNED_SERIAL else tag) for k in DEFAULT_TAGS}
    return ProcedurePlan(tags)


@dataclass
class WorkItem:
    section: str
    step: str
    kind: str
    tag: BackendTag
    flops: float = 0.0
    bytes: float = 0.0
    footprint: float = 0.0  # largest working set of a single call, bytes
    regions: int = 0  # parallel loops / kernel launches
    link_bytes: float = 0.0
    link_count: int = 0
    calls: int = 0

    @property
    def key(self):
        return (self.section, self.step, self.kind, self.tag)

    def absorb(self, other: "WorkItem") -> None:
        self.flops += other.flops
        self.bytes += other.bytes
        self.footprint = max(self.footprint, other.footprint)
        self.regions += other.regions
        self.link_bytes += other.link_bytes
        self.link_count += other.link_count
        self.calls += other.calls

    def to_dict(self) -> dict:
        return {
            "section": self.section, "step": self.step, "kind": self.kind,
            "tag": self.tag.value, "flops": self.flops, "bytes": self.bytes,
            "footprint": self.footprint, "regions": self.regions,
            "link_bytes": self.link_bytes, "link_count": self.link_count,
            "calls": self.calls,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorkItem":
        d = dict(d)
        d["tag"] = BackendTag(d["tag"])
        return cls(**d)


class WorkRecorder:
    """Collects charges and wall-clock section times for one unit of work."""

    def __init__(self):
        self.items: dict[tuple, WorkItem] = {}
        self.wall: dict[str, float] = {}
        self.calls: dict[str, int] = {}
        self._section = ""
        self._step = ""

    def charge(self, kind, tag, flops=0.0, nbytes=0.0, footprint=0.0, regions=1,
               link_bytes=0.0, link_count=0):
        item = WorkItem(self._section, self._step, kind, BackendTag(tag), float(flops),
                        float(nbytes), float(footprint), int(regions), float(link_bytes),
                        int(link_count), 1)
        prev = self.items.get(item.key)
        if prev is None:
            self.items[item.key] = item
        else:
            prev.absorb(item)

    @contextlib.contextmanager
    def _timed(self, attr, name, label):
        old = getattr(self, attr)
        setattr(self, attr, name)
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.wall[label] = self.wall.get(label, 0.0) + time.perf_counter() - t0
            self.calls[label] = self.calls.get(label, 0) + 1
            setattr(self, attr, old)

    def section(self, name):
        return self._timed("_section", name, name)

    def step(self, name):
        return self._timed("_step", name, f"eigen.{name}")

    def merge(self, other: "WorkRecorder") -> None:
        for key, item in other.items.items():
            if key in self.items:
                self.items[key].absorb(item)
            else:
                self.items[key] = replace(item)
        for label, t in other.wall.items():
            self.wall[label] = self.wall.get(label, 0.0) + t
        for label, c in other.calls.items():
            self.calls[label] = self.calls.get(label, 0) + c

    def work(self) -> list[WorkItem]:
        return [self.items[k] for k in sorted(self.items, key=lambda k: (k[0], k[1], k[2], k[3].value))]


_current: contextvars.ContextVar[WorkRecorder | None] = contextvars.ContextVar(
    "hybridband_recorder", default=None)


def current() -> WorkRecorder | None:
    return _current.get()


@contextlib.contextmanager
def recording(recorder: WorkRecorder | None = None):
    rec = recorder if recorder is not None else WorkRecorder()
    token = _current.set(rec)
    try:
        yield rec
    finally:
        _current.reset(token)


def charge(kind, tag, flops=0.0, nbytes=0.0, footprint=0.0, regions=1,
           link_bytes=0.0, link_count=0):
    rec = _current.get()
    if rec is not None:
        rec.charge(kind, tag, flops, nbytes, footprint, regions, link_bytes, link_count)


@contextlib.contextmanager
def section(name):
    rec = _current.get()
    if rec is None:
        yield
    else:
        with rec.section(name):
            yield


@contextlib.contextmanager
def step(name):
    rec = _current.get()
    if rec is None:
        yield
    else:
        with rec.step(name):
            yield
