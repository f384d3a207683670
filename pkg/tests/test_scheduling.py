from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridband.accounting import BackendTag, WorkItem
from hybridband.errors import ConfigError
from hybridband.scheduling import (CostModel, ExecutionPlan, Group, LoopDescriptor, Scheme,
                                   TaskWork, WorkerSpec, WorkerTopology, Workload,
                                   calibrate_device_weight, choose_backend, memory_estimate,
                                   memory_table, overlap_makespan, partition_kpoints,
                                   plan_scheme, serial_topology, simulate_plan)

TWO_BY_FOUR = (Group(4, True), Group(4, True))


class TestTopology:
    def test_three_way_needs_equal_groups(self):
        with pytest.raises(ConfigError):
            WorkerTopology((Group(4, True), Group(2, True)), Scheme.THREE_WAY_HYBRID)
        with pytest.raises(ConfigError):
            WorkerTopology((Group(4, True), Group(4, False)), Scheme.THREE_WAY_HYBRID)
        WorkerTopology((Group(4), Group(4)), Scheme.THREE_WAY_HYBRID)

    def test_two_way_needs_device(self):
        with pytest.raises(ConfigError):
            WorkerTopology((Group(4),), Scheme.TWO_WAY_RANK_DEVICE)
        WorkerTopology((Group(4, True), Group(4)), Scheme.TWO_WAY_RANK_DEVICE)

    def test_roundtrip(self):
        t = WorkerTopology(TWO_BY_FOUR, Scheme.THREE_WAY_HYBRID)
        assert WorkerTopology.from_dict(json.loads(json.dumps(t.to_dict()))) == t

    def test_cost_model_positive(self):
        with pytest.raises(ConfigError):
            CostModel(link_latency=0.0)
        with pytest.raises(ConfigError):
            CostModel.from_dict({"warp_size": 32})


class TestPartition:
    def test_weighted(self):
        assert partition_kpoints(64, [4, 1, 1, 1]) == [37, 9, 9, 9]

    def test_equal(self):
        assert partition_kpoints(4, [1, 1, 1, 1]) == [1, 1, 1, 1]

    def test_empty(self):
        assert partition_kpoints(0, [2, 1]) == [0, 0]

    def test_bad_weight(self):
        with pytest.raises(ValueError):
            partition_kpoints(3, [1, 0])

    def test_tie_goes_to_lower_index(self):
        assert partition_kpoints(1, [1, 1]) == [1, 0]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 500), st.lists(st.floats(0.01, 100), min_size=1, max_size=12))
    def test_quota(self, n_k, weights):
        c = partition_kpoints(n_k, weights)
        w = np.array(weights)
        assert sum(c) == n_k
        assert np.all(np.abs(np.array(c) - n_k * w / w.sum()) < 1)


class TestPlans:
    def test_three_way_symmetric(self):
        plan = plan_scheme(WorkerTopology(TWO_BY_FOUR, Scheme.THREE_WAY_HYBRID), 64, 2)
        assert plan.counts() == [32, 32] and plan.counts(1) == [32, 32]

    def test_two_way_weighted(self):
        plan = plan_scheme(WorkerTopology(TWO_BY_FOUR, Scheme.TWO_WAY_RANK_DEVICE), 64)
        assert plan.counts() == [18, 18, 5, 5, 5, 5, 4, 4]
        assert [w.device for w in plan.workers] == [True, True] + [False] * 6

    def test_serial(self):
        plan = plan_scheme(serial_topology(), 9, 2)
        assert set(plan.assignment.values()) == {0} and len(plan.assignment) == 18

    def test_worker_shapes(self):
        topo = WorkerTopology(TWO_BY_FOUR)
        assert len(plan_scheme(topo.with_scheme(Scheme.RANK_ONLY), 8).workers) == 8
        only = plan_scheme(topo.with_scheme(Scheme.THREAD_ONLY), 8).workers
        assert len(only) == 1 and only[0].cores == 8 and not only[0].device

    def test_plan_dump(self):
        d = plan_scheme(WorkerTopology(TWO_BY_FOUR, Scheme.THREE_WAY_HYBRID), 64).to_dict()
        assert d["kpoints_per_worker"] == [32, 32]
        json.dumps(d)


class TestBackendChoice:
    def test_long_loop(self):
        loop = LoopDescriptor(100_000, 1, transfer_bytes=0.0, flops=1e6)
        assert choose_backend(loop) is BackendTag.DEVICE_OFFLOAD

    def test_short_loop(self):
        assert choose_backend(LoopDescriptor(100, 1, 0.0, 1e9)) is not BackendTag.DEVICE_OFFLOAD
        assert choose_backend(LoopDescriptor(10, 1)) is BackendTag.HOST_SERIAL

    def test_nested(self):
        assert choose_backend(LoopDescriptor(3, 2)) is BackendTag.DEVICE_OFFLOAD

    def test_costly_transfer(self):
        loop = LoopDescriptor(100_000, 1, transfer_bytes=1e9, flops=1e3)
        assert choose_backend(loop) is BackendTag.HOST_THREADED

    def test_uncoalesced(self):
        loop = LoopDescriptor(100_000, 1, flops=1e9, coalesced_feasible=False)
        assert choose_backend(loop) is BackendTag.HOST_THREADED


class TestOverlap:
    def test_zero(self):
        assert overlap_makespan(0, 0, 0, 0, 0, "async") == 0

    def test_hand_cases(self):
        assert overlap_makespan(4, 1, 3, 1, 1, "async") == 6
        assert overlap_makespan(4, 1, 3, 1, 1, "sync") == 6
        assert overlap_makespan(4, 3, 3, 1, 1, "async") == 8
        # the sync rule max(4, 3+1) + 3 + 1 evaluates to 8
        assert overlap_makespan(4, 3, 3, 1, 1, "sync") == 8

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0, 1e6), min_size=5, max_size=5))
    def test_async_never_slower(self, t):
        assert overlap_makespan(*t, mode="async") <= overlap_makespan(*t, mode="sync")

    def test_negative(self):
        with pytest.raises(ValueError):
            overlap_makespan(-1, 0, 0, 0, 0)


def _uniform_workload(n_k, flops=1e9, spins=1):
    item = WorkItem("part4", "householder", "hh.p6", BackendTag.HOST_SERIAL, flops, 0.0, 0.0, 0,
                    0.0, 0, 1)
    wl = Workload(8, n_k, spins)
    for s in range(spins):
        for k in range(n_k):
            wl.tasks[(1, s, k)] = TaskWork([item], 0.0)
    return wl


class TestSimulation:
    def test_single_worker_total(self):
        cm = CostModel()
        wl = _uniform_workload(6)
        r = simulate_plan(plan_scheme(serial_topology(), 6), wl, cm)
        assert r.makespan == pytest.approx(6 * 1e9 / cm.host_flops_per_core, rel=1e-12)

    def test_linear_scaling(self):
        cm = CostModel(rank_latency=1e-30, rank_bandwidth=1e30)
        wl = _uniform_workload(8)
        one = simulate_plan(plan_scheme(serial_topology(), 8), wl, cm).makespan
        four = simulate_plan(plan_scheme(WorkerTopology((Group(4),)), 8), wl, cm).makespan
        assert four == pytest.approx(one / 4, rel=1e-9)

    def test_adding_workers_never_hurts(self):
        wl = _uniform_workload(12)
        times = [simulate_plan(plan_scheme(WorkerTopology((Group(c),)), 12), wl).makespan
                 for c in range(1, 9)]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(times, times[1:]))

    def test_missing_entry(self):
        wl = _uniform_workload(3)
        with pytest.raises(KeyError):
            simulate_plan(plan_scheme(serial_topology(), 4), wl)

    def test_workload_roundtrip(self):
        wl = _uniform_workload(2, spins=2)
        back = Workload.from_dict(json.loads(json.dumps(wl.to_dict())))
        assert back.tasks.keys() == wl.tasks.keys()
        assert back.tasks[(1, 1, 1)].items[0] == wl.tasks[(1, 1, 1)].items[0]

    def test_device_weight_calibration(self):
        item = WorkItem("part3", "", "zgemm", BackendTag.DEVICE_OFFLOAD, 1e10, 1e8, 1e8, 2,
                        0.0, 0, 1)
        ratio = calibrate_device_weight(TaskWork([item]))
        assert ratio > 1


class TestMemory:
    def test_linear_in_ranks(self):
        one = memory_estimate(WorkerTopology((Group(1),)), 100, 4)
        four = memory_estimate(WorkerTopology((Group(4),)), 100, 4)
        assert four.replicated == 4 * one.replicated and four.shared == one.shared

    def test_three_way_vs_two_way(self):
        three = memory_estimate(WorkerTopology(TWO_BY_FOUR, Scheme.THREE_WAY_HYBRID), 1040, 64)
        two = memory_estimate(WorkerTopology(TWO_BY_FOUR, Scheme.TWO_WAY_RANK_DEVICE), 1040, 64)
        assert two.replicated / three.replicated == 4
        assert three.replicated == 2 * 6 * 1040 ** 2 * 16

    def test_zero_basis(self):
        m = memory_estimate(WorkerTopology((Group(2),)), 0, 4)
        assert m.replicated == 0 and m.total == m.shared

    def test_table_covers_valid_schemes(self):
        rows = memory_table(WorkerTopology((Group(4),)), 10, 2)
        assert {r.scheme for r in rows} == {Scheme.RANK_ONLY, Scheme.THREAD_ONLY,
                                            Scheme.THREAD_PLUS_RANK, Scheme.THREE_WAY_HYBRID}
