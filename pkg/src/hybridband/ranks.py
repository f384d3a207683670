"""In-process rank emulation.

Each rank is a thread that receives task messages on its inbox and posts
result messages to an outbox. The coordinator (the calling thread) consumes
results strictly in ascending task order, so any reduction it performs is
independent of how tasks were distributed.
"""
from __future__ import annotations

import collections
import queue
import threading
from typing import Callable, Hashable, Iterable

_STOP = object()


class RankFailure(RuntimeError):
    def __init__(self, rank, key, exc):
        super().__init__(f"rank {rank} failed on task {key}: {exc!r}")
        self.rank = rank
        self.key = key
        self.__cause__ = exc


def run_static(assignment: dict, fn: Callable, n_ranks: int) -> Iterable:
    """Yield ``(key, fn(key))`` in ascending key order.

    Rank ``r`` processes its own tasks in ascending order and publishes into a
    bounded outbox, so the coordinator never buffers more than a few results
    per rank.
    """
    keys = sorted(assignment)
    if n_ranks == 1 or len(keys) <= 1:
        for key in keys:
            yield key, fn(key)
        return
    inboxes = [queue.Queue() for _ in range(n_ranks)]
    outboxes = [queue.Queue(maxsize=2) for _ in range(n_ranks)]
    abort = threading.Event()

    def rank_main(rank):
        while True:
            msg = inboxes[rank].get()
            if msg is _STOP:
                return
            try:
                result = ("ok", msg, fn(msg))
            except BaseException as exc:  # forwarded to the coordinator
                result = ("error", msg, exc)
            while not abort.is_set():
                try:
                    outboxes[rank].put(result, timeout=0.05)
                    break
                except queue.Full:
                    continue
            if result[0] == "error" or abort.is_set():
                return

    for key in keys:
        inboxes[assignment[key]].put(key)
    for box in inboxes:
        box.put(_STOP)
    threads = [threading.Thread(target=rank_main, args=(r,), daemon=True, name=f"rank-{r}")
               for r in range(n_ranks)]
    for t in threads:
        t.start()
    try:
        for key in keys:
            rank = assignment[key]
            status, got, payload = outboxes[rank].get()
            if status == "error":
                raise RankFailure(rank, got, payload)
            if got != key:
                raise RuntimeError(f"rank {rank} delivered {got} while {key} was expected")
            yield key, payload
    finally:
        abort.set()
        for t in threads:
            t.join(timeout=5)


def run_stealing(assignment: dict, fn: Callable, n_ranks: int) -> Iterable:
    """Dynamic variant: an idle rank steals the highest remaining task from
    the rank with the most work left. Results are still yielded in ascending
    key order."""
    keys = sorted(assignment)
    queues = [collections.deque(k for k in keys if assignment[k] == r) for r in range(n_ranks)]
    lock = threading.Lock()
    done = threading.Condition()
    results: dict[Hashable, tuple] = {}
    abort = threading.Event()
    executed_by: dict[Hashable, int] = {}

    def next_task(rank):
        with lock:
            if queues[rank]:
                return queues[rank].popleft()
            victim = max(range(n_ranks), key=lambda r: (len(queues[r]), -r))
            if queues[victim]:
                return queues[victim].pop()
            return None

    def rank_main(rank):
        while not abort.is_set():
            key = next_task(rank)
            if key is None:
                return
            try:
                out = ("ok", fn(key))
            except BaseException as exc:
                out = ("error", exc)
            with done:
                results[key] = out
                executed_by[key] = rank
                done.notify_all()
            if out[0] == "error":
                return

    threads = [threading.Thread(target=rank_main, args=(r,), daemon=True, name=f"rank-{r}")
               for r in range(n_ranks)]
    for t in threads:
        t.start()
    try:
        for key in keys:
            with done:
                while key not in results:
                    if any(v[0] == "error" for v in results.values()):
                        bad = next(k for k, v in results.items() if v[0] == "error")
                        raise RankFailure(executed_by[bad], bad, results[bad][1])
                    done.wait(timeout=0.05)
                status, payload = results.pop(key)
            if status == "error":
                raise RankFailure(executed_by[key], key, payload)
            yield key, payload
    finally:
        abort.set()
        for t in threads:
            t.join(timeout=5)
