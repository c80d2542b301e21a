"""A small task runtime with implicit dependencies and priorities.

Tasks declare the data handles they read and write.  Dependencies follow
from insertion order: a reader waits for the previous writer (RAW), a writer
waits for the previous writer and all readers since (WAW, WAR).  Ready tasks
wait in one global queue ordered by priority (high first), then insertion
sequence.  Only the orchestrating thread (the one that built the runtime) may
insert tasks, acquire handles or drain.
"""

from __future__ import annotations

import csv
import heapq
import itertools
import threading
import time
from dataclasses import dataclass, fields
from typing import Any, Callable, Iterable, Sequence

MIN_PRIO = 0
DEFAULT_PRIO = 50
MAX_PRIO = 100


class RuntimeUsageError(RuntimeError):
    """Contract violation: wrong thread, unregistered handle, recursive acquire."""


class TaskFailed(RuntimeError):
    """A task body raised; the original exception is chained."""


class DataHandle:
    """Runtime-managed datum; ``data`` is whatever the owner stores in it."""

    __slots__ = ("name", "data", "version", "last_writer", "readers", "runtime", "_held")

    def __init__(self, runtime: "Runtime", name: Any, data: Any = None) -> None:
        self.name = name
        self.data = data
        self.version = 0
        self.last_writer: _Task | None = None
        self.readers: list[_Task] = []
        self.runtime = runtime
        self._held = False

    def __repr__(self) -> str:
        return f"DataHandle({self.name!r}, v{self.version})"


class _Task:
    __slots__ = ("seq", "kind", "prio", "body", "args", "size", "tag", "writes", "ndeps",
                 "succ", "done", "t_insert", "t_ready", "t_start", "t_end", "worker",
                 "ready_stamp", "start_stamp", "end_stamp", "deps")

    def __init__(self, seq, kind, prio, body, args, size, tag, writes):
        self.seq = seq
        self.kind = kind
        self.prio = prio
        self.body = body
        self.args = args
        self.size = size
        self.tag = tag
        self.writes = writes
        self.ndeps = 0
        self.succ: list[_Task] = []
        self.done = False
        self.t_insert = 0.0
        self.t_ready = 0.0
        self.t_start = 0.0
        self.t_end = 0.0
        self.worker = -1
        self.ready_stamp = -1
        self.start_stamp = -1
        self.end_stamp = -1
        self.deps: tuple[int, ...] = ()


@dataclass(frozen=True)
class TaskRecord:
    """Telemetry for one executed task; stamps come from one global event counter."""

    seq: int
    kind: str
    size: int
    prio: int
    tag: str
    worker: int
    t_insert: float
    t_ready: float
    t_start: float
    t_end: float
    ready_stamp: int
    start_stamp: int
    end_stamp: int
    deps: tuple[int, ...]

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class PoolSizeSample:
    timestamp: float
    count: int


class Runtime:
    """Worker pool plus dependency tracker.

    ``workers = 0`` executes tasks inline whenever the orchestrator drains or
    blocks in :meth:`acquire`.
    """

    def __init__(self, workers: int = 1, telemetry: bool = True, track_deps: bool = False) -> None:
        if workers < 0:
            raise ValueError("worker count must be non-negative")
        self.workers = int(workers)
        self.telemetry = telemetry
        self.track_deps = track_deps
        self._owner = threading.get_ident()
        self._lock = threading.Lock()
        self._work = threading.Condition(self._lock)
        self._idle = threading.Condition(self._lock)
        self._ready: list[tuple[int, int, _Task]] = []
        self._seq = itertools.count()
        self._stamp = 0
        self._unstarted = 0
        self._unfinished = 0
        self._records: list[TaskRecord] = []
        self._errors: list[BaseException] = []
        self._grids: dict[int, Any] = {}
        self._shutdown = False
        self._t0 = time.perf_counter()
        self._threads = [threading.Thread(target=self._worker_loop, args=(i,), daemon=True,
                                          name=f"taskqr-worker-{i}")
                         for i in range(self.workers)]
        for t in self._threads:
            t.start()

    # -- lifecycle ---------------------------------------------------------

    def __enter__(self) -> "Runtime":
        return self

    def __exit__(self, *exc) -> None:
        self.close(drain=exc[0] is None)

    def close(self, drain: bool = True) -> None:
        if self._shutdown:
            return
        try:
            if drain:
                self.drain()
        finally:
            with self._lock:
                self._shutdown = True
                self._work.notify_all()
            for t in self._threads:
                t.join()

    def now(self) -> float:
        return time.perf_counter() - self._t0

    # -- handles -----------------------------------------------------------

    def handle(self, name: Any = None, data: Any = None) -> DataHandle:
        """Register a single (non-tile) handle."""
        return DataHandle(self, name, data)

    def register_tiles(self, grid, prefix: Any = "T") -> dict[tuple[int, int], DataHandle]:
        """One handle per tile of ``grid``; registering the same grid twice is an error."""
        key = id(grid)
        if key in self._grids:
            raise RuntimeUsageError("tile grid already registered")
        self._grids[key] = grid  # strong reference keeps the id unique
        return {(i, j): DataHandle(self, (prefix, i, j))
                for i in range(grid.tile_rows) for j in range(grid.tile_cols)}

    # -- insertion ---------------------------------------------------------

    def _check_owner(self, what: str) -> None:
        if threading.get_ident() != self._owner:
            raise RuntimeUsageError(f"{what} is only allowed from the orchestrating thread")

    def insert(self, body: Callable[..., Any], *, reads: Iterable[DataHandle] = (),
               writes: Iterable[DataHandle] = (), prio: int = DEFAULT_PRIO, kind: str = "task",
               size: int = 0, tag: str = "", args: Sequence[Any] = ()) -> int:
        """Insert a task; returns its sequence number."""
        self._check_owner("insert")
        if self._shutdown:
            raise RuntimeUsageError("runtime is shut down")
        prio = int(prio)
        if not MIN_PRIO <= prio <= MAX_PRIO:
            raise ValueError(f"priority {prio} outside [{MIN_PRIO}, {MAX_PRIO}]")
        w = list(dict.fromkeys(writes))
        wset = set(map(id, w))
        r = [h for h in dict.fromkeys(reads) if id(h) not in wset]
        for h in itertools.chain(r, w):
            if not isinstance(h, DataHandle) or h.runtime is not self:
                raise RuntimeUsageError(f"unregistered handle {h!r}")
        now = self.now()
        with self._lock:
            t = _Task(next(self._seq), kind, prio, body, args, int(size), tag, w)
            t.t_insert = now
            deps: dict[int, _Task] = {}
            for h in r:
                lw = h.last_writer
                if lw is not None and not lw.done:
                    deps[id(lw)] = lw
                h.readers.append(t)
            for h in w:
                lw = h.last_writer
                if lw is not None and not lw.done:
                    deps[id(lw)] = lw
                for rd in h.readers:
                    if not rd.done and rd is not t:
                        deps[id(rd)] = rd
                h.readers = []
                h.last_writer = t
            for d in deps.values():
                d.succ.append(t)
            t.ndeps = len(deps)
            if self.track_deps:
                t.deps = tuple(sorted(d.seq for d in deps.values()))
            self._unstarted += 1
            self._unfinished += 1
            if t.ndeps == 0:
                self._make_ready(t, now)
        return t.seq

    def _make_ready(self, t: _Task, now: float) -> None:
        # lock held
        t.t_ready = now
        self._stamp += 1
        t.ready_stamp = self._stamp
        heapq.heappush(self._ready, (-t.prio, t.seq, t))
        self._work.notify()

    # -- execution ---------------------------------------------------------

    def _pop(self, worker: int) -> _Task:
        # lock held, queue non-empty
        _, _, t = heapq.heappop(self._ready)
        self._unstarted -= 1
        self._stamp += 1
        t.start_stamp = self._stamp
        t.worker = worker
        return t

    def _run(self, t: _Task) -> None:
        t.t_start = self.now()
        try:
            t.body(*t.args)
        except BaseException as exc:  # propagated to the orchestrator
            with self._lock:
                self._errors.append(exc)
        end = self.now()
        with self._lock:
            t.t_end = end
            t.done = True
            self._stamp += 1
            t.end_stamp = self._stamp
            for h in t.writes:
                h.version += 1
            for s in t.succ:
                s.ndeps -= 1
                if s.ndeps == 0:
                    self._make_ready(s, end)
            t.succ = []
            t.body = None
            t.args = ()
            self._unfinished -= 1
            if self.telemetry:
                self._records.append(TaskRecord(
                    t.seq, t.kind, t.size, t.prio, t.tag, t.worker, t.t_insert, t.t_ready,
                    t.t_start, t.t_end, t.ready_stamp, t.start_stamp, t.end_stamp, t.deps))
            self._idle.notify_all()

    def _worker_loop(self, idx: int) -> None:
        while True:
            with self._lock:
                while not self._ready and not self._shutdown:
                    self._work.wait()
                if self._shutdown and not self._ready:
                    return
                t = self._pop(idx)
            self._run(t)

    def _run_inline_one(self) -> bool:
        with self._lock:
            if not self._ready:
                return False
            t = self._pop(-1)
        self._run(t)
        return True

    def _wait_until(self, pred: Callable[[], bool]) -> None:
        if self.workers == 0:
            while True:
                with self._lock:
                    if pred():
                        return
                if not self._run_inline_one():
                    with self._lock:
                        if pred():
                            return
                    raise RuntimeUsageError("deadlock: nothing runnable but condition unmet")
        with self._lock:
            while not pred():
                self._idle.wait()

    def _raise_errors(self) -> None:
        if self._errors:
            err = self._errors[0]
            self._errors.clear()
            raise TaskFailed(f"task body raised {type(err).__name__}: {err}") from err

    def drain(self) -> None:
        """Block until every inserted task has completed."""
        self._check_owner("drain")
        self._wait_until(lambda: self._unfinished == 0)
        self._raise_errors()

    def acquire(self, handle: DataHandle, write: bool = False) -> "_Access":
        """Blocking acquisition; use as ``with rt.acquire(h) as data: ...``."""
        self._check_owner("acquire")
        if handle.runtime is not self:
            raise RuntimeUsageError(f"unregistered handle {handle!r}")
        if handle._held:
            raise RuntimeUsageError(f"handle {handle.name!r} is already acquired")

        def ready() -> bool:
            lw = handle.last_writer
            if lw is not None and not lw.done:
                return False
            return not write or all(r.done for r in handle.readers)

        self._wait_until(ready)
        self._raise_errors()
        handle._held = True
        return _Access(handle)

    def read(self, handle: DataHandle) -> Any:
        """Acquire, fetch ``handle.data`` and release."""
        with self.acquire(handle) as data:
            return data

    # -- introspection -----------------------------------------------------

    def task_pool_size(self) -> int:
        """Inserted tasks that have not started yet."""
        return self._unstarted

    def pool_sample(self) -> PoolSizeSample:
        return PoolSizeSample(self.now(), self._unstarted)

    @property
    def records(self) -> list[TaskRecord]:
        with self._lock:
            return list(self._records)

    @property
    def inserted(self) -> int:
        return self._unfinished + len(self._records)

    def write_telemetry(self, path: str) -> None:
        write_records_csv(self.records, path)


class _Access:
    __slots__ = ("handle",)

    def __init__(self, handle: DataHandle) -> None:
        self.handle = handle

    def __enter__(self) -> Any:
        return self.handle.data

    def __exit__(self, *exc) -> None:
        self.release()

    @property
    def data(self) -> Any:
        return self.handle.data

    def release(self) -> None:
        self.handle._held = False


_RECORD_FIELDS = [f.name for f in fields(TaskRecord) if f.name != "deps"]


def write_records_csv(records: Iterable[TaskRecord], path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_RECORD_FIELDS + ["duration"])
        for r in records:
            w.writerow([getattr(r, k) for k in _RECORD_FIELDS] + [f"{r.duration:.9f}"])
