import threading

import numpy as np
import pytest

from taskqr.matrix import TileGrid
from taskqr.runtime import MAX_PRIO, Runtime, RuntimeUsageError, TaskFailed


def _expected_deps(tasks):
    """RAW, WAW and WAR edges implied by insertion order."""
    last_w, readers, deps = {}, {}, []
    for i, (reads, writes) in enumerate(tasks):
        d = set()
        for h in reads:
            if h in writes:
                continue
            if h in last_w:
                d.add(last_w[h])
            readers.setdefault(h, []).append(i)
        for h in writes:
            if h in last_w:
                d.add(last_w[h])
            d.update(r for r in readers.get(h, []) if r != i)
            readers[h] = []
            last_w[h] = i
        deps.append(d)
    return deps


def _random_dag(rng, nh):
    tasks = []
    for _ in range(int(rng.integers(1, 25))):
        hs = rng.permutation(nh)
        nr, nw = rng.integers(0, 3, 2)
        tasks.append((set(hs[:nr].tolist()), set(hs[nr:nr + nw].tolist())))
    return tasks


@pytest.mark.parametrize("workers", [0, 1, 2, 3, 5, 8])
def test_random_dags_respect_sequential_semantics(workers):
    rng = np.random.default_rng(100 + workers)
    ndags = 200 if workers in (0, 8) else 120  # 1000+ DAGs across the parametrization
    with Runtime(workers=workers, track_deps=True) as rt:
        for _ in range(ndags):
            nh = int(rng.integers(1, 6))
            tasks = _random_dag(rng, nh)
            handles = [rt.handle(("h", k), []) for k in range(nh)]
            seen = {}
            seqs = []
            for i, (reads, writes) in enumerate(tasks):
                def body(i=i, reads=reads, writes=writes):
                    seen[i] = {h: tuple(handles[h].data) for h in reads | writes}
                    for h in writes:
                        handles[h].data.append(i)
                seqs.append(rt.insert(body, reads=[handles[h] for h in reads],
                                      writes=[handles[h] for h in writes],
                                      prio=int(rng.integers(0, MAX_PRIO + 1)), kind="fuzz"))
            rt.drain()
            # every task sees exactly the writes that precede it in insertion order
            hist = {h: [] for h in range(nh)}
            for i, (reads, writes) in enumerate(tasks):
                assert seen[i] == {h: tuple(hist[h]) for h in reads | writes}
                for h in writes:
                    hist[h].append(i)
            recs = {r.seq: r for r in rt.records}
            exp = _expected_deps(tasks)
            for i, d in enumerate(exp):
                r = recs[seqs[i]]
                assert set(r.deps) == {seqs[j] for j in d}
                for j in d:
                    assert recs[seqs[j]].end_stamp < r.start_stamp
                assert r.ready_stamp < r.start_stamp < r.end_stamp


def _gated_order(workers, prios):
    gate = threading.Event()
    order = []
    with Runtime(workers=workers) as rt:
        if workers:
            rt.insert(gate.wait, prio=MAX_PRIO, kind="gate")
            while rt.task_pool_size():  # wait until the worker holds the gate
                pass
        for k, p in enumerate(prios):
            rt.insert(lambda k=k: order.append(k), prio=p)
        gate.set()
        rt.drain()
    return order


@pytest.mark.parametrize("workers", [0, 1])
def test_ready_queue_priority_then_insertion(workers):
    prios = [10, 50, 50, 90, 0, 90, 50]
    want = sorted(range(len(prios)), key=lambda k: (-prios[k], k))
    assert _gated_order(workers, prios) == want


def test_register_tiles_counts():
    with Runtime(0) as rt:
        assert len(rt.register_tiles(TileGrid.square(16, 8))) == 4
        assert len(rt.register_tiles(TileGrid.square(8, 8))) == 1
        g = TileGrid.square(100, 64)
        assert len(rt.register_tiles(g)) == 4
        with pytest.raises(RuntimeUsageError):
            rt.register_tiles(g)


def test_foreign_handle_rejected():
    with Runtime(0) as a, Runtime(0) as b:
        h = b.handle("x")
        with pytest.raises(RuntimeUsageError):
            a.insert(lambda: None, reads=[h])
        with pytest.raises(RuntimeUsageError):
            a.acquire(h)
        with pytest.raises(RuntimeUsageError):
            a.insert(lambda: None, writes=["not a handle"])


def test_recursive_acquire_rejected():
    with Runtime(0) as rt:
        h = rt.handle("x", 1)
        with rt.acquire(h):
            with pytest.raises(RuntimeUsageError):
                rt.acquire(h)
        assert rt.read(h) == 1


def test_acquire_waits_for_writers():
    with Runtime(2) as rt:
        h = rt.handle("x", 0)
        for _ in range(20):
            rt.insert(lambda: setattr(h, "data", h.data + 1), writes=[h])
        with rt.acquire(h, write=True) as v:
            assert v == 20
        assert h.version == 20


def test_pool_size_and_chain():
    with Runtime(0) as rt:
        h = rt.handle("x", [])
        for k in range(7):
            rt.insert(lambda k=k: h.data.append(k), writes=[h])
        assert rt.task_pool_size() == 7
        assert rt.pool_sample().count == 7
        rt.drain()
        assert rt.task_pool_size() == 0
        assert h.data == list(range(7))
        recs = sorted(rt.records, key=lambda r: r.seq)
        assert all(a.end_stamp < b.start_stamp for a, b in zip(recs, recs[1:]))


def test_drain_from_other_thread_rejected():
    with Runtime(1) as rt:
        errs = []

        def other():
            try:
                rt.drain()
            except RuntimeUsageError as exc:
                errs.append(exc)
        t = threading.Thread(target=other)
        t.start()
        t.join()
        assert len(errs) == 1


def test_task_failure_propagates():
    rt = Runtime(1)
    rt.insert(lambda: 1 / 0)
    with pytest.raises(TaskFailed) as info:
        rt.drain()
    assert isinstance(info.value.__cause__, ZeroDivisionError)
    rt.close()


def test_priority_range_and_shutdown():
    rt = Runtime(0)
    with pytest.raises(ValueError):
        rt.insert(lambda: None, prio=MAX_PRIO + 1)
    with pytest.raises(ValueError):
        rt.insert(lambda: None, prio=-1)
    rt.close()
    with pytest.raises(RuntimeUsageError):
        rt.insert(lambda: None)
    with pytest.raises(ValueError):
        Runtime(-1)


def test_inline_acquire_runs_pending_tasks():
    rt = Runtime(0)
    h = rt.handle("x", 0)
    rt.insert(lambda: setattr(h, "data", 5), writes=[h])
    rt.insert(lambda: None, reads=[h])
    with rt.acquire(h, write=True) as v:
        assert v == 5
    assert rt.task_pool_size() == 0
    rt.close()


def test_telemetry_csv(tmp_path):
    with Runtime(1) as rt:
        rt.insert(lambda: None, kind="a", size=3, tag="t")
        rt.drain()
        p = tmp_path / "tel.csv"
        rt.write_telemetry(str(p))
    lines = p.read_text().splitlines()
    assert lines[0].startswith("seq,kind,size,prio,tag,worker")
    assert len(lines) == 2 and ",a,3," in lines[1]
