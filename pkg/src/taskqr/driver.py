"""Event-driven segment state machine and the top-level solve.

Each unreduced diagonal block is a *segment*.  The orchestrating thread scans
the segment list and performs one action per segment and pass; actions insert
tasks and only block where a result is needed to pick the next state.

State graph::

    Bootstrap  -> New | Decoupled
    New        -> Small | AEDsmall | AEDreduce | Failed
    Small      -> Converged | Failed
    AEDsmall   -> New | Bulges
    AEDreduce  -> AEDreduce | AEDdeflate | Failed
    AEDdeflate -> AEDdeflate | New | Bulges
    Bulges     -> New | Decoupled
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import _kernels as K
from .aed import (PARALLEL, SEQUENTIAL, AedFailure, AedOutcome, ParallelAed, choose_aed_window,
                  decide_parallel, insert_aed_updates, insert_small_aed, requested_shifts,
                  select_shifts)
from .bulges import insert_chase_tasks, plan_chains
from .context import (NONZERO, Context, Priorities, SolverConfig, Stats, child_priorities,
                      shift_budget)
from .kernels import FaultInjector, block_eigenvalues, is_standardized_schur
from .matrix import Region, as_square, frobenius_norm, hessenberg_reduce, is_hessenberg
from .runtime import DEFAULT_PRIO, MAX_PRIO, MIN_PRIO, PoolSizeSample, Runtime

BOOTSTRAP = "Bootstrap"
NEW = "New"
SMALL = "Small"
FAILED = "Failed"
CONVERGED = "Converged"
DECOUPLED = "Decoupled"
AED_SMALL = "AEDsmall"
AED_REDUCE = "AEDreduce"
AED_DEFLATE = "AEDdeflate"
BULGES = "Bulges"

STATES = (BOOTSTRAP, NEW, SMALL, FAILED, CONVERGED, DECOUPLED, AED_SMALL, AED_REDUCE,
          AED_DEFLATE, BULGES)

LEGAL_TRANSITIONS = frozenset({
    (BOOTSTRAP, NEW), (BOOTSTRAP, DECOUPLED),
    (NEW, SMALL), (NEW, AED_SMALL), (NEW, AED_REDUCE), (NEW, FAILED),
    (SMALL, CONVERGED), (SMALL, FAILED),
    (AED_SMALL, NEW), (AED_SMALL, BULGES),
    (AED_REDUCE, AED_REDUCE), (AED_REDUCE, AED_DEFLATE), (AED_REDUCE, FAILED),
    (AED_DEFLATE, AED_DEFLATE), (AED_DEFLATE, NEW), (AED_DEFLATE, BULGES),
    (BULGES, NEW), (BULGES, DECOUPLED),
})

# every transition taken in this process, for conformance checks
OBSERVED_TRANSITIONS: Counter = Counter()


class IllegalTransition(AssertionError):
    pass


class ConvergenceError(RuntimeError):
    """A segment hit its iteration limit; ``partial`` holds the unfinished result."""

    def __init__(self, message: str, partial: "SchurResult | None" = None) -> None:
        super().__init__(message)
        self.partial = partial


_ids = itertools.count()


@dataclass(eq=False)
class Segment:
    ctx: Context
    lo: int
    hi: int
    prios: Priorities
    state: str = NEW
    limit: int = 0
    its: int = 0
    stall: int = 0
    children: list["Segment"] = field(default_factory=list)
    pending: dict = field(default_factory=dict)
    sample: PoolSizeSample | None = None
    sid: int = field(default_factory=lambda: next(_ids))

    @property
    def length(self) -> int:
        return self.hi - self.lo

    def move(self, new: str) -> None:
        edge = (self.state, new)
        if edge not in LEGAL_TRANSITIONS:
            raise IllegalTransition(f"segment {self.sid} [{self.lo}, {self.hi}): {edge[0]} -> {edge[1]}")
        OBSERVED_TRANSITIONS[edge] += 1
        self.ctx.stats.transitions.append(edge)
        self.state = new


@dataclass
class SchurResult:
    S: np.ndarray
    Q: np.ndarray
    eigenvalues: np.ndarray
    stats: dict
    converged: bool = True

    @property
    def T(self) -> np.ndarray:
        return self.S


def root_priorities() -> Priorities:
    return Priorities(MAX_PRIO, DEFAULT_PRIO, MIN_PRIO)


def iteration_limit(length: int, factor: int = 30) -> int:
    return factor * max(10, length)


def unreduced_blocks(H: np.ndarray, lo: int = 0, hi: int | None = None) -> list[tuple[int, int]]:
    """Maximal runs ``[a, b)`` of ``H[lo:hi, lo:hi]`` without zero subdiagonal entries."""
    hi = H.shape[0] if hi is None else hi
    out = []
    a = lo
    for r in range(lo + 1, hi):
        if H[r, r - 1] == 0.0:
            out.append((a, r))
            a = r
    if hi > lo:
        out.append((a, hi))
    return out


class Driver:
    """Runs the segment lists of one solve."""

    def __init__(self, ctx: Context) -> None:
        self.ctx = ctx
        self.cfg = ctx.cfg

    # -- segment creation ----------------------------------------------------

    def bootstrap(self) -> list[Segment]:
        ctx = self.ctx
        root = Segment(ctx, 0, ctx.n, root_priorities(), BOOTSTRAP,
                       limit=iteration_limit(ctx.n, self.cfg.iteration_factor))
        self.step(root)
        return self._collect([root])

    def _children(self, parent: Segment, ranges) -> list[Segment]:
        kids = []
        for a, b in ranges:
            if b - a <= 1:
                continue
            kid = Segment(parent.ctx, a, b, parent.prios, NEW, limit=parent.limit, its=parent.its)
            kids.append(kid)
        for kid in kids:
            self.step(kid)
        return kids

    # -- list processing -----------------------------------------------------

    def _collect(self, segs: list[Segment]) -> list[Segment]:
        out = []
        for s in segs:
            if s.state == CONVERGED:
                continue
            if s.state == DECOUPLED:
                out.extend(self._collect(s.children))
            elif s.state == FAILED:
                raise ConvergenceError(f"segment [{s.lo}, {s.hi}) reached its iteration limit")
            else:
                out.append(s)
        return out

    def run_pass(self, segs: list[Segment]) -> list[Segment]:
        for s in list(segs):
            self.step(s)
        return self._collect(segs)

    def run(self, segs: list[Segment]) -> None:
        while segs:
            segs = self.run_pass(segs)

    # -- actions -------------------------------------------------------------

    def step(self, seg: Segment) -> None:
        getattr(self, "_on_" + seg.state)(seg)

    def _on_Bootstrap(self, seg: Segment) -> None:
        blocks = unreduced_blocks(seg.ctx.H, seg.lo, seg.hi)
        if len(blocks) > 1:
            seg.move(DECOUPLED)
            seg.children = self._children(seg, blocks)
        else:
            seg.move(NEW)
            self.step(seg)

    def _small_threshold(self, ctx: Context) -> int:
        return self.cfg.small_factor * ctx.b

    def _on_New(self, seg: Segment) -> None:
        ctx = seg.ctx
        cfg = self.cfg
        if seg.its >= seg.limit:
            seg.move(FAILED)
            return
        if seg.length <= self._small_threshold(ctx):
            seg.pending["small"] = self._insert_small(seg)
            seg.move(SMALL)
            return
        n_req = requested_shifts(seg.length, shift_budget(seg.length))
        b_aed = cfg.aed_tile_for(ctx.b)
        plan = choose_aed_window(seg.lo, seg.hi, n_req, cfg.aed_ratio, SEQUENTIAL, b_aed)
        seg.its += 1
        exceptional = seg.stall > 0 and seg.stall % cfg.exceptional_period == 0
        seg.pending["n_req"] = n_req
        seg.pending["plan"] = plan
        tag = f"seg{seg.sid}"
        if self._decide(seg, plan.size):
            plan = choose_aed_window(seg.lo, seg.hi, n_req, cfg.aed_ratio, PARALLEL, b_aed)
            job = ParallelAed(ctx, plan, seg.lo, seg.hi, seg.prios, n_req, exceptional, tag)
            job.start()
            ctx.stats.aed_parallel += 1
            seg.pending["job"] = job
            a, b = job.root_range()
            side_prios = child_priorities(seg.prios)
            kid = Segment(job.side, a, b, side_prios, NEW, limit=iteration_limit(b - a, cfg.iteration_factor))
            seg.move(AED_REDUCE)
            seg.children = [kid]
            self.step(kid)
            seg.children = self._collect(seg.children)
        else:
            seg.pending["aed"] = insert_small_aed(ctx, plan, seg.prios, n_req, exceptional, tag)
            ctx.stats.aed_sequential += 1
            seg.move(AED_SMALL)

    def _decide(self, seg: Segment, w: int) -> bool:
        cfg = self.cfg
        if cfg.parallel_aed == "never":
            return False
        if cfg.parallel_aed == "always":
            return True
        if cfg.deterministic:
            return w >= cfg.deterministic_aed_threshold
        rt = seg.ctx.rt
        now = rt.pool_sample()
        ref = seg.sample
        model = cfg.model
        if ref is None:
            return decide_parallel(0, 0, 0.0, 0.0, w, None, cfg.seq_floor, cfg.par_ceiling,
                                   cfg.deterministic_aed_threshold)
        return decide_parallel(ref.count, now.count, ref.timestamp, now.timestamp, w, model,
                               cfg.seq_floor, cfg.par_ceiling, cfg.deterministic_aed_threshold)

    def _insert_small(self, seg: Segment):
        ctx = seg.ctx
        rt = ctx.rt
        lo, hi = seg.lo, seg.hi
        H = ctx.H
        kind, param = ctx.kind, ctx.param
        budget = max(1, seg.limit - seg.its) if seg.limit else 30 * max(10, hi - lo)
        budget = min(budget, 30 * max(10, hi - lo))
        Uh = rt.handle((ctx.name, "small_U", lo, hi, rt.inserted))
        res = rt.handle((ctx.name, "small", lo, hi, rt.inserted))
        stats = ctx.stats

        def body():
            W = np.ascontiguousarray(H[lo:hi, lo:hi])
            U = np.eye(hi - lo)
            info, its = K.small_schur(W, U, kind, param, 0, budget)
            H[lo:hi, lo:hi] = W
            Uh.data = U
            res.data = (int(info), int(its))

        seq = rt.insert(body, writes=ctx.htiles(lo, hi, lo, hi) + [Uh, res], prio=seg.prios.max,
                        kind="small_schur", size=hi - lo, tag=f"seg{seg.sid}")
        ctx.record("small_schur", Region(lo, hi, lo, hi), seg.prios.max, seq, f"seg{seg.sid}")
        p = seg.prios
        ctx.insert_window_updates(Uh, lo, hi, lo, hi, p, tag=f"seg{seg.sid}")
        stats.small_schur += 1
        return res

    def _on_Small(self, seg: Segment) -> None:
        info, its = seg.ctx.rt.read(seg.pending.pop("small"))
        seg.ctx.stats.small_schur_iterations += its
        seg.move(CONVERGED if info == 0 else FAILED)

    def _on_AEDsmall(self, seg: Segment) -> None:
        ctx = seg.ctx
        outcome, V = ctx.rt.read(seg.pending.pop("aed"))
        if outcome.accepted:
            plan = seg.pending["plan"]
            Vh = ctx.rt.handle((ctx.name, "aed_V", plan.lo, ctx.rt.inserted), V)
            insert_aed_updates(ctx, Vh, plan.lo, plan.hi, seg.lo, seg.hi, seg.prios, f"seg{seg.sid}")
        self._after_aed(seg, outcome)

    def _on_AEDreduce(self, seg: Segment) -> None:
        seg.children = self.run_pass(seg.children) if seg.children else []
        if seg.children:
            seg.move(AED_REDUCE)
            return
        seg.pending["job"].begin_deflation()
        seg.move(AED_DEFLATE)

    def _on_AEDdeflate(self, seg: Segment) -> None:
        job: ParallelAed = seg.pending["job"]
        if not job.advance():
            seg.move(AED_DEFLATE)
            return
        outcome = job.finish()
        ctx_stats = seg.ctx.stats
        ctx_stats.reorder_chains += job.chains_total
        del seg.pending["job"]
        self._after_aed(seg, outcome)

    def _after_aed(self, seg: Segment, outcome: AedOutcome) -> None:
        ctx = seg.ctx
        cfg = self.cfg
        plan = seg.pending.pop("plan")
        n_req = seg.pending.pop("n_req")
        nd = outcome.n_deflated
        ctx.stats.deflations.append(nd)
        ctx.stats.failed_swaps_halts += int(outcome.halted)
        ctx.stats.aed_iterations += outcome.iterations
        seg.hi -= nd
        seg.stall = 0 if nd else seg.stall + 1
        nshifts = len(outcome.shifts)
        enough = (nshifts >= max(2, cfg.enough_shifts * n_req)
                  and nd <= cfg.many_deflated * plan.size
                  and seg.length > self._small_threshold(ctx))
        if not enough:
            seg.move(NEW)
            return
        if nshifts > seg.length - 2:
            nshifts = (seg.length - 2) // 2 * 2
        shifts = outcome.shifts
        if nshifts < len(shifts):
            shifts = select_shifts(shifts.shifts, nshifts)
        chain_plan = plan_chains(seg.lo, seg.hi, shifts, ctx.b, cfg.max_chains)
        nxt = requested_shifts(seg.length, shift_budget(seg.length))
        next_top = seg.hi - min(seg.length - 1, int(np.ceil(cfg.aed_ratio * nxt)))
        insert_chase_tasks(ctx, chain_plan, seg.prios, next_top, f"seg{seg.sid}")
        seg.sample = ctx.rt.pool_sample()
        seg.move(BULGES)

    def _on_Bulges(self, seg: Segment) -> None:
        ctx = seg.ctx
        rt = ctx.rt
        lo, hi = seg.lo, seg.hi
        splits = []
        for h_idx in range((lo + 1) // ctx.b, (hi - 1) // ctx.b + 1):
            r0 = max(lo + 1, h_idx * ctx.b)
            r1 = min(hi, (h_idx + 1) * ctx.b)
            if r1 <= r0:
                continue
            with rt.acquire(ctx.after_handles[h_idx], write=True):
                codes = ctx.aftermath[r0:r1]
                nz = np.nonzero(codes != NONZERO)[0]
                for k in nz:
                    if codes[k] == 1:
                        ctx.stats.vigilant += 1
                    splits.append(r0 + int(k))
                codes[nz] = NONZERO
        if not splits:
            seg.move(NEW)
            return
        bounds = [lo] + splits + [hi]
        seg.move(DECOUPLED)
        seg.children = self._children(seg, list(zip(bounds[:-1], bounds[1:])))

    def _on_Converged(self, seg: Segment) -> None:  # pragma: no cover - terminal
        pass

    _on_Failed = _on_Decoupled = _on_Converged


def solve(A, config: SolverConfig | None = None, *, telemetry_path: str | None = None,
          **overrides) -> SchurResult:
    """Real Schur decomposition ``A = Q S Q^T`` by the task-based multishift QR.

    Dense input is reduced to Hessenberg form first unless
    ``config.hessenberg`` is false, in which case it must already be upper
    Hessenberg.  Raises :class:`ConvergenceError` when a segment exhausts its
    iteration budget.
    """
    cfg = config or SolverConfig()
    if overrides:
        cfg = SolverConfig(**{**cfg.__dict__, **overrides})
    A = np.array(as_square(A, "A"), dtype=np.float64, order="C", copy=True)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix contains NaN or Inf")
    n = A.shape[0]
    if n == 0:
        raise ValueError("empty matrix")
    if is_hessenberg(A):
        H, Q = A, np.eye(n)
    elif cfg.hessenberg:
        H, Q = hessenberg_reduce(A)
        H = np.ascontiguousarray(H)
        Q = np.ascontiguousarray(Q)
    else:
        raise ValueError("matrix is not upper Hessenberg")
    cond = cfg.deflation.bind_norm(frobenius_norm(H))
    faults = FaultInjector(cfg.fault_rate, cfg.fault_seed) if cfg.fault_rate > 0 else FaultInjector(0.0)
    stats = Stats()
    b = cfg.tile_for(n)
    failure: ConvergenceError | None = None
    with threadpool_limits(limits=1):
        rt = Runtime(workers=cfg.workers, telemetry=cfg.telemetry)
        try:
            ctx = Context(rt, H, Q, b, cfg, cond, n, faults, stats)
            drv = Driver(ctx)
            try:
                drv.run(drv.bootstrap())
            except (ConvergenceError, AedFailure) as exc:
                failure = exc if isinstance(exc, ConvergenceError) else ConvergenceError(str(exc))
            rt.drain()
        finally:
            rt.close(drain=False)
    records = rt.records
    if telemetry_path:
        rt.write_telemetry(telemetry_path)
    d = stats.as_dict()
    d["tasks"] = dict(Counter(r.kind for r in records))
    d["tasks_total"] = len(records)
    d["tile_size"] = b
    d["workers"] = cfg.workers
    d["deflations_per_aed"] = list(stats.deflations)
    res = SchurResult(H, Q, block_eigenvalues(H) if failure is None else np.zeros(0, complex), d,
                      failure is None)
    res.records = records
    if failure is not None:
        failure.partial = res
        raise failure
    return res


def schur_is_valid(S: np.ndarray) -> bool:
    """Quasi-triangular with standardized 2x2 blocks."""
    return is_standardized_schur(S)
