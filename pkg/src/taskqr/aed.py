"""Aggressive early deflation.

A trailing window of an unreduced block is copied, reduced to Schur form and
its eigenvalues are tested bottom-up against the spike ``s V[0, :]``.  Failed
candidates are moved above the unevaluated ones and later reused as shifts.
If anything deflated, the spike is folded back to a multiple of ``e_1`` and
the window is returned to Hessenberg form before it is written back.

Two execution modes exist.  The sequential one does everything in a single
task.  The parallel one copies the window into a side matrix with a smaller
tile size, reduces it with the ordinary task-based machinery and then walks
upwards with deflate tasks; once enough failed candidates pile up they are
moved to the top of the window by at most two reordering chains.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from . import _kernels as K
from .context import Context, Priorities, SolverConfig, Stats
from .deflation import DeflationCondition
from .kernels import NO_FAULTS, FaultInjector, ShiftSet, block_eigenvalues, schur_blocks
from .matrix import Region, TileGrid

SEQUENTIAL = "sequential"
PARALLEL = "parallel"
DEFLATE = "deflate"
REORDER = "reorder"

# above this size the final Hessenberg reduction goes through LAPACK
_LAPACK_HESSENBERG = 128


class AedFailure(RuntimeError):
    """The Schur reduction of an AED window hit its iteration limit."""


@dataclass(frozen=True)
class AedPlan:
    lo: int
    hi: int
    mode: str = SEQUENTIAL
    b_aed: int = 32

    def __post_init__(self) -> None:
        if not 0 <= self.lo < self.hi:
            raise ValueError("empty AED window")
        if self.mode not in (SEQUENTIAL, PARALLEL):
            raise ValueError(f"unknown AED mode {self.mode!r}")

    @property
    def size(self) -> int:
        return self.hi - self.lo


@dataclass
class AedOutcome:
    n_deflated: int
    shifts: ShiftSet
    accepted: bool
    n_undeflated: int = 0
    halted: bool = False
    iterations: int = 0
    candidates: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))


@dataclass
class DeflateWindowState:
    """Progress of the upward walk over the side matrix.

    ``[lo, hi)`` is the active window, ``spike`` its slice of the spike.  The
    failed group occupies ``[g0, g1)``; rows above ``tf`` already hold failed
    candidates moved to the top; ``ns`` is the number of undeflated rows.
    """

    lo: int
    hi: int
    spike: np.ndarray
    g0: int
    g1: int
    tf: int = 0
    ns: int = 0
    top_known: bool = False
    halted: bool = False
    checked: int = 0
    blocks: tuple[int, ...] = ()

    @property
    def group(self) -> int:
        return self.g1 - self.g0


# --------------------------------------------------------------------------
# window choice and shift selection


def choose_aed_window(lo: int, hi: int, n_requested: int, ratio: float = 1.5,
                      mode: str = SEQUENTIAL, b_aed: int = 32) -> AedPlan:
    """Trailing window of ``min(len - 1, ceil(ratio * n_requested))`` rows."""
    length = hi - lo
    if length < 2:
        raise ValueError("AED needs a segment of at least two rows")
    w = min(length - 1, max(1, int(math.ceil(ratio * n_requested))))
    return AedPlan(hi - w, hi, mode, b_aed)


def requested_shifts(length: int, budget: int) -> int:
    """``min(len/2 - 1, budget)`` rounded down to an even count (at least 2)."""
    ns = min(length // 2 - 1, budget)
    return max(2, ns - ns % 2)


def select_shifts(candidates: Sequence[complex], n_req: int) -> ShiftSet:
    """Take up to ``n_req`` candidates from the bottom, keeping conjugate pairs whole.

    ``candidates`` is in top-to-bottom block order (pairs adjacent).  The count
    returned is even; an odd leftover real shift is dropped.
    """
    c = [complex(z) for z in candidates]
    units: list[list[complex]] = []
    i = 0
    while i < len(c):
        if c[i].imag != 0.0 and i + 1 < len(c) and c[i + 1] == c[i].conjugate():
            units.append([c[i], c[i + 1]])
            i += 2
        else:
            units.append([complex(c[i].real, 0.0)] if c[i].imag == 0.0 else [c[i]])
            i += 1
    picked: list[list[complex]] = []
    count = 0
    for u in reversed(units):
        if count + len(u) > n_req:
            continue
        picked.append(u)
        count += len(u)
        if count == n_req:
            break
    picked.reverse()
    flat = [z for u in picked for z in u]
    if len(flat) % 2:
        for k, z in enumerate(flat):
            if z.imag == 0.0:
                del flat[k]
                break
    return ShiftSet.from_eigenvalues(flat, "aed-failed-candidates")


def exceptional_shifts(W: np.ndarray, n_req: int) -> ShiftSet:
    """Ad hoc shifts from the bottom of a window, used after stalled iterations."""
    m = W.shape[0]
    out: list[complex] = []
    i = m - 1
    while len(out) < n_req and i >= 2:
        ss = abs(W[i, i - 1]) + abs(W[i - 1, i - 2])
        aa = 0.75 * ss + W[i, i]
        cc = -0.4375 * ss
        _, _, _, _, r1, i1, r2, i2, _, _ = K.lanv2(aa, ss, cc, aa)
        out.extend((complex(r1, i1), complex(r2, i2)))
        i -= 2
    if not out:
        out = [complex(W[m - 1, m - 1]), complex(W[m - 1, m - 1])]
    return ShiftSet.from_eigenvalues(out[:max(2, n_req - n_req % 2)], "exceptional")


# --------------------------------------------------------------------------
# building blocks shared by both modes


def _eliminate_spike(T: np.ndarray, V: np.ndarray, spike: np.ndarray, ns: int) -> None:
    """Fold ``spike[:ns]`` onto its first entry and restore Hessenberg form of ``T[:ns, :ns]``."""
    if ns <= 1:
        return
    K.spike_reflect(T, V, spike, ns)
    if ns <= 2:
        return
    if ns <= _LAPACK_HESSENBERG:
        T11 = np.ascontiguousarray(T[:ns, :ns])
        Z2 = np.eye(ns)
        K.gehrd(T11, Z2)
    else:
        T11, Z2 = scipy.linalg.hessenberg(T[:ns, :ns], calc_q=True)
        T11 = np.triu(T11, -1)
    T[:ns, :ns] = T11
    if ns < T.shape[0]:
        T[:ns, ns:] = Z2.T @ T[:ns, ns:]
    V[:, :ns] = V[:, :ns] @ Z2


def _aed_window(W: np.ndarray, s: float, cond: DeflationCondition, nglob: int,
                faults: FaultInjector, budget: int | None = None):
    """Sequential AED on a copy of ``W`` with spike source ``s``.

    Returns ``(T, V, spike, n_deflated, candidates, halted, iterations)``;
    ``candidates`` are the eigenvalues of the undeflated part, top to bottom.
    """
    w = W.shape[0]
    T = np.array(W, dtype=np.float64, order="C", copy=True)
    V = np.eye(w)
    kind, param = cond.code
    budget = 30 * max(10, w) if budget is None else budget
    info, its = K.small_schur(T, V, kind, param, 0, budget)
    if info != 0:
        raise AedFailure(f"AED window of order {w} did not converge")
    spike = s * V[0, :].copy()
    out = np.zeros(4, dtype=np.int64)
    rate, u, ctr = faults.args()
    K.deflation_sweep(T, V, spike, 0, w, w, True, kind, param, int(nglob), rate, u, ctr, out)
    ns = int(out[1])
    cands = block_eigenvalues(T, 0, ns)
    if ns < w:
        _eliminate_spike(T, V, spike, ns)
    return T, V, spike, w - ns, cands, bool(out[2]), int(its)


def small_aed(W, s: float, cond: DeflationCondition | None = None, n_req: int | None = None,
              nglob: int | None = None, faults: FaultInjector | None = None):
    """Sequential AED of window ``W`` whose spike source entry is ``s``.

    Returns ``(outcome, T, V, spike)``: when ``outcome.accepted`` the caller
    writes ``T`` back into the window, ``spike`` into the column left of it and
    applies ``V`` to the rest of the matrix.
    """
    W = np.asarray(W, dtype=np.float64)
    cond = cond or DeflationCondition.lapack()
    w = W.shape[0]
    T, V, spike, nd, cands, halted, its = _aed_window(
        W, float(s), cond, nglob if nglob is not None else w, faults or NO_FAULTS)
    n_req = len(cands) if n_req is None else n_req
    out = AedOutcome(nd, select_shifts(cands, n_req), nd >= 1, w - nd, halted, its, cands)
    return out, T, V, spike


# --------------------------------------------------------------------------
# deflate / reorder windows


def _resolve_top(W: np.ndarray, known: bool) -> int:
    # a nominal top that looks like a 1x1 may be the lower half of a 2x2: leave it out
    if known or W.shape[0] < 2 or W[1, 0] != 0.0:
        return 0
    return 1


def _window_sweep(W: np.ndarray, U: np.ndarray, sp: np.ndarray, top: int, g0: int, g1: int,
                  deflate: bool, cond: DeflationCondition, nglob: int,
                  faults: FaultInjector) -> np.ndarray:
    out = np.zeros(4, dtype=np.int64)
    kind, param = cond.code
    rate, u, ctr = faults.args()
    if g0 > top:
        K.deflation_sweep(W, U, sp, top, g0, g1, deflate, kind, param, int(nglob),
                          rate, u, ctr, out)
    else:
        out[:] = (g0, g1, 0, 0)
    return out


def deflate_task(T: np.ndarray, V: np.ndarray, state: DeflateWindowState,
                 cond: DeflationCondition, mode: str = DEFLATE, clamp: int | None = None,
                 faults: FaultInjector | None = None, nglob: int | None = None) -> DeflateWindowState:
    """One deflate (or reorder) window applied to the whole side matrix.

    In deflate mode the blocks of ``[top, g0)`` are tested bottom-up and
    failures join the group.  In reorder mode the group is moved up to the
    window top (never above ``clamp``).  A rejected swap halts the walk; the
    returned positions describe the layout actually reached.
    """
    if mode not in (DEFLATE, REORDER):
        raise ValueError(f"unknown deflate-task mode {mode!r}")
    lo, hi = state.lo, state.hi
    W = np.ascontiguousarray(T[lo:hi, lo:hi])
    U = np.eye(hi - lo)
    sp = np.array(state.spike, dtype=np.float64, copy=True)
    new = _apply_window(W, U, sp, state, cond, mode, clamp, faults or NO_FAULTS,
                        nglob if nglob is not None else T.shape[0])
    T[lo:hi, lo:hi] = W
    T[:lo, lo:hi] = T[:lo, lo:hi] @ U
    T[lo:hi, hi:] = U.T @ T[lo:hi, hi:]
    V[:, lo:hi] = V[:, lo:hi] @ U
    return new


def _apply_window(W, U, sp, state: DeflateWindowState, cond, mode, clamp, faults, nglob):
    lo, hi = state.lo, state.hi
    if state.halted:
        return replace(state, spike=sp)
    top = _resolve_top(W, state.top_known)
    if clamp is not None:
        top = max(top, clamp - lo)
    g0, g1 = state.g0 - lo, state.g1 - lo
    top = min(top, g0)
    out = _window_sweep(W, U, sp, top, g0, g1, mode == DEFLATE, cond, nglob, faults)
    ng0, ng1 = int(out[0]) + lo, int(out[1]) + lo
    ns = state.ns
    if mode == DEFLATE:
        ns = ng1
    blocks = tuple(sz for _, sz in schur_blocks(W, ng0 - lo, ng1 - lo))
    return replace(state, spike=sp, g0=ng0, g1=ng1, ns=ns, halted=bool(out[2]),
                   checked=state.checked + int(out[3]), blocks=blocks)


# --------------------------------------------------------------------------
# adaptive decision and its performance model


@dataclass(frozen=True)
class PerformanceModel:
    """Predicted sequential AED time ``a n^b + c`` seconds."""

    a: float
    b: float
    c: float
    residual: float = 0.0

    def predict(self, n: float) -> float:
        return self.a * float(n) ** self.b + self.c

    def to_json(self) -> str:
        return json.dumps({"a": self.a, "b": self.b, "c": self.c, "residual": self.residual})

    @classmethod
    def from_json(cls, text: str) -> "PerformanceModel":
        d = json.loads(text)
        return cls(float(d["a"]), float(d["b"]), float(d["c"]), float(d.get("residual", 0.0)))

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "PerformanceModel":
        with open(path) as fh:
            return cls.from_json(fh.read())


def _linear_part(n: np.ndarray, t: np.ndarray, wts: np.ndarray, b: float) -> tuple[float, float, np.ndarray]:
    A = np.column_stack([n ** b, np.ones_like(n)]) * wts[:, None]
    coef, *_ = np.linalg.lstsq(A, t * wts, rcond=None)
    return float(coef[0]), float(coef[1]), A @ coef - t * wts


def fit_performance_model(samples: Sequence[tuple[float, float]],
                          return_model: bool = False):
    """Least-squares fit of ``a n^b + c`` to ``(n, seconds)`` samples.

    For a fixed exponent the problem is linear in ``(a, c)``; the exponent is
    found by a grid search on that reduced problem and polished with a
    Levenberg-Marquardt solve over all three parameters.  Residuals are
    weighted by ``1/t`` so short and long runs count alike.  Fewer than four
    distinct sizes give the fallback ``(0, 1, median)``.
    """
    arr = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    n, t = arr[:, 0], arr[:, 1]
    ok = np.all(np.isfinite(arr)) and np.all(n > 0) and len(np.unique(n)) >= 4
    if ok and np.ptp(t) == 0.0:
        model = PerformanceModel(0.0, 1.0, float(t[0]), 0.0)
        return model if return_model else (model.a, model.b, model.c)
    if not ok:
        med = float(np.median(t)) if t.size else 0.0
        model = PerformanceModel(0.0, 1.0, med, float("nan"))
        return model if return_model else (model.a, model.b, model.c)
    scale = np.abs(t)
    wts = 1.0 / np.where(scale > 0, scale, max(float(scale.max()), 1.0))
    grid = np.linspace(0.0, 6.0, 601)
    errs = [np.sum(_linear_part(n, t, wts, b)[2] ** 2) for b in grid]
    b0 = float(grid[int(np.argmin(errs))])
    a0, c0, _ = _linear_part(n, t, wts, b0)

    def resid_b(p):
        return _linear_part(n, t, wts, p[0])[2]

    rb = scipy.optimize.least_squares(resid_b, [b0], method="lm", xtol=1e-15, ftol=1e-15,
                                      gtol=1e-15, max_nfev=2000)
    b1 = float(rb.x[0])
    a1, c1, _ = _linear_part(n, t, wts, b1)

    def resid(p):
        return (p[0] * n ** p[1] + p[2] - t) * wts

    r = scipy.optimize.least_squares(resid, [a1, b1, c1], method="lm", xtol=1e-15, ftol=1e-15,
                                     gtol=1e-15, max_nfev=5000)
    a, b, c = (float(x) for x in r.x)
    res = float(np.sqrt(np.mean(resid(r.x) ** 2)))
    if not np.isfinite(res) or res > float(np.sqrt(np.mean(resid([a1, b1, c1]) ** 2))):
        a, b, c = a1, b1, c1
        res = float(np.sqrt(np.mean(resid([a, b, c]) ** 2)))
    model = PerformanceModel(a, b, c, res)
    return model if return_model else (a, b, c)


# rough single-core numbers for the compiled sequential AED; `taskqr calibrate` refits them
DEFAULT_MODEL = PerformanceModel(4.0e-9, 3.0, 2.0e-4)


def decide_parallel(pool_at_insert: int, pool_now: int, t_insert: float, t_now: float,
                    window_dim: int, model: PerformanceModel | None,
                    seq_floor: int = 96, par_ceiling: int = 1536,
                    fallback_threshold: int = 384) -> bool:
    """Run the AED in parallel iff it would outlast the remaining task pool.

    The pool is assumed to drain linearly between the two samples.  Without
    a model only the size thresholds decide.
    """
    if window_dim < seq_floor:
        return False
    if window_dim > par_ceiling:
        return True
    if model is None:
        return window_dim >= fallback_threshold
    if pool_now <= 0:
        return True
    dt = t_now - t_insert
    drained = pool_at_insert - pool_now
    if dt <= 0.0 or drained <= 0:
        return False
    rate = drained / dt
    return model.predict(window_dim) > pool_now / rate


# --------------------------------------------------------------------------
# task-based AED


@dataclass
class _Chain:
    index: int
    target: int
    size: int
    windows: list[tuple[int, int]] = field(default_factory=list)


def plan_reorder_chains(tf: int, g0: int, pieces: Sequence[int], b: int) -> list[_Chain]:
    """Windows that move consecutive pieces of the group (sizes ``pieces``) up to ``tf``.

    Window bounds are conservative: a resize may leave a piece one row lower
    than planned, and a piece never passes the one above it.
    """
    chains = []
    bottoms = []
    target, start = tf, g0
    for i, f in enumerate(pieces):
        chains.append(_Chain(i, target, f))
        target += f
        start += f
        bottoms.append(start)
    done = [False] * len(chains)
    while not all(done):
        if sum(len(ch.windows) for ch in chains) > 100000:
            raise AssertionError("reorder planning did not terminate")
        for i, ch in enumerate(chains):
            if done[i]:
                continue
            e = bottoms[i]
            a = max(ch.target, -(-(e - 2 * b) // b) * b)
            ch.windows.append((a, e))
            top = a if a == ch.target else a + 1
            if i > 0:
                top = max(top, bottoms[i - 1])
            bottoms[i] = top + ch.size
            # done once the window starts at the target and the piece above has settled
            done[i] = a == ch.target and (i == 0 or done[i - 1])
    return chains


def split_blocks(blocks: Sequence[int], limit: int, max_pieces: int = 2) -> list[int]:
    """Up to ``max_pieces`` pieces of whole blocks, at most ``limit`` rows each, from the group top."""
    pieces: list[int] = []
    size = 0
    for bs in blocks:
        if size + bs > limit:
            pieces.append(size)
            if len(pieces) == max_pieces:
                return pieces
            size = 0
        size += bs
    if size:
        pieces.append(size)
    return pieces[:max_pieces]


class ParallelAed:
    """Task-based AED on a side copy of the window.

    The driver calls :meth:`start`, reduces the side matrix through the child
    segment returned by :meth:`root_range`, then alternates :meth:`advance`
    until it reports completion and finally calls :meth:`finish`.
    """

    def __init__(self, ctx: Context, plan: AedPlan, seg_lo: int, seg_hi: int, prios: Priorities,
                 n_req: int, exceptional: bool = False, tag: str = "") -> None:
        self.ctx = ctx
        self.plan = plan
        self.seg_lo = seg_lo
        self.seg_hi = seg_hi
        self.prios = prios
        self.n_req = n_req
        self.exceptional = exceptional
        self.tag = tag
        rt = ctx.rt
        w = plan.size
        self.w = w
        self.b = plan.b_aed
        self.T = np.zeros((w, w))
        self.V = np.eye(w)
        self.spike = np.zeros(w)
        self.side = Context(rt, self.T, self.V, self.b, ctx.cfg, ctx.cond, ctx.nglob, ctx.faults,
                            ctx.stats, name=(ctx.name, "aed", plan.lo, id(self)), log=ctx.log)
        self.grid: TileGrid = self.side.grid
        self.spike_h = [rt.handle((self.side.name, "spike", i)) for i in range(self.grid.tile_rows)]
        self.meta = rt.handle((self.side.name, "meta"))
        self.state_h = None
        self.halted = False
        self.chains_total = 0
        self.batches: list[list[int]] = []
        self.result_h = rt.handle((self.side.name, "result"))
        self.Vh = rt.handle((self.side.name, "V"), self.V)

    # -- helpers -----------------------------------------------------------

    def _spike_pieces(self, r0: int, r1: int):
        if r1 <= r0:
            return []
        return self.spike_h[r0 // self.b:(r1 - 1) // self.b + 1]

    def _edge_ge(self, x: int) -> int:
        x = max(0, x)
        return min(self.w, -(-x // self.b) * self.b)

    # -- phase 1: copy -----------------------------------------------------

    def start(self) -> None:
        ctx, lo, hi = self.ctx, self.plan.lo, self.plan.hi
        H, T = ctx.H, self.T
        n_req = self.n_req
        exc = self.exceptional

        def body():
            T[...] = H[lo:hi, lo:hi]
            s = float(H[lo, lo - 1]) if lo > 0 else 0.0
            ex = exceptional_shifts(T, n_req) if exc else None
            self.meta.data = (s, ex)

        reads = ctx.htiles(lo, hi, lo, hi) + (ctx.htiles(lo, lo + 1, lo - 1, lo) if lo > 0 else [])
        writes = list(self.side.Ht.values()) + [self.meta]
        seq = ctx.rt.insert(body, reads=reads, writes=writes, prio=self.prios.max,
                            kind="aed_copy", size=self.w, tag=self.tag)
        ctx.record("aed_copy", Region(lo, hi, lo, hi), self.prios.max, seq, self.tag)

    def root_range(self) -> tuple[int, int]:
        return 0, self.w

    # -- phase 2: deflation walk ---------------------------------------------

    def begin_deflation(self) -> None:
        rt, w = self.ctx.rt, self.w
        V, spike = self.V, self.spike

        def body():
            s = self.meta.data[0]
            spike[:] = s * V[0, :]

        rt.insert(body, reads=self.side.ztiles(0, 1, 0, w) + [self.meta],
                  writes=self._spike_pieces(0, w), prio=self.prios.max, kind="aed_spike",
                  size=w, tag=self.tag)
        self.tf = 0
        self.g0 = w
        self.ns = w
        self.chain_states: list = []
        self._insert_deflate()

    def _window_top(self, g0: int) -> tuple[int, bool]:
        a = max(self.tf, self._edge_ge(self.ns - 2 * (self.b - 1)))
        if a > g0 - 2 and a > self.tf:
            a = max(self.tf, a - self.b)
        return a, a == self.tf

    def _insert_window(self, kind: str, lo: int, hi: int, prev, deps: Sequence,
                       clamp_h=None, known: bool = False, g0: int | None = None) -> object:
        """Insert one deflate/reorder window task plus its updates; returns its state handle."""
        rt = self.ctx.rt
        side = self.side
        T, spike = self.T, self.spike
        cond, faults, nglob = side.cond, side.faults, side.nglob
        mode = DEFLATE if kind == "deflate" else REORDER
        Uh = rt.handle((side.name, kind, "U", lo, hi, rt.inserted))
        new_h = rt.handle((side.name, kind, "state", rt.inserted))

        def body():
            st: DeflateWindowState = prev.data
            halted = st.halted or any(d.data.halted for d in deps)
            clamp = None
            if clamp_h is not None:
                halted = halted or clamp_h.data.halted
                clamp = clamp_h.data.g1
            W = np.ascontiguousarray(T[lo:hi, lo:hi])
            U = np.eye(hi - lo)
            sp = spike[lo:hi].copy()
            cur = replace(st, lo=lo, hi=hi, spike=sp, top_known=known, halted=halted,
                          g0=st.g0 if g0 is None else g0)
            new = _apply_window(W, U, sp, cur, cond, mode, clamp, faults, nglob)
            T[lo:hi, lo:hi] = W
            spike[lo:hi] = new.spike
            Uh.data = U
            new_h.data = new

        reads = [prev] + list(deps) + ([clamp_h] if clamp_h is not None else [])
        writes = side.htiles(lo, hi, lo, hi) + self._spike_pieces(lo, hi) + [Uh, new_h]
        p = self.prios
        seq = rt.insert(body, reads=reads, writes=writes, prio=p.max, kind=kind,
                        size=hi - lo, tag=self.tag)
        side.record(kind, Region(lo, hi, lo, hi), p.max, seq, self.tag)
        if lo > 0:
            side.insert_right(Uh, lo, hi, 0, lo, lambda reg: p.left, self.tag)
        if hi < self.w:
            side.insert_left(Uh, lo, hi, hi, self.w, lambda reg: p.default, self.tag)
        side.insert_z(Uh, lo, hi, p.min, self.tag)
        return new_h

    def _insert_deflate(self) -> None:
        rt = self.ctx.rt
        a, known = self._window_top(self.g0)
        if self.state_h is None:
            init = rt.handle((self.side.name, "state0"),
                             DeflateWindowState(a, self.ns, np.zeros(0), self.ns, self.ns,
                                                self.tf, self.ns))
            prev = init
        else:
            prev = self.state_h
        deps = self.chain_states
        self.chain_states = []
        # a reorder batch moved the top of the group; the main thread knows where it went
        self.state_h = self._insert_window("deflate", a, self.ns, prev, deps, known=known,
                                           g0=self.g0)

    def advance(self) -> bool:
        """Acquire the last deflate state and insert the next step; True once the walk is over."""
        st: DeflateWindowState = self.ctx.rt.read(self.state_h)
        self.ns = st.ns
        self.g0 = st.g0
        self.halted = st.halted
        if st.halted:
            return True
        if st.g0 <= self.tf:
            return True
        if st.g1 - st.g0 >= self.b - 1:
            pieces = split_blocks(st.blocks, self.b - 1)
            if pieces:
                self._insert_reorder(st, pieces)
        self._insert_deflate()
        return False

    def _insert_reorder(self, st: DeflateWindowState, pieces: list[int]) -> None:
        rt = self.ctx.rt
        chains = plan_reorder_chains(self.tf, st.g0, pieces, self.b)
        self.batches.append(list(pieces))
        self.chains_total += len(chains)
        start = st.g0
        heads = []
        for ch, f in zip(chains, pieces):
            h = rt.handle((self.side.name, "chain", len(self.batches), ch.index, "init"),
                          DeflateWindowState(0, 0, np.zeros(0), start, start + f, ch.target, st.ns))
            heads.append(h)
            start += f
        nsteps = max(len(ch.windows) for ch in chains)
        for j in range(nsteps):
            for i, ch in enumerate(chains):
                if j >= len(ch.windows):
                    continue
                a, e = ch.windows[j]
                clamp_h = heads[i - 1] if i > 0 else None
                deps = [self.state_h]
                heads[i] = self._insert_window("reorder", a, e, heads[i], deps, clamp_h=clamp_h,
                                               known=(a == ch.target))
        self.chain_states = heads
        moved = sum(pieces)
        self.tf += moved
        self.g0 = st.g0 + moved

    # -- phase 3: spike elimination and embedding --------------------------------

    def finish(self) -> AedOutcome:
        rt, ctx = self.ctx.rt, self.ctx
        side = self.side
        T, V, spike = self.T, self.V, self.spike
        n_req, w = self.n_req, self.w
        ns_known = self.ns

        def fin_body():
            ns = ns_known
            cands = block_eigenvalues(T, 0, ns)
            nd = w - ns
            if nd >= 1:
                _eliminate_spike(T, V, spike, ns)
            self.result_h.data = (nd, cands)

        writes = list(side.Ht.values()) + list(side.Zt.values()) + self.spike_h + [self.result_h, self.Vh]
        reads = [self.state_h] + list(self.chain_states) + [self.meta]
        rt.insert(fin_body, reads=reads, writes=writes, prio=self.prios.max, kind="aed_finalize",
                  size=w, tag=self.tag)
        nd, cands = rt.read(self.result_h)
        out = AedOutcome(nd, select_shifts(cands, n_req), nd >= 1, w - nd, self.halted, 0, cands)
        if nd >= 1:
            lo, hi = self.plan.lo, self.plan.hi
            H = ctx.H

            def embed():
                H[lo:hi, lo:hi] = T
                H[lo:hi, lo - 1] = spike

            writes = ctx.htiles(lo, hi, lo, hi) + ctx.htiles(lo, hi, lo - 1, lo)
            reads = list(side.Ht.values()) + self.spike_h + [self.result_h]
            rt.insert(embed, reads=reads, writes=writes, prio=self.prios.max, kind="aed_embed",
                      size=w, tag=self.tag)
            insert_aed_updates(ctx, self.Vh, lo, hi, self.seg_lo, self.seg_hi, self.prios, self.tag)
        if self.exceptional:
            out.shifts = rt.read(self.meta)[1]
        return out


def insert_aed_updates(ctx: Context, Vh, lo: int, hi: int, seg_lo: int, seg_hi: int,
                       prios: Priorities, tag: str = "") -> None:
    """Apply an accepted AED transformation outside its window."""
    n = ctx.n
    if hi < n:
        ctx.insert_left(Vh, lo, hi, hi, n, lambda reg: prios.min, tag)
    if seg_lo < lo:
        ctx.insert_right(Vh, lo, hi, seg_lo, lo, lambda reg: prios.max, tag)
    if seg_lo > 0:
        ctx.insert_right(Vh, lo, hi, 0, seg_lo, lambda reg: prios.min, tag)
    ctx.insert_z(Vh, lo, hi, prios.min, tag)


def insert_small_aed(ctx: Context, plan: AedPlan, prios: Priorities, n_req: int,
                     exceptional: bool = False, tag: str = ""):
    """Insert the single-task sequential AED; returns the handle carrying its result."""
    rt = ctx.rt
    lo, hi = plan.lo, plan.hi
    H = ctx.H
    res_h = rt.handle((ctx.name, "small_aed", lo, hi, rt.inserted))
    cond, nglob, faults = ctx.cond, ctx.nglob, ctx.faults

    def body():
        W = np.ascontiguousarray(H[lo:hi, lo:hi])
        s = float(H[lo, lo - 1]) if lo > 0 else 0.0
        ex = exceptional_shifts(W, n_req) if exceptional else None
        T, V, spike, nd, cands, halted, its = _aed_window(W, s, cond, nglob, faults)
        if nd >= 1:
            H[lo:hi, lo:hi] = T
            if lo > 0:
                H[lo:hi, lo - 1] = spike
        shifts = ex if ex is not None else select_shifts(cands, n_req)
        res_h.data = (AedOutcome(nd, shifts, nd >= 1, hi - lo - nd, halted, its, cands), V)

    writes = ctx.htiles(lo, hi, lo, hi) + (ctx.htiles(lo, hi, lo - 1, lo) if lo > 0 else []) + [res_h]
    seq = rt.insert(body, writes=writes, prio=prios.max, kind="small_aed", size=hi - lo, tag=tag)
    ctx.record("small_aed", Region(lo, hi, lo, hi), prios.max, seq, tag)
    return res_h
