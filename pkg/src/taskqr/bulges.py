"""Bulge chasing: chain planning, the window kernel and task insertion.

A bulge is tracked by the row ``p`` of its next 3x3 reflector.  Inside a
window a bulge may apply a reflector at ``p`` once the bulge ahead of it has
reached ``p + 4``, so trains settle three rows apart.  A chase window ends on
a tile edge; the next window of the chain starts one row above the top bulge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .context import Context, Priorities
from .deflation import DeflationCondition
from .kernels import ShiftSet
from .matrix import Region

INTRO = "introduce"
CHASE = "chase"
ANNIHILATE = "annihilate"
INTRO_ANNIHILATE = "introduce+annihilate"


@dataclass
class BulgeWindow:
    chain: int
    step: int
    ws: int
    we: int
    mode: str
    pos_in: tuple[int, ...]
    final: bool = False
    scan: tuple[int, int] = (0, 0)

    @property
    def size(self) -> int:
        return self.we - self.ws

    @property
    def introduces(self) -> bool:
        return self.mode in (INTRO, INTRO_ANNIHILATE)

    @property
    def annihilates(self) -> bool:
        return self.mode in (ANNIHILATE, INTRO_ANNIHILATE)

    def pos_out(self) -> tuple[int, ...]:
        k = len(self.pos_in)
        if self.annihilates:
            return tuple([self.we - 1] * k)
        return tuple(self.we - 3 - 3 * j for j in range(k))


@dataclass
class BulgeChain:
    index: int
    shifts: np.ndarray
    windows: list[BulgeWindow] = field(default_factory=list)

    @property
    def n_bulges(self) -> int:
        return self.shifts.shape[0]


@dataclass
class ChainPlan:
    lo: int
    hi: int
    b: int
    chains: list[BulgeChain]
    steps: list[list[BulgeWindow]]


def max_bulges_per_chain(b: int) -> int:
    return max(1, (b - 1) // 3)


def _as_pairs(shifts) -> np.ndarray:
    if isinstance(shifts, ShiftSet):
        return shifts.pairs()
    arr = np.asarray(shifts)
    if np.iscomplexobj(arr) or arr.ndim == 1:
        return ShiftSet.from_eigenvalues(arr).pairs()
    return np.asarray(arr, dtype=np.float64).reshape(-1, 4)


def _chain_windows(index: int, lo: int, hi: int, b: int, k: int) -> list[BulgeWindow]:
    out: list[BulgeWindow] = []
    ws = lo
    pos: tuple[int, ...] = tuple([-1] * k)
    started = False
    while True:
        if hi - ws <= 2 * b:
            we = hi
        else:
            we = ((ws + 2 * b) // b) * b
        if not started:
            mode = INTRO_ANNIHILATE if we == hi else INTRO
        else:
            mode = ANNIHILATE if we == hi else CHASE
        w = BulgeWindow(index, -1, ws, we, mode, pos)
        out.append(w)
        if we == hi:
            return out
        pos = w.pos_out()
        ws = pos[-1] - 1
        started = True


def plan_chains(lo: int, hi: int, shifts, b: int, max_chains: int | None = None) -> ChainPlan:
    """Split the shifts into chains of at most ``(b-1)//3`` bulges and schedule their windows.

    ``max_chains`` can only raise the chain count (up to one bulge per chain);
    the per-chain bound always wins.
    """
    pairs = _as_pairs(shifts)
    nb = pairs.shape[0]
    if nb < 1:
        raise ValueError("need at least one double shift")
    if hi - lo < 3:
        raise ValueError("segment too small for bulge chasing; use small_schur")
    kmax = max_bulges_per_chain(b)
    nchains = -(-nb // kmax)
    if max_chains is not None and max_chains > nchains:
        nchains = min(max_chains, nb)
    base, extra = divmod(nb, nchains)
    chains: list[BulgeChain] = []
    start = 0
    for c in range(nchains):
        k = base + (1 if c < extra else 0)
        ch = BulgeChain(c, pairs[start:start + k].copy())
        ch.windows = _chain_windows(c, lo, hi, b, k)
        chains.append(ch)
        start += k
    steps = _schedule(chains)
    # the last chain to be introduced sweeps the full segment last; it records the aftermath
    last = chains[-1]
    scan_lo = lo + 1
    for w in last.windows:
        w.final = True
        top = w.we if w.annihilates else w.pos_out()[-1]
        w.scan = (scan_lo, top)
        scan_lo = top
    return ChainPlan(lo, hi, b, chains, steps)


def _schedule(chains: list[BulgeChain]) -> list[list[BulgeWindow]]:
    C = len(chains)
    nxt = [0] * C
    steps: list[list[BulgeWindow]] = []
    inf = 1 << 60
    while any(nxt[c] < len(chains[c].windows) for c in range(C)):
        # where each chain's top bulge currently sits (column index)
        top = []
        for c in range(C):
            if nxt[c] == 0:
                top.append(-inf)
            elif nxt[c] >= len(chains[c].windows):
                top.append(inf)
            else:
                top.append(chains[c].windows[nxt[c]].ws)
        step: list[BulgeWindow] = []
        for c in range(C):
            if nxt[c] >= len(chains[c].windows):
                continue
            w = chains[c].windows[nxt[c]]
            if c > 0 and w.we > top[c - 1]:
                continue
            w.step = len(steps)
            step.append(w)
            nxt[c] += 1
        if not step:
            raise AssertionError("bulge chain schedule stalled")
        steps.append(sorted(step, key=lambda w: w.ws))
    return steps


def push_bulges(W: np.ndarray, shifts, pos_in, mode: str, cond: DeflationCondition,
                final_chain: bool = False, scan: tuple[int, int] | None = None,
                nglob: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run the window kernel on a copy of ``W``.

    ``pos_in`` are window-local next-reflector rows (``-1`` not yet
    introduced).  Returns ``(W_out, U, codes)`` with ``W_out = U^T W U`` and
    ``codes`` the local aftermath classification (only inside ``scan`` when
    ``final_chain``).
    """
    Wc = np.array(W, dtype=np.float64, order="C", copy=True)
    m = Wc.shape[0]
    U = np.eye(m)
    pairs = _as_pairs(shifts)
    pos = np.array(pos_in, dtype=np.int64)
    if pos.shape[0] != pairs.shape[0]:
        raise ValueError("one position per double shift is required")
    codes = np.zeros(m, dtype=np.int8)
    intro = mode in (INTRO, INTRO_ANNIHILATE)
    ann = mode in (ANNIHILATE, INTRO_ANNIHILATE)
    s0, s1 = (scan if (final_chain and scan is not None) else (0, 0))
    kind, param = cond.code
    K.push_bulges(Wc, U, pos, pairs, intro, ann, s0, s1, codes, kind, param,
                  int(nglob if nglob is not None else m))
    return Wc, U, codes


def right_update_priority(reg: Region, line: int, prios: Priorities) -> int:
    """Right updates reaching below ``line`` feed the next insertion step."""
    return prios.max if reg.r1 > line else prios.default


def insert_chase_tasks(ctx: Context, plan: ChainPlan, prios: Priorities,
                       next_aed_top: int | None = None, tag: str = "") -> list[int]:
    """Insert push-bulges tasks and their sliced updates, topmost window first per step."""
    seqs: list[int] = []
    H = ctx.H
    lo, hi = plan.lo, plan.hi
    nglob = ctx.nglob
    kind, param = ctx.kind, ctx.param
    for si, step in enumerate(plan.steps):
        line = min(w.ws for w in plan.steps[si + 1]) if si + 1 < len(plan.steps) else hi
        if next_aed_top is not None:
            line = min(line, next_aed_top)
        for w in step:
            ch = plan.chains[w.chain]
            Uh = ctx.rt.handle((ctx.name, "U", w.chain, w.step))
            ws, we = w.ws, w.we
            pos_local = np.array([p - ws if p >= 0 else -1 for p in w.pos_in], dtype=np.int64)
            intro = w.introduces
            ann = w.annihilates
            s0, s1 = (w.scan[0] - ws, w.scan[1] - ws) if w.final else (0, 0)
            pairs = ch.shifts

            def body(Uh=Uh, ws=ws, we=we, pos=pos_local, intro=intro, ann=ann, s0=s0, s1=s1,
                     pairs=pairs, final=w.final):
                Wc = np.ascontiguousarray(H[ws:we, ws:we])
                m = we - ws
                U = np.eye(m)
                codes = np.zeros(m, dtype=np.int8)
                K.push_bulges(Wc, U, pos.copy(), pairs, intro, ann, s0, s1, codes,
                              kind, param, nglob)
                H[ws:we, ws:we] = Wc
                Uh.data = U
                if final and s1 > s0:
                    ctx.aftermath[ws + s0:ws + s1] = codes[s0:s1]

            writes = ctx.htiles(ws, we, ws, we) + [Uh]
            if w.final:
                writes += ctx.after_pieces(w.scan[0], w.scan[1])
            seq = ctx.rt.insert(body, writes=writes, prio=prios.max, kind="push_bulges",
                                size=we - ws, tag=tag)
            ctx.record("push_bulges", Region(ws, we, ws, we), prios.max, seq, tag)
            seqs.append(seq)
            ctx.insert_window_updates(
                Uh, ws, we, lo, hi, prios,
                right_prio=lambda reg, line=line: right_update_priority(reg, line, prios), tag=tag)
    ctx.stats.bulges += sum(ch.n_bulges for ch in plan.chains)
    return seqs
