"""Shared solver state: configuration, matrices with their tile handles, update helpers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .deflation import DeflationCondition
from .kernels import FaultInjector
from .matrix import Region, TileGrid, default_tile_size, slice_update_region
from .runtime import DEFAULT_PRIO, MAX_PRIO, MIN_PRIO, DataHandle, Runtime

# aftermath codes
NONZERO = 0
ZEROED_VIGILANT = 1
ZEROED_FLUSHED = 2


class Priorities(NamedTuple):
    max: int = MAX_PRIO
    default: int = DEFAULT_PRIO
    min: int = MIN_PRIO

    @property
    def left(self) -> int:
        return max(self.default, self.max - 1)


def child_priorities(parent: Priorities) -> Priorities:
    """``max = parent.max``, ``min = min(max, parent.def + 1)``, ``def = (max + min) // 2``."""
    mx = parent.max
    mn = min(mx, parent.default + 1)
    return Priorities(mx, (mx + mn) // 2, mn)


def shift_budget(n: int) -> int:
    if n < 1000:
        return 32
    if n < 6000:
        return 64
    if n < 12000:
        return 128
    return 256


@dataclass
class SolverConfig:
    """Knobs of the task-based solver; defaults mirror the documented choices."""

    workers: int = 1
    tile_size: int | None = None
    deflation: DeflationCondition = field(default_factory=DeflationCondition.lapack)
    deterministic: bool = False
    stencil: int | None = None
    aed_ratio: float = 1.5
    enough_shifts: float = 0.5
    many_deflated: float = 0.25
    seq_floor: int = 96
    par_ceiling: int = 1536
    deterministic_aed_threshold: int = 384
    parallel_aed: str = "auto"
    aed_tile: int | None = None
    model: object | None = None
    fault_rate: float = 0.0
    fault_seed: int = 0
    iteration_factor: int = 30
    telemetry: bool = True
    max_chains: int | None = None
    reference_workers: int = 8
    small_factor: int = 2
    exceptional_period: int = 6
    hessenberg: bool = True

    def __post_init__(self) -> None:
        if self.workers < 0:
            raise ValueError("workers must be >= 0")
        if self.tile_size is not None and self.tile_size < 8:
            raise ValueError("tile size must be >= 8")
        if self.parallel_aed not in ("auto", "never", "always"):
            raise ValueError("parallel_aed must be auto, never or always")
        if isinstance(self.deflation, str):
            self.deflation = DeflationCondition.parse(self.deflation)

    def tile_for(self, n: int) -> int:
        if self.tile_size is not None:
            return int(self.tile_size)
        w = self.reference_workers if self.deterministic else max(1, self.workers)
        return default_tile_size(n, w)

    def stencil_for(self, b: int) -> int:
        if self.stencil is not None:
            return max(1, int(self.stencil))
        return max(1, round(256 / b))

    def aed_tile_for(self, b: int) -> int:
        if self.aed_tile is not None:
            return int(self.aed_tile)
        return int(min(128, max(32, b // 4)))


@dataclass
class Stats:
    bulges: int = 0
    aed_sequential: int = 0
    aed_parallel: int = 0
    deflations: list = field(default_factory=list)
    small_schur: int = 0
    small_schur_iterations: int = 0
    aed_iterations: int = 0
    vigilant: int = 0
    failed_swaps_halts: int = 0
    reorder_chains: int = 0
    transitions: list = field(default_factory=list)

    @property
    def francis_sweeps(self) -> int:
        """Double-shift steps: chased bulges plus the iterations of every small Schur reduction."""
        return self.bulges + self.small_schur_iterations + self.aed_iterations

    def as_dict(self) -> dict:
        return {
            "sweeps": self.francis_sweeps,
            "bulges": self.bulges,
            "aed_sequential": self.aed_sequential,
            "aed_parallel": self.aed_parallel,
            "aed_deflated": int(sum(self.deflations)),
            "small_schur": self.small_schur,
            "small_schur_iterations": self.small_schur_iterations,
            "aed_iterations": self.aed_iterations,
            "vigilant": self.vigilant,
            "aed_halts": self.failed_swaps_halts,
            "reorder_chains": self.reorder_chains,
        }


class Context:
    """One matrix (``H``) with its accumulated transformation (``Z``) and tile handles.

    The top-level solve owns one context; a parallel AED creates another for
    the copied window, with ``Z`` being the window accumulator.
    """

    def __init__(self, rt: Runtime, H: np.ndarray, Z: np.ndarray, b: int, cfg: SolverConfig,
                 cond: DeflationCondition, nglob: int, faults: FaultInjector, stats: Stats,
                 name: str = "H", log: list | None = None) -> None:
        self.rt = rt
        self.H = H
        self.Z = Z
        self.n = H.shape[0]
        self.b = b
        self.cfg = cfg
        self.cond = cond
        self.kind, self.param = cond.code
        self.nglob = nglob
        self.faults = faults
        self.stats = stats
        self.name = name
        self.grid = TileGrid.square(self.n, b)
        self.zgrid = TileGrid(Z.shape[0], Z.shape[1], b)
        self.Ht = rt.register_tiles(self.grid, name)
        self.Zt = rt.register_tiles(self.zgrid, (name, "Z"))
        self.stencil = cfg.stencil_for(b)
        self.aftermath = np.zeros(self.n, dtype=np.int8)
        self.after_handles = [rt.handle((name, "aftermath", i)) for i in range(self.grid.tile_rows)]
        self.log = log

    # -- handle helpers ----------------------------------------------------

    def htiles(self, r0: int, r1: int, c0: int, c1: int) -> list[DataHandle]:
        return [self.Ht[t] for t in self.grid.tiles_of(r0, r1, c0, c1)]

    def ztiles(self, r0: int, r1: int, c0: int, c1: int) -> list[DataHandle]:
        return [self.Zt[t] for t in self.zgrid.tiles_of(r0, r1, c0, c1)]

    def after_pieces(self, r0: int, r1: int) -> list[DataHandle]:
        if r1 <= r0:
            return []
        return self.after_handles[r0 // self.b:(r1 - 1) // self.b + 1]

    def record(self, kind: str, region: Region, prio: int, seq: int, tag: str = "") -> None:
        if self.log is not None:
            self.log.append((seq, kind, region, prio, tag))

    # -- update insertion --------------------------------------------------

    def insert_left(self, Uh: DataHandle, ws: int, we: int, c0: int, c1: int,
                    prio: Callable[[Region], int], tag: str = "") -> list[int]:
        """``H[ws:we, c0:c1] <- U^T H[ws:we, c0:c1]``, cut along stencil columns."""
        out = []
        H = self.H
        for reg in slice_update_region(Region(ws, we, c0, c1), self.grid, self.stencil,
                                       split_rows=False):
            def body(Uh=Uh, r=reg):
                blk = H[r.r0:r.r1, r.c0:r.c1]
                blk[...] = Uh.data.T @ blk
            p = prio(reg)
            seq = self.rt.insert(body, reads=(Uh,), writes=self.htiles(reg.r0, reg.r1, reg.c0, reg.c1),
                                 prio=p, kind="left_update", size=reg.size, tag=tag)
            self.record("left_update", reg, p, seq, tag)
            out.append(seq)
        return out

    def insert_right(self, Uh: DataHandle, ws: int, we: int, r0: int, r1: int,
                     prio: Callable[[Region], int], tag: str = "") -> list[int]:
        """``H[r0:r1, ws:we] <- H[r0:r1, ws:we] U``, cut along stencil rows."""
        out = []
        H = self.H
        for reg in slice_update_region(Region(r0, r1, ws, we), self.grid, self.stencil,
                                       split_cols=False):
            def body(Uh=Uh, r=reg):
                blk = H[r.r0:r.r1, r.c0:r.c1]
                blk[...] = blk @ Uh.data
            p = prio(reg)
            seq = self.rt.insert(body, reads=(Uh,), writes=self.htiles(reg.r0, reg.r1, reg.c0, reg.c1),
                                 prio=p, kind="right_update", size=reg.size, tag=tag)
            self.record("right_update", reg, p, seq, tag)
            out.append(seq)
        return out

    def insert_z(self, Uh: DataHandle, ws: int, we: int, prio: int, tag: str = "") -> list[int]:
        """``Z[:, ws:we] <- Z[:, ws:we] U``."""
        out = []
        Z = self.Z
        for reg in slice_update_region(Region(0, Z.shape[0], ws, we), self.zgrid, self.stencil,
                                       split_cols=False):
            def body(Uh=Uh, r=reg):
                blk = Z[r.r0:r.r1, r.c0:r.c1]
                blk[...] = blk @ Uh.data
            seq = self.rt.insert(body, reads=(Uh,), writes=self.ztiles(reg.r0, reg.r1, reg.c0, reg.c1),
                                 prio=prio, kind="q_update", size=reg.size, tag=tag)
            self.record("q_update", reg, prio, seq, tag)
            out.append(seq)
        return out

    def insert_window_updates(self, Uh: DataHandle, ws: int, we: int, lo: int, hi: int,
                              prios: Priorities, right_prio: Callable[[Region], int] | None = None,
                              left_prio: int | None = None, tag: str = "") -> None:
        """Off-window updates of a diagonal window ``[ws, we)`` inside segment ``[lo, hi)``.

        Parts outside the segment get ``min`` priority.
        """
        lp = prios.left if left_prio is None else left_prio
        rp = right_prio or (lambda reg: prios.default)
        n = self.n
        if we < hi:
            self.insert_left(Uh, ws, we, we, hi, lambda reg: lp, tag)
        if hi < n:
            self.insert_left(Uh, ws, we, max(hi, we), n, lambda reg: prios.min, tag)
        if lo < ws:
            self.insert_right(Uh, ws, we, lo, ws, rp, tag)
        if lo > 0:
            self.insert_right(Uh, ws, we, 0, min(lo, ws), lambda reg: prios.min, tag)
        self.insert_z(Uh, ws, we, prios.min, tag)
