"""Sequential window kernels: 2x2 blocks, Francis steps, small Schur, swaps."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .deflation import DeflationCondition
from .matrix import as_square, make_householder


@dataclass(frozen=True)
class ShiftSet:
    """Conjugate-closed shifts; complex pairs are adjacent (positive imaginary part first)."""

    shifts: tuple[complex, ...]
    origin: str = "aed"

    def __len__(self) -> int:
        return len(self.shifts)

    @classmethod
    def from_eigenvalues(cls, eigs: Iterable[complex], origin: str = "aed") -> "ShiftSet":
        return cls(tuple(complex(z) for z in eigs), origin)

    def pairs(self) -> np.ndarray:
        """One row ``(sr1, si1, sr2, si2)`` per double shift.

        Complex pairs are kept together and leftover real shifts are paired in
        order.  The count must be even.
        """
        if len(self.shifts) % 2:
            raise ValueError("an even number of shifts is needed to form double shifts")
        rows: list[tuple[float, float, float, float]] = []
        reals: list[float] = []
        i = 0
        s = self.shifts
        while i < len(s):
            z = s[i]
            if z.imag != 0.0:
                if i + 1 >= len(s) or s[i + 1] != z.conjugate():
                    raise ValueError("complex shifts must come in adjacent conjugate pairs")
                rows.append((z.real, abs(z.imag), z.real, -abs(z.imag)))
                i += 2
            else:
                reals.append(z.real)
                i += 1
        for a, b in zip(reals[0::2], reals[1::2]):
            rows.append((a, 0.0, b, 0.0))
        return np.array(rows, dtype=np.float64).reshape(-1, 4)


@dataclass
class SmallSchurResult:
    converged: bool
    T: np.ndarray
    Z: np.ndarray
    eigenvalues: np.ndarray
    iterations: int
    unconverged_rows: int = 0

    @property
    def status(self) -> str:
        return "converged" if self.converged else "iteration-limit"


@dataclass(frozen=True)
class SwapOutcome:
    success: bool
    position: int
    sizes: tuple[int, int]


@dataclass
class FaultInjector:
    """Forces swap rejections with probability ``rate`` from a fixed stream of uniforms."""

    rate: float = 0.0
    seed: int = 0
    size: int = 4096
    uniforms: np.ndarray = field(init=False)
    counter: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("fault rate must lie in [0, 1]")
        rng = np.random.Generator(np.random.Philox(self.seed))
        self.uniforms = rng.random(self.size) if self.rate > 0 else np.zeros(0)
        self.counter = np.zeros(1, dtype=np.int64)

    def args(self) -> tuple[float, np.ndarray, np.ndarray]:
        return self.rate, self.uniforms, self.counter


NO_FAULTS = FaultInjector(0.0)


def eig_2x2(B) -> tuple[complex, complex, tuple[float, float], np.ndarray]:
    """Eigenvalues and standardizing rotation ``(cs, sn)`` of a 2x2 block.

    The returned block equals ``R^T B R`` with ``R = [[cs, -sn], [sn, cs]]``;
    it is upper triangular for real eigenvalues and of the form
    ``[[a, b], [c, a]]`` with ``b c < 0`` otherwise.
    """
    B = np.asarray(B, dtype=np.float64)
    if B.shape != (2, 2) or not np.all(np.isfinite(B)):
        raise ValueError("expected a finite 2x2 block")
    a, b, c, d, r1, i1, r2, i2, cs, sn = K.lanv2(B[0, 0], B[0, 1], B[1, 0], B[1, 1])
    return complex(r1, i1), complex(r2, i2), (cs, sn), np.array([[a, b], [c, d]])


def schur_blocks(T: np.ndarray, lo: int = 0, hi: int | None = None) -> list[tuple[int, int]]:
    """``(start, size)`` of the diagonal blocks of a quasi-triangular ``T[lo:hi, lo:hi]``."""
    hi = T.shape[0] if hi is None else hi
    out = []
    r = lo
    while r < hi:
        sz = 2 if r + 1 < hi and T[r + 1, r] != 0.0 else 1
        out.append((r, sz))
        r += sz
    return out


def block_eigenvalues(T: np.ndarray, lo: int = 0, hi: int | None = None) -> np.ndarray:
    """Eigenvalues read off the diagonal blocks, conjugate pairs adjacent."""
    ev: list[complex] = []
    for r, sz in schur_blocks(T, lo, hi):
        if sz == 1:
            ev.append(complex(T[r, r]))
        else:
            z1, z2, _, _ = eig_2x2(T[r:r + 2, r:r + 2])
            if z1.imag < z2.imag:
                z1, z2 = z2, z1
            ev.extend((z1, z2))
    return np.array(ev, dtype=np.complex128)


def is_standardized_schur(T: np.ndarray, lo: int = 0, hi: int | None = None) -> bool:
    """Quasi-triangular with every 2x2 block ``[[a, b], [c, a]]``, ``b c < 0``."""
    hi = T.shape[0] if hi is None else hi
    S = T[lo:hi, lo:hi]
    if np.any(np.tril(S, -2)):
        return False
    for r, sz in schur_blocks(T, lo, hi):
        if sz == 2:
            if r + 2 < hi and T[r + 2, r + 1] != 0.0:
                return False
            if T[r, r] != T[r + 1, r + 1] or not T[r, r + 1] * T[r + 1, r] < 0.0:
                return False
    return True


def francis_double_step(H, s1: complex, s2: complex) -> tuple[np.ndarray, np.ndarray]:
    """One implicit double-shift QR sweep on an unreduced Hessenberg window.

    Returns ``(Q^T H Q, Q)``.  Windows smaller than 3 are standardized directly.
    """
    H = as_square(H, "H").copy()
    n = H.shape[0]
    if complex(s1).imag != -complex(s2).imag or (complex(s1).imag != 0 and complex(s1).real != complex(s2).real):
        raise ValueError("shifts must be real or a complex conjugate pair")
    Q = np.eye(n)
    if n == 1:
        return H, Q
    if n == 2:
        _, _, (cs, sn), blk = eig_2x2(H)
        R = np.array([[cs, -sn], [sn, cs]])
        return blk, R
    s = (complex(s1) + complex(s2)).real
    t = (complex(s1) * complex(s2)).real
    x = np.array([
        H[0, 0] * H[0, 0] + H[0, 1] * H[1, 0] - s * H[0, 0] + t,
        H[1, 0] * (H[0, 0] + H[1, 1] - s),
        H[1, 0] * H[2, 1],
    ])
    for k in range(n - 2):
        refl = make_householder(x)
        v = refl.v
        lo = max(k - 1, 0)
        rows = slice(k, k + 3)
        H[rows, lo:] -= refl.tau * np.outer(v, v @ H[rows, lo:])
        rmax = min(k + 4, n)
        H[:rmax, rows] -= refl.tau * np.outer(H[:rmax, rows] @ v, v)
        Q[:, rows] -= refl.tau * np.outer(Q[:, rows] @ v, v)
        if k > 0:
            H[k + 1:k + 3, k - 1] = 0.0
        x = H[k + 1:k + 4, k].copy() if k + 3 < n else H[k + 1:k + 3, k].copy()
    refl = make_householder(x)
    v = refl.v
    rows = slice(n - 2, n)
    H[rows, n - 3:] -= refl.tau * np.outer(v, v @ H[rows, n - 3:])
    H[:, rows] -= refl.tau * np.outer(H[:, rows] @ v, v)
    Q[:, rows] -= refl.tau * np.outer(Q[:, rows] @ v, v)
    H[n - 1, n - 3] = 0.0
    return H, Q


def small_schur(H, budget: int | None = None, cond: DeflationCondition | None = None,
                nglob: int = 0) -> SmallSchurResult:
    """Reduce a Hessenberg window to standardized real Schur form.

    ``budget`` defaults to ``30 max(10, n)`` iterations.  On iteration limit
    the partially reduced window is kept in the result.
    """
    T = np.array(as_square(H, "H"), dtype=np.float64, order="C", copy=True)
    n = T.shape[0]
    if np.any(np.tril(T, -2)):
        raise ValueError("small_schur expects an upper Hessenberg matrix")
    Z = np.eye(n)
    cond = cond or DeflationCondition.lapack()
    budget = 30 * max(10, n) if budget is None else int(budget)
    kind, param = cond.code
    info, its = K.small_schur(T, Z, kind, param, int(nglob), budget)
    return SmallSchurResult(info == 0, T, Z, block_eigenvalues(T) if info == 0 else np.array([], complex),
                            int(its), int(info))


def swap_adjacent_blocks(S: np.ndarray, Q: np.ndarray, position: int, sizes: Sequence[int],
                         force_fail: bool = False, faults: FaultInjector | None = None,
                         vec: np.ndarray | None = None) -> SwapOutcome:
    """Swap the standardized blocks of ``sizes = (p, q)`` starting at ``position``.

    ``S``, ``Q`` (and the optional row vector ``vec``) are updated in place;
    they are untouched when the swap is rejected.
    """
    p, q = int(sizes[0]), int(sizes[1])
    if p not in (1, 2) or q not in (1, 2):
        raise ValueError("block sizes must be 1 or 2")
    j = int(position)
    n = S.shape[0]
    if j < 0 or j + p + q > n:
        raise ValueError("blocks must lie inside the window")
    for arr in (S, Q):
        if arr.dtype != np.float64 or not arr.flags.c_contiguous:
            raise ValueError("S and Q must be C-contiguous float64 arrays")
    if force_fail:
        return SwapOutcome(False, j, (p, q))
    rate, u, ctr = (faults or NO_FAULTS).args()
    v = np.zeros(0) if vec is None else vec
    ok = K.swap(S, Q, v, j, p, q, rate, u, ctr)
    if not ok:
        return SwapOutcome(False, j, (p, q))
    q_new = 2 if q == 2 and S[j + 1, j] != 0.0 else (1 if q == 1 else 2)
    return SwapOutcome(True, j, (q_new, p))


def small_hessenberg(window, accumulate: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
    """Householder reduction of a dense window; returns ``(H, Z)`` with ``Z^T W Z = H``."""
    A = np.array(as_square(window, "window"), dtype=np.float64, order="C", copy=True)
    Z = np.eye(A.shape[0])
    K.gehrd(A, Z)
    return A, (Z if accumulate else None)
