"""Dense storage helpers, tiling, orthogonal primitives and update slicing."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.linalg

UNIT_ROUNDOFF = 2.0**-52
SAFE_MIN = float(np.finfo(np.float64).tiny)
MIN_TILE = 8


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Return ``A`` as a finite float64 2-D array (copy only if needed)."""
    M = np.asarray(A, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains NaN or Inf entries")
    return M


def as_square(A, name: str = "matrix") -> np.ndarray:
    M = as_matrix(A, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    return M


def is_hessenberg(H: np.ndarray) -> bool:
    return not np.any(np.tril(H, -2))


def default_tile_size(n: int, workers: int) -> int:
    """Library default tile side: ``n / (8 workers)`` clamped to [64, 512]."""
    w = max(1, int(workers))
    return int(min(512, max(64, round(max(64.0, n / (8.0 * w))))))


@dataclass(frozen=True)
class TileGrid:
    """Square tiles of side ``b`` over an ``n_rows`` x ``n_cols`` matrix."""

    n_rows: int
    n_cols: int
    b: int

    def __post_init__(self) -> None:
        if self.b < MIN_TILE:
            raise ValueError(f"tile size must be >= {MIN_TILE}, got {self.b}")
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("matrix dimensions must be non-negative")

    @classmethod
    def square(cls, n: int, b: int) -> "TileGrid":
        return cls(n, n, b)

    @property
    def tile_rows(self) -> int:
        return max(1, -(-self.n_rows // self.b))

    @property
    def tile_cols(self) -> int:
        return max(1, -(-self.n_cols // self.b))

    @property
    def row_edges(self) -> list[int]:
        return _edges(self.n_rows, self.b)

    @property
    def col_edges(self) -> list[int]:
        return _edges(self.n_cols, self.b)

    def tile_range(self, i: int, j: int) -> tuple[slice, slice]:
        return (slice(i * self.b, min((i + 1) * self.b, self.n_rows)),
                slice(j * self.b, min((j + 1) * self.b, self.n_cols)))

    def tiles_of(self, r0: int, r1: int, c0: int, c1: int) -> Iterator[tuple[int, int]]:
        """Tile indices intersecting rows ``[r0, r1)`` x cols ``[c0, c1)``."""
        if r1 <= r0 or c1 <= c0:
            return
        b = self.b
        for i in range(r0 // b, (r1 - 1) // b + 1):
            for j in range(c0 // b, (c1 - 1) // b + 1):
                yield i, j

    def edge_at_or_above(self, x: int) -> int:
        """Smallest tile edge >= x."""
        return -(-x // self.b) * self.b

    def edge_at_or_below(self, x: int) -> int:
        return (x // self.b) * self.b


def _edges(n: int, b: int) -> list[int]:
    edges = list(range(0, n, b))
    edges.append(n)
    return edges


@dataclass(frozen=True)
class HouseholderReflector:
    """``I - tau v v^T`` acting on entries ``pivot, pivot+1, ...``."""

    pivot: int
    v: np.ndarray
    tau: float

    def matrix(self, dim: int | None = None) -> np.ndarray:
        k = len(self.v)
        dim = self.pivot + k if dim is None else dim
        P = np.eye(dim)
        sl = slice(self.pivot, self.pivot + k)
        P[sl, sl] -= self.tau * np.outer(self.v, self.v)
        return P

    def apply(self, x: np.ndarray) -> np.ndarray:
        y = np.array(x, dtype=np.float64, copy=True)
        sl = slice(self.pivot, self.pivot + len(self.v))
        y[sl] -= self.tau * self.v * (self.v @ y[sl])
        return y


@dataclass(frozen=True)
class GivensRotation:
    """Plane rotation ``[[c, s], [-s, c]]`` in the (i, j) plane."""

    c: float
    s: float
    i: int
    j: int

    def apply_rows(self, A: np.ndarray) -> None:
        x = A[self.i].copy()
        y = A[self.j].copy()
        A[self.i] = self.c * x + self.s * y
        A[self.j] = self.c * y - self.s * x


def make_householder(x, pivot: int = 0) -> HouseholderReflector:
    """Reflector mapping ``x`` to ``(beta, 0, ..., 0)`` with ``beta = -sign(x0) ||x||``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("reflector input must be a nonempty vector")
    if not np.all(np.isfinite(x)):
        raise ValueError("reflector input must be finite")
    alpha = float(x[0])
    xnorm = float(np.linalg.norm(x[1:])) if x.size > 1 else 0.0
    v = np.zeros_like(x)
    v[0] = 1.0
    if xnorm == 0.0:
        return HouseholderReflector(pivot, v, 0.0)
    beta = -math.copysign(math.hypot(alpha, xnorm), alpha)
    v[1:] = x[1:] / (alpha - beta)
    return HouseholderReflector(pivot, v, (beta - alpha) / beta)


def make_givens(f: float, g: float, i: int = 0, j: int = 1) -> GivensRotation:
    """Rotation with ``[[c, s], [-s, c]] @ [f, g] = [r, 0]``."""
    if g == 0.0:
        return GivensRotation(1.0, 0.0, i, j)
    if f == 0.0:
        return GivensRotation(0.0, math.copysign(1.0, g), i, j)
    r = math.hypot(f, g)
    return GivensRotation(f / r, g / r, i, j)


def frobenius_norm(M) -> float:
    """Overflow-safe Frobenius norm (two passes: scale, then scaled sum)."""
    A = np.asarray(M, dtype=np.float64)
    if A.size == 0:
        return 0.0
    scale = float(np.max(np.abs(A)))
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    S = A / scale
    return scale * math.sqrt(float(np.einsum("ij,ij->", S, S) if S.ndim == 2 else S @ S))


def hessenberg_reduce(A) -> tuple[np.ndarray, np.ndarray]:
    """Orthogonal reduction ``Q^T A Q = H`` with ``H`` upper Hessenberg."""
    M = as_square(A, "A")
    n = M.shape[0]
    if n <= 2:
        return M.copy(), np.eye(n)
    H, Q = scipy.linalg.hessenberg(M, calc_q=True)
    H = np.array(H, order="C")
    H[np.tril_indices(n, -2)] = 0.0
    return H, np.array(Q, order="C")


def apply_left_update(acc: np.ndarray, region: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """``region <- acc^T region``."""
    if acc.shape[0] != acc.shape[1] or acc.shape[0] != region.shape[0]:
        raise ValueError(f"accumulator {acc.shape} does not match region rows {region.shape}")
    res = acc.T @ region
    if out is not None:
        out[...] = res
        return out
    return res


def apply_right_update(acc: np.ndarray, region: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """``region <- region acc``."""
    if acc.shape[0] != acc.shape[1] or acc.shape[0] != region.shape[1]:
        raise ValueError(f"accumulator {acc.shape} does not match region cols {region.shape}")
    res = region @ acc
    if out is not None:
        out[...] = res
        return out
    return res


@dataclass(frozen=True)
class Region:
    r0: int
    r1: int
    c0: int
    c1: int

    @property
    def empty(self) -> bool:
        return self.r1 <= self.r0 or self.c1 <= self.c0

    @property
    def size(self) -> int:
        return max(0, self.r1 - self.r0) * max(0, self.c1 - self.c0)


def slice_update_region(region: Region | tuple[int, int, int, int], grid: TileGrid,
                        stencil: int = 1, split_rows: bool = True,
                        split_cols: bool = True) -> list[Region]:
    """Cut ``region`` along the edges of stencil cells of ``stencil`` x ``stencil`` tiles.

    A left update can only be cut along columns and a right update only along
    rows, hence the two switches.
    """
    reg = region if isinstance(region, Region) else Region(*region)
    if reg.r0 < 0 or reg.c0 < 0 or reg.r1 > grid.n_rows or reg.c1 > grid.n_cols:
        raise ValueError(f"region {reg} outside the {grid.n_rows}x{grid.n_cols} matrix")
    if reg.empty:
        return []
    cell = grid.b * max(1, int(stencil))

    def cuts(a: int, b: int, split: bool) -> list[tuple[int, int]]:
        if not split:
            return [(a, b)]
        out = []
        x = a
        while x < b:
            nxt = min(b, (x // cell + 1) * cell)
            out.append((x, nxt))
            x = nxt
        return out

    return [Region(r0, r1, c0, c1)
            for r0, r1 in cuts(reg.r0, reg.r1, split_rows)
            for c0, c1 in cuts(reg.c0, reg.c1, split_cols)]


def orthogonality_residual(U: np.ndarray) -> float:
    """``||U U^T - I||_F / (u sqrt(n))``."""
    n = U.shape[0]
    if n == 0:
        return 0.0
    return frobenius_norm(U @ U.T - np.eye(n)) / (UNIT_ROUNDOFF * math.sqrt(n))


def similarity_residual(A: np.ndarray, X: np.ndarray, U: np.ndarray) -> float:
    """``||U X U^T - A||_F / (u ||A||_F)``; zero for a zero matrix reproduced exactly."""
    an = frobenius_norm(A)
    r = frobenius_norm(U @ X @ U.T - A)
    if an == 0.0:
        return 0.0 if r == 0.0 else math.inf
    return r / (UNIT_ROUNDOFF * an)
