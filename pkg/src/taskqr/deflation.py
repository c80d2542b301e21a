"""Deflation and vigilant-deflation conditions.

Three families are supported:

``lapack``
    Spike test ``|s| <= max(nu n/u, u |t|)`` for a 1x1 candidate and
    ``max|s| <= max(nu n/u, u h)`` with
    ``h = sqrt|t22 t11| + sqrt|t12 t21|`` for a standardized 2x2 candidate.
    Subdiagonal entries use the neighbour-product test of the reference
    LAPACK sweep (a reconstruction, pinned by golden tests)::

        |h[k,k-1]| <= nu n/u                                  -> negligible
        tst = |h[k-1,k-1]| + |h[k,k]|  (or |h[k-1,k-2]| + |h[k+1,k]| if 0)
        |h[k,k-1]| >  u tst                                   -> keep
        ab = max(|h[k,k-1]|, |h[k-1,k]|), ba = min(...)
        aa = max(|h[k,k]|, |h[k-1,k-1]-h[k,k]|), bb = min(...)
        ba (ab/(aa+ab)) <= max(nu n/u, u bb (aa/(aa+ab)))      -> negligible

``norm``
    ``|x| <= u ||H||_F`` with the norm frozen from the initial matrix.

``fixed``
    ``|x| <= eps``.

All comparisons are inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from . import _kernels as K
from .matrix import SAFE_MIN, UNIT_ROUNDOFF

_KINDS = {"lapack": K.KIND_LAPACK, "norm": K.KIND_NORM, "fixed": K.KIND_FIXED}


@dataclass(frozen=True)
class DeflationCondition:
    kind: str = "lapack"
    hnorm: float = 0.0
    eps: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown deflation condition {self.kind!r}")
        if not (math.isfinite(self.hnorm) and self.hnorm >= 0.0):
            raise ValueError("hnorm must be finite and non-negative")
        if not (math.isfinite(self.eps) and self.eps >= 0.0):
            raise ValueError("fixed threshold must be finite and non-negative")

    @classmethod
    def lapack(cls) -> "DeflationCondition":
        return cls("lapack")

    @classmethod
    def norm_stable(cls, hnorm: float = 0.0) -> "DeflationCondition":
        return cls("norm", hnorm=float(hnorm))

    @classmethod
    def fixed(cls, eps: float) -> "DeflationCondition":
        return cls("fixed", eps=float(eps))

    @classmethod
    def parse(cls, text: str) -> "DeflationCondition":
        """``lapack`` | ``norm`` | ``fixed:EPS``."""
        t = text.strip().lower()
        if t == "lapack":
            return cls.lapack()
        if t == "norm":
            return cls.norm_stable()
        if t.startswith("fixed:"):
            try:
                eps = float(t.split(":", 1)[1])
            except ValueError:
                raise ValueError(f"bad fixed threshold in {text!r}") from None
            return cls.fixed(eps)
        raise ValueError(f"unknown deflation condition {text!r} (use lapack, norm or fixed:EPS)")

    def bind_norm(self, hnorm: float) -> "DeflationCondition":
        """Freeze the matrix norm for the norm-stable family (no-op otherwise)."""
        return replace(self, hnorm=float(hnorm)) if self.kind == "norm" else self

    @property
    def label(self) -> str:
        return f"fixed:{self.eps:g}" if self.kind == "fixed" else self.kind

    @property
    def code(self) -> tuple[int, float]:
        """``(kind, param)`` as consumed by the compiled kernels."""
        param = self.hnorm if self.kind == "norm" else self.eps
        return _KINDS[self.kind], float(param)

    def spike_deflate_1x1(self, h_spike: float, h_diag: float, n: int) -> bool:
        kind, param = self.code
        return bool(K.spike1_ok(float(h_spike), float(h_diag), kind, param, int(n)))

    def spike_deflate_2x2(self, s_top: float, s_bot: float, block, n: int) -> bool:
        (a11, a12), (a21, a22) = block
        kind, param = self.code
        return bool(K.spike2_ok(float(s_top), float(s_bot), float(a11), float(a12),
                                float(a21), float(a22), kind, param, int(n)))

    def vigilant_deflate(self, h_sub: float, h_prev: float, h_next: float, h_up: float,
                         n: int, h_left: float = 0.0, h_below: float = 0.0) -> bool:
        """Can ``h[k,k-1] = h_sub`` be zeroed?

        ``h_prev = h[k-1,k-1]``, ``h_next = h[k,k]``, ``h_up = h[k-1,k]``;
        ``h_left``/``h_below`` are only consulted when both diagonals vanish.
        """
        kind, param = self.code
        return bool(K.subdiag_ok(float(h_sub), float(h_prev), float(h_next), float(h_up),
                                 float(h_left), float(h_below), kind, param, int(n)))


def small_threshold(n: int) -> float:
    """``nu n / u``, the absolute floor of the LAPACK-style tests."""
    return SAFE_MIN * (max(n, 1) / UNIT_ROUNDOFF)


def spike_deflate_1x1(h_spike: float, h_diag: float, n: int, cond: DeflationCondition) -> bool:
    return cond.spike_deflate_1x1(h_spike, h_diag, n)


def spike_deflate_2x2(s_top: float, s_bot: float, block, n: int, cond: DeflationCondition) -> bool:
    return cond.spike_deflate_2x2(s_top, s_bot, block, n)


def vigilant_deflate(h_sub: float, neighborhood, n: int, cond: DeflationCondition) -> bool:
    """``neighborhood = (h_prev, h_next, h_up[, h_left, h_below])``."""
    return cond.vigilant_deflate(h_sub, *neighborhood[:3], n, *neighborhood[3:5])
