"""Reproducible test matrices.

Random numbers come from the Philox-4x64 counter generator.  A matrix of
kind ``k`` with seed ``s`` draws from independent streams keyed by
``(s, stream)``: stream 0 feeds the matrix entries, stream 1 the Householder
vector and stream 2 the choice of lifted pairs.  Normals use the Box-Muller
transform on pairs of uniforms; ``chi^2(k)`` for integer ``k`` is a sum of
``k`` squared normals (non-integer ``k`` falls back to a gamma draw).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mmio import load_matrix_market, read_dense

ENTRIES, HOUSEHOLDER, LIFT = 0, 1, 2
KINDS = ("syn", "hessrand", "mtx", "dense")


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    key = (int(seed) & (2**64 - 1)) | (int(stream) << 64)
    return np.random.Generator(np.random.Philox(key=key))


def box_muller(rng: np.random.Generator, size: int) -> np.ndarray:
    m = (size + 1) // 2
    u1 = rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(2.0 * np.pi * u2)
    z[1::2] = r * np.sin(2.0 * np.pi * u2)
    return z[:size]


def chi2(rng: np.random.Generator, k: float) -> float:
    if k <= 0:
        raise ValueError("degrees of freedom must be positive")
    if float(k).is_integer():
        z = box_muller(rng, int(k))
        return float(z @ z)
    return float(2.0 * rng.gamma(k / 2.0))


def gen_hessrand(n: int, seed: int = 0) -> np.ndarray:
    """Upper Hessenberg matrix: N(0,1) on and above the diagonal, ``h[i+1,i]^2 ~ chi^2(n-1-i)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = philox(seed, ENTRIES)
    H = np.zeros((n, n))
    iu = np.triu_indices(n)
    H[iu] = box_muller(rng, iu[0].size)
    for i in range(n - 1):
        H[i + 1, i] = np.sqrt(chi2(rng, n - 1 - i))
    return H


def syn_spectrum(n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Constructed eigenvalues and a flag per pair telling whether it was lifted.

    Pair ``k`` holds ``+(2k+1)`` and ``-(2k+1)``; ``n // 4`` randomly chosen
    pairs become ``a +- i a`` with ``a = 2k+1``.
    """
    if n < 2 or n % 2:
        raise ValueError("syn matrices need an even n >= 2")
    npairs = n // 2
    rng = philox(seed, LIFT)
    lifted = np.zeros(npairs, dtype=bool)
    lifted[rng.permutation(npairs)[:npairs // 2]] = True
    ev = np.empty(n, dtype=np.complex128)
    for k in range(npairs):
        a = 2.0 * k + 1.0
        if lifted[k]:
            ev[2 * k], ev[2 * k + 1] = complex(a, a), complex(a, -a)
        else:
            ev[2 * k], ev[2 * k + 1] = a, -a
    return ev, lifted


def gen_syn(n: int, seed: int = 0, return_schur: bool = False):
    """Dense ``A = Q S Q^T`` with known spectrum; returns ``(A, eigenvalues)``.

    ``S`` is upper triangular with off-diagonal entries uniform on ``[-1, 1]``;
    each lifted pair sits in a standardized block ``[[a, a], [-a, a]]``.
    """
    ev, lifted = syn_spectrum(n, seed)
    rng = philox(seed, ENTRIES)
    S = np.triu(rng.uniform(-1.0, 1.0, size=(n, n)), 1)
    for k in range(n // 2):
        a = ev[2 * k].real
        i = 2 * k
        if lifted[k]:
            S[i, i] = S[i + 1, i + 1] = a
            S[i, i + 1] = abs(a)
            S[i + 1, i] = -abs(a)
        else:
            S[i, i], S[i + 1, i + 1] = a, -a
    v = box_muller(philox(seed, HOUSEHOLDER), n)
    v /= np.linalg.norm(v)
    # A = (I - 2vv^T) S (I - 2vv^T) without forming the reflector
    A = S - 2.0 * np.outer(v, v @ S)
    A = A - 2.0 * np.outer(A @ v, v)
    if return_schur:
        return A, ev, S, v
    return A, ev


@dataclass(frozen=True)
class MatrixSpec:
    kind: str
    n: int = 0
    seed: int = 0
    path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown matrix kind {self.kind!r}; use one of {', '.join(KINDS)}")
        if self.kind in ("syn", "hessrand") and self.n < 1:
            raise ValueError("n must be >= 1")
        if self.kind in ("mtx", "dense") and not self.path:
            raise ValueError(f"{self.kind} matrices need a path")

    @property
    def label(self) -> str:
        if self.kind == "syn":
            return f"syn_{self.n}"
        if self.kind == "hessrand":
            return f"hess_{self.n}"
        return str(self.path)

    def build(self) -> tuple[np.ndarray, np.ndarray | None]:
        """``(matrix, known eigenvalues or None)``."""
        if self.kind == "syn":
            return gen_syn(self.n, self.seed)
        if self.kind == "hessrand":
            return gen_hessrand(self.n, self.seed), None
        if self.kind == "mtx":
            return load_matrix_market(self.path), None
        return read_dense(self.path), None
