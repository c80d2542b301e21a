import itertools

import mpmath
import numpy as np
import pytest

from oracles import U, naive_matmul
from taskqr.matrix import (
    MIN_TILE, Region, TileGrid, apply_left_update, apply_right_update, default_tile_size,
    frobenius_norm, hessenberg_reduce, is_hessenberg, make_givens, make_householder,
    orthogonality_residual, similarity_residual, slice_update_region,
)


# -- tiling ----------------------------------------------------------------

@pytest.mark.parametrize("n,b,expect", [(100, 64, (2, 2)), (64, 64, (1, 1)), (1, 8, (1, 1)),
                                        (129, 64, (3, 3))])
def test_tile_grid_counts(n, b, expect):
    g = TileGrid.square(n, b)
    assert (g.tile_rows, g.tile_cols) == expect


def test_tile_grid_covers_exactly():
    g = TileGrid.square(75, 16)
    seen = np.zeros((75, 75), int)
    for i in range(g.tile_rows):
        for j in range(g.tile_cols):
            rs, cs = g.tile_range(i, j)
            seen[rs, cs] += 1
            if i < g.tile_rows - 1 and j < g.tile_cols - 1:
                assert rs.stop - rs.start == cs.stop - cs.start == 16
    assert np.all(seen == 1)
    assert g.row_edges == [0, 16, 32, 48, 64, 75]


def test_tile_size_floor():
    with pytest.raises(ValueError):
        TileGrid.square(10, MIN_TILE - 1)


def test_default_tile_size_clamps():
    assert default_tile_size(100, 8) == 64
    assert default_tile_size(10**6, 1) == 512
    assert default_tile_size(20000, 8) == round(20000 / 64)


def test_tiles_of_region():
    g = TileGrid.square(100, 32)
    assert set(g.tiles_of(0, 33, 31, 32)) == {(0, 0), (1, 0)}
    assert list(g.tiles_of(5, 5, 0, 10)) == []


# -- reflectors and rotations -------------------------------------------------

def test_householder_aligned_is_identity():
    r = make_householder([1.0, 0.0, 0.0])
    assert r.tau == 0.0
    assert np.array_equal(r.matrix(), np.eye(3))


def test_householder_zero_vector():
    r = make_householder([0.0, 0.0])
    assert r.tau == 0.0


def test_householder_3_4():
    r = make_householder([3.0, 4.0])
    y = r.apply(np.array([3.0, 4.0]))
    assert abs(abs(y[0]) - 5.0) <= 8 * U * 5
    assert abs(y[1]) <= 8 * U * 5
    assert y[0] < 0  # opposite sign to x0


def test_householder_orthogonal(rng):
    for k in (2, 3, 7):
        x = rng.standard_normal(k)
        P = make_householder(x).matrix()
        assert np.linalg.norm(P @ P.T - np.eye(k)) <= 10 * U
        y = P @ x
        assert np.allclose(y[1:], 0, atol=10 * U * np.linalg.norm(x))


def test_householder_rejects_bad_input():
    with pytest.raises(ValueError):
        make_householder([])
    with pytest.raises(ValueError):
        make_householder([np.nan, 1.0])


def test_givens(rng):
    for f, g in [(1.0, 0.0), (0.0, 2.0), (3.0, -4.0), *rng.standard_normal((5, 2))]:
        G = make_givens(f, g, 0, 1)
        assert abs(G.c**2 + G.s**2 - 1.0) <= 4 * U
        A = np.array([[f, 1.0], [g, 2.0]])
        G.apply_rows(A)
        assert abs(A[1, 0]) <= 4 * U * max(abs(f), abs(g), 1.0)


# -- norms -----------------------------------------------------------------

def test_frobenius_trivial():
    assert frobenius_norm(np.eye(3)) == pytest.approx(np.sqrt(3), rel=2 * U)
    assert frobenius_norm(np.zeros((4, 4))) == 0.0


def test_frobenius_against_extended_precision(rng):
    M = rng.standard_normal((5, 5))
    with mpmath.workdps(50):
        ref = mpmath.sqrt(mpmath.fsum(mpmath.mpf(float(x)) ** 2 for x in M.ravel()))
    assert abs(frobenius_norm(M) - float(ref)) <= 4 * U * float(ref)


def test_frobenius_no_overflow():
    M = np.full((3, 3), 1e300)
    assert frobenius_norm(M) == pytest.approx(3e300, rel=1e-14)


# -- Hessenberg reduction --------------------------------------------------------

def test_hessenberg_of_hessenberg(rng):
    H0 = np.triu(rng.standard_normal((7, 7)), -1)
    H, Q = hessenberg_reduce(H0)
    assert is_hessenberg(H)
    assert similarity_residual(H0, H, Q) <= 100 * 7


def test_hessenberg_random(rng):
    A = rng.standard_normal((6, 6))
    H, Q = hessenberg_reduce(A)
    assert is_hessenberg(H)
    assert similarity_residual(A, H, Q) <= 600
    assert orthogonality_residual(Q) <= 600


def test_hessenberg_preserves_spectrum():
    # companion matrix of (x-1)(x-2)(x-3)(x-4)
    coeffs = np.poly([1, 2, 3, 4])
    C = np.zeros((4, 4))
    C[0] = -coeffs[1:]
    C[1:, :3] = np.eye(3)
    M = np.random.default_rng(3).standard_normal((4, 4))
    Qr, _ = np.linalg.qr(M)
    A = Qr @ C @ Qr.T
    H, _ = hessenberg_reduce(A)
    ev = np.sort(np.linalg.eigvals(H).real)
    assert np.allclose(ev, [1, 2, 3, 4], rtol=1e-9, atol=1e-9)


def test_hessenberg_rejects_non_square():
    with pytest.raises(ValueError):
        hessenberg_reduce(np.zeros((2, 3)))


# -- accumulated updates ---------------------------------------------------------

def test_left_update_identity_and_permutation(rng):
    R = rng.standard_normal((4, 3))
    assert np.array_equal(apply_left_update(np.eye(4), R), R)
    P = np.eye(4)[[2, 0, 3, 1]]
    assert np.array_equal(apply_left_update(P, R), P.T @ R)


def test_right_update_sign_flips(rng):
    R = rng.standard_normal((3, 4))
    D = np.diag([1.0, -1.0, 1.0, -1.0])
    out = apply_right_update(D, R)
    assert np.array_equal(out, R * np.array([1, -1, 1, -1]))
    assert np.array_equal(apply_right_update(np.eye(4), R), R)


def test_updates_match_naive_product(rng):
    acc, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    R1 = rng.standard_normal((6, 5))
    R2 = rng.standard_normal((5, 6))
    ref_l = naive_matmul(acc.T, R1)
    ref_r = naive_matmul(R2, acc)
    tol = 10 * U * 6 * max(np.abs(R1).max(), np.abs(R2).max())
    assert np.abs(apply_left_update(acc, R1) - ref_l).max() <= tol
    out = np.empty_like(R2)
    apply_right_update(acc, R2, out=out)
    assert np.abs(out - ref_r).max() <= tol


def test_update_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_left_update(np.eye(3), np.zeros((4, 4)))
    with pytest.raises(ValueError):
        apply_right_update(np.eye(3), np.zeros((4, 4)))


# -- slicing ---------------------------------------------------------------------

def _tiles(reg, g):
    return set(g.tiles_of(reg.r0, reg.r1, reg.c0, reg.c1))


def test_slice_inside_one_cell():
    g = TileGrid.square(64, 8)
    assert slice_update_region(Region(1, 5, 2, 7), g, stencil=2) == [Region(1, 5, 2, 7)]


def test_slice_two_by_two():
    g = TileGrid.square(64, 8)
    parts = slice_update_region(Region(4, 20, 4, 20), g, stencil=2)
    assert len(parts) == 4
    assert sum(p.size for p in parts) == 16 * 16


def test_slice_one_sided():
    g = TileGrid.square(64, 8)
    assert len(slice_update_region((0, 64, 0, 64), g, 1, split_rows=False)) == 8
    assert len(slice_update_region((0, 64, 0, 64), g, 1, split_cols=False)) == 8


def test_slice_random_exact_cover(rng):
    for _ in range(200):
        n = int(rng.integers(8, 65))
        b = int(rng.integers(8, 17))
        g = TileGrid.square(n, b)
        r0, r1 = sorted(rng.integers(0, n + 1, 2))
        c0, c1 = sorted(rng.integers(0, n + 1, 2))
        st = int(rng.integers(1, 4))
        parts = slice_update_region(Region(r0, r1, c0, c1), g, st)
        cover = np.zeros((n, n), int)
        for p in parts:
            cover[p.r0:p.r1, p.c0:p.c1] += 1
        want = np.zeros((n, n), int)
        want[r0:r1, c0:c1] = 1
        assert np.array_equal(cover, want)
        for p, q in itertools.combinations(parts, 2):
            assert not (_tiles(p, g) & _tiles(q, g))


def test_slice_rejects_out_of_bounds():
    with pytest.raises(ValueError):
        slice_update_region(Region(0, 65, 0, 1), TileGrid.square(64, 8))


# -- residuals -------------------------------------------------------------------

def test_residuals_zero_for_exact():
    A = np.arange(9.0).reshape(3, 3)
    assert similarity_residual(A, A, np.eye(3)) == 0.0
    assert orthogonality_residual(np.eye(5)) == 0.0
