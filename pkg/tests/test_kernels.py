import mpmath
import numpy as np
import pytest

from oracles import U, match_relative, oracle_eigenvalues, random_hessenberg
from taskqr.deflation import DeflationCondition
from taskqr.kernels import (
    FaultInjector, ShiftSet, block_eigenvalues, eig_2x2, francis_double_step,
    is_standardized_schur, schur_blocks, small_hessenberg, small_schur, swap_adjacent_blocks,
)
from taskqr.matrix import is_hessenberg, orthogonality_residual, similarity_residual
from taskqr.generators import gen_hessrand


# -- shifts ------------------------------------------------------------------------

def test_shiftset_pairs():
    s = ShiftSet.from_eigenvalues([1 + 2j, 1 - 2j, 3.0, 4.0])
    p = s.pairs()
    assert p.shape == (2, 4)
    # each row is (re1, im1, re2, im2)
    assert sorted(map(tuple, p.round(12))) == sorted([(1.0, 2.0, 1.0, -2.0), (3.0, 0.0, 4.0, 0.0)])


# -- eig_2x2 -------------------------------------------------------------------------

def test_eig2x2_diagonal():
    z1, z2, _, blk = eig_2x2([[2.0, 0.0], [0.0, 3.0]])
    assert sorted([z1.real, z2.real]) == [2.0, 3.0]
    assert blk[1, 0] == 0.0


def test_eig2x2_rotation():
    z1, z2, _, blk = eig_2x2([[0.0, -1.0], [1.0, 0.0]])
    assert {z1, z2} == {1j, -1j}
    assert blk[0, 0] == blk[1, 1] and blk[0, 1] * blk[1, 0] < 0


def _quadratic_roots(B):
    with mpmath.workdps(50):
        a, b, c, d = (mpmath.mpf(float(x)) for x in B.ravel())
        tr, det = a + d, a * d - b * c
        disc = mpmath.sqrt(mpmath.mpc(tr * tr - 4 * det))
        return np.array([complex((tr + disc) / 2), complex((tr - disc) / 2)])


def test_eig2x2_random_against_quadratic(rng):
    for _ in range(500):
        B = rng.standard_normal((2, 2))
        z1, z2, (cs, sn), blk = eig_2x2(B)
        ref = np.sort_complex(_quadratic_roots(B))
        # relative accuracy for well-scaled eigenvalues, absolute u||B|| otherwise
        err = np.abs(np.sort_complex(np.array([z1, z2])) - ref)
        assert np.all(err <= 8 * U * np.maximum(np.abs(ref), np.linalg.norm(B)))
        R = np.array([[cs, -sn], [sn, cs]])
        assert np.allclose(R.T @ B @ R, blk, atol=8 * U * np.abs(B).max())
        if z1.imag == 0.0:
            assert blk[1, 0] == 0.0
        else:
            assert blk[0, 0] == blk[1, 1] and blk[0, 1] * blk[1, 0] < 0


# -- Francis step ---------------------------------------------------------------------

def test_francis_exact_shifts_collapse():
    rng = np.random.default_rng(7)
    T = np.triu(rng.standard_normal((3, 3)))
    np.fill_diagonal(T, [1.0, 2.0, 3.0])
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    from taskqr.matrix import hessenberg_reduce
    H, _ = hessenberg_reduce(Q @ T @ Q.T)
    cond = DeflationCondition.lapack()
    for step in range(2):
        H, _ = francis_double_step(H, 2.0, 3.0)
        # a double step with both shifts exact splits off the trailing 2x2 block
        if cond.vigilant_deflate(H[1, 0], H[0, 0], H[1, 1], H[0, 1], 3):
            assert sorted(np.linalg.eigvals(H[1:, 1:]).real) == pytest.approx([2.0, 3.0])
            break
    else:
        pytest.fail("bottom subdiagonal did not collapse in two steps")


def test_francis_preserves_spectrum_and_orthogonality(rng):
    H = random_hessenberg(rng, 8)
    ref = oracle_eigenvalues(H)
    z = np.linalg.eigvals(H)[:2]
    s1, s2 = (z[0], z[0].conjugate()) if z[0].imag else (z[0].real, z[0].real)
    H2, Q = francis_double_step(H, s1, s2)
    assert is_hessenberg(np.where(np.abs(H2) < 1e-300, 0.0, H2))
    assert orthogonality_residual(Q) <= 800
    assert similarity_residual(H, H2, Q) <= 800
    assert match_relative(oracle_eigenvalues(H2), ref) <= 1e3 * U


def test_francis_small_windows():
    H1, Q1 = francis_double_step(np.array([[5.0]]), 1.0, 1.0)
    assert H1[0, 0] == 5.0 and Q1[0, 0] == 1.0
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    H2, Q2 = francis_double_step(B, 1.0, 1.0)
    assert np.allclose(Q2 @ H2 @ Q2.T, B, atol=1e-14)
    with pytest.raises(ValueError):
        francis_double_step(B, 1 + 1j, 2 + 1j)


# -- small Schur -----------------------------------------------------------------------

def test_small_schur_1x1():
    r = small_schur(np.array([[4.0]]))
    assert r.converged and r.iterations == 0 and r.eigenvalues[0] == 4.0


def test_small_schur_companion():
    C = np.zeros((3, 3))
    C[0] = -np.poly([1, 2, 3])[1:]
    C[1, 0] = C[2, 1] = 1.0
    r = small_schur(C)
    assert r.converged
    e = np.sort(r.eigenvalues.real)
    truth = np.array([1.0, 2.0, 3.0])
    assert np.all(np.abs(e - truth) / (U * truth) <= 1e3)


def test_small_schur_hessrand_50():
    H = gen_hessrand(50, 3)
    r = small_schur(H)
    assert r.converged and r.status == "converged"
    assert is_standardized_schur(r.T)
    assert similarity_residual(H, r.T, r.Z) <= 1e3
    assert orthogonality_residual(r.Z) <= 1e3
    assert r.iterations <= 30 * 50


def test_small_schur_budget_exhaustion_keeps_partial():
    H = gen_hessrand(30, 1)
    r = small_schur(H, budget=1)
    assert not r.converged and r.status == "iteration-limit"
    assert r.T.shape == H.shape
    assert similarity_residual(H, r.T, r.Z) <= 1e3


def test_small_schur_rejects_non_hessenberg():
    with pytest.raises(ValueError):
        small_schur(np.ones((4, 4)))


@pytest.mark.parametrize("kind", ["lapack", "norm", "fixed:1e-14"])
def test_small_schur_conditions(kind):
    H = gen_hessrand(40, 2)
    cond = DeflationCondition.parse(kind).bind_norm(np.linalg.norm(H))
    r = small_schur(H, cond=cond, nglob=40)
    assert r.converged and is_standardized_schur(r.T)
    assert match_relative(r.eigenvalues, np.linalg.eigvals(H)) <= 1e-9


def test_small_schur_spectrum_oracle(rng):
    for n in range(2, 9):
        H = random_hessenberg(rng, n)
        r = small_schur(H)
        assert match_relative(r.eigenvalues, oracle_eigenvalues(H)) <= 1e3 * U


def test_schur_blocks_and_eigenvalues():
    T = np.array([[1.0, 5.0, 2.0], [0.0, 2.0, 3.0], [0.0, -1.0, 2.0]])
    assert schur_blocks(T) == [(0, 1), (1, 2)]
    ev = block_eigenvalues(T)
    assert ev[0] == 1.0 and ev[1] == pytest.approx(2 + np.sqrt(3) * 1j)
    assert ev[1].imag > 0 and ev[2] == ev[1].conjugate()


# -- swaps ----------------------------------------------------------------------------

def _schur(blocks, rng):
    """Quasi-triangular matrix with the given standardized diagonal blocks."""
    n = sum(b.shape[0] for b in blocks)
    S = np.triu(rng.standard_normal((n, n)))
    r = 0
    for b in blocks:
        k = b.shape[0]
        S[r:r + k, r:r + k] = b
        r += k
    return np.ascontiguousarray(S)


def test_swap_1x1_1x1():
    S = np.array([[1.0, 0.5], [0.0, 2.0]])
    Q = np.eye(2)
    S0 = S.copy()
    out = swap_adjacent_blocks(S, Q, 0, (1, 1))
    assert out.success and out.sizes == (1, 1)
    assert abs(S[0, 0] - 2.0) <= 4 * U * 2 and abs(S[1, 1] - 1.0) <= 4 * U * 2
    assert abs(S[1, 0]) == 0.0
    assert similarity_residual(S0, S, Q) <= 100


@pytest.mark.parametrize("order", [(2, 1), (1, 2), (2, 2)])
def test_swap_with_complex_block(order, rng):
    cplx = [np.array([[1.0, 2.0], [-3.0, 1.0]]), np.array([[-2.0, 1.5], [-0.5, -2.0]])]
    reals = [np.array([[4.0]]), np.array([[-1.0]])]
    blocks = [cplx[0] if order[0] == 2 else reals[0], cplx[1] if order[1] == 2 else reals[1]]
    S = _schur(blocks, rng)
    n = S.shape[0]
    Q = np.eye(n)
    S0 = S.copy()
    ev0 = block_eigenvalues(S)
    out = swap_adjacent_blocks(S, Q, 0, order)
    assert out.success and out.sizes == (order[1], order[0])
    assert is_standardized_schur(S)
    assert match_relative(block_eigenvalues(S), ev0) <= 1e3 * U
    # the block that was second now sits on top
    top = block_eigenvalues(S, 0, order[1])
    assert match_relative(top, block_eigenvalues(S0, order[0], n)) <= 1e3 * U
    assert similarity_residual(S0, S, Q) <= 100 * n
    assert orthogonality_residual(Q) <= 100 * n


def test_swap_failure_is_bit_identical(rng):
    S = _schur([np.array([[1.0]]), np.array([[1.0 + 1e-15]])], rng)
    Q = np.eye(2)
    S0, Q0 = S.tobytes(), Q.tobytes()
    out = swap_adjacent_blocks(S, Q, 0, (1, 1), force_fail=True)
    assert not out.success
    assert S.tobytes() == S0 and Q.tobytes() == Q0


def test_swap_injected_fault_is_bit_identical(rng):
    S = _schur([np.array([[1.0, 2.0], [-3.0, 1.0]]), np.array([[5.0]])], rng)
    Q = np.eye(3)
    vec = np.arange(3.0)
    before = (S.tobytes(), Q.tobytes(), vec.tobytes())
    out = swap_adjacent_blocks(S, Q, 0, (2, 1), faults=FaultInjector(1.0, 0), vec=vec)
    assert not out.success
    assert (S.tobytes(), Q.tobytes(), vec.tobytes()) == before


def test_swap_argument_checks():
    S = np.eye(3)
    with pytest.raises(ValueError):
        swap_adjacent_blocks(S, np.eye(3), 0, (3, 1))
    with pytest.raises(ValueError):
        swap_adjacent_blocks(S, np.eye(3), 2, (1, 1))
    with pytest.raises(ValueError):
        swap_adjacent_blocks(np.asfortranarray(np.eye(3)[:, ::-1]), np.eye(3), 0, (1, 1))


def test_fault_injector_validation():
    with pytest.raises(ValueError):
        FaultInjector(1.5)


# -- small Hessenberg --------------------------------------------------------------------

def test_small_hessenberg_identity():
    H, Z = small_hessenberg(np.eye(5))
    assert np.array_equal(H, np.eye(5))


def test_small_hessenberg_random(rng):
    W = rng.standard_normal((6, 6))
    H, Z = small_hessenberg(W)
    assert is_hessenberg(H)
    assert similarity_residual(W, H, Z) <= 600
    assert orthogonality_residual(Z) <= 600
    assert small_hessenberg(W, accumulate=False)[1] is None


def test_small_hessenberg_already_reduced(rng):
    W = random_hessenberg(rng, 6)
    H, Z = small_hessenberg(W)
    assert np.allclose(np.abs(Z), np.eye(6), atol=1e-15)
