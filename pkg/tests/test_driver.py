import numpy as np
import pytest

from oracles import U, match_relative
from taskqr import SolverConfig, solve
from taskqr.context import Priorities, child_priorities
from taskqr.driver import (
    BULGES, DECOUPLED, LEGAL_TRANSITIONS, OBSERVED_TRANSITIONS, ConvergenceError,
    IllegalTransition, Segment, iteration_limit, schur_is_valid, unreduced_blocks,
)
from taskqr.generators import gen_hessrand, gen_syn
from taskqr.matrix import orthogonality_residual, similarity_residual


def _check(A, res, tol=1e3):
    assert res.converged
    assert schur_is_valid(res.S)
    assert similarity_residual(A, res.S, res.Q) <= tol
    assert orthogonality_residual(res.Q) <= tol


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_tiny_matrices(n, rng):
    A = rng.standard_normal((n, n))
    res = solve(A)
    _check(A, res)
    assert match_relative(res.eigenvalues, np.linalg.eigvals(A)) <= 1e-10


def test_scalar_example():
    res = solve(np.array([[3.0]]))
    assert res.S[0, 0] == 3.0 and res.Q[0, 0] == 1.0
    assert res.eigenvalues.tolist() == [3.0]


def test_input_validation():
    with pytest.raises(ValueError):
        solve(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        solve(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        solve(np.ones((3, 3)), hessenberg=False)


@pytest.mark.parametrize("workers", [0, 1, 3])
def test_hessrand_converges(workers):
    H = gen_hessrand(300, 11)
    res = solve(H, workers=workers, tile_size=32)
    _check(H, res)
    assert match_relative(res.eigenvalues, np.linalg.eigvals(H)) <= 1e-8


def test_syn_eigenvalues_accurate():
    A, ev = gen_syn(200, 4)
    res = solve(A, workers=2, tile_size=32)
    _check(A, res)
    err = [np.min(np.abs(res.eigenvalues - z)) / (U * abs(z)) for z in ev]
    assert max(err) <= 1e4


def test_dense_input_is_reduced(rng):
    A = rng.standard_normal((90, 90))
    res = solve(A, tile_size=16, workers=2)
    _check(A, res)


def test_parallel_aed_path():
    H = gen_hessrand(400, 2)
    res = solve(H, workers=2, tile_size=32, parallel_aed="always")
    _check(H, res)
    assert res.stats["aed_parallel"] > 0 and res.stats["aed_sequential"] == 0
    res2 = solve(H, workers=2, tile_size=32, parallel_aed="never")
    assert res2.stats["aed_parallel"] == 0
    assert match_relative(res.eigenvalues, res2.eigenvalues) <= 1e-8


def test_observed_transitions_are_legal():
    solve(gen_hessrand(250, 5), workers=2, tile_size=16)
    assert OBSERVED_TRANSITIONS
    assert set(OBSERVED_TRANSITIONS) <= LEGAL_TRANSITIONS
    assert (BULGES, DECOUPLED) in LEGAL_TRANSITIONS


def test_illegal_transition_raises():
    seg = Segment(None, 0, 4, Priorities(), BULGES)
    with pytest.raises(IllegalTransition):
        seg.move("Small")


def test_unreduced_blocks():
    H = np.triu(np.ones((6, 6)), -1)
    H[2, 1] = 0.0
    H[5, 4] = 0.0
    assert unreduced_blocks(H) == [(0, 2), (2, 5), (5, 6)]
    assert unreduced_blocks(H, 2, 5) == [(2, 5)]
    assert unreduced_blocks(np.eye(1)) == [(0, 1)]


def test_preexisting_blocks_run_interleaved():
    blocks = [gen_hessrand(120, s) for s in (1, 2, 3)]
    n = 360
    H = np.zeros((n, n))
    for k, B in enumerate(blocks):
        H[120 * k:120 * (k + 1), 120 * k:120 * (k + 1)] = B
    H[:120, 120:] = 1.0  # coupling above the diagonal keeps the eigenvalues
    res = solve(H, workers=3, tile_size=16)
    _check(H, res)
    # tasks of different segments alternate rather than running block by block
    tags = [r.tag for r in sorted(res.records, key=lambda r: r.start_stamp) if r.tag]
    roots = list(dict.fromkeys(tags))
    assert len(roots) >= 3
    a, b = roots[0], roots[1]
    assert tags.index(b) < len(tags) - 1 - tags[::-1].index(a)


def test_child_priorities():
    p = child_priorities(Priorities(100, 50, 0))
    assert p == Priorities(100, 75, 51)
    q = child_priorities(p)
    assert q.max == 100 and q.min == 76 and q.default == 88
    deep = Priorities(100, 100, 100)
    assert child_priorities(deep) == deep


def test_iteration_limit():
    assert iteration_limit(5) == 300
    assert iteration_limit(100, 10) == 1000


def test_convergence_error_carries_partial():
    H = gen_hessrand(200, 1)
    with pytest.raises(ConvergenceError) as info:
        solve(H, tile_size=16, iteration_factor=0)
    part = info.value.partial
    assert part is not None and not part.converged
    assert similarity_residual(H, part.S, part.Q) <= 1e3


def test_deterministic_mode_is_bitwise_reproducible():
    H = gen_hessrand(300, 8)
    runs = [solve(H, workers=w, deterministic=True) for w in (1, 2, 3)]
    for r in runs[1:]:
        assert np.array_equal(r.S, runs[0].S)
        assert np.array_equal(r.Q, runs[0].Q)
        assert r.stats["tasks_total"] == runs[0].stats["tasks_total"]


@pytest.mark.parametrize("rate", [0.05, 0.5])
def test_injected_swap_faults_still_converge(rate):
    H = gen_hessrand(250, 6)
    res = solve(H, workers=2, tile_size=16, fault_rate=rate, fault_seed=3)
    _check(H, res)
    assert res.stats["aed_halts"] > 0
    assert match_relative(res.eigenvalues, np.linalg.eigvals(H)) <= 1e-8


@pytest.mark.parametrize("kind", ["lapack", "norm", "fixed:1e-15"])
def test_deflation_conditions(kind):
    H = gen_hessrand(200, 9)
    res = solve(H, tile_size=16, deflation=kind)
    _check(H, res)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(workers=-1)
    with pytest.raises(ValueError):
        SolverConfig(tile_size=4)
    with pytest.raises(ValueError):
        SolverConfig(parallel_aed="sometimes")
