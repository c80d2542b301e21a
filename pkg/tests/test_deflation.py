import math

import numpy as np
import pytest

from oracles import U
from taskqr.deflation import (
    DeflationCondition, small_threshold, spike_deflate_1x1, spike_deflate_2x2, vigilant_deflate,
)
from taskqr.matrix import SAFE_MIN

LAPACK = DeflationCondition.lapack()
NORM = DeflationCondition.norm_stable(10.0)
FIXED = DeflationCondition.fixed(1e-10)
ALL = [LAPACK, NORM, FIXED]


def test_parse_and_label():
    assert DeflationCondition.parse("lapack") == LAPACK
    assert DeflationCondition.parse("NORM").kind == "norm"
    c = DeflationCondition.parse("fixed:1e-8")
    assert c.kind == "fixed" and c.eps == 1e-8
    assert c.label == "fixed:1e-08"
    for bad in ("fixed", "fixed:abc", "fixed:-1", "fixed:inf", "bogus"):
        with pytest.raises(ValueError):
            DeflationCondition.parse(bad)


def test_bind_norm_only_affects_norm():
    assert NORM.bind_norm(3.0).hnorm == 3.0
    assert LAPACK.bind_norm(3.0) is LAPACK


@pytest.mark.parametrize("cond", ALL, ids=lambda c: c.kind)
def test_zero_always_deflates(cond):
    assert spike_deflate_1x1(0.0, 5.0, 100, cond)
    assert spike_deflate_2x2(0.0, 0.0, [[1, 2], [-3, 1]], 100, cond)
    assert vigilant_deflate(0.0, (1.0, 2.0, 3.0), 100, cond)


def test_lapack_spike_1x1():
    assert not spike_deflate_1x1(1.0, 1.0, 100, LAPACK)
    assert spike_deflate_1x1(U, 1.0, 100, LAPACK)
    assert not spike_deflate_1x1(2 * U, 1.0, 100, LAPACK)
    # tiny diagonal: the underflow floor takes over
    floor = small_threshold(100)
    assert floor == SAFE_MIN * 100 / U
    assert spike_deflate_1x1(floor, 0.0, 100, LAPACK)
    assert not spike_deflate_1x1(floor * 1.01, 0.0, 100, LAPACK)


def test_norm_spike_1x1():
    h = NORM.hnorm
    assert spike_deflate_1x1(0.5 * U * h, 1e6, 10, NORM)
    assert not spike_deflate_1x1(2 * U * h, 1e6, 10, NORM)


def test_lapack_spike_2x2_hhat():
    blk = [[2.0, 3.0], [-1.5, 2.0]]
    hhat = math.sqrt(abs(2.0 * 2.0)) + math.sqrt(abs(3.0 * -1.5))
    assert spike_deflate_2x2(0.5 * U * hhat, -0.5 * U * hhat, blk, 50, LAPACK)
    assert not spike_deflate_2x2(0.5 * U * hhat, 1.01 * U * hhat, blk, 50, LAPACK)


def test_fixed_spike_2x2():
    assert not spike_deflate_2x2(1e-9, 0.0, [[1, 1], [-1, 1]], 10, FIXED)
    assert spike_deflate_2x2(1e-10, -1e-10, [[1, 1], [-1, 1]], 10, FIXED)


def test_norm_vigilant_inclusive_boundary():
    h = NORM.hnorm
    assert vigilant_deflate(U * h, (1.0, 1.0, 1.0), 10, NORM)
    assert not vigilant_deflate(np.nextafter(U * h, 1.0), (1.0, 1.0, 1.0), 10, NORM)


def _lapack_reference(hsub, hprev, hnext, hup, n):
    # hand evaluation of the documented neighbour-product rule
    small = SAFE_MIN * n / U
    h = abs(hsub)
    if h <= small:
        return True
    if h > U * (abs(hprev) + abs(hnext)):
        return False
    ab, ba = max(h, abs(hup)), min(h, abs(hup))
    aa, bb = max(abs(hnext), abs(hprev - hnext)), min(abs(hnext), abs(hprev - hnext))
    return ba * (ab / (aa + ab)) <= max(small, U * (bb * (aa / (aa + ab))))


def test_lapack_vigilant_crafted_4x4():
    H = np.array([[4.0, 1.0, 2.0, 3.0],
                  [1.0, 3.0, 0.5, 1.0],
                  [0.0, 1e-17, 2.0, 1.0],
                  [0.0, 0.0, 1.0, 1.0]])
    k = 2
    args = (H[k, k - 1], H[k - 1, k - 1], H[k, k], H[k - 1, k])
    assert vigilant_deflate(H[k, k - 1], args[1:], 4, LAPACK) == _lapack_reference(*args, 4)
    assert vigilant_deflate(H[k, k - 1], args[1:], 4, LAPACK)
    # same entry next to a huge coupling: the neighbour product forbids it
    assert not vigilant_deflate(4e-16, (3.0, 3.0 + 1e-15, 1e3), 4, LAPACK)
    assert not _lapack_reference(4e-16, 3.0, 3.0 + 1e-15, 1e3, 4)


def test_lapack_vigilant_random_golden():
    rng = np.random.default_rng(0)
    for _ in range(2000):
        hprev, hnext, hup = rng.standard_normal(3) * 10.0 ** rng.integers(-3, 4, 3)
        hsub = rng.standard_normal() * 10.0 ** rng.integers(-20, -12)
        got = vigilant_deflate(hsub, (hprev, hnext, hup), 64, LAPACK)
        assert got == _lapack_reference(hsub, hprev, hnext, hup, 64)


@pytest.mark.parametrize("cond", ALL, ids=lambda c: c.kind)
def test_monotone(cond):
    rng = np.random.default_rng(1)
    for _ in range(300):
        ctx = tuple(rng.standard_normal(3))
        x = abs(rng.standard_normal()) * 10.0 ** rng.integers(-18, -8)
        smaller = x * rng.random()
        if vigilant_deflate(x, ctx, 32, cond):
            assert vigilant_deflate(smaller, ctx, 32, cond)
        if spike_deflate_1x1(x, ctx[0], 32, cond):
            assert spike_deflate_1x1(smaller, ctx[0], 32, cond)
        blk = [[ctx[0], abs(ctx[1])], [-abs(ctx[2]), ctx[0]]]
        if spike_deflate_2x2(x, x, blk, 32, cond):
            assert spike_deflate_2x2(smaller, smaller, blk, 32, cond)


def test_fixed_zero_never_deflates_nonzero():
    c = DeflationCondition.fixed(0.0)
    assert not spike_deflate_1x1(1e-300, 1.0, 10, c)
    assert not vigilant_deflate(1e-300, (1.0, 1.0, 1.0), 10, c)
    assert spike_deflate_1x1(0.0, 1.0, 10, c)


def test_invalid_parameters():
    with pytest.raises(ValueError):
        DeflationCondition("other")
    with pytest.raises(ValueError):
        DeflationCondition.norm_stable(-1.0)
    with pytest.raises(ValueError):
        DeflationCondition.fixed(float("inf"))
