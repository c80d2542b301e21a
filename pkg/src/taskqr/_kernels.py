"""Compiled inner loops.

Everything here works on contiguous float64 scratch buffers owned by a single
task, releases the GIL and never allocates shared state.  Public, validated
entry points live in :mod:`taskqr.kernels`, :mod:`taskqr.bulges` and
:mod:`taskqr.aed`.

Deflation conditions are passed around as ``(kind, param, n)`` where ``kind``
is 0 (LAPACK style), 1 (norm stable, ``param`` = frozen Frobenius norm) or
2 (fixed threshold, ``param`` = epsilon).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

ULP = 2.0**-52
SAFMIN = 2.2250738585072014e-308
# scaling constants used by the 2x2 standardization
_SAFMN2 = 2.0 ** int(math.log(SAFMIN / ULP) / math.log(2.0) / 2.0)
_SAFMX2 = 1.0 / _SAFMN2

KIND_LAPACK = 0
KIND_NORM = 1
KIND_FIXED = 2

_jit = njit(cache=True, nogil=True)


# --------------------------------------------------------------------------
# deflation predicates


@_jit
def small_number(n):
    return SAFMIN * (max(n, 1) / ULP)


@_jit
def spike1_ok(s, d, kind, param, n):
    a = abs(s)
    if kind == KIND_LAPACK:
        return a <= max(small_number(n), ULP * abs(d))
    if kind == KIND_NORM:
        return a <= ULP * param
    return a <= param


@_jit
def spike2_ok(s1, s2, a11, a12, a21, a22, kind, param, n):
    a = max(abs(s1), abs(s2))
    if kind == KIND_LAPACK:
        hhat = math.sqrt(abs(a22 * a11)) + math.sqrt(abs(a12 * a21))
        return a <= max(small_number(n), ULP * hhat)
    if kind == KIND_NORM:
        return a <= ULP * param
    return a <= param


@_jit
def subdiag_ok(hsub, hprev, hnext, hup, hleft, hbelow, kind, param, n):
    """Negligibility of ``h[k,k-1]``.

    ``hprev = h[k-1,k-1]``, ``hnext = h[k,k]``, ``hup = h[k-1,k]``, ``hleft =
    h[k-1,k-2]`` and ``hbelow = h[k+1,k]`` (zero when outside the block).
    """
    h = abs(hsub)
    if kind == KIND_NORM:
        return h <= ULP * param
    if kind == KIND_FIXED:
        return h <= param
    smlnum = small_number(n)
    if h <= smlnum:
        return True
    tst = abs(hprev) + abs(hnext)
    if tst == 0.0:
        tst = abs(hleft) + abs(hbelow)
    if h > ULP * tst:
        return False
    ab = max(h, abs(hup))
    ba = min(h, abs(hup))
    aa = max(abs(hnext), abs(hprev - hnext))
    bb = min(abs(hnext), abs(hprev - hnext))
    s = aa + ab
    return ba * (ab / s) <= max(smlnum, ULP * (bb * (aa / s)))


@_jit
def _subdiag_at(H, k, lo, hi, kind, param, n):
    # k is the row of the subdiagonal entry; [lo, hi] the active rows
    hleft = abs(H[k - 1, k - 2]) if k - 2 >= lo else 0.0
    hbelow = abs(H[k + 1, k]) if k + 1 <= hi else 0.0
    return subdiag_ok(H[k, k - 1], H[k - 1, k - 1], H[k, k], H[k - 1, k],
                      hleft, hbelow, kind, param, n)


# --------------------------------------------------------------------------
# elementary transformations


@_jit
def lanv2(a, b, c, d):
    """Standardize a real 2x2 block (port of the usual LAPACK routine).

    Returns ``(a, b, c, d, rt1r, rt1i, rt2r, rt2i, cs, sn)`` with
    ``[[a,b],[c,d]]_in = R [[a,b],[c,d]]_out R^T``, ``R = [[cs,-sn],[sn,cs]]``.
    """
    eps = ULP
    if c == 0.0:
        cs = 1.0
        sn = 0.0
    elif b == 0.0:
        cs = 0.0
        sn = 1.0
        temp = d
        d = a
        a = temp
        b = -c
        c = 0.0
    elif (a - d) == 0.0 and math.copysign(1.0, b) != math.copysign(1.0, c):
        cs = 1.0
        sn = 0.0
    else:
        temp = a - d
        p = 0.5 * temp
        bcmax = max(abs(b), abs(c))
        bcmis = min(abs(b), abs(c)) * math.copysign(1.0, b) * math.copysign(1.0, c)
        scale = max(abs(p), bcmax)
        z = (p / scale) * p + (bcmax / scale) * bcmis
        if z >= 4.0 * eps:
            z = p + math.copysign(math.sqrt(scale) * math.sqrt(z), p)
            a = d + z
            d = d - (bcmax / z) * bcmis
            tau = math.hypot(c, z)
            cs = z / tau
            sn = c / tau
            b = b - c
            c = 0.0
        else:
            count = 0
            sigma = b + c
            while True:
                count += 1
                scale = max(abs(temp), abs(sigma))
                if scale >= _SAFMX2:
                    sigma *= _SAFMN2
                    temp *= _SAFMN2
                    if count <= 20:
                        continue
                if scale <= _SAFMN2:
                    sigma *= _SAFMX2
                    temp *= _SAFMX2
                    if count <= 20:
                        continue
                break
            p = 0.5 * temp
            tau = math.hypot(sigma, temp)
            cs = math.sqrt(0.5 * (1.0 + abs(sigma) / tau))
            sn = -(p / (tau * cs)) * math.copysign(1.0, sigma)
            aa = a * cs + b * sn
            bb = -a * sn + b * cs
            cc = c * cs + d * sn
            dd = -c * sn + d * cs
            a = aa * cs + cc * sn
            b = bb * cs + dd * sn
            c = -aa * sn + cc * cs
            d = -bb * sn + dd * cs
            temp = 0.5 * (a + d)
            a = temp
            d = temp
            if c != 0.0:
                if b != 0.0:
                    if math.copysign(1.0, b) == math.copysign(1.0, c):
                        sab = math.sqrt(abs(b))
                        sac = math.sqrt(abs(c))
                        p = math.copysign(sab * sac, c)
                        tau = 1.0 / math.sqrt(abs(b + c))
                        a = temp + p
                        d = temp - p
                        b = b - c
                        c = 0.0
                        cs1 = sab * tau
                        sn1 = sac * tau
                        temp = cs * cs1 - sn * sn1
                        sn = cs * sn1 + sn * cs1
                        cs = temp
                else:
                    b = -c
                    c = 0.0
                    temp = cs
                    cs = -sn
                    sn = temp
    rt1r = a
    rt2r = d
    if c == 0.0:
        rt1i = 0.0
        rt2i = 0.0
    else:
        rt1i = math.sqrt(abs(b)) * math.sqrt(abs(c))
        rt2i = -rt1i
    return a, b, c, d, rt1r, rt1i, rt2r, rt2i, cs, sn


@_jit
def norm2(v, lo, hi):
    scale = 0.0
    for i in range(lo, hi):
        scale = max(scale, abs(v[i]))
    if scale == 0.0:
        return 0.0
    ssq = 0.0
    for i in range(lo, hi):
        t = v[i] / scale
        ssq += t * t
    return scale * math.sqrt(ssq)


@_jit
def larfg(v, n):
    """Householder vector for ``v[0:n]``.

    On return ``v[1:n]`` holds the reflector tail (head is an implicit 1) and
    the pair ``(beta, tau)`` is returned, ``(I - tau w w^T) v = beta e1``.
    """
    alpha = v[0]
    if n <= 1:
        return alpha, 0.0
    xnorm = norm2(v, 1, n)
    if xnorm == 0.0:
        return alpha, 0.0
    beta = -math.copysign(math.hypot(alpha, xnorm), alpha)
    tau = (beta - alpha) / beta
    scal = 1.0 / (alpha - beta)
    for i in range(1, n):
        v[i] *= scal
    return beta, tau


@_jit
def rot_rows(A, i, j, c0, c1, cs, sn):
    for c in range(c0, c1):
        x = A[i, c]
        y = A[j, c]
        A[i, c] = cs * x + sn * y
        A[j, c] = cs * y - sn * x


@_jit
def rot_cols(A, i, j, r0, r1, cs, sn):
    for r in range(r0, r1):
        x = A[r, i]
        y = A[r, j]
        A[r, i] = cs * x + sn * y
        A[r, j] = cs * y - sn * x


@_jit
def refl_left(A, k, nr, v1, v2, tau, c0, c1):
    # rows k..k+nr-1, reflector (1, v1, v2)
    if tau == 0.0:
        return
    if nr == 3:
        for c in range(c0, c1):
            s = A[k, c] + v1 * A[k + 1, c] + v2 * A[k + 2, c]
            A[k, c] -= s * tau
            A[k + 1, c] -= s * tau * v1
            A[k + 2, c] -= s * tau * v2
    else:
        for c in range(c0, c1):
            s = A[k, c] + v1 * A[k + 1, c]
            A[k, c] -= s * tau
            A[k + 1, c] -= s * tau * v1


@_jit
def refl_right(A, k, nr, v1, v2, tau, r0, r1):
    if tau == 0.0:
        return
    if nr == 3:
        for r in range(r0, r1):
            s = A[r, k] + v1 * A[r, k + 1] + v2 * A[r, k + 2]
            A[r, k] -= s * tau
            A[r, k + 1] -= s * tau * v1
            A[r, k + 2] -= s * tau * v2
    else:
        for r in range(r0, r1):
            s = A[r, k] + v1 * A[r, k + 1]
            A[r, k] -= s * tau
            A[r, k + 1] -= s * tau * v1


@_jit
def standardize_block(T, Z, vec, r):
    """Standardize the 2x2 block at rows/cols r, r+1 of ``T`` in place."""
    m = T.shape[0]
    a, b, c, d, rt1r, rt1i, rt2r, rt2i, cs, sn = lanv2(
        T[r, r], T[r, r + 1], T[r + 1, r], T[r + 1, r + 1])
    T[r, r] = a
    T[r, r + 1] = b
    T[r + 1, r] = c
    T[r + 1, r + 1] = d
    if r + 2 < m:
        rot_rows(T, r, r + 1, r + 2, m, cs, sn)
    rot_cols(T, r, r + 1, 0, r, cs, sn)
    rot_cols(Z, r, r + 1, 0, Z.shape[0], cs, sn)
    if vec.shape[0] > 0:
        x = vec[r]
        y = vec[r + 1]
        vec[r] = cs * x + sn * y
        vec[r + 1] = cs * y - sn * x


# --------------------------------------------------------------------------
# small Schur (double-shift Francis iteration)


@_jit
def small_schur(H, Z, kind, param, nglob, budget):
    """Reduce the Hessenberg ``H`` to standardized real Schur form.

    ``Z`` is right-multiplied by every transformation.  Returns
    ``(info, iterations)``; ``info > 0`` is the number of rows still
    unconverged when the iteration budget ran out.
    """
    n = H.shape[0]
    nz = Z.shape[0]
    if n == 0:
        return 0, 0
    if n == 1:
        return 0, 0
    for j in range(n - 3):
        H[j + 2, j] = 0.0
        H[j + 3, j] = 0.0
    if n >= 3:
        H[n - 1, n - 3] = 0.0
    # the smlnum scaling follows the block being reduced unless told otherwise
    nn = nglob if nglob > 0 else n
    v = np.zeros(3)
    total = 0
    i = n - 1
    while i >= 0:
        l = 0
        kdefl = 0
        converged = False
        while True:
            k = i
            while k > l:
                if _subdiag_at(H, k, 0, n - 1, kind, param, nn):
                    break
                k -= 1
            l = k
            if l > 0:
                H[l, l - 1] = 0.0
            if l >= i - 1:
                converged = True
                break
            if total >= budget:
                break
            total += 1
            kdefl += 1
            if kdefl % 20 == 0:
                s = abs(H[l + 1, l]) + abs(H[l + 2, l + 1])
                h11 = 0.75 * s + H[l, l]
                h12 = -0.4375 * s
                h21 = s
                h22 = h11
            elif kdefl % 10 == 0:
                s = abs(H[i, i - 1]) + abs(H[i - 1, i - 2])
                h11 = 0.75 * s + H[i, i]
                h12 = -0.4375 * s
                h21 = s
                h22 = h11
            else:
                h11 = H[i - 1, i - 1]
                h21 = H[i, i - 1]
                h12 = H[i - 1, i]
                h22 = H[i, i]
            s = abs(h11) + abs(h12) + abs(h21) + abs(h22)
            if s == 0.0:
                rt1r = 0.0
                rt1i = 0.0
                rt2r = 0.0
                rt2i = 0.0
            else:
                h11 /= s
                h21 /= s
                h12 /= s
                h22 /= s
                tr = (h11 + h22) / 2.0
                det = (h11 - tr) * (h22 - tr) - h12 * h21
                rtdisc = math.sqrt(abs(det))
                if det >= 0.0:
                    rt1r = tr * s
                    rt2r = rt1r
                    rt1i = rtdisc * s
                    rt2i = -rt1i
                else:
                    rt1r = tr + rtdisc
                    rt2r = tr - rtdisc
                    if abs(rt1r - h22) <= abs(rt2r - h22):
                        rt1r = rt1r * s
                        rt2r = rt1r
                    else:
                        rt2r = rt2r * s
                        rt1r = rt2r
                    rt1i = 0.0
                    rt2i = 0.0
            # look for two consecutive small subdiagonals
            m = i - 2
            while True:
                h21s = H[m + 1, m]
                s = abs(H[m, m] - rt2r) + abs(rt2i) + abs(h21s)
                h21s = H[m + 1, m] / s
                v[0] = h21s * H[m, m + 1] + (H[m, m] - rt1r) * ((H[m, m] - rt2r) / s) \
                    - rt1i * (rt2i / s)
                v[1] = h21s * (H[m, m] + H[m + 1, m + 1] - rt1r - rt2r)
                v[2] = h21s * H[m + 2, m + 1]
                s = abs(v[0]) + abs(v[1]) + abs(v[2])
                v[0] /= s
                v[1] /= s
                v[2] /= s
                if m == l:
                    break
                h00 = abs(H[m, m - 1]) * (abs(v[1]) + abs(v[2]))
                h01 = abs(v[0]) * (abs(H[m - 1, m - 1]) + abs(H[m, m]) + abs(H[m + 1, m + 1]))
                if h00 <= ULP * h01:
                    break
                m -= 1
            # double-shift sweep
            for k in range(m, i):
                nr = min(3, i - k + 1)
                if k > m:
                    for t in range(nr):
                        v[t] = H[k + t, k - 1]
                beta, tau = larfg(v, nr)
                if k > m:
                    H[k, k - 1] = beta
                    H[k + 1, k - 1] = 0.0
                    if k < i - 1:
                        H[k + 2, k - 1] = 0.0
                elif m > l:
                    H[k, k - 1] = H[k, k - 1] * (1.0 - tau)
                v1 = v[1]
                v2 = v[2] if nr == 3 else 0.0
                refl_left(H, k, nr, v1, v2, tau, k, n)
                refl_right(H, k, nr, v1, v2, tau, 0, min(k + 3, i) + 1)
                refl_right(Z, k, nr, v1, v2, tau, 0, nz)
        if not converged:
            return i + 1, total
        if l == i - 1:
            a, b, c, d, rt1r, rt1i, rt2r, rt2i, cs, sn = lanv2(
                H[i - 1, i - 1], H[i - 1, i], H[i, i - 1], H[i, i])
            H[i - 1, i - 1] = a
            H[i - 1, i] = b
            H[i, i - 1] = c
            H[i, i] = d
            if i + 1 < n:
                rot_rows(H, i - 1, i, i + 1, n, cs, sn)
            rot_cols(H, i - 1, i, 0, i - 1, cs, sn)
            rot_cols(Z, i - 1, i, 0, nz, cs, sn)
        i = l - 1
    return 0, total


# --------------------------------------------------------------------------
# Hessenberg reduction of a small dense block


@_jit
def gehrd(A, Z):
    """Unblocked Householder reduction of ``A`` to Hessenberg form.

    ``Z`` (same row count as ``A`` has columns) is right-multiplied.
    """
    m = A.shape[0]
    nz = Z.shape[0]
    v = np.empty(m)
    for j in range(m - 2):
        ln = m - j - 1
        for t in range(ln):
            v[t] = A[j + 1 + t, j]
        beta, tau = larfg(v, ln)
        if tau == 0.0:
            continue
        v[0] = 1.0
        A[j + 1, j] = beta
        for t in range(j + 2, m):
            A[t, j] = 0.0
        w = v[:ln]
        # left: rows j+1.., columns j+1..
        for c in range(j + 1, m):
            s = 0.0
            for t in range(ln):
                s += w[t] * A[j + 1 + t, c]
            s *= tau
            for t in range(ln):
                A[j + 1 + t, c] -= s * w[t]
        for r in range(m):
            s = 0.0
            for t in range(ln):
                s += A[r, j + 1 + t] * w[t]
            s *= tau
            for t in range(ln):
                A[r, j + 1 + t] -= s * w[t]
        for r in range(nz):
            s = 0.0
            for t in range(ln):
                s += Z[r, j + 1 + t] * w[t]
            s *= tau
            for t in range(ln):
                Z[r, j + 1 + t] -= s * w[t]


@_jit
def spike_reflect(T, V, spike, ns):
    """Zero ``spike[1:ns]`` by one reflector applied to ``T`` and ``V``."""
    w = T.shape[1]
    nv = V.shape[0]
    if ns <= 1:
        return
    v = spike[:ns].copy()
    beta, tau = larfg(v, ns)
    if tau == 0.0:
        return
    v[0] = 1.0
    for c in range(w):
        s = 0.0
        for t in range(ns):
            s += v[t] * T[t, c]
        s *= tau
        for t in range(ns):
            T[t, c] -= s * v[t]
    for r in range(ns):
        s = 0.0
        for t in range(ns):
            s += T[r, t] * v[t]
        s *= tau
        for t in range(ns):
            T[r, t] -= s * v[t]
    for r in range(nv):
        s = 0.0
        for t in range(ns):
            s += V[r, t] * v[t]
        s *= tau
        for t in range(ns):
            V[r, t] -= s * v[t]
    spike[0] = beta
    for t in range(1, ns):
        spike[t] = 0.0


# --------------------------------------------------------------------------
# swapping adjacent diagonal blocks


@_jit
def _solve_small(K, rhs, n):
    """Gaussian elimination with complete pivoting; tiny pivots perturbed."""
    smin = 0.0
    for i in range(n):
        for j in range(n):
            smin = max(smin, abs(K[i, j]))
    smin = max(ULP * smin, SAFMIN / ULP)
    perm = np.arange(n)
    for k in range(n):
        pi = k
        pj = k
        best = -1.0
        for i in range(k, n):
            for j in range(k, n):
                if abs(K[i, j]) > best:
                    best = abs(K[i, j])
                    pi = i
                    pj = j
        if pi != k:
            for j in range(n):
                t = K[k, j]
                K[k, j] = K[pi, j]
                K[pi, j] = t
            t = rhs[k]
            rhs[k] = rhs[pi]
            rhs[pi] = t
        if pj != k:
            for i in range(n):
                t = K[i, k]
                K[i, k] = K[i, pj]
                K[i, pj] = t
            ti = perm[k]
            perm[k] = perm[pj]
            perm[pj] = ti
        if abs(K[k, k]) < smin:
            K[k, k] = smin
        for i in range(k + 1, n):
            f = K[i, k] / K[k, k]
            for j in range(k, n):
                K[i, j] -= f * K[k, j]
            rhs[i] -= f * rhs[k]
    x = np.zeros(n)
    for k in range(n - 1, -1, -1):
        s = rhs[k]
        for j in range(k + 1, n):
            s -= K[k, j] * x[j]
        x[k] = s / K[k, k]
    out = np.zeros(n)
    for k in range(n):
        out[perm[k]] = x[k]
    return out


@_jit
def _draw_fault(fault_rate, fault_u, fault_ctr):
    if fault_rate <= 0.0 or fault_u.shape[0] == 0:
        return False
    u = fault_u[fault_ctr[0] % fault_u.shape[0]]
    fault_ctr[0] += 1
    return u < fault_rate


@_jit
def swap(T, Z, vec, j, p, q, fault_rate, fault_u, fault_ctr):
    """Exchange the adjacent ``p`` and ``q`` sized blocks starting at ``j``.

    Works in place on ``T`` (rows/columns), ``Z`` (columns) and ``vec``
    (rows).  Returns False and leaves every array untouched on rejection.
    """
    m = T.shape[0]
    nz = Z.shape[0]
    s = p + q
    if _draw_fault(fault_rate, fault_u, fault_ctr):
        return False
    if p == 1 and q == 1:
        t11 = T[j, j]
        t22 = T[j + 1, j + 1]
        f = T[j, j + 1]
        g = t22 - t11
        if g == 0.0:
            cs = 1.0
            sn = 0.0
        elif f == 0.0:
            cs = 0.0
            sn = 1.0
        else:
            r = math.hypot(f, g)
            cs = f / r
            sn = g / r
        if j + 2 < m:
            rot_rows(T, j, j + 1, j + 2, m, cs, sn)
        rot_cols(T, j, j + 1, 0, j, cs, sn)
        T[j, j] = t22
        T[j + 1, j + 1] = t11
        rot_cols(Z, j, j + 1, 0, nz, cs, sn)
        if vec.shape[0] > 0:
            x = vec[j]
            y = vec[j + 1]
            vec[j] = cs * x + sn * y
            vec[j + 1] = cs * y - sn * x
        return True

    D = T[j:j + s, j:j + s].copy()
    dnorm = 0.0
    for a in range(s):
        for b in range(s):
            dnorm += D[a, b] * D[a, b]
    dnorm = math.sqrt(dnorm)
    thresh = max(10.0 * ULP * dnorm, SAFMIN / ULP)
    # A X - X B = C, column-major vec(X)
    nk = p * q
    K = np.zeros((nk, nk))
    rhs = np.zeros(nk)
    for c in range(q):
        for r in range(p):
            row = c * p + r
            rhs[row] = D[r, p + c]
            for rr in range(p):
                K[row, c * p + rr] += D[r, rr]
            for cc in range(q):
                K[row, cc * p + r] -= D[p + cc, p + c]
    x = _solve_small(K, rhs, nk)
    W = np.zeros((s, q))
    for c in range(q):
        for r in range(p):
            W[r, c] = -x[c * p + r]
        W[p + c, c] = 1.0
    Qf = np.eye(s)
    hv = np.zeros(s)
    for c in range(q):
        ln = s - c
        for t in range(ln):
            hv[t] = W[c + t, c]
        beta, tau = larfg(hv, ln)
        hv[0] = 1.0
        if tau != 0.0:
            for cc in range(c, q):
                sm = 0.0
                for t in range(ln):
                    sm += hv[t] * W[c + t, cc]
                sm *= tau
                for t in range(ln):
                    W[c + t, cc] -= sm * hv[t]
            for r in range(s):
                sm = 0.0
                for t in range(ln):
                    sm += Qf[r, c + t] * hv[t]
                sm *= tau
                for t in range(ln):
                    Qf[r, c + t] -= sm * hv[t]
    D2 = Qf.T @ D @ Qf
    emax = 0.0
    for a in range(q, s):
        for b in range(q):
            emax = max(emax, abs(D2[a, b]))
    if not (emax <= thresh):
        return False
    for a in range(q, s):
        for b in range(q):
            D2[a, b] = 0.0
    R = Qf @ D2 @ Qf.T - D
    rn = 0.0
    for a in range(s):
        for b in range(s):
            rn += R[a, b] * R[a, b]
    if not (math.sqrt(rn) <= thresh):
        return False
    # commit
    if j + s < m:
        T[j:j + s, j + s:] = Qf.T @ np.ascontiguousarray(T[j:j + s, j + s:])
    if j > 0:
        T[:j, j:j + s] = np.ascontiguousarray(T[:j, j:j + s]) @ Qf
    T[j:j + s, j:j + s] = D2
    Z[:, j:j + s] = np.ascontiguousarray(Z[:, j:j + s]) @ Qf
    if vec.shape[0] > 0:
        seg = vec[j:j + s].copy()
        vec[j:j + s] = Qf.T @ seg
    if q == 2:
        standardize_block(T, Z, vec, j)
    if p == 2:
        standardize_block(T, Z, vec, j + q)
    return True


@_jit
def block_size(T, r, hi):
    """Size of the diagonal block starting at row ``r`` (rows < hi)."""
    if r + 1 < hi and T[r + 1, r] != 0.0:
        return 2
    return 1


@_jit
def block_size_up(T, e, lo):
    """Size of the diagonal block ending just above row ``e`` (rows >= lo)."""
    if e - 2 >= lo and T[e - 1, e - 2] != 0.0:
        return 2
    return 1


@_jit
def move_unit_down(T, Z, vec, j, sz, g1, fault_rate, fault_u, fault_ctr):
    """Move the rows ``[j, j+sz)`` below the blocks in ``[j+sz, g1)``.

    Each block underneath is bubbled up through the unit.  Returns the number
    of successful rows moved or -1 on a rejected swap.
    """
    while j + sz < g1:
        e = j + sz
        nsz = block_size(T, e, g1)
        k = e
        while k > j:
            bsz = block_size_up(T, k, j)
            if not swap(T, Z, vec, k - bsz, bsz, nsz, fault_rate, fault_u, fault_ctr):
                return -1
            k -= bsz
            if block_size(T, k, k + nsz) != nsz:
                # a 2x2 of the group turned real; stop like a rejected swap
                return -1
        j += nsz
    return j


@_jit
def deflation_sweep(T, Z, spike, top, g0, g1, deflate, kind, param, nglob,
                    fault_rate, fault_u, fault_ctr, out):
    """Evaluate (or just reorder) the blocks of ``[top, g0)`` bottom-up.

    The failed group occupies ``[g0, g1)``.  Each block above it is moved
    below the group; in deflate mode it is then tested against the spike and
    either deflated (``g1`` shrinks) or absorbed into the group; in reorder
    mode it stays below the group, so the group ends up starting at ``top``.
    ``out`` receives ``(g0, g1, halted, n_checked)``.
    """
    halted = 0
    checked = 0
    while g0 > top:
        sz = block_size_up(T, g0, top)
        u0 = g0 - sz
        if g1 > g0:
            r = move_unit_down(T, Z, spike, u0, sz, g1, fault_rate, fault_u, fault_ctr)
            if r < 0:
                halted = 1
                break
        if not deflate:
            g0 = u0
            g1 = g1 - sz
            continue
        # the unit now sits at [g1 - sz, g1)
        rem = sz
        while rem > 0:
            e = g1
            bsz = block_size_up(T, e, e - rem)
            checked += 1
            if bsz == 1:
                ok = spike1_ok(spike[e - 1], T[e - 1, e - 1], kind, param, nglob)
            else:
                ok = spike2_ok(spike[e - 2], spike[e - 1], T[e - 2, e - 2], T[e - 2, e - 1],
                               T[e - 1, e - 2], T[e - 1, e - 1], kind, param, nglob)
            if not ok:
                break
            for t in range(e - bsz, e):
                spike[t] = 0.0
            g1 -= bsz
            rem -= bsz
        g0 = u0
    out[0] = g0
    out[1] = g1
    out[2] = halted
    out[3] = checked


# --------------------------------------------------------------------------
# bulge chasing inside a window


@_jit
def intro_vector(W, v, sr1, si1, sr2, si2):
    h11 = W[0, 0]
    h21 = W[1, 0]
    h31 = W[2, 0]
    s = abs(h11 - sr2) + abs(si2) + abs(h21) + abs(h31)
    if s == 0.0:
        v[0] = 0.0
        v[1] = 0.0
        v[2] = 0.0
        return
    h21s = h21 / s
    h31s = h31 / s
    v[0] = (h11 - sr1) * ((h11 - sr2) / s) - si1 * (si2 / s) + W[0, 1] * h21s + W[0, 2] * h31s
    v[1] = h21s * (h11 + W[1, 1] - sr1 - sr2) + W[1, 2] * h31s
    v[2] = h31s * (h11 + W[2, 2] - sr1 - sr2) + h21s * W[2, 1]


@_jit
def push_bulges(W, U, pos, shifts, intro, annihilate, scan_lo, scan_hi, codes,
                kind, param, nglob):
    """Chase a train of 3x3 bulges through the window ``W``.

    ``pos[j]`` is the next reflector row of bulge ``j`` (bulge 0 leads);
    ``-1`` marks a bulge still to be introduced at row 0 (``intro``).
    Bulges stop at row ``m-3`` or leave the window when ``annihilate``.
    Subdiagonal rows ``[scan_lo, scan_hi)`` are classified afterwards into
    ``codes`` (0 nonzero, 1 zeroed by the vigilant test, 2 exact zero).
    """
    m = W.shape[0]
    k = pos.shape[0]
    limit = m - 1 if annihilate else m - 3
    big = 1 << 40
    v = np.zeros(3)
    moved = True
    while moved:
        moved = False
        for j in range(k):
            p = pos[j]
            if j > 0:
                lower = pos[j - 1]
                if lower == -1:
                    continue
                if annihilate and lower >= limit:
                    lower = big
            else:
                lower = big
            if p == -1:
                if not intro or lower < 4 or m < 3:
                    continue
                intro_vector(W, v, shifts[j, 0], shifts[j, 1], shifts[j, 2], shifts[j, 3])
                beta, tau = larfg(v, 3)
                refl_left(W, 0, 3, v[1], v[2], tau, 0, m)
                refl_right(W, 0, 3, v[1], v[2], tau, 0, min(3, m - 1) + 1)
                refl_right(U, 0, 3, v[1], v[2], tau, 0, U.shape[0])
                pos[j] = 1
                moved = True
                continue
            if p >= limit or lower < p + 4:
                continue
            nr = 3 if p + 2 <= m - 1 else 2
            for t in range(nr):
                v[t] = W[p + t, p - 1]
            beta, tau = larfg(v, nr)
            W[p, p - 1] = beta
            for t in range(1, nr):
                W[p + t, p - 1] = 0.0
            v2 = v[2] if nr == 3 else 0.0
            refl_left(W, p, nr, v[1], v2, tau, p, m)
            refl_right(W, p, nr, v[1], v2, tau, 0, min(p + 3, m - 1) + 1)
            refl_right(U, p, nr, v[1], v2, tau, 0, U.shape[0])
            pos[j] = p + 1
            moved = True
    for r in range(scan_lo, scan_hi):
        if r < 1:
            continue
        if W[r, r - 1] == 0.0:
            codes[r] = 2
        elif _subdiag_at(W, r, 0, m - 1, kind, param, nglob):
            W[r, r - 1] = 0.0
            codes[r] = 1
        else:
            codes[r] = 0
