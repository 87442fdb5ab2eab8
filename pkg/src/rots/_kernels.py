"""Compiled inner loops for alignment dynamic programs and path sampling.

Cells outside the band (``|i - j| >= band``) are skipped; pass ``np.inf``
for an unconstrained band. Indices here are 0-based.
"""

import numba
import numpy as np

_NEG_INF = -np.inf


@numba.njit(cache=True)
def _lse3(a, b, c):
    m = max(a, max(b, c))
    if m == _NEG_INF:
        return _NEG_INF
    return m + np.log(np.exp(a - m) + np.exp(b - m) + np.exp(c - m))


@numba.njit(cache=True)
def dtw_accumulate(D, band):
    n1, n2 = D.shape
    R = np.full((n1, n2), np.inf)
    for i in range(n1):
        for j in range(n2):
            if abs(i - j) >= band:
                continue
            if i == 0 and j == 0:
                R[i, j] = D[i, j]
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = R[i - 1, j - 1]
            if i > 0 and R[i - 1, j] < best:
                best = R[i - 1, j]
            if j > 0 and R[i, j - 1] < best:
                best = R[i, j - 1]
            R[i, j] = D[i, j] + best
    return R


@numba.njit(cache=True)
def gak_linear(K, band):
    """M(i,j) = K(i,j) * (M(i-1,j) + M(i-1,j-1) + M(i,j-1)), M(0,0) = K(0,0)."""
    n1, n2 = K.shape
    M = np.zeros((n1, n2))
    for i in range(n1):
        for j in range(n2):
            if abs(i - j) >= band:
                continue
            if i == 0 and j == 0:
                M[i, j] = K[i, j]
                continue
            s = 0.0
            if i > 0:
                s += M[i - 1, j]
            if j > 0:
                s += M[i, j - 1]
            if i > 0 and j > 0:
                s += M[i - 1, j - 1]
            M[i, j] = K[i, j] * s
    return M


@numba.njit(cache=True)
def gak_log_forward(logK, band):
    n1, n2 = logK.shape
    F = np.full((n1, n2), _NEG_INF)
    for i in range(n1):
        for j in range(n2):
            if abs(i - j) >= band:
                continue
            if i == 0 and j == 0:
                F[i, j] = logK[i, j]
                continue
            up = F[i - 1, j] if i > 0 else _NEG_INF
            left = F[i, j - 1] if j > 0 else _NEG_INF
            diag = F[i - 1, j - 1] if (i > 0 and j > 0) else _NEG_INF
            F[i, j] = logK[i, j] + _lse3(up, diag, left)
    return F


@numba.njit(cache=True)
def gak_log_backward(logK, band):
    """B(i,j) = log-sum of path weights from (i,j), exclusive, to the end cell."""
    n1, n2 = logK.shape
    B = np.full((n1, n2), _NEG_INF)
    for i in range(n1 - 1, -1, -1):
        for j in range(n2 - 1, -1, -1):
            if abs(i - j) >= band:
                continue
            if i == n1 - 1 and j == n2 - 1:
                B[i, j] = 0.0
                continue
            down = B[i + 1, j] + logK[i + 1, j] if i + 1 < n1 else _NEG_INF
            right = B[i, j + 1] + logK[i, j + 1] if j + 1 < n2 else _NEG_INF
            diag = (B[i + 1, j + 1] + logK[i + 1, j + 1]
                    if (i + 1 < n1 and j + 1 < n2) else _NEG_INF)
            B[i, j] = _lse3(down, diag, right)
    return B


@numba.njit(cache=True)
def sample_paths(n1, n2, band, U, pi1, pi2, lengths):
    """Draw ``U.shape[0]`` monotone paths from (0,0) to (n1-1,n2-1).

    At each cell the next step is chosen uniformly (using one uniform from
    ``U``) among the feasible moves, in the fixed order advance-first,
    advance-both, advance-second. A move is feasible when it stays inside
    the grid and the band. ``pi1``/``pi2`` rows are filled up to
    ``lengths[k]``.
    """
    count = U.shape[0]
    di = np.array([1, 1, 0])
    dj = np.array([0, 1, 1])
    ok = np.zeros(3, dtype=np.int64)
    for k in range(count):
        i = 0
        j = 0
        r = 0
        pi1[k, 0] = 0
        pi2[k, 0] = 0
        while i < n1 - 1 or j < n2 - 1:
            nf = 0
            for mv in range(3):
                ni = i + di[mv]
                nj = j + dj[mv]
                if ni < n1 and nj < n2 and abs(ni - nj) < band:
                    ok[nf] = mv
                    nf += 1
            pick = int(U[k, r] * nf)
            if pick >= nf:
                pick = nf - 1
            mv = ok[pick]
            i += di[mv]
            j += dj[mv]
            r += 1
            pi1[k, r] = i
            pi2[k, r] = j
        lengths[k] = r + 1
