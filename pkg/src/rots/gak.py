"""DTW, the global alignment kernel (GAK), and their gradients.

For two series ``x`` (C x T1) and ``x2`` (C x T2) the kernel is the sum over
alignments ``pi`` of ``exp(-d_pi / nu)``, where ``d_pi`` adds up per-step
Minkowski distances between channel vectors. ``D_GAK = -nu * log k`` is a
soft minimum of the path costs; DTW is the hard minimum.

Gradients are taken with respect to an additive perturbation ``a`` of the
second argument, i.e. of ``d_pi(x, x_base + a)``.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from rots import _kernels
from rots.alignment import (
    ENUMERATION_LIMIT,
    Alignment,
    AlignmentSet,
    _as_2d,
    _norm,
    check_band,
    count_alignments,
    enumerate_alignments,
    path_costs,
)
from rots.errors import NumericError, ShapeError, SizeError, UnsupportedError

GRAD_ENUMERATION_LIMIT = 8
NU_FLOOR = 1e-6


@dataclass(frozen=True)
class GakParams:
    nu: float
    p: object = 2  # 1, 2 or np.inf
    band_width: float = None

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if self.p not in (1, 2, np.inf):
            raise ValueError(f"p must be 1, 2 or inf, got {self.p!r}")
        if self.band_width is not None and self.band_width < 1:
            raise ValueError("band_width must be >= 1")


def _pair(x, x2):
    x, x2 = _as_2d(x), _as_2d(x2)
    if x.shape[0] != x2.shape[0]:
        raise ShapeError(f"channel counts differ: {x.shape[0]} vs {x2.shape[0]}")
    return x, x2


def distance_matrix(x, x2, p=2):
    """``D[i, j] = ||x[:, i] - x2[:, j]||_p``."""
    x, x2 = _pair(x, x2)
    return _norm(x[:, :, None] - x2[:, None, :], p)


def dtw_distance(x, x2, p=2, band_width=None):
    """Minimum path cost and one minimizing alignment (ties prefer diagonal, then up)."""
    x, x2 = _pair(x, x2)
    T1, T2 = x.shape[1], x2.shape[1]
    band = check_band(T1, T2, band_width)
    R = _kernels.dtw_accumulate(distance_matrix(x, x2, p), band)
    i, j = T1 - 1, T2 - 1
    p1, p2 = [i], [j]
    while i > 0 or j > 0:
        cands = []
        if i > 0 and j > 0:
            cands.append((R[i - 1, j - 1], i - 1, j - 1))
        if i > 0:
            cands.append((R[i - 1, j], i - 1, j))
        if j > 0:
            cands.append((R[i, j - 1], i, j - 1))
        _, i, j = min(cands, key=lambda c: c[0])
        p1.append(i)
        p2.append(j)
    return float(R[T1 - 1, T2 - 1]), Alignment(p1[::-1], p2[::-1])


def log_gak_exact(x, x2, params):
    """``log k_GAK`` by the three-way recursion carried out in log space."""
    x, x2 = _pair(x, x2)
    band = check_band(x.shape[1], x2.shape[1], params.band_width)
    logK = -distance_matrix(x, x2, params.p) / params.nu
    F = _kernels.gak_log_forward(logK, band)
    value = F[-1, -1]
    if not np.isfinite(value):
        raise NumericError("k_GAK vanished: every path weight underflowed")
    return float(value)


def gak_exact(x, x2, params):
    """Sum of ``exp(-d_pi / nu)`` over all (band-feasible) alignments.

    Runs the recursion in linear space unless ``nu`` is small relative to the
    median pointwise distance, or the linear pass under/overflows, in which
    case the log-space recursion is used and exponentiated.
    """
    x, x2 = _pair(x, x2)
    band = check_band(x.shape[1], x2.shape[1], params.band_width)
    D = distance_matrix(x, x2, params.p)
    if params.nu >= 0.05 * np.median(D):
        with np.errstate(over="ignore", under="ignore"):
            value = _kernels.gak_linear(np.exp(-D / params.nu), band)[-1, -1]
        if np.isfinite(value) and value > 0:
            return float(value)
    value = math.exp(log_gak_exact(x, x2, params))
    if not (np.isfinite(value) and value > 0):
        raise NumericError(f"k_GAK not representable in double precision ({value})")
    return value


def d_gak(x, x2, params):
    return -params.nu * log_gak_exact(x, x2, params)


def path_weights(x, x2, aset, params):
    """``exp(-d_pi / nu)`` for every path of ``aset``."""
    return np.exp(-path_costs(x, x2, aset, params.p) / params.nu)


def gak_sampled(x, x2, aset, params, rescale=False):
    """Sum of path weights over the paths in ``aset`` (duplicates counted).

    With ``rescale`` the sum is multiplied by ``|A| / len(aset)``, which is an
    unbiased estimate of the full kernel when paths are drawn uniformly from A.
    """
    x, x2 = _pair(x, x2)
    total = float(path_weights(x, x2, aset, params).sum())
    if rescale:
        total *= count_alignments(x.shape[1], x2.shape[1], params.band_width) / len(aset)
    return total


def _step_grads(residual, p):
    if p == 2:
        nrm = np.sqrt((residual * residual).sum(axis=0))
        safe = np.where(nrm > 0, nrm, 1.0)
        return np.where(nrm > 0, residual / safe, 0.0)
    if p == 1:
        return np.sign(residual)
    raise UnsupportedError("gradients are only defined for p in {1, 2}")


def weighted_path_grad(x, a, aset, weights, p=2, x_base=None):
    """``sum_k weights[k] * grad_a d_{pi_k}(x, x_base + a)`` as a C x T2 matrix."""
    x = _as_2d(x)
    a = _as_2d(a)
    x2 = (x if x_base is None else _as_2d(x_base)) + a
    g = _step_grads(x2[:, aset.pi2] - x[:, aset.pi1], p)
    g = g * np.asarray(weights)[aset.path_ids]
    T2 = x2.shape[1]
    return np.stack([np.bincount(aset.pi2, weights=gc, minlength=T2) for gc in g])


def grad_path_cost(x, a, alignment, p=2, x_base=None):
    """Gradient of ``d_pi(x, x_base + a)`` with respect to ``a``; zero residuals give 0."""
    if p not in (1, 2):
        raise UnsupportedError("gradients are only defined for p in {1, 2}")
    x = _as_2d(x)
    aset = AlignmentSet.from_alignments([alignment], (x.shape[1], _as_2d(a).shape[1]))
    return weighted_path_grad(x, a, aset, np.ones(1), p, x_base)


def grad_log_gak_exact(x, a, params, x_base=None):
    """``grad_a log k_GAK(x, x_base + a)`` by explicit enumeration (small T only)."""
    if params.p not in (1, 2):
        raise UnsupportedError("gradients are only defined for p in {1, 2}")
    x = _as_2d(x)
    x2 = (x if x_base is None else _as_2d(x_base)) + _as_2d(a)
    T1, T2 = x.shape[1], x2.shape[1]
    if max(T1, T2) > GRAD_ENUMERATION_LIMIT:
        raise SizeError(f"enumerated gradient limited to T <= {GRAD_ENUMERATION_LIMIT}")
    aset = enumerate_alignments(T1, T2, params.band_width)
    z = -path_costs(x, x2, aset, params.p) / params.nu
    w = np.exp(z - z.max())
    w /= w.sum()
    return -weighted_path_grad(x, a, aset, w, params.p, x_base) / params.nu


def alignment_occupancy(x, x2, params):
    """Posterior probability that each cell (i, j) lies on the path, and log k."""
    x, x2 = _pair(x, x2)
    band = check_band(x.shape[1], x2.shape[1], params.band_width)
    logK = -distance_matrix(x, x2, params.p) / params.nu
    F = _kernels.gak_log_forward(logK, band)
    B = _kernels.gak_log_backward(logK, band)
    logk = F[-1, -1]
    if not np.isfinite(logk):
        raise NumericError("k_GAK vanished: every path weight underflowed")
    with np.errstate(invalid="ignore"):
        P = np.exp(F + B - logk)
    return np.nan_to_num(P, nan=0.0), float(logk)


def grad_log_gak_dp(x, a, params, x_base=None):
    """``grad_a log k_GAK(x, x_base + a)`` by forward-backward over all cells, O(C T1 T2)."""
    if params.p not in (1, 2):
        raise UnsupportedError("gradients are only defined for p in {1, 2}")
    x = _as_2d(x)
    x2 = (x if x_base is None else _as_2d(x_base)) + _as_2d(a)
    P, _ = alignment_occupancy(x, x2, params)
    R = x2[:, None, :] - x[:, :, None]  # (C, T1, T2)
    if params.p == 2:
        nrm = np.sqrt((R * R).sum(axis=0))
        G = np.where(nrm > 0, R / np.where(nrm > 0, nrm, 1.0), 0.0)
    else:
        G = np.sign(R)
    return -(G * P[None]).sum(axis=1) / params.nu


def _pointwise_distances(X, p, max_pairs, rng):
    n, C, T = X.shape
    total = n * (n - 1) // 2 * T * T
    if total <= max_pairs:
        out = []
        for i in range(n):
            for j in range(i + 1, n):
                out.append(distance_matrix(X[i], X[j], p).ravel())
        return np.concatenate(out)
    i = rng.integers(n, size=max_pairs)
    j = (i + rng.integers(1, n, size=max_pairs)) % n
    t = rng.integers(T, size=max_pairs)
    s = rng.integers(T, size=max_pairs)
    return _norm(X[i, :, t] - X[j, :, s], p, axis=1)


def estimate_nu(dataset, p=2, max_pairs=20000, seed=0):
    """Median distance between points of different series, times sqrt(median length)."""
    X = dataset.X if hasattr(dataset, "X") else np.asarray(dataset, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least two series to estimate nu")
    rng = np.random.default_rng(seed)
    med = float(np.median(_pointwise_distances(X, p, max_pairs, rng)))
    nu = med * math.sqrt(X.shape[2])
    if not nu > 0:
        warnings.warn("all sampled cross-series distances are zero; using nu floor",
                      RuntimeWarning, stacklevel=2)
        return NU_FLOOR
    return nu


def prop1_gap(x, x2, params):
    """Return ``(D_DTW - D_GAK, nu * log |A|)``; the first lies in [0, the second].

    The gap is evaluated as ``nu * log sum_pi exp(-(d_pi - d_min) / nu)`` over
    the enumerated alignments. The minimizing path contributes exactly 1 and
    every other term at most 1, so both inequalities also hold in floating
    point, which differencing two separately rounded distances does not give.
    """
    x, x2 = _pair(x, x2)
    T1, T2 = x.shape[1], x2.shape[1]
    if max(T1, T2) > ENUMERATION_LIMIT:
        raise SizeError(f"alignment-count bound limited to T <= {ENUMERATION_LIMIT}")
    aset = enumerate_alignments(T1, T2, params.band_width)
    costs = path_costs(x, x2, aset, params.p)
    rel = math.fsum(np.exp(-(costs - costs.min()) / params.nu))
    gap = params.nu * math.log(rel)
    bound = params.nu * math.log(len(aset))
    return gap, bound
