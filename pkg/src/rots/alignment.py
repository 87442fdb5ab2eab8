"""Alignment paths between two series: validation, enumeration, counting, sampling.

Indices are 0-based throughout: a path between series of lengths ``T1`` and
``T2`` starts at ``(0, 0)`` and ends at ``(T1 - 1, T2 - 1)``. Each step
advances the first index, the second index, or both, by exactly one.

A band width ``b`` restricts paths to cells with ``|i - j| < b``; ``None``
means unconstrained.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from rots import _kernels
from rots.errors import AlignmentError, InfeasibleBandError, SizeError

ENUMERATION_LIMIT = 12
_MOVES = ((1, 0), (1, 1), (0, 1))


def _band_value(band_width):
    if band_width is None:
        return np.inf
    if band_width < 1:
        raise ValueError(f"band_width must be >= 1, got {band_width}")
    return float(band_width)


def check_band(T1, T2, band_width):
    """Raise if no path from (0,0) to (T1-1,T2-1) fits in the band."""
    band = _band_value(band_width)
    if abs(T1 - T2) >= band:
        raise InfeasibleBandError(
            f"band {band_width} excludes the end cell of a {T1}x{T2} alignment"
        )
    return band


def default_band(T):
    """Band ``T/2`` used for training (at least 1)."""
    return max(T / 2.0, 1.0)


@dataclass(frozen=True)
class Alignment:
    pi1: np.ndarray
    pi2: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi1", np.asarray(self.pi1, dtype=np.int64))
        object.__setattr__(self, "pi2", np.asarray(self.pi2, dtype=np.int64))

    def __len__(self):
        return len(self.pi1)

    def __eq__(self, other):
        return (isinstance(other, Alignment)
                and np.array_equal(self.pi1, other.pi1)
                and np.array_equal(self.pi2, other.pi2))

    def __hash__(self):
        return hash((self.pi1.tobytes(), self.pi2.tobytes()))

    def key(self):
        return tuple(zip(self.pi1.tolist(), self.pi2.tolist()))

    def validate(self, T1, T2, band_width=None):
        p1, p2 = self.pi1, self.pi2
        if len(p1) != len(p2) or len(p1) == 0:
            raise AlignmentError("empty or ragged alignment")
        if p1[0] != 0 or p2[0] != 0 or p1[-1] != T1 - 1 or p2[-1] != T2 - 1:
            raise AlignmentError(f"alignment does not span (0,0)..({T1 - 1},{T2 - 1})")
        d1, d2 = np.diff(p1), np.diff(p2)
        if np.any((d1 < 0) | (d1 > 1) | (d2 < 0) | (d2 > 1) | ((d1 == 0) & (d2 == 0))):
            raise AlignmentError("steps must advance one or both indices by exactly 1")
        if len(p1) > T1 + T2 - 1:
            raise AlignmentError("alignment longer than T1 + T2 - 1")
        if band_width is not None and np.any(np.abs(p1 - p2) >= band_width):
            raise AlignmentError("alignment leaves the band")
        return self

    @classmethod
    def diagonal(cls, T):
        idx = np.arange(T)
        return cls(idx, idx)


class AlignmentSet:
    """A multiset of alignments stored as flat index arrays.

    ``pi1``/``pi2`` hold every path concatenated; ``offsets[k]`` is where
    path ``k`` starts. ``source`` records how the set was produced.
    """

    def __init__(self, pi1, pi2, offsets, shape, source):
        self.pi1 = np.asarray(pi1, dtype=np.int64)
        self.pi2 = np.asarray(pi2, dtype=np.int64)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.shape = tuple(shape)
        self.source = dict(source)
        if len(self.offsets) == 0:
            raise AlignmentError("alignment set must be nonempty")

    @classmethod
    def from_alignments(cls, alignments, shape, source=None):
        alignments = list(alignments)
        if not alignments:
            raise AlignmentError("alignment set must be nonempty")
        lengths = [len(a) for a in alignments]
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
        return cls(np.concatenate([a.pi1 for a in alignments]),
                   np.concatenate([a.pi2 for a in alignments]),
                   offsets, shape, source or {"kind": "explicit"})

    def __len__(self):
        return len(self.offsets)

    @cached_property
    def lengths(self):
        return np.diff(np.append(self.offsets, len(self.pi1)))

    @cached_property
    def path_ids(self):
        """Path index of every flattened step."""
        return np.repeat(np.arange(len(self)), self.lengths)

    def __getitem__(self, k):
        lo = self.offsets[k]
        hi = lo + self.lengths[k]
        return Alignment(self.pi1[lo:hi], self.pi2[lo:hi])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def alignments(self):
        return list(self)

    def subset(self, indices):
        return AlignmentSet.from_alignments([self[k] for k in indices], self.shape,
                                            {"kind": "subset", "of": self.source})


def count_alignments(T1, T2, band_width=None):
    """Exact number of band-feasible alignments (a Delannoy number when unbanded)."""
    band = _band_value(band_width)
    N = [[0] * T2 for _ in range(T1)]
    for i in range(T1):
        for j in range(T2):
            if abs(i - j) >= band:
                continue
            if i == 0 and j == 0:
                N[i][j] = 1
                continue
            N[i][j] = ((N[i - 1][j] if i else 0) + (N[i][j - 1] if j else 0)
                       + (N[i - 1][j - 1] if i and j else 0))
    return N[T1 - 1][T2 - 1]


def enumerate_alignments(T1, T2, band_width=None):
    """Every band-feasible alignment exactly once, sorted lexicographically."""
    if not (1 <= T1 <= ENUMERATION_LIMIT and 1 <= T2 <= ENUMERATION_LIMIT):
        raise SizeError(
            f"enumeration limited to lengths 1..{ENUMERATION_LIMIT}, got ({T1}, {T2})"
        )
    band = check_band(T1, T2, band_width)
    paths = []
    stack = [((0, 0),)]
    while stack:
        path = stack.pop()
        i, j = path[-1]
        if i == T1 - 1 and j == T2 - 1:
            paths.append(path)
            continue
        for di, dj in _MOVES:
            ni, nj = i + di, j + dj
            if ni < T1 and nj < T2 and abs(ni - nj) < band:
                stack.append(path + ((ni, nj),))
    paths.sort()
    alignments = [Alignment([p[0] for p in path], [p[1] for p in path]) for path in paths]
    return AlignmentSet.from_alignments(
        alignments, (T1, T2), {"kind": "exhaustive", "band_width": band_width})


def sample_alignments(T1, T2, count, band_width, rng):
    """Draw ``count`` random paths, choosing uniformly among feasible steps.

    Duplicates are kept. ``rng`` is a numpy Generator; one uniform per step
    is consumed from a single ``(count, T1 + T2 - 2)`` block.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    band = check_band(T1, T2, band_width)
    steps = T1 + T2 - 2
    U = rng.random((count, max(steps, 1)))
    pi1 = np.empty((count, steps + 1), dtype=np.int64)
    pi2 = np.empty((count, steps + 1), dtype=np.int64)
    lengths = np.empty(count, dtype=np.int64)
    _kernels.sample_paths(T1, T2, band, U, pi1, pi2, lengths)
    mask = np.arange(steps + 1)[None, :] < lengths[:, None]
    offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    return AlignmentSet(pi1[mask], pi2[mask], offsets, (T1, T2),
                        {"kind": "sampled", "count": count, "band_width": band_width})


def _as_2d(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x


def _norm(diff, p, axis=0):
    if p == 1:
        return np.abs(diff).sum(axis=axis)
    if p == 2:
        return np.sqrt((diff * diff).sum(axis=axis))
    if p == np.inf or p == "inf":
        return np.abs(diff).max(axis=axis)
    raise ValueError(f"unsupported Minkowski order {p!r}")


def path_cost(x, x2, alignment, p=2):
    """Sum over matched steps of the Minkowski distance between channel vectors."""
    x, x2 = _as_2d(x), _as_2d(x2)
    if x.shape[0] != x2.shape[0]:
        raise AlignmentError("channel counts differ")
    p1, p2 = alignment.pi1, alignment.pi2
    if p1.min() < 0 or p2.min() < 0 or p1.max() >= x.shape[1] or p2.max() >= x2.shape[1]:
        raise AlignmentError("alignment index out of range")
    return float(_norm(x[:, p1] - x2[:, p2], p).sum())


def path_costs(x, x2, aset, p=2):
    """Vector of path costs, one per alignment in ``aset``."""
    x, x2 = _as_2d(x), _as_2d(x2)
    steps = _norm(x[:, aset.pi1] - x2[:, aset.pi2], p)
    return np.add.reduceat(steps, aset.offsets)
