"""Stochastic compositional alternating gradient descent ascent.

Solves ``min_w max_{a_1..a_n} (1/n) sum_i f_i(w, a_i) - g(h_i(a_i))`` where
``h_i`` is the mean of ``m`` components ``h_{i,j}``. Each iteration takes a
primal step on a sampled block, then refreshes a moving-average estimate
``omega_i`` of ``h_i`` from one sampled component, and takes a dual ascent
step on a second sampled block using the *new* primal iterate and
``grad g(omega_i)`` in place of ``grad g(h_i)``.
"""

import csv
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np

from rots.errors import DivergenceError

INDEX_CHUNK = 1024


class CompositionalProblem(ABC):
    """Sampled oracle access to a compositional min-max problem.

    ``a_i`` arguments are the dual block of index ``i`` (any array shape).
    """

    n: int
    m: int

    @abstractmethod
    def sample_primal_grad(self, w, a_i, i):
        """Stochastic gradient of ``f_i`` with respect to ``w``."""

    @abstractmethod
    def sample_dual_f_grad(self, w, a_i, i):
        """Stochastic gradient of ``f_i`` with respect to ``a_i``."""

    @abstractmethod
    def sample_h_value(self, a_i, i, j):
        """Component ``h_{i,j}(a_i)``."""

    @abstractmethod
    def sample_h_jvp(self, a_i, i, j, v):
        """``grad h_{i,j}(a_i)^T v``, shaped like ``a_i``."""

    @abstractmethod
    def g_grad(self, u):
        """Gradient of the outer function at ``u``."""

    def sample_objective(self, w, a_i, i, omega_i):
        """Optional estimate of ``phi_i`` with ``omega_i`` standing in for ``h_i``."""
        return math.nan


def ma_update(omega_i, value, beta):
    """``(1 - beta) * omega_i + beta * value``."""
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    return (1 - beta) * omega_i + beta * value


@dataclass
class ScagdaParams:
    eta: float
    gamma: float
    beta: float
    K: int
    seed: int = 0
    first_touch: bool = False  # replace omega outright on a block's first update
    log_every: int = 1
    eta_schedule: object = None  # optional callable k -> eta_k
    gamma_schedule: object = None

    def __post_init__(self):
        if not (self.eta > 0 and self.gamma > 0):
            raise ValueError("eta and gamma must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class SolveTrace:
    """Per-iteration records; optional columns hold NaN when absent."""

    columns: tuple = ("k", "obj", "primal_grad_norm", "primal_gap", "ma_error")
    rows: list = field(default_factory=list)
    flags: dict = field(default_factory=dict)

    def append(self, **values):
        self.rows.append(tuple(values.get(c, math.nan) for c in self.columns))

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        idx = self.columns.index(name)
        return np.array([r[idx] for r in self.rows], dtype=float)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_fmt(v) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            cols = tuple(next(reader))
            rows = [tuple(float(v) if v != "" else math.nan for v in r) for r in reader]
        return cls(cols, rows)


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return repr(float(v))


class Instrumented(CompositionalProblem):
    """Wraps a problem with exact oracles used only for logging.

    ``exact_P(w)`` returns the primal function value, ``P_star`` its minimum,
    ``exact_h(a)`` the vector of all ``h_i(a_i)``.
    """

    def __init__(self, problem, exact_P=None, exact_h=None, P_star=None, every=1):
        if exact_P is not None and P_star is None:
            raise ValueError("exact_P needs the reference minimum P_star")
        self.problem = problem
        self.n, self.m = problem.n, problem.m
        self.exact_P, self.exact_h, self.P_star = exact_P, exact_h, P_star
        self.every = max(int(every), 1)

    def sample_primal_grad(self, w, a_i, i):
        return self.problem.sample_primal_grad(w, a_i, i)

    def sample_dual_f_grad(self, w, a_i, i):
        return self.problem.sample_dual_f_grad(w, a_i, i)

    def sample_h_value(self, a_i, i, j):
        return self.problem.sample_h_value(a_i, i, j)

    def sample_h_jvp(self, a_i, i, j, v):
        return self.problem.sample_h_jvp(a_i, i, j, v)

    def g_grad(self, u):
        return self.problem.g_grad(u)

    def sample_objective(self, w, a_i, i, omega_i):
        return self.problem.sample_objective(w, a_i, i, omega_i)


def attach_diagnostics(problem, exact_P=None, exact_h=None, P_star=None, every=1):
    return Instrumented(problem, exact_P, exact_h, P_star, every)


def draw_indices(rng, n, m, count):
    """Index block for ``count`` iterations: columns ``i1, i2, j1, j2``.

    The draw order within a block is fixed: all ``i1``, then all ``i2``, then
    ``(j1, j2)`` pairs.
    """
    i1 = rng.integers(n, size=count)
    i2 = rng.integers(n, size=count)
    j = rng.integers(m, size=(count, 2))
    return np.column_stack([i1, i2, j])


def _finite(x):
    return bool(np.all(np.isfinite(x)))


def scagda_run(problem, params, init_w, init_a):
    """Run ``params.K`` iterations; returns ``(w_K, a_K, trace)``.

    ``init_a`` is a sequence of ``n`` dual blocks; it is copied, not mutated.
    Moving averages start at zero.
    """
    rng = np.random.default_rng(params.seed)
    w = np.array(init_w, dtype=float)
    a = [np.array(ai, dtype=float) for ai in init_a]
    if len(a) != problem.n:
        raise ValueError(f"expected {problem.n} dual blocks, got {len(a)}")
    omega = [0.0] * problem.n
    touched = np.zeros(problem.n, dtype=bool)
    diag = problem if isinstance(problem, Instrumented) else None
    trace = SolveTrace()
    trace.flags["first_touch"] = params.first_touch

    idx = None
    for k in range(params.K):
        if k % INDEX_CHUNK == 0:
            idx = draw_indices(rng, problem.n, problem.m, min(INDEX_CHUNK, params.K - k))
        i1, i2, j1, j2 = (int(v) for v in idx[k % INDEX_CHUNK])
        eta = params.eta_schedule(k) if params.eta_schedule else params.eta
        gamma = params.gamma_schedule(k) if params.gamma_schedule else params.gamma

        gw = problem.sample_primal_grad(w, a[i1], i1)
        w = w - eta * gw

        a_old = a[i2]
        hval = problem.sample_h_value(a_old, i2, j1)
        if params.first_touch and not touched[i2]:
            omega[i2] = hval
        else:
            omega[i2] = ma_update(omega[i2], hval, params.beta)
        touched[i2] = True
        gf = problem.sample_dual_f_grad(w, a_old, i2)
        comp = problem.sample_h_jvp(a_old, i2, j2, problem.g_grad(omega[i2]))
        a[i2] = a_old + gamma * (gf - comp)

        if not (_finite(w) and _finite(a[i2]) and _finite(omega[i2])):
            raise DivergenceError(f"non-finite iterate at iteration {k}", trace)

        if k % params.log_every == 0 or k == params.K - 1:
            row = {"k": k, "obj": problem.sample_objective(w, a_old, i2, omega[i2]),
                   "primal_grad_norm": float(np.linalg.norm(gw))}
            if diag is not None and (k % diag.every == 0 or k == params.K - 1):
                if diag.exact_P is not None:
                    row["primal_gap"] = diag.exact_P(w) - diag.P_star
                if diag.exact_h is not None:
                    # omega^{k+1} estimates h at the dual iterate it was fed, a^k
                    pre = list(a)
                    pre[i2] = a_old
                    err = np.asarray(omega, dtype=float) - np.asarray(diag.exact_h(pre))
                    row["ma_error"] = float(np.mean(err * err))
            trace.append(**row)
    return w, a, trace
