"""Synthetic compositional min-max problems with numerical primal oracles.

Block ``i`` has

    phi_i(w, a_i) = mu_w/2 ||w||^2 + w^T A a_i + lam * log((1/m) sum_j h_ij(a_i)),
    h_ij(a_i)     = exp(-||a_i - c_ij||^2 / nu),

i.e. ``f_i`` is the bilinear-plus-quadratic part and ``g(u) = -lam log u``,
which gives the same log-of-a-sum-of-exponentials structure as the GAK term
of robust training. Sampling noise comes only from picking blocks and
components.

The primal oracle maximizes each block over a dense grid and then polishes
the best grid point with a derivative-free local search; it never calls the
solver's gradient code.
"""

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from rots.scagda import CompositionalProblem, attach_diagnostics, scagda_run


class BoundaryWarning(RuntimeWarning):
    """The grid maximizer sits on the search box boundary."""


@dataclass
class PlProblemSpec:
    d: int = 2
    n: int = 4
    m: int = 4
    A: np.ndarray = None  # (dw, d)
    centers: np.ndarray = None  # (n, m, d)
    nu_syn: float = 1.0
    lambda_syn: float = 1.0
    mu_w: float = 1.0
    block_spread: float = 0.6
    center_spread: float = 0.25

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2 for grid maximization")
        if not (self.mu_w > 0 and self.nu_syn > 0 and self.lambda_syn > 0):
            raise ValueError("mu_w, nu_syn and lambda_syn must be positive")
        if self.n < 1 or self.m < 1:
            raise ValueError("n and m must be >= 1")
        if self.A is not None:
            self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
            if self.A.shape[1] != self.d:
                raise ValueError(f"A must have {self.d} columns")
        if self.centers is not None:
            self.centers = np.asarray(self.centers, dtype=float)
            if self.centers.shape != (self.n, self.m, self.d):
                raise ValueError(f"centers must have shape {(self.n, self.m, self.d)}")
            if not np.all(np.isfinite(self.centers)):
                raise ValueError("centers must be finite")


def default_coupling(d):
    return np.array([[0.6, 0.2], [-0.2, 0.5]]) if d == 2 else np.array([[0.6], [0.3]])


@dataclass
class PlProblem(CompositionalProblem):
    A: np.ndarray
    centers: np.ndarray
    nu: float
    lam: float
    mu: float
    n: int = field(init=False)
    m: int = field(init=False)

    def __post_init__(self):
        self.n, self.m = self.centers.shape[:2]
        self._At = self.A.T.copy()

    # sampled interface
    def sample_primal_grad(self, w, a_i, i):
        return self.mu * w + self.A @ a_i

    def sample_dual_f_grad(self, w, a_i, i):
        return self._At @ w

    def sample_h_value(self, a_i, i, j):
        r = a_i - self.centers[i, j]
        return math.exp(-float(r @ r) / self.nu)

    def h_grad(self, a_i, i, j):
        r = a_i - self.centers[i, j]
        return (-2.0 / self.nu) * math.exp(-float(r @ r) / self.nu) * r

    def sample_h_jvp(self, a_i, i, j, v):
        return v * self.h_grad(a_i, i, j)

    def g_value(self, u):
        return -self.lam * math.log(u)

    def g_grad(self, u):
        return -self.lam / u

    def sample_objective(self, w, a_i, i, omega_i):
        return 0.5 * self.mu * float(w @ w) + float(w @ self.A @ a_i) - self.g_value(omega_i)

    # exact quantities
    def exact_h(self, a_i, i):
        r = np.asarray(a_i)[None, :] - self.centers[i]
        return float(np.mean(np.exp(-(r * r).sum(axis=1) / self.nu)))

    def exact_h_all(self, a):
        return np.array([self.exact_h(a[i], i) for i in range(self.n)])

    def phi(self, w, a):
        """``(1/n) sum_i phi_i(w, a_i)`` evaluated exactly."""
        vals = [float(w @ self.A @ a[i]) + self.lam * math.log(self.exact_h(a[i], i))
                for i in range(self.n)]
        return 0.5 * self.mu * float(w @ w) + float(np.mean(vals))


def build_pl_problem(spec, seed=0):
    """Instantiate the problem; missing ``A``/``centers`` are drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    A = spec.A if spec.A is not None else default_coupling(spec.d)
    if spec.centers is not None:
        centers = spec.centers
    else:
        blocks = spec.block_spread * rng.standard_normal((spec.n, 1, spec.d))
        centers = blocks + spec.center_spread * rng.standard_normal((spec.n, spec.m, spec.d))
    return PlProblem(np.asarray(A, dtype=float), centers, spec.nu_syn, spec.lambda_syn, spec.mu_w)


def _box(problem):
    pad = 5.0 * math.sqrt(problem.nu)
    flat = problem.centers.reshape(-1, problem.centers.shape[-1])
    return flat.min(axis=0) - pad, flat.max(axis=0) + pad


def _block_values(problem, lin, i, pts):
    """Inner objective ``lin . a + lam log h_i(a)`` at the rows of ``pts``."""
    r = pts[:, None, :] - problem.centers[i][None, :, :]
    logh = logsumexp(-(r * r).sum(axis=2) / problem.nu, axis=1) - math.log(problem.m)
    return pts @ lin + problem.lam * logh


def block_maximizers(problem, w, grid_resolution=201, refine=True):
    """Per-block ``(argmax, max)`` of the inner objective, by grid then polish."""
    w = np.asarray(w, dtype=float)
    lin = problem.A.T @ w
    lo, hi = _box(problem)
    axes = [np.linspace(lo[k], hi[k], grid_resolution) for k in range(len(lo))]
    pts = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    out = []
    for i in range(problem.n):
        vals = _block_values(problem, lin, i, pts)
        best = int(np.argmax(vals))
        a0 = pts[best]
        if np.any(np.isclose(a0, lo)) or np.any(np.isclose(a0, hi)):
            warnings.warn(f"block {i}: grid maximizer on the box boundary", BoundaryWarning,
                          stacklevel=2)
        a_best, v_best = a0, float(vals[best])
        if refine:
            res = minimize(lambda a: -_block_values(problem, lin, i, a[None, :])[0], a0,
                           method="Nelder-Mead",
                           options={"xatol": 1e-11, "fatol": 1e-15, "maxiter": 4000})
            if -res.fun >= v_best:
                a_best, v_best = res.x, float(-res.fun)
        out.append((a_best, v_best))
    return out


def primal_oracle(problem, w, grid_resolution=201, refine=True):
    """``P(w) = max_a (1/n) sum_i phi_i(w, a_i)``."""
    w = np.asarray(w, dtype=float)
    inner = [v for _, v in block_maximizers(problem, w, grid_resolution, refine)]
    return 0.5 * problem.mu * float(w @ w) + float(np.mean(inner))


def primal_minimum(problem, grid_resolution=101):
    """``(P*, w*)``: minimize the oracle's P over ``w``.

    Uses the envelope gradient ``mu w + A mean_i a_i*(w)`` built from the
    oracle's own maximizers.
    """
    def fun(w):
        sols = block_maximizers(problem, w, grid_resolution, refine=True)
        val = 0.5 * problem.mu * float(w @ w) + float(np.mean([v for _, v in sols]))
        grad = problem.mu * w + problem.A @ np.mean([a for a, _ in sols], axis=0)
        return val, grad

    w0 = np.zeros(problem.A.shape[0])
    res = minimize(fun, w0, jac=True, method="BFGS", options={"gtol": 1e-10})
    return primal_oracle(problem, res.x, grid_resolution), res.x


@dataclass
class BenchReport:
    trace: object
    P_star: float
    w_star: np.ndarray
    final_gap: float
    final_ma_error: float
    tail_correlation: float
    w: np.ndarray = None
    a: list = None

    def summary(self):
        return {"P_star": self.P_star, "final_gap": self.final_gap,
                "final_ma_error": self.final_ma_error,
                "tail_correlation": self.tail_correlation}


def _tail_corr(trace):
    gap, err = trace.column("primal_gap"), trace.column("ma_error")
    ok = np.isfinite(gap) & np.isfinite(err)
    gap, err = gap[ok], err[ok]
    gap, err = gap[len(gap) // 2:], err[len(err) // 2:]
    if len(gap) < 3 or np.std(gap) == 0 or np.std(err) == 0:
        return math.nan
    return float(np.corrcoef(gap, err)[0, 1])


def run_bench(spec, params, seed=0, problem_seed=0, diag_every=None, grid_resolution=101,
              reference=None):
    """Run SCAGDA on the synthetic problem and score it against the oracle.

    ``seed`` drives the solver; ``problem_seed`` the problem's centers.
    ``reference=(P_star, w_star)`` skips recomputing the primal minimum.
    """
    problem = build_pl_problem(spec, problem_seed)
    if reference is None:
        P_star, w_star = primal_minimum(problem, grid_resolution)
    else:
        P_star, w_star = reference
    every = diag_every or max(params.K // 100, 1)
    inst = attach_diagnostics(
        problem,
        exact_P=lambda w: primal_oracle(problem, w, grid_resolution),
        exact_h=problem.exact_h_all,
        P_star=P_star, every=every)
    run_params = params if params.seed == seed else replace(params, seed=seed)
    w0 = np.ones(problem.A.shape[0])
    a0 = [np.zeros(spec.d) for _ in range(problem.n)]
    w, a, trace = scagda_run(inst, run_params, w0, a0)
    return BenchReport(trace, P_star, w_star, float(trace.column("primal_gap")[-1]),
                       float(trace.column("ma_error")[-1]), _tail_corr(trace), w, a)
