"""Robust training: alternating descent on classifier weights, ascent on per-sample
perturbations regularized by the log global alignment kernel.

The saddle objective is

    (1/n) sum_i  CE(f(x_i + a_i; w), y_i) + lam * log k_GAK(x_i, x_i + a_i).

Each iteration draws a minibatch, takes an SGD step on ``w``, then for every
minibatch sample draws a fresh alignment subset, folds its path-weight sum into
the moving average ``omega_i`` and ascends ``a_i`` along

    grad_a CE(f(x_i + a_i; w_new), y_i)
        - lam / (omega_i nu) * sum_{pi in subset} exp(-d_pi / nu) grad_a d_pi.

The same subset feeds both the moving average and the gradient, so the unknown
scale of the subset sum cancels in the ratio.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np

from rots import gak
from rots.alignment import (
    ENUMERATION_LIMIT,
    count_alignments,
    default_band,
    enumerate_alignments,
    sample_alignments,
)
from rots.errors import DivergenceError, NumericError, SizeError, StateError
from rots.net import loss_and_grads, sgd_step, cross_entropy, forward
from rots.scagda import SolveTrace, ma_update
from rots.seeding import Streams

TRACE_COLUMNS = ("k", "obj", "primal_grad_norm", "primal_gap", "ma_error",
                 "obj_loss_term", "obj_reg_term")


@dataclass
class RotsHyper:
    lam: float = 1e-2
    nu: float = None  # None: estimate from the training set
    beta: float = 0.1
    eta: float = 0.05
    gamma: float = 0.05
    s: int = 16
    K: int = 500
    align_samples: int = 32
    align_mode: str = "sampled"  # sampled | exhaustive | percent
    align_percent: float = 0.15
    band_width: object = "auto"  # "auto" (T/2), None, or a number
    p: int = 2
    seed: int = 0
    warm_start: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.nu is not None and not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0 < self.beta <= 1:
            raise ValueError("beta must lie in (0, 1]")
        if self.eta <= 0 or self.gamma < 0:
            raise ValueError("eta must be positive and gamma non-negative")
        if self.s < 1 or self.K < 0 or self.align_samples < 1:
            raise ValueError("s, align_samples must be >= 1 and K >= 0")
        if self.align_mode not in ("sampled", "exhaustive", "percent"):
            raise ValueError(f"unknown align_mode {self.align_mode!r}")
        if self.p not in (1, 2):
            raise ValueError("training gradients need p in {1, 2}")

    def band(self, T):
        if self.band_width == "auto":
            return default_band(T)
        return self.band_width

    def record(self):
        return asdict(self)


@dataclass
class PerturbationState:
    a: np.ndarray  # (n, C, T)
    omega: np.ndarray  # (n,)

    @classmethod
    def zeros(cls, dataset):
        return cls(np.zeros_like(dataset.X), np.zeros(len(dataset)))

    def copy(self):
        return PerturbationState(self.a.copy(), self.omega.copy())


def resolve_nu(dataset, hyper):
    if hyper.nu is not None:
        return float(hyper.nu)
    return gak.estimate_nu(dataset, p=hyper.p, seed=hyper.seed)


def gak_params(dataset, hyper, nu):
    return gak.GakParams(nu, hyper.p, hyper.band(dataset.length))


class _AlignmentSource:
    """Produces the per-sample alignment subset for one training iteration."""

    def __init__(self, T, hyper, rng):
        self.T, self.hyper, self.rng = T, hyper, rng
        self.band = hyper.band(T)
        self._full = None
        if hyper.align_mode == "exhaustive":
            self._full = enumerate_alignments(T, T, self.band)
        self.count = hyper.align_samples
        if hyper.align_mode == "percent":
            # a fraction of an exponential count is only a usable sample size for short series
            if T > ENUMERATION_LIMIT:
                raise SizeError(f"percent alignment mode needs T <= {ENUMERATION_LIMIT}, got {T}")
            total = count_alignments(T, T, self.band)
            self.count = max(1, math.ceil(hyper.align_percent * total))

    def draw(self):
        if self._full is not None:
            return self._full
        return sample_alignments(self.T, self.T, self.count, self.band, self.rng)


def regularizer_grad(x, a, aset, weights, omega, nu, lam, p=2):
    """``-lam / (omega nu) * sum_pi weights_pi grad_a d_pi(x, x + a)``."""
    if not omega > 0:
        raise StateError(
            f"moving average omega={omega} is not positive; warm-start omega or use beta > 0"
        )
    if lam == 0:
        return np.zeros_like(a)
    return -(lam / (omega * nu)) * gak.weighted_path_grad(x, a, aset, weights, p)


def dual_grad(model, x_i, y_i, a_i, omega_i, A_hat, hyper, nu):
    """Ascent direction for one perturbation, evaluated at the current weights."""
    _, gp = loss_and_grads(model, (x_i + a_i)[None], [y_i])
    params = gak.GakParams(nu, hyper.p)
    weights = gak.path_weights(x_i, x_i + a_i, A_hat, params)
    return gp.input_grad[0] + regularizer_grad(x_i, a_i, A_hat, weights, omega_i, nu,
                                               hyper.lam, hyper.p)


def warm_start_omega(dataset, pert, hyper, rng, nu=None):
    """Set every ``omega_i`` to one sampled path-weight sum at ``a_i = 0``."""
    nu = resolve_nu(dataset, hyper) if nu is None else nu
    params = gak.GakParams(nu, hyper.p)
    source = _AlignmentSource(dataset.length, hyper, rng)
    out = pert.copy()
    for i, x in enumerate(dataset.X):
        out.omega[i] = gak.gak_sampled(x, x, source.draw(), params)
    return out


def rots_objective(model, dataset, pert, hyper, exact=True, rng=None, nu=None):
    """Mean loss on perturbed inputs plus ``lam * log k_GAK(x_i, x_i + a_i)``.

    With ``exact=False`` the kernel is replaced by an unscaled sum over freshly
    sampled alignments, so the regularizer is only defined up to an additive
    constant.
    """
    nu = resolve_nu(dataset, hyper) if nu is None else nu
    params = gak_params(dataset, hyper, nu)
    Xp = dataset.X + pert.a
    loss = cross_entropy(forward(model, Xp), dataset.y)
    if hyper.lam == 0:
        return float(loss.mean())
    if exact:
        reg = [gak.log_gak_exact(x, xp, params) for x, xp in zip(dataset.X, Xp)]
    else:
        rng = rng if rng is not None else np.random.default_rng(hyper.seed)
        source = _AlignmentSource(dataset.length, hyper, rng)
        reg = [math.log(gak.gak_sampled(x, xp, source.draw(), params))
               for x, xp in zip(dataset.X, Xp)]
    return float(np.mean(loss + hyper.lam * np.asarray(reg)))


def draw_minibatch(rng, n, s):
    """Sorted indices of a uniform minibatch drawn without replacement."""
    return np.sort(rng.choice(n, size=min(s, n), replace=False))


def _finite(x):
    return bool(np.all(np.isfinite(x)))


def _checked_grads(model, X, y, k, trace):
    try:
        return loss_and_grads(model, X, y)
    except NumericError as exc:
        raise DivergenceError(f"iteration {k}: {exc}", trace) from exc


def rots_train(dataset, model, hyper, listener=None):
    """Run ``hyper.K`` iterations; returns ``(model, perturbations, trace)``.

    ``listener(event, k, i, aset)`` is called with ``event`` in
    ``{"ma", "grad"}`` for every sample's moving-average update and ascent
    step, which lets callers observe which alignment subset was used where.
    """
    streams = Streams(hyper.seed)
    rng_mb = streams("minibatch")
    rng_al = streams("alignments")
    nu = resolve_nu(dataset, hyper)
    params = gak.GakParams(nu, hyper.p)
    n = len(dataset)
    X, y = dataset.X, dataset.y

    pert = PerturbationState.zeros(dataset)
    if hyper.warm_start:
        pert = warm_start_omega(dataset, pert, hyper, streams("warm_start"), nu)
    source = _AlignmentSource(dataset.length, hyper, rng_al)

    trace = SolveTrace(columns=TRACE_COLUMNS)
    trace.flags.update({"warm_start": hyper.warm_start, "nu": nu})

    for k in range(hyper.K):
        idx = draw_minibatch(rng_mb, n, hyper.s)
        Xb = X[idx] + pert.a[idx]
        loss, gp = _checked_grads(model, Xb, y[idx], k, trace)
        model = sgd_step(model, gp.weight_grad, hyper.eta)
        if not _finite(model.weights):
            raise DivergenceError(f"non-finite weights at iteration {k}", trace)
        _, gp_new = _checked_grads(model, Xb, y[idx], k, trace)

        log_omegas = []
        for b, i in enumerate(idx):
            x, a_i = X[i], pert.a[i]
            aset = source.draw()
            weights = gak.path_weights(x, x + a_i, aset, params)
            pert.omega[i] = ma_update(pert.omega[i], float(weights.sum()), hyper.beta)
            if listener:
                listener("ma", k, int(i), aset)
            G = gp_new.input_grad[b] + regularizer_grad(x, a_i, aset, weights, pert.omega[i],
                                                         nu, hyper.lam, hyper.p)
            if listener:
                listener("grad", k, int(i), aset)
            pert.a[i] = a_i + hyper.gamma * G
            if not _finite(pert.a[i]):
                raise DivergenceError(f"non-finite perturbation at iteration {k}", trace)
            log_omegas.append(math.log(pert.omega[i]) if pert.omega[i] > 0 else -math.inf)

        # + 0.0 turns a -0.0 product into 0.0 so lam = 0 traces match clean runs
        reg = hyper.lam * float(np.mean(log_omegas)) + 0.0 if hyper.lam else 0.0
        trace.append(k=k, obj=loss + reg, primal_grad_norm=float(np.linalg.norm(gp.weight_grad)),
                     obj_loss_term=loss, obj_reg_term=reg)
    return model, pert, trace


def sgd_train(dataset, model, eta, s, K, seed):
    """Plain minibatch SGD sharing the minibatch stream of ``rots_train``."""
    rng_mb = Streams(seed)("minibatch")
    trace = SolveTrace(columns=TRACE_COLUMNS)
    for k in range(K):
        idx = draw_minibatch(rng_mb, len(dataset), s)
        loss, gp = _checked_grads(model, dataset.X[idx], dataset.y[idx], k, trace)
        model = sgd_step(model, gp.weight_grad, eta)
        if not _finite(model.weights):
            raise DivergenceError(f"non-finite weights at iteration {k}", trace)
        trace.append(k=k, obj=loss + 0.0, primal_grad_norm=float(np.linalg.norm(gp.weight_grad)),
                     obj_loss_term=loss, obj_reg_term=0.0)
    return model, trace
