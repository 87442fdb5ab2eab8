"""Perturbation attacks, baseline trainers and robust-accuracy evaluation.

Attacks act on raw input space with no clipping to a data range. ``sign(0)``
is 0, so a zero gradient coordinate is left untouched.
"""

import math
from dataclasses import dataclass

import numpy as np

from rots.errors import DivergenceError, NumericError
from rots.net import (
    AdamState,
    adam_step,
    backward,
    forward_with_cache,
    loss_and_grads,
    predict,
    sgd_step,
    log_softmax,
)
from rots.scagda import SolveTrace
from rots.seeding import Streams, stream
from rots.training import TRACE_COLUMNS, draw_minibatch

STN_WEIGHT = 0.01
STN_SIGMA = 0.04


@dataclass
class AttackSpec:
    kind: str  # fgs | pgd | gaussian
    epsilon: float = 0.1
    sigma: float = 0.0
    steps: int = 20
    alpha: float = None  # default 2.5 * epsilon / steps
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fgs", "pgd", "gaussian"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0 or self.sigma < 0:
            raise ValueError("epsilon and sigma must be non-negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    def step_size(self, epsilon=None):
        eps = self.epsilon if epsilon is None else epsilon
        return self.alpha if self.alpha is not None else 2.5 * eps / self.steps


def _batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None], True) if x.ndim == 2 else (x, False)


def _labels(y, n):
    return np.broadcast_to(np.asarray(y, dtype=int), (n,)).copy()


def fgs_attack(model, x, y, epsilon):
    """``x + epsilon * sign(grad_x CE)`` for a single series or a batch."""
    X, single = _batch(x)
    _, gp = loss_and_grads(model, X, _labels(y, len(X)))
    out = X + epsilon * np.sign(gp.input_grad)
    return out[0] if single else out


def pgd_attack(model, x, y, epsilon, steps, alpha, seed=0, random_start=True):
    """Iterated sign steps, each projected back onto the L-inf ball around ``x``."""
    X, single = _batch(x)
    labels = _labels(y, len(X))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = X - epsilon, X + epsilon
    if random_start:
        Xa = X + rng.uniform(-epsilon, epsilon, size=X.shape)
    else:
        Xa = X.copy()
    for _ in range(steps):
        _, gp = loss_and_grads(model, Xa, labels)
        Xa = np.clip(Xa + alpha * np.sign(gp.input_grad), lo, hi)
    return Xa[0] if single else Xa


def gaussian_perturb(x, sigma, rng):
    x = np.asarray(x, dtype=float)
    if sigma == 0:
        return x.copy()
    return x + sigma * rng.standard_normal(x.shape)


def kl_stability(logits, logits_pert):
    """Per-sample ``KL(softmax(logits) || softmax(logits_pert))``."""
    lp, lq = log_softmax(logits), log_softmax(logits_pert)
    return (np.exp(lp) * (lp - lq)).sum(axis=1)


def stn_loss_and_grads(model, x, y, x_pert, weight=STN_WEIGHT):
    """Mean of ``CE(x) + weight * KL(p(x) || p(x_pert))`` and its weight gradient."""
    X, _ = _batch(x)
    Xp, _ = _batch(x_pert)
    y = _labels(y, len(X))
    B = len(X)
    z, cz = forward_with_cache(model, X)
    zp, czp = forward_with_cache(model, Xp)
    lp, lq = log_softmax(z), log_softmax(zp)
    p, q = np.exp(lp), np.exp(lq)
    ce = -lp[np.arange(B), y]
    kl = (p * (lp - lq)).sum(axis=1)
    dz = p.copy()
    dz[np.arange(B), y] -= 1.0
    u = lp - lq
    dz += weight * p * (u - kl[:, None])
    dzp = weight * (q - p)
    g1, _ = backward(model, cz, dz / B)
    g2, _ = backward(model, czp, dzp / B)
    return float(np.mean(ce + weight * kl)), g1 + g2


def _make_optimizer(name, model, eta):
    if name == "adam":
        state = AdamState.zeros(model)

        def step(model, grad):
            nonlocal state
            state, model = adam_step(state, model, grad, eta)
            return model
    elif name == "sgd":
        def step(model, grad):
            return sgd_step(model, grad, eta)
    else:
        raise ValueError(f"unknown optimizer {name!r}")
    return step


def epochs_to_iterations(epochs, n, s):
    return int(epochs) * math.ceil(n / min(s, n))


def minibatch_train(dataset, model, K, s, eta, optimizer, seed, batch_grad=None):
    """Shared loop: draw a minibatch, get ``(loss, weight_grad)``, take a step.

    ``batch_grad(model, X, y, k)`` defaults to the clean cross-entropy.
    The minibatch stream matches the robust trainer's.
    """
    rng_mb = Streams(seed)("minibatch")
    step = _make_optimizer(optimizer, model, eta)
    trace = SolveTrace(columns=TRACE_COLUMNS)
    for k in range(K):
        idx = draw_minibatch(rng_mb, len(dataset), s)
        Xb, yb = dataset.X[idx], dataset.y[idx]
        try:
            if batch_grad is None:
                loss, gp = loss_and_grads(model, Xb, yb)
                grad = gp.weight_grad
            else:
                loss, grad = batch_grad(model, Xb, yb, k)
        except NumericError as exc:
            raise DivergenceError(f"iteration {k}: {exc}", trace) from exc
        model = step(model, grad)
        if not np.all(np.isfinite(model.weights)):
            raise DivergenceError(f"non-finite weights at iteration {k}", trace)
        trace.append(k=k, obj=loss + 0.0, primal_grad_norm=float(np.linalg.norm(grad)),
                     obj_loss_term=loss, obj_reg_term=0.0)
    return model, trace


def clean_train(dataset, model, K, s=16, eta=1e-3, optimizer="adam", seed=0):
    return minibatch_train(dataset, model, K, s, eta, optimizer, seed)


def adv_train(dataset, model, attack, epochs, optimizer="adam", eta=1e-3, s=16, seed=0,
              K=None):
    """Train on attacked minibatches, regenerating the attack against current weights."""
    if attack.kind not in ("fgs", "pgd"):
        raise ValueError("adversarial training needs an fgs or pgd attack")
    K = epochs_to_iterations(epochs, len(dataset), s) if K is None else K
    rng_atk = Streams(seed)("attack")

    def batch_grad(model, X, y, k):
        if attack.kind == "fgs":
            Xa = fgs_attack(model, X, y, attack.epsilon)
        else:
            Xa = pgd_attack(model, X, y, attack.epsilon, attack.steps, attack.step_size(),
                            seed=rng_atk)
        loss, gp = loss_and_grads(model, Xa, y)
        return loss, gp.weight_grad

    return minibatch_train(dataset, model, K, s, eta, optimizer, seed, batch_grad)


def stn_train(dataset, model, sigma_stn=STN_SIGMA, epochs=1, weight=STN_WEIGHT, eta=1e-3,
              s=16, seed=0, K=None, optimizer="adam"):
    """Stability training: clean CE plus weighted KL to a Gaussian-perturbed copy."""
    K = epochs_to_iterations(epochs, len(dataset), s) if K is None else K
    rng_noise = Streams(seed)("stn_noise")

    def batch_grad(model, X, y, k):
        Xp = gaussian_perturb(X, sigma_stn, rng_noise)
        return stn_loss_and_grads(model, X, y, Xp, weight)

    return minibatch_train(dataset, model, K, s, eta, optimizer, seed, batch_grad)


def accuracy(model, X, y):
    return float(np.mean(predict(model, X) == y))


def eval_robust_accuracy(model, dataset, attack, levels, repeats=1, seed=0):
    """Accuracy under the attack at each level (epsilon, or sigma for gaussian).

    Returns one dict per level with ``level, mean_acc, min_acc, max_acc`` and the
    raw per-repeat ``values``. Level 0 is the clean accuracy, computed once.
    """
    rows = []
    for level in levels:
        level = float(level)
        if level == 0:
            values = [accuracy(model, dataset.X, dataset.y)]
        else:
            values = []
            for r in range(repeats):
                rng = stream(seed, f"eval/{attack.kind}/{level!r}/{r}")
                if attack.kind == "gaussian":
                    Xa = gaussian_perturb(dataset.X, level, rng)
                elif attack.kind == "fgs":
                    Xa = fgs_attack(model, dataset.X, dataset.y, level)
                else:
                    Xa = pgd_attack(model, dataset.X, dataset.y, level, attack.steps,
                                    attack.step_size(level), seed=rng)
                values.append(accuracy(model, Xa, dataset.y))
        rows.append({"level": level, "mean_acc": float(np.mean(values)),
                     "min_acc": float(np.min(values)), "max_acc": float(np.max(values)),
                     "values": values})
    return rows
