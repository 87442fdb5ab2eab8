"""Central finite-difference checks of the analytic gradients, grouped by scope."""

import numpy as np

from rots import gak
from rots.alignment import AlignmentSet, enumerate_alignments, sample_alignments
from rots.baselines import stn_loss_and_grads
from rots.net import ArchSpec, cross_entropy, forward, init_model, loss_and_grads
from rots.training import RotsHyper, dual_grad

SCOPES = ("dpi", "gak", "net", "rots")
STEP = 1e-5
TOLERANCE = 1e-4


def central_diff(f, x, h=STEP):
    """Gradient of scalar ``f`` at array ``x`` by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f(x)
        flat[k] = old - h
        fm = f(x)
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * h)
    return g


def rel_error(g, ref):
    """``||g - ref|| / max(||g||, ||ref||)``, 0 when both vanish."""
    g, ref = np.ravel(g), np.ravel(ref)
    den = max(np.linalg.norm(g), np.linalg.norm(ref))
    return 0.0 if den == 0 else float(np.linalg.norm(g - ref) / den)


def check_dpi(rng, instances=10):
    worst = 0.0
    for _ in range(instances):
        T, C, p = int(rng.integers(3, 9)), int(rng.integers(1, 3)), int(rng.choice([1, 2]))
        x, x2 = rng.standard_normal((C, T)), rng.standard_normal((C, T))
        pi = sample_alignments(T, T, 1, None, rng)[0]
        a0 = np.zeros_like(x2)
        g = gak.grad_path_cost(x, a0, pi, p, x_base=x2)
        fd = central_diff(lambda a: gak.path_costs(x, x2 + a, _single(pi, T), p)[0], a0)
        worst = max(worst, rel_error(g, fd))
    return worst


def _single(pi, T):
    return AlignmentSet.from_alignments([pi], (T, T))


def check_gak(rng, instances=10):
    worst = 0.0
    for _ in range(instances):
        T, C, p = 5, int(rng.integers(1, 3)), int(rng.choice([1, 2]))
        params = gak.GakParams(float(rng.choice([0.5, 1.0, 3.0])), p)
        x, x2 = rng.standard_normal((C, T)), rng.standard_normal((C, T))
        a0 = np.zeros_like(x2)
        g = gak.grad_log_gak_exact(x, a0, params, x_base=x2)
        fd = central_diff(lambda a: gak.log_gak_exact(x, x2 + a, params), a0)
        worst = max(worst, rel_error(g, fd))
    return worst


def random_arch(rng, num_classes=3):
    C, T = int(rng.integers(1, 3)), int(rng.integers(10, 17))
    text = f"C:{int(rng.integers(2, 4))},K:3;P:2;R:{int(rng.integers(3, 6))}"
    return ArchSpec.parse(text, (C, T), num_classes)


def check_net(rng, instances=5):
    worst = 0.0
    for _ in range(instances):
        arch = random_arch(rng)
        model = init_model(arch, int(rng.integers(1 << 30)))
        X = rng.standard_normal((3,) + arch.input_shape)
        y = rng.integers(arch.num_classes, size=3)
        _, gp = loss_and_grads(model, X, y)
        fd_w = central_diff(lambda w: cross_entropy(forward(model.copy(w), X), y).mean(),
                            model.weights)
        fd_x = central_diff(lambda Z: cross_entropy(forward(model, Z), y).sum(), X)
        Xp = X + 0.04 * rng.standard_normal(X.shape)
        _, g_stn = stn_loss_and_grads(model, X, y, Xp, 0.5)
        fd_stn = central_diff(lambda w: stn_loss_and_grads(model.copy(w), X, y, Xp, 0.5)[0],
                              model.weights)
        worst = max(worst, rel_error(gp.weight_grad, fd_w), rel_error(gp.input_grad, fd_x),
                    rel_error(g_stn, fd_stn))
    return worst


def check_rots(rng, instances=5):
    """Dual gradient with the full alignment set and exact omega is the exact gradient."""
    worst = 0.0
    for _ in range(instances):
        T = 6
        arch = ArchSpec.parse("C:2,K:3;R:4", (1, T), 2)
        model = init_model(arch, int(rng.integers(1 << 30)))
        x = rng.standard_normal((1, T))
        a = 0.3 * rng.standard_normal((1, T))
        yi = int(rng.integers(2))
        hyper = RotsHyper(lam=0.5, nu=2.0, band_width=None)
        params = gak.GakParams(hyper.nu, hyper.p)
        full = enumerate_alignments(T, T)
        omega = gak.gak_exact(x, x + a, params)
        g = dual_grad(model, x, yi, a, omega, full, hyper, hyper.nu)

        def obj(v):
            ce = cross_entropy(forward(model, (x + v)[None]), [yi])[0]
            return ce + hyper.lam * gak.log_gak_exact(x, x + v, params)

        worst = max(worst, rel_error(g, central_diff(obj, a)))
    return worst


_CHECKS = {"dpi": check_dpi, "gak": check_gak, "net": check_net, "rots": check_rots}


def run_scope(scope, seed=0):
    if scope not in _CHECKS:
        raise ValueError(f"unknown scope {scope!r}; expected one of {', '.join(SCOPES)}")
    return _CHECKS[scope](np.random.default_rng(seed))
