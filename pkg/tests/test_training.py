import math

import numpy as np
import pytest

from oracles import all_paths, central_diff, cost, gak_enum
from rots import gak
from rots.alignment import enumerate_alignments, sample_alignments
from rots.data import Dataset, synth_two_class, znormalize
from rots.errors import DivergenceError, SizeError, StateError
from rots.net import ArchSpec, cross_entropy, forward, init_model, loss_and_grads
from rots.training import (
    TRACE_COLUMNS,
    PerturbationState,
    RotsHyper,
    dual_grad,
    regularizer_grad,
    rots_objective,
    rots_train,
    sgd_train,
    warm_start_omega,
)

ARCH = "C:3,K:2;R:4"


def _small(n=4, T=5, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.standard_normal((n, 1, T)), np.arange(n) % 2, 2)


def _model(ds, seed=0):
    return init_model(ArchSpec.parse(ARCH, ds.X.shape[1:], ds.num_classes), seed)


def test_hyper_validation():
    with pytest.raises(ValueError):
        RotsHyper(lam=-1.0)
    with pytest.raises(ValueError):
        RotsHyper(nu=0.0)
    with pytest.raises(ValueError):
        RotsHyper(beta=0.0)
    with pytest.raises(ValueError):
        RotsHyper(align_mode="all")
    with pytest.raises(ValueError):
        RotsHyper(p=np.inf)
    assert RotsHyper().band(32) == 16


def test_objective_zero_lambda_is_empirical_risk():
    ds = _small()
    model = _model(ds)
    pert = PerturbationState.zeros(ds)
    hyper = RotsHyper(lam=0.0, nu=1.0)
    risk = float(cross_entropy(forward(model, ds.X), ds.y).mean())
    assert rots_objective(model, ds, pert, hyper) == risk


def test_objective_regularizer_nonnegative_at_zero_perturbation():
    ds = _small()
    model = _model(ds)
    pert = PerturbationState.zeros(ds)
    hyper = RotsHyper(lam=0.5, nu=1.0, band_width=None)
    risk = float(cross_entropy(forward(model, ds.X), ds.y).mean())
    assert rots_objective(model, ds, pert, hyper) >= risk


@pytest.mark.parametrize("band", [None, 3])
def test_objective_exact_matches_enumeration(band):
    ds = _small(4, 5)
    model = _model(ds, 1)
    rng = np.random.default_rng(3)
    pert = PerturbationState(0.2 * rng.standard_normal(ds.X.shape), np.ones(4))
    hyper = RotsHyper(lam=0.3, nu=0.8, band_width=band)
    ce = cross_entropy(forward(model, ds.X + pert.a), ds.y)
    ref = math.fsum(ce[i] + 0.3 * math.log(gak_enum(ds.X[i], ds.X[i] + pert.a[i], 0.8, 2, band))
                    for i in range(4)) / 4
    assert abs(rots_objective(model, ds, pert, hyper) - ref) < 1e-9


def test_sampled_objective_is_deterministic_per_rng():
    ds = _small(4, 8)
    model = _model(ds)
    pert = PerturbationState.zeros(ds)
    hyper = RotsHyper(lam=0.1, nu=1.0)
    a = rots_objective(model, ds, pert, hyper, exact=False, rng=np.random.default_rng(1))
    b = rots_objective(model, ds, pert, hyper, exact=False, rng=np.random.default_rng(1))
    assert a == b and math.isfinite(a)


def test_dual_grad_zero_lambda_is_input_gradient():
    ds = _small()
    model = _model(ds)
    x, a = ds.X[0], 0.1 * np.ones_like(ds.X[0])
    aset = sample_alignments(5, 5, 8, None, np.random.default_rng(0))
    g = dual_grad(model, x, int(ds.y[0]), a, 1.0, aset, RotsHyper(lam=0.0, nu=1.0), 1.0)
    _, gp = loss_and_grads(model, (x + a)[None], [int(ds.y[0])])
    np.testing.assert_array_equal(g, gp.input_grad[0])


def test_dual_grad_exhaustive_exact_omega_is_exact_gradient():
    ds = _small(2, 5, seed=4)
    model = _model(ds, 2)
    rng = np.random.default_rng(5)
    x, y = ds.X[1], int(ds.y[1])
    a = 0.3 * rng.standard_normal(x.shape)
    lam, nu = 0.7, 0.9
    hyper = RotsHyper(lam=lam, nu=nu, band_width=None)
    aset = enumerate_alignments(5, 5)
    omega = gak_enum(x, x + a, nu, 2)
    g = dual_grad(model, x, y, a, omega, aset, hyper, nu)

    def phi(z):
        ce = float(cross_entropy(forward(model, (x + z)[None]), [y])[0])
        return ce + lam * math.log(gak_enum(x, x + z, nu, 2))

    np.testing.assert_allclose(g, central_diff(phi, a), rtol=0, atol=1e-8)
    # and against the package's exact chain-rule gradient
    _, gp = loss_and_grads(model, (x + a)[None], [y])
    exact = gp.input_grad[0] + lam * gak.grad_log_gak_exact(x, a, gak.GakParams(nu, 2))
    np.testing.assert_allclose(g, exact, rtol=0, atol=1e-9)


def test_regularizer_grad_matches_path_sum_oracle():
    rng = np.random.default_rng(8)
    x, a = rng.standard_normal((1, 4)), 0.2 * rng.standard_normal((1, 4))
    paths = sorted(all_paths(4, 4))[:7]
    aset = enumerate_alignments(4, 4).subset(range(7))
    nu, lam, omega = 1.3, 0.4, 2.5
    w = np.array([math.exp(-cost(x, x + a, pth, 2) / nu) for pth in paths])

    def reg(z):
        return -lam / (omega * nu) * math.fsum(
            wk * cost(x, x + z, pth, 2) for wk, pth in zip(w, paths))

    ref = central_diff(reg, a)
    np.testing.assert_allclose(regularizer_grad(x, a, aset, w, omega, nu, lam), ref,
                               rtol=0, atol=1e-8)


def test_dual_direction_scale_invariant():
    rng = np.random.default_rng(1)
    x, a = rng.standard_normal((2, 6)), 0.1 * rng.standard_normal((2, 6))
    aset = sample_alignments(6, 6, 10, None, rng)
    w = gak.path_weights(x, x + a, aset, gak.GakParams(1.0))
    base = regularizer_grad(x, a, aset, w, w.sum(), 1.0, 0.3)
    for c in (1e-3, 7.0, 1e5):
        np.testing.assert_allclose(regularizer_grad(x, a, aset, c * w, c * w.sum(), 1.0, 0.3),
                                   base, rtol=1e-12, atol=1e-15)


def test_nonpositive_omega_is_state_error():
    x = np.zeros((1, 3))
    aset = enumerate_alignments(3, 3)
    for omega in (0.0, -1.0):
        with pytest.raises(StateError, match="warm"):
            regularizer_grad(x, x, aset, np.ones(len(aset)), omega, 1.0, 0.1)


def test_cold_start_folds_first_sample_before_dividing():
    # the moving average is refreshed before the ascent step, so a cold start
    # divides by beta times the first subset sum rather than by zero
    ds = _small(4, 6)
    hyper = RotsHyper(nu=1.0, K=1, s=4, warm_start=False, beta=0.25, align_mode="exhaustive",
                      band_width=None)
    _, pert, trace = rots_train(ds, _model(ds), hyper)
    assert trace.flags["warm_start"] is False
    for i, x in enumerate(ds.X):
        assert pert.omega[i] == pytest.approx(0.25 * gak_enum(x, x, 1.0, 2), rel=1e-12)
    assert np.all(np.isfinite(pert.a))


def test_warm_start_positive_and_below_exact_kernel():
    ds = znormalize(synth_two_class(6, 16, 0.1, seed=0))
    hyper = RotsHyper(nu=2.0, align_samples=32, band_width=None)
    pert = warm_start_omega(ds, PerturbationState.zeros(ds), hyper, np.random.default_rng(0))
    assert np.all(pert.omega > 0)
    for i, x in enumerate(ds.X):
        assert pert.omega[i] <= gak.gak_exact(x, x, gak.GakParams(2.0))
    again = warm_start_omega(ds, PerturbationState.zeros(ds), hyper, np.random.default_rng(0))
    np.testing.assert_array_equal(again.omega, pert.omega)


def test_warm_start_exhaustive_equals_exact_kernel():
    ds = _small(3, 5)
    hyper = RotsHyper(nu=1.5, align_mode="exhaustive", band_width=None)
    pert = warm_start_omega(ds, PerturbationState.zeros(ds), hyper, np.random.default_rng(0))
    for i, x in enumerate(ds.X):
        assert pert.omega[i] == pytest.approx(gak_enum(x, x, 1.5, 2), rel=1e-12)
    assert np.all(pert.a == 0)


def test_subset_consistency():
    ds = _small(6, 8)
    events = {}

    def listener(event, k, i, aset):
        events.setdefault((k, i), []).append((event, aset))

    rots_train(ds, _model(ds), RotsHyper(nu=1.0, K=5, s=3), listener=listener)
    assert len(events) == 15
    for recs in events.values():
        assert [e for e, _ in recs] == ["ma", "grad"]
        assert recs[0][1] is recs[1][1]


def test_fresh_subsets_each_iteration():
    ds = _small(2, 8)
    seen = []
    rots_train(ds, _model(ds), RotsHyper(nu=1.0, K=3, s=2),
               listener=lambda e, k, i, aset: seen.append(aset) if e == "ma" else None)
    keys = {(tuple(s.pi1.tolist()), tuple(s.pi2.tolist())) for s in seen}
    assert len(keys) == len(seen)


def test_zero_lambda_zero_gamma_matches_sgd_bitwise():
    ds = znormalize(synth_two_class(12, 16, 0.1, seed=0))
    model = init_model(ArchSpec.parse(ARCH, (1, 16), 2), 0)
    hyper = RotsHyper(lam=0.0, gamma=0.0, nu=1.0, K=30, s=5, eta=0.05, seed=3)
    m1, pert, t1 = rots_train(ds, model, hyper)
    m2, t2 = sgd_train(ds, model, 0.05, 5, 30, 3)
    assert m1.weights.tobytes() == m2.weights.tobytes()
    assert t1.columns == t2.columns == TRACE_COLUMNS
    assert np.array_equal(np.array(t1.rows, dtype=float), np.array(t2.rows, dtype=float),
                          equal_nan=True)
    assert np.all(pert.a == 0)


def test_one_iteration_equals_exact_gda_step():
    ds = _small(3, 5, seed=2)
    model = _model(ds, 1)
    lam, nu, eta, gamma = 0.4, 1.2, 0.1, 0.2
    hyper = RotsHyper(lam=lam, nu=nu, eta=eta, gamma=gamma, beta=1.0, s=3, K=1,
                      align_mode="exhaustive", band_width=None)
    m1, pert, _ = rots_train(ds, model, hyper)

    # reference: one deterministic GDA step on the saddle objective at a = 0
    _, gp = loss_and_grads(model, ds.X, ds.y)
    w_new = model.weights - eta * gp.weight_grad
    np.testing.assert_allclose(m1.weights, w_new, rtol=0, atol=1e-15)
    new_model = model.copy(w_new)
    for i in range(3):
        x, y = ds.X[i], int(ds.y[i])

        def phi(z):
            ce = float(cross_entropy(forward(new_model, (x + z)[None]), [y])[0])
            return ce + lam * math.log(gak_enum(x, x + z, nu, 2))

        # the kink of the diagonal path at a = 0 uses the zero subgradient;
        # a one-sided difference would see it, so compare to the analytic form
        _, gpi = loss_and_grads(new_model, x[None], [y])
        aset = enumerate_alignments(5, 5)
        w = np.array([math.exp(-cost(x, x, pth, 2) / nu) for pth in sorted(all_paths(5, 5))])
        reg = -lam / (w.sum() * nu) * gak.weighted_path_grad(x, np.zeros_like(x), aset, w)
        expected = gamma * (gpi.input_grad[0] + reg)
        np.testing.assert_allclose(pert.a[i], expected, rtol=0, atol=1e-9)
        assert pert.omega[i] == pytest.approx(gak_enum(x, x, nu, 2), rel=1e-12)
        assert math.isfinite(phi(pert.a[i]))


def test_only_minibatch_samples_move():
    ds = _small(8, 6)
    seen = set()
    _, pert, _ = rots_train(ds, _model(ds), RotsHyper(nu=1.0, K=1, s=3),
                            listener=lambda e, k, i, aset: seen.add(i))
    assert len(seen) == 3
    for i in range(8):
        if i not in seen:
            assert np.all(pert.a[i] == 0)


def test_training_deterministic():
    ds = _small(6, 8)
    hyper = RotsHyper(nu=1.0, K=10, s=3, seed=7)
    a = rots_train(ds, _model(ds), hyper)
    b = rots_train(ds, _model(ds), hyper)
    assert a[0].weights.tobytes() == b[0].weights.tobytes()
    assert a[1].a.tobytes() == b[1].a.tobytes()
    c = rots_train(ds, _model(ds), RotsHyper(nu=1.0, K=10, s=3, seed=8))
    assert c[0].weights.tobytes() != a[0].weights.tobytes()


def test_trace_columns_and_flags():
    ds = _small(6, 8)
    _, _, trace = rots_train(ds, _model(ds), RotsHyper(K=4, s=3))
    assert trace.columns == TRACE_COLUMNS
    assert len(trace) == 4
    np.testing.assert_allclose(trace.column("obj"),
                               trace.column("obj_loss_term") + trace.column("obj_reg_term"))
    assert trace.flags["warm_start"] is True and trace.flags["nu"] > 0


def test_divergence_raises_with_trace():
    ds = _small(6, 8)
    with pytest.raises(DivergenceError) as exc:
        rots_train(ds, _model(ds), RotsHyper(nu=1.0, K=50, s=3, eta=1e300))
    assert "iteration 1" in str(exc.value) or "iteration 0" in str(exc.value)
    assert exc.value.trace is not None


def test_large_lambda_keeps_perturbations_smaller():
    # long horizon on a tiny set: loss-driven perturbations keep growing while the
    # kernel term holds them near the original series
    n, T = 4, 16
    ds = znormalize(synth_two_class(n, T, 0.05, seed=0))
    arch = ArchSpec.parse("C:4,K:3;P:2;R:8", (1, T), 2)
    small, large = [], []
    for seed in range(5):
        for lam, out in ((1e-3, small), (10.0, large)):
            hyper = RotsHyper(lam=lam, K=300, s=n, eta=0.05, gamma=0.2, seed=seed)
            _, pert, _ = rots_train(ds, init_model(arch, seed), hyper)
            out.append(np.mean(np.linalg.norm(pert.a.reshape(n, -1), axis=1)))
    assert np.mean(large) < np.mean(small)


def test_percent_mode_subset_size_and_guard():
    ds = _small(4, 6)
    sizes = []
    hyper = RotsHyper(lam=0.1, nu=1.0, K=2, s=2, align_mode="percent", align_percent=0.15)
    rots_train(ds, _model(ds), hyper, listener=lambda ev, k, i, aset: sizes.append(len(aset)))
    assert set(sizes) == {math.ceil(0.15 * len(all_paths(6, 6, 3)))}
    long = _small(4, 16)
    with pytest.raises(SizeError):
        rots_train(long, _model(long), RotsHyper(nu=1.0, K=1, align_mode="percent"))
