import math

import numpy as np
import pytest
from scipy.stats import chisquare

from rots.errors import DivergenceError
from rots.scagda import (
    INDEX_CHUNK,
    CompositionalProblem,
    ScagdaParams,
    SolveTrace,
    attach_diagnostics,
    draw_indices,
    ma_update,
    scagda_run,
)


class Quadratic(CompositionalProblem):
    """phi_i(w, a) = mu/2 w^2 - b_i w + c w a - g(h_ij(a)) with h_ij(a) = s_ij a + t_ij
    and g(u) = u^2 / 2, all scalar."""

    def __init__(self, b, s, t, mu=1.0, c=1.0):
        self.b, self.s, self.t = np.asarray(b, float), np.asarray(s, float), np.asarray(t, float)
        self.n, self.m = self.s.shape
        self.mu, self.c = mu, c
        self.dual_calls = []

    def sample_primal_grad(self, w, a_i, i):
        return self.mu * w - self.b[i] + self.c * a_i

    def sample_dual_f_grad(self, w, a_i, i):
        self.dual_calls.append(np.copy(w))
        return self.c * w

    def sample_h_value(self, a_i, i, j):
        return self.s[i, j] * a_i + self.t[i, j]

    def sample_h_jvp(self, a_i, i, j, v):
        return self.s[i, j] * v

    def g_grad(self, u):
        return u


def _params(**kw):
    base = dict(eta=0.1, gamma=0.1, beta=1.0, K=50, seed=0)
    base.update(kw)
    return ScagdaParams(**base)


def test_ma_update_examples():
    assert ma_update(0.0, 1.0, 0.5) == 0.5
    assert ma_update(2.0, 4.0, 1.0) == 4.0
    assert ma_update(3.0, 3.0, 0.3) == pytest.approx(3.0, abs=1e-15)
    np.testing.assert_allclose(ma_update(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.25),
                               [0.75, 0.25])
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ValueError):
            ma_update(0.0, 1.0, bad)


def test_params_validation():
    with pytest.raises(ValueError):
        _params(eta=0.0)
    with pytest.raises(ValueError):
        _params(beta=0.0)
    with pytest.raises(ValueError):
        _params(K=0)


class Zero(CompositionalProblem):
    n, m = 3, 2

    def sample_primal_grad(self, w, a_i, i):
        return np.zeros_like(w)

    def sample_dual_f_grad(self, w, a_i, i):
        return np.zeros_like(a_i)

    def sample_h_value(self, a_i, i, j):
        return 1.0

    def sample_h_jvp(self, a_i, i, j, v):
        return np.zeros_like(a_i)

    def g_grad(self, u):
        return 1.0


def test_zero_gradients_leave_iterates_fixed():
    w0 = np.array([0.3, -1.0])
    a0 = [np.array([1.0]), np.array([2.0]), np.array([-3.0])]
    w, a, trace = scagda_run(Zero(), _params(K=30), w0, a0)
    np.testing.assert_array_equal(w, w0)
    for ai, bi in zip(a, a0):
        np.testing.assert_array_equal(ai, bi)
    assert len(trace) == 30
    np.testing.assert_array_equal(trace.column("primal_grad_norm"), 0.0)


def test_init_not_mutated():
    w0 = np.array([1.0])
    a0 = [np.array(0.0), np.array(0.0)]
    prob = Quadratic([1.0, 2.0], [[1.0], [1.0]], [[0.0], [0.0]])
    scagda_run(prob, _params(K=10), w0, a0)
    assert w0.tolist() == [1.0] and all(float(x) == 0.0 for x in a0)


def test_block_count_checked():
    prob = Quadratic([1.0, 2.0], [[1.0], [1.0]], [[0.0], [0.0]])
    with pytest.raises(ValueError):
        scagda_run(prob, _params(), 0.0, [0.0])


def test_strongly_convex_concave_toy_converges_to_saddle():
    # n = m = 1, h(a) = a: phi = w^2/2 - b w + w a - a^2/2, saddle at w = a = b/2
    b = 1.3
    prob = Quadratic([b], [[1.0]], [[0.0]])
    w, a, _ = scagda_run(prob, _params(K=2000, eta=0.1, gamma=0.1), 0.0, [0.0])
    assert abs(w - b / 2) < 1e-4 and abs(a[0] - b / 2) < 1e-4


def test_toy_with_moving_average_converges():
    b = -0.7
    prob = Quadratic([b], [[1.0]], [[0.0]])
    w, a, _ = scagda_run(prob, _params(K=5000, eta=0.05, gamma=0.05, beta=0.3), 0.0, [0.0])
    assert abs(w - b / 2) < 1e-4 and abs(a[0] - b / 2) < 1e-4


def test_dual_step_sees_updated_primal():
    prob = Quadratic([1.0, -1.0], [[1.0], [2.0]], [[0.0], [0.5]])
    params = _params(K=20)
    w_seen = []
    rng = np.random.default_rng(params.seed)
    idx = draw_indices(rng, prob.n, prob.m, 20)
    w, a = 0.5, [0.0, 0.0]
    for i1, i2, _, _ in idx:
        w = w - params.eta * (w - prob.b[i1] + a[i1])
        w_seen.append(w)
        omega = prob.s[i2, 0] * a[i2] + prob.t[i2, 0]
        a[i2] = a[i2] + params.gamma * (w - prob.s[i2, 0] * omega)
    scagda_run(prob, params, 0.5, [0.0, 0.0])
    np.testing.assert_allclose(np.ravel(prob.dual_calls), w_seen, rtol=0, atol=1e-15)


def test_only_block_i2_changes():
    class Spy(Quadratic):
        def __init__(self, *args):
            super().__init__(*args)
            self.blocks = []

        def sample_dual_f_grad(self, w, a_i, i):
            self.blocks.append(i)
            return super().sample_dual_f_grad(w, a_i, i)

    rng = np.random.default_rng(1)
    prob = Spy(rng.standard_normal(6), rng.uniform(0.5, 1.5, (6, 3)),
               rng.standard_normal((6, 3)))
    K = 4
    idx = draw_indices(np.random.default_rng(11), 6, 3, K)
    a0 = [float(i + 1) for i in range(6)]
    _, a, _ = scagda_run(prob, _params(K=K, seed=11), 0.0, a0)
    assert prob.blocks == idx[:, 1].tolist()
    for i in range(6):
        if i not in prob.blocks:
            assert float(a[i]) == a0[i]
    assert any(float(a[i]) != a0[i] for i in prob.blocks)


def test_index_draws_uniform_chi_square():
    idx = draw_indices(np.random.default_rng(0), 7, 5, 100_000)
    for col, size in ((0, 7), (1, 7), (2, 5), (3, 5)):
        counts = np.bincount(idx[:, col], minlength=size)
        assert len(counts) == size
        assert chisquare(counts).pvalue > 1e-3


def _manual_gda(prob, params, w, a):
    """Plain alternating GDA with exact h (beta = 1, m = 1) and chunked index draws."""
    rng = np.random.default_rng(params.seed)
    a = [float(x) for x in a]
    k = 0
    while k < params.K:
        c = min(INDEX_CHUNK, params.K - k)
        i1s = rng.integers(prob.n, size=c)
        i2s = rng.integers(prob.n, size=c)
        rng.integers(prob.m, size=(c, 2))
        for i1, i2 in zip(i1s, i2s):
            w = w - params.eta * (prob.mu * w - prob.b[i1] + prob.c * a[i1])
            h = prob.s[i2, 0] * a[i2] + prob.t[i2, 0]
            a[i2] = a[i2] + params.gamma * (prob.c * w - prob.s[i2, 0] * h)
            k += 1
    return w, a


def test_beta_one_single_component_matches_plain_gda():
    rng = np.random.default_rng(5)
    prob = Quadratic(rng.standard_normal(4), rng.uniform(0.5, 1.5, (4, 1)),
                     rng.standard_normal((4, 1)))
    params = _params(K=2500, eta=0.05, gamma=0.05, seed=9)
    w, a, _ = scagda_run(prob, params, 0.2, [0.0] * 4)
    w_ref, a_ref = _manual_gda(prob, params, 0.2, [0.0] * 4)
    assert abs(w - w_ref) <= 1e-12
    np.testing.assert_allclose([float(x) for x in a], a_ref, rtol=0, atol=1e-12)


def test_first_touch_seeds_average_with_sample():
    # with w = a = 0 the first sample is h = 2; without first_touch omega = beta * 2
    recorded = {}

    class Rec(Quadratic):
        def g_grad(self, u):
            recorded.setdefault("u", []).append(u)
            return u

    p = Rec([0.0], [[1.0]], [[2.0]])
    scagda_run(p, _params(K=1, beta=0.25, first_touch=True), 0.0, [0.0])
    scagda_run(p, _params(K=1, beta=0.25, first_touch=False), 0.0, [0.0])
    assert recorded["u"] == [2.0, 0.5]


def test_deterministic():
    rng = np.random.default_rng(2)
    prob = Quadratic(rng.standard_normal(3), rng.uniform(0.5, 1.5, (3, 4)),
                     rng.standard_normal((3, 4)))
    r1 = scagda_run(prob, _params(K=300, beta=0.3, seed=4), 0.0, [0.0] * 3)
    r2 = scagda_run(prob, _params(K=300, beta=0.3, seed=4), 0.0, [0.0] * 3)
    assert r1[0] == r2[0] and [float(x) for x in r1[1]] == [float(x) for x in r2[1]]
    assert np.array_equal(np.array(r1[2].rows, dtype=float), np.array(r2[2].rows, dtype=float),
                          equal_nan=True)
    r3 = scagda_run(prob, _params(K=300, beta=0.3, seed=5), 0.0, [0.0] * 3)
    assert r3[0] != r1[0]


def test_divergence_carries_trace():
    class Blowup(Quadratic):
        def sample_primal_grad(self, w, a_i, i):
            self.calls = getattr(self, "calls", 0) + 1
            return math.inf if self.calls == 6 else 0.0

    prob = Blowup([0.0], [[1.0]], [[0.0]])
    with pytest.raises(DivergenceError) as exc:
        scagda_run(prob, _params(K=20), 0.0, [0.0])
    assert "iteration 5" in str(exc.value)
    assert isinstance(exc.value.trace, SolveTrace)
    assert len(exc.value.trace) == 5


def test_trace_without_diagnostics_has_nan_columns():
    prob = Quadratic([1.0], [[1.0]], [[0.0]])
    _, _, trace = scagda_run(prob, _params(K=10), 0.0, [0.0])
    assert np.all(np.isnan(trace.column("primal_gap")))
    assert np.all(np.isnan(trace.column("ma_error")))
    assert np.all(np.isnan(trace.column("obj")))
    assert trace.column("k").tolist() == list(range(10))


def test_log_every_keeps_last_row():
    prob = Quadratic([1.0], [[1.0]], [[0.0]])
    _, _, trace = scagda_run(prob, _params(K=10, log_every=4), 0.0, [0.0])
    assert trace.column("k").tolist() == [0, 4, 8, 9]


def test_diagnostics_report_gap_and_ma_error():
    b = 1.0
    prob = Quadratic([b], [[1.0]], [[0.0]])
    # P(w) = max_a (w^2/2 - b w + w a - a^2/2) = w^2 - b w, minimized at b/2
    inst = attach_diagnostics(prob, exact_P=lambda w: w * w - b * w, P_star=-b * b / 4,
                              exact_h=lambda a: [float(a[0])])
    _, _, trace = scagda_run(inst, _params(K=2000), 0.0, [0.0])
    gap = trace.column("primal_gap")
    assert np.all(gap >= -1e-15) and gap[-1] < 1e-8
    # beta = 1 with a deterministic affine h: omega equals h at the pre-update iterate
    np.testing.assert_allclose(trace.column("ma_error"), 0.0, atol=1e-30)
    with pytest.raises(ValueError):
        attach_diagnostics(prob, exact_P=lambda w: 0.0)


def test_trace_csv_roundtrip(tmp_path):
    trace = SolveTrace()
    trace.append(k=0, obj=1.5, primal_grad_norm=0.25)
    trace.append(k=1, obj=0.1 + 0.2, primal_grad_norm=3e-17, primal_gap=1e-9, ma_error=0.0)
    p = tmp_path / "t.csv"
    trace.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,obj,primal_grad_norm,primal_gap,ma_error"
    assert lines[1] == "0,1.5,0.25,,"
    back = SolveTrace.from_csv(p)
    assert back.columns == trace.columns
    np.testing.assert_array_equal(back.column("obj"), trace.column("obj"))
    assert math.isnan(back.column("primal_gap")[0]) and back.column("primal_gap")[1] == 1e-9
