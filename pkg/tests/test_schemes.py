import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rushlarsen.problems import SplitProblem, manufactured_smooth, theta_split
from rushlarsen.schemes import (
    AB_WEIGHTS,
    ALL_SCHEMES,
    EAB_STENCILS,
    History,
    HistoryError,
    SchemeSpec,
    StepOverflow,
    ab_weight_fractions,
    eab_gamma,
    eab_step,
    integrate,
    n_steps_for,
    rk4_step,
    rl_coefficients,
    rl_step,
)


def make_history(a_list, b_list, y_list=None, h=0.1):
    """History from oldest-first lists."""
    k = len(a_list)
    hist = History(k)
    y_list = y_list if y_list is not None else [np.zeros_like(np.atleast_1d(b)) for b in b_list]
    for i in range(k):
        hist.push(i * h, np.atleast_1d(np.asarray(y_list[i], dtype=float)),
                  np.atleast_1d(np.asarray(a_list[i], dtype=float)),
                  np.atleast_1d(np.asarray(b_list[i], dtype=float)))
    return hist


class ConstantAffine(SplitProblem):
    name = "affine"
    has_exact = True

    def __init__(self, A, b, y0, T):
        super().__init__(np.asarray(y0, dtype=float), T)
        self.A = np.asarray(A, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.calls = 0

    def eval(self, t, y):
        self.calls += 1
        return self.A, self.b

    def exact(self, t):
        t = np.asarray(t, dtype=float)[..., None]
        r = self.b / self.A
        return (self.y0 + r) * np.exp(self.A * t) - r


# ---------------------------------------------------------------------------
# coefficient tables


@pytest.mark.parametrize("k", [2, 3, 4])
def test_ab_weights_sum_to_one(k):
    assert sum(ab_weight_fractions(k)) == 1


def test_ab_weights_match_adams_bashforth_integrals():
    # int_0^1 l_i(s) ds for the Lagrange basis on nodes 0, -1, ..., -(k-1)
    for k in (2, 3, 4):
        nodes = [-i for i in range(k)]
        for i, w in enumerate(ab_weight_fractions(k)):
            poly = np.poly1d([1.0])
            for j, x in enumerate(nodes):
                if j != i:
                    poly *= np.poly1d([1.0, -x]) / (nodes[i] - x)
            integral = poly.integ()(1.0) - poly.integ()(0.0)
            assert float(w) == pytest.approx(integral, abs=1e-14)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_eab_stencils_are_backward_derivatives(k):
    # applied to t^m sampled at t = 0, -1, ..., stencil j gives d^{j-1}/dt^{j-1} at 0
    for j, (nums, den) in enumerate(EAB_STENCILS[k]):
        for m in range(k):
            samples = [Fraction(-i) ** m for i in range(k)]
            value = sum(Fraction(n, den) * s for n, s in zip(nums, samples))
            expected = math.factorial(m) if m == j else 0
            assert value == expected


def test_rl3_alpha_example():
    hist = make_history([0.0, 0.0, 1.0], [0.0, 0.0, 0.0])
    alpha, beta = rl_coefficients(3, hist, 0.1)
    assert alpha[0] == pytest.approx(23 / 12, abs=1e-15)
    assert beta[0] == 0.0


@pytest.mark.parametrize("k", [2, 3, 4])
def test_constant_a_gives_alpha_equal_a(k):
    rng = np.random.default_rng(k)
    c = rng.uniform(-5, 0, 3)
    hist = make_history([c] * k, [rng.normal(size=3) for _ in range(k)])
    alpha, _ = rl_coefficients(k, hist, 0.1)
    assert np.allclose(alpha, c, rtol=1e-15, atol=0)


def test_rl_coefficients_match_formulas():
    rng = np.random.default_rng(11)
    h = 0.07
    a = [rng.normal(size=2) for _ in range(4)]  # oldest first
    b = [rng.normal(size=2) for _ in range(4)]
    an, an1, an2, an3 = a[3], a[2], a[1], a[0]
    bn, bn1, bn2, bn3 = b[3], b[2], b[1], b[0]
    al, be = rl_coefficients(2, make_history(a[2:], b[2:], h=h), h)
    assert np.allclose(al, 1.5 * an - 0.5 * an1, rtol=1e-14)
    assert np.allclose(be, 1.5 * bn - 0.5 * bn1, rtol=1e-14)
    al, be = rl_coefficients(3, make_history(a[1:], b[1:], h=h), h)
    assert np.allclose(al, (23 * an - 16 * an1 + 5 * an2) / 12, rtol=1e-14)
    assert np.allclose(be, (23 * bn - 16 * bn1 + 5 * bn2) / 12 + h / 12 * (an * bn1 - an1 * bn), rtol=1e-14)
    al, be = rl_coefficients(4, make_history(a, b, h=h), h)
    assert np.allclose(al, (55 * an - 59 * an1 + 37 * an2 - 9 * an3) / 24, rtol=1e-14)
    expected = ((55 * bn - 59 * bn1 + 37 * bn2 - 9 * bn3) / 24
                + h / 12 * (an * (3 * bn1 - bn2) - (3 * an1 - an2) * bn))
    assert np.allclose(be, expected, rtol=1e-14)


@pytest.mark.parametrize("k", [3, 4])
@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.floats(1e-3, 1.0))
def test_beta_forms_agree_for_constant_a(k, seed, h):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-50, 0, 4)
    hist = make_history([A] * k, [rng.normal(size=4) for _ in range(k)], h=h)
    _, beta_general = rl_coefficients(k, hist, h)
    _, beta_simple = rl_coefficients(k, hist, h, constant_a=True)
    scale = np.max(np.abs(beta_general)) + 1e-300
    assert np.max(np.abs(beta_general - beta_simple)) <= 1e-14 * max(scale, 1.0) * 10


def test_constant_a_beta_k4_example():
    A = np.array([-3.0])
    b = [np.array([x]) for x in (0.4, -1.0, 2.5, 0.3)]  # oldest first
    h = 0.2
    hist = make_history([A] * 4, b, h=h)
    _, beta = rl_coefficients(4, hist, h, constant_a=True)
    bn, bn1, bn2, bn3 = b[3], b[2], b[1], b[0]
    expected = (55 * bn - 59 * bn1 + 37 * bn2 - 9 * bn3) / 24 - h / 12 * A * (2 * bn - 3 * bn1 + bn2)
    assert beta == pytest.approx(expected, rel=1e-15)


# ---------------------------------------------------------------------------
# single steps


@pytest.mark.parametrize("k", [2, 3, 4])
def test_zero_stabilizer_is_euler_on_constant_b(k):
    c = np.array([0.3, -2.0])
    y = np.array([1.0, 5.0])
    hist = make_history([np.zeros(2)] * k, [c] * k, [y] * k, h=0.1)
    assert np.allclose(rl_step(k, hist, 0.1), y + 0.1 * c, rtol=1e-15)
    assert np.allclose(eab_step(k, hist, 0.1), y + 0.1 * c, rtol=1e-15)


@pytest.mark.parametrize("k", [2, 3, 4])
@pytest.mark.parametrize("step", [rl_step, eab_step])
def test_exact_on_pure_stabilizer(k, step):
    lam, h = -7.3, 0.13
    ys = [np.array([math.exp(lam * h * i)]) for i in range(k)]
    hist = make_history([np.array([lam])] * k, [np.zeros(1)] * k, ys, h=h)
    assert step(k, hist, h)[0] == pytest.approx(math.exp(lam * h * k), rel=1e-14)


@pytest.mark.parametrize("k", [2, 3, 4])
@pytest.mark.parametrize("step", [rl_step, eab_step])
def test_exact_on_constant_affine(k, step):
    prob = ConstantAffine([-40.0, -0.5, -3.0], [2.0, -1.0, 0.25], [0.3, 1.0, -2.0], 1.0)
    h = 0.05
    ys = prob.exact(h * np.arange(k))
    hist = make_history([prob.A] * k, [prob.b] * k, list(ys), h=h)
    assert np.allclose(step(k, hist, h), prob.exact(h * k), rtol=1e-13, atol=0)


def test_eab_gamma_constant_history():
    c = np.array([1.5, -2.0])
    for k in (2, 3, 4):
        g = eab_gamma(k, [c] * k)
        assert np.allclose(g[0], c)
        for gj in g[1:]:
            assert np.allclose(gj, 0.0, atol=1e-15)


def test_eab_gamma_needs_k_values():
    with pytest.raises(HistoryError):
        eab_gamma(3, [np.zeros(1)] * 2)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_eab_exact_for_polynomial_forcing(k):
    # z' = a z + q(t) with q of degree k - 1: one EAB step is exact
    rng = np.random.default_rng(k)
    a = -2.7
    q = np.poly1d(rng.normal(size=k))
    h = 0.3
    t_nodes = h * np.arange(k)
    z_n = 0.8
    ys = [np.array([0.0])] * (k - 1) + [np.array([z_n])]
    hist = make_history([np.array([a])] * k, [np.array([q(t)]) for t in t_nodes], ys, h=h)
    t_n = t_nodes[-1]
    coeffs = [mp.mpf(float(c)) for c in q.coeffs]
    integrand = lambda s: mp.exp(a * (h - s)) * mp.polyval(coeffs, t_n + s)
    exact = float(mp.exp(a * h) * z_n + mp.quad(integrand, [0, h]))
    assert eab_step(k, hist, h)[0] == pytest.approx(exact, rel=1e-12, abs=1e-14)


def test_rk4_examples():
    f_grow = lambda t, y: y
    assert rk4_step(f_grow, 0.0, np.array([1.0]), 0.1)[0] == pytest.approx(
        1 + 0.1 + 0.1**2 / 2 + 0.1**3 / 6 + 0.1**4 / 24, rel=1e-15)
    y = np.array([1.0])
    for i in range(10):
        y = rk4_step(lambda t, y: -y, i * 0.1, y, 0.1)
    assert abs(y[0] - math.exp(-1)) < 1e-6
    y0 = np.array([3.0, -1.0])
    assert np.array_equal(rk4_step(lambda t, y: np.zeros_like(y), 0.0, y0, 0.5), y0)


def test_steps_signal_overflow():
    hist = make_history([np.array([0.0])] * 2, [np.array([np.inf])] * 2, [np.array([1.0])] * 2)
    with pytest.raises(StepOverflow):
        rl_step(2, hist, 0.1)
    with pytest.raises(StepOverflow):
        eab_step(2, hist, 0.1)


# ---------------------------------------------------------------------------
# history and scheme names


def test_history_guards():
    hist = History(3)
    hist.push(0.0, np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(HistoryError):
        hist.latest(2)
    with pytest.raises(HistoryError):
        hist.push(0.0, np.zeros(1), np.zeros(1), np.zeros(1))
    hist.push(0.1, np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(HistoryError):
        hist.push(0.25, np.zeros(1), np.zeros(1), np.zeros(1))
    hist.push(0.2, np.zeros(1), np.zeros(1), np.zeros(1))
    hist.push(0.3, np.ones(1), np.zeros(1), np.zeros(1))
    assert len(hist) == 3 and hist.full
    assert [r.t for r in hist.latest(3)] == [0.3, 0.2, 0.1]


def test_rl_needs_full_history():
    hist = make_history([np.zeros(1)] * 2, [np.zeros(1)] * 2)
    with pytest.raises(HistoryError):
        rl_step(3, hist, 0.1)


@pytest.mark.parametrize("text, family, order", [("RL3", "RL", 3), ("eab2", "EAB", 2), ("RK4", "RK4", 4)])
def test_scheme_parse(text, family, order):
    s = SchemeSpec.parse(text)
    assert (s.family, s.order) == (family, order)


@pytest.mark.parametrize("bad", ["RL5", "RL", "XYZ2", "EAB1", ""])
def test_scheme_parse_rejects(bad):
    with pytest.raises(ValueError):
        SchemeSpec.parse(bad)


def test_scheme_steps():
    assert SchemeSpec("RK4ref").steps == 1
    assert [s.steps for s in ALL_SCHEMES] == [2, 3, 4, 2, 3, 4]


# ---------------------------------------------------------------------------
# driver


@pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
def test_evaluation_count(scheme):
    prob = ConstantAffine([-1.0], [0.5], [1.0], 2.0)
    h = 0.05
    tr = integrate(prob, scheme, h)
    n = n_steps_for(h, prob.T)
    assert len(tr.t) == n + 1
    assert prob.calls == tr.n_evals == n + 3 * (scheme.order - 1)


def test_rk4_driver_evaluation_count():
    prob = ConstantAffine([-1.0], [0.5], [1.0], 1.0)
    tr = integrate(prob, SchemeSpec("RK4"), 0.1)
    assert tr.n_evals == 4 * 10


@pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
def test_pure_bootstrap_trajectory(scheme):
    prob = ConstantAffine([-1.0], [0.5], [1.0], 1.0)
    h = 0.1
    T = (scheme.steps - 1) * h
    tr = integrate(prob, scheme, h, T=T)
    rk = integrate(prob, SchemeSpec("RK4"), h, T=T)
    assert len(tr.t) == scheme.steps
    assert np.array_equal(tr.y, rk.y)


@pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
def test_theta_one_is_exact(scheme):
    prob = theta_split(-3.0, 1.0, T=2.0)
    tr = integrate(prob, scheme, 0.1, startup_substeps=1)
    k = scheme.steps
    # after the RK4 bootstrap each step multiplies by exactly e^{lam h}
    ratio = tr.y[k:, 0] / tr.y[k - 1:-1, 0]
    assert np.allclose(ratio, math.exp(-0.3), rtol=1e-14, atol=0)


def test_stiff_startup_uses_substeps():
    prob = theta_split(-500.0, 1.0, T=1.0)
    tr = integrate(prob, SchemeSpec.parse("RL4"), 0.05)
    assert not tr.overflow
    assert np.allclose(tr.y[:, 0], np.exp(-500.0 * tr.t), atol=1e-6)
    plain = integrate(prob, SchemeSpec.parse("RL4"), 0.05, startup_substeps=1)
    assert plain.overflow or np.max(np.abs(plain.y)) > 1.0


def test_startup_substep_validation():
    with pytest.raises(ValueError):
        integrate(theta_split(-1.0, 1.0), SchemeSpec.parse("RL2"), 0.1, startup_substeps=0)


@pytest.mark.parametrize("h", [0.0, -0.1, math.nan, math.inf])
def test_bad_step_rejected(h):
    with pytest.raises(ValueError):
        integrate(manufactured_smooth(), SchemeSpec.parse("RL2"), h)


def test_horizon_shorter_than_startup_rejected():
    with pytest.raises(ValueError):
        integrate(manufactured_smooth(), SchemeSpec("RL4"), 1.0, T=2.0)


def test_overflow_marks_trajectory():
    prob = theta_split(-100.0, 0.0, T=10.0)
    tr = integrate(prob, SchemeSpec.parse("RL2"), 0.05)  # z = -5, far outside AB2
    assert tr.overflow
    assert tr.overflow_time is not None and tr.overflow_time < 10.0
    assert np.all(np.isfinite(tr.y))


@pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
def test_rl2_style_convergence_on_smooth_problem(scheme):
    prob = manufactured_smooth()
    errs = []
    for h in (6 / 2**6, 6 / 2**7):
        tr = integrate(prob, scheme, h)
        errs.append(np.max(np.abs(tr.y[:, 0] - prob.exact(tr.t)[:, 0])))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(scheme.order, abs=0.3)


@pytest.mark.parametrize("k", [2, 3, 4])
def test_rl_and_eab_single_step_defects_agree_to_higher_order(k):
    prob = manufactured_smooth()

    def defect_gap(h):
        t = 0.7 + h * np.arange(k)
        ys = prob.exact(t)
        hist = History(k)
        for ti, yi in zip(t, ys):
            hist.push(ti, yi, *prob.eval(ti, yi))
        return abs(rl_step(k, hist, h)[0] - eab_step(k, hist, h)[0])

    # start inside the asymptotic range (the k=2 gap nearly cancels near h=0.1)
    # and stop before round-off dominates the k=4 gap
    h0 = {2: 0.025, 3: 0.05, 4: 0.1}[k]
    gaps = [defect_gap(h0 / 2**i) for i in range(3)]
    for g1, g2 in zip(gaps, gaps[1:]):
        assert g1 / g2 >= 0.8 * 2 ** (k + 1)


@pytest.mark.parametrize("scheme", ALL_SCHEMES, ids=str)
def test_startup_perturbation_response_is_bounded_uniformly_in_h(scheme):
    prob = manufactured_smooth()
    delta = 1e-6
    consts = []
    for m in range(5, 11):
        h = prob.T / 2**m
        base = integrate(prob, scheme, h)
        pert = integrate(prob, scheme, h, startup_perturbation=delta)
        consts.append(abs(pert.final[0] - base.final[0]) / delta)
    # the problem is dissipative: the continuous response is about exp(-12)
    assert max(consts) < 1e-3
    # C settles as h shrinks instead of growing
    assert all(c2 <= c1 * 1.01 for c1, c2 in zip(consts, consts[1:]))
    assert consts[-2] / consts[-1] < 1.1
