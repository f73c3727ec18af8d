"""Acceptance criteria 1-10, one test each.

Each test logs a ``criterion N: PASS|FAIL`` line (shown in the terminal
summary) with its runtime and the measured quantities.
"""

import math

import numpy as np
import pytest

from rushlarsen.harness import convergence_study, critical_dt, reference_solution
from rushlarsen.phi import phi_array
from rushlarsen.problems import (
    SplitProblem,
    br_model,
    default_br_params_path,
    manufactured_membrane,
    manufactured_smooth,
    theta_split,
)
from rushlarsen.schemes import SchemeSpec, integrate
from rushlarsen.stability import real_axis_crossing, rho

RL = ["RL2", "RL3", "RL4"]
ALL = RL + ["EAB2", "EAB3", "EAB4"]


def test_c01_phi_recurrence(criterion):
    with criterion(1, "phi recurrence residual <= 1e-12", budget=1.0) as info:
        rng = np.random.default_rng(1)
        n_big = 9000
        r = 100 * np.sqrt(rng.uniform(0, 1, n_big))
        ang = rng.uniform(0, 2 * np.pi, n_big)
        z = np.where(rng.uniform(size=n_big) < 0.5, r * np.exp(1j * ang), r * np.sign(np.cos(ang)))
        tiny = 1e-6 * rng.uniform(-1, 1, 1000) * np.exp(1j * rng.uniform(0, 2 * np.pi, 1000))
        z = np.concatenate([z, tiny]).astype(complex)
        worst = 0.0
        prev = phi_array(0, z)
        for j in range(4):
            nxt = phi_array(j + 1, z)
            resid = np.abs(z * nxt - prev + 1 / math.factorial(j)) / np.maximum(1.0, np.abs(prev))
            worst = max(worst, float(resid.max()))
            prev = nxt
        info["detail"] = f"worst scaled residual {worst:.2e} on {z.size} points"
        assert worst <= 1e-12


class ConstantAffine(SplitProblem):
    has_exact = True

    def __init__(self, A, b, y0, T):
        super().__init__(y0, T)
        self.A = np.asarray(A, float)
        self.b = np.asarray(b, float)

    def eval(self, t, y):
        return self.A, self.b

    def exact(self, t):
        t = np.asarray(t, float)[..., None]
        s = -self.b / self.A
        return (self.y0 - s) * np.exp(self.A * t) + s


def test_c02_exact_linear(criterion):
    with criterion(2, "RL/EAB exact on constant affine problems", budget=1.0) as info:
        rng = np.random.default_rng(2)
        A = -10 ** rng.uniform(-1, 2, 8)
        b = rng.uniform(0.5, 2, 8) * np.sign(rng.normal(size=8))
        y0 = rng.uniform(-1, 1, 8)
        h = 0.01
        prob = ConstantAffine(A, b, y0, 200 * h)
        worst = 0.0
        for name in ALL:
            # the RK4 bootstrap is resolved finely so that only the scheme steps are under test
            tr = integrate(prob, SchemeSpec.parse(name), h, startup_substeps=400)
            ex = prob.exact(tr.t)
            rel = np.max(np.abs(tr.y - ex), axis=1) / np.max(np.abs(ex), axis=1)
            worst = max(worst, float(rel.max()))
        info["detail"] = f"worst relative error {worst:.2e} over 200 steps"
        assert worst <= 1e-11


def test_c03_orders_smooth(criterion):
    with criterion(3, "observed orders on the smooth problem within 0.3", budget=10.0) as info:
        p = manufactured_smooth()
        slopes = {}
        for name in ALL:
            rep = convergence_study(p, name, p.T / 2**9, m_list=range(6))
            slopes[name] = [o for o in rep.orders if o is not None]
        dev = {n: max(abs(o - int(n[-1])) for o in s) for n, s in slopes.items()}
        info["detail"] = ", ".join(f"{n} max|slope-k|={d:.3f}" for n, d in dev.items())
        assert all(d <= 0.3 for d in dev.values())


def test_c04_adams_limits(criterion):
    with criterion(4, "theta = 0 real-axis crossings", budget=5.0) as info:
        want = {"RL2": (-1.0, 0.02), "RL3": (-0.545, 0.01), "RL4": (-0.30, 0.01)}
        got = {n: real_axis_crossing(n, 0.0).crossing for n in want}
        info["detail"] = ", ".join(f"{n} {x:.5f}" for n, x in got.items())
        for n, (x, tol) in want.items():
            assert abs(got[n] - x) <= tol


def test_c05_rl2_a0_stability(criterion):
    with criterion(5, "RL2 theta=2/3 A(0) stability and theta=0.7 band") as info:
        xs = -(10.0 ** np.arange(0, 7))
        r = rho("RL2", 2 / 3, xs)
        im = np.linspace(0.5, 400, 800)
        band = rho("RL2", 0.7, -50 + 1j * im) < 1
        info["detail"] = f"max rho on axis {r.max():.12f}, stable Im z at Re -50: {band.sum()}/{band.size}"
        assert np.all(r <= 1 + 1e-9)
        assert band.any()


def test_c06_width_ratios(criterion):
    with criterion(6, "domain-width ratios", budget=30.0) as info:
        x = {(n, t): real_axis_crossing(n, t, -1e4).crossing
             for n, t in [("RL3", 0.0), ("RL3", 0.85), ("RL3", 1.05), ("RL4", 0.0), ("RL4", 1.05)]}
        ratios = {
            "RL3 0.85": (x["RL3", 0.85] / x["RL3", 0.0], 25, 0.15),
            "RL3 1.05": (x["RL3", 1.05] / x["RL3", 0.0], 400, 0.15),
            "RL4 1.05": (x["RL4", 1.05] / x["RL4", 0.0], 300, 0.20),
        }
        info["detail"] = ", ".join(f"{k}: {v:.1f}" for k, (v, _, _) in ratios.items())
        for v, target, tol in ratios.values():
            assert abs(v / target - 1) <= tol


def test_c07_theta_one_exact(criterion):
    with criterion(7, "theta = 1 gives rho = |e^z|") as info:
        rng = np.random.default_rng(7)
        z = -rng.uniform(1e-6, 100, 1000) + 1j * rng.uniform(-100, 100, 1000)
        worst = max(float(np.max(np.abs(rho(n, 1.0, z) - np.abs(np.exp(z))))) for n in ALL)
        info["detail"] = f"worst |rho - |e^z|| = {worst:.1e}"
        assert worst <= 1e-10


def _bounded(tr) -> bool:
    # a linear recurrence after 500 steps: compare the last two 100-step windows
    if tr.overflow:
        return False
    y = np.abs(tr.y[:, 0])
    return bool(y[-100:].max() <= y[-200:-100].max())


def test_c08_scanner_time_domain(criterion):
    with criterion(8, "scanner agrees with 500-step runs") as info:
        rng = np.random.default_rng(8)
        agree = n = 0
        while n < 100:
            name = ALL[rng.integers(len(ALL))]
            lam = -(10 ** rng.uniform(-1, 3))
            theta = rng.uniform(0, 1.1)
            h = 10 ** rng.uniform(-3, 0)
            r = rho(name, theta, [lam * h])[0]
            if abs(r - 1) <= 1e-3:
                continue
            n += 1
            # startup substeps sized from |lambda| so that RK4 itself stays stable
            m = max(1, math.ceil(abs(lam) * h / 2))
            tr = integrate(theta_split(lam, theta, 1.0, 500 * h), SchemeSpec.parse(name), h,
                           startup_substeps=m)
            agree += _bounded(tr) == (r < 1)
        info["detail"] = f"{agree}/{n} agree"
        assert agree == n


def test_c09_perturbation(criterion):
    with criterion(9, "perturbation constant stable within x2 across h") as info:
        p = manufactured_membrane(0.05)
        spreads = {}
        for name in RL:
            scheme = SchemeSpec.parse(name)
            for delta in (1e-6, 1e-4):
                C = []
                for m in range(5, 10):
                    h = p.T / 2**m
                    base = integrate(p, scheme, h)
                    pert = integrate(p, scheme, h, startup_perturbation=np.full(2, delta))
                    C.append(float(np.max(np.abs(pert.final - base.final))) / delta)
                spreads[name, delta] = max(C) / min(C)
        info["detail"] = ", ".join(f"{n} d={d:g}: {s:.2f}" for (n, d), s in spreads.items())
        assert all(s <= 2 for s in spreads.values())


def test_c10_br_tables(criterion):
    if not default_br_params_path().exists():
        pytest.skip("Beeler-Reuter parameter file absent")
    with criterion(10, "Beeler-Reuter table values (best effort)") as info:
        B = br_model()
        h_ref = 0.05 / 8
        dt0 = {n: critical_dt(B, n, 0.3, tol=1e-2).dt0 for n in ("RL2", "EAB2")}
        ref = reference_solution(B, h_ref)
        rep = convergence_study(B, "RL3", h_ref, m_list=(3,), reference=ref, check_reference=False)
        e = rep.errors[0]
        checks = {
            "dt0 RL2": (dt0["RL2"], 0.323, 2.0),
            "dt0 EAB2": (dt0["EAB2"], 0.424, 2.0),
            "e(0.05) RL3": (e, 6.34e-3, 3.0),
        }
        info["detail"] = ", ".join(f"{k}={v:.4g} (x{max(v / t, t / v):.2f} of {t:g})"
                                   for k, (v, t, _) in checks.items())
        for v, target, factor in checks.values():
            assert target / factor <= v <= target * factor
