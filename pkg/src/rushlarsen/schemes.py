"""Fixed-step exponential multistep schemes for y' = a(t, y) y + b(t, y).

Two families are provided on top of a shared history of (t, y, a, b)
records, where ``a`` is the diagonal of the stabilizer:

* Rush-Larsen ``RL_k`` (k = 2, 3, 4)::

      y_{n+1} = y_n + h phi_1(alpha_n h) (alpha_n y_n + beta_n)

* exponential Adams-Bashforth ``EAB_k``, re-linearised around a_n each step::

      y_{n+1} = y_n + h (phi_1(a_n h)(a_n y_n + g_1) + sum_j phi_j(a_n h) g_j)

plus the classical RK4 step used for startup and for reference solutions.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .phi import PhiDomainError, phi_diag, phi_diag_orders

__all__ = [
    "AB_WEIGHTS",
    "BLOWUP_BOUND",
    "EAB_STENCILS",
    "History",
    "HistoryError",
    "Record",
    "SchemeSpec",
    "StepOverflow",
    "Trajectory",
    "ALL_SCHEMES",
    "eab_gamma",
    "eab_step",
    "integrate",
    "rk4_step",
    "rl_coefficients",
    "rl_step",
]

#: Early-termination threshold on |y|_inf, in problem units.
BLOWUP_BOUND = 1e6

# Adams-Bashforth weights, newest record first, as (numerators, denominator).
AB_WEIGHTS: dict[int, tuple[tuple[int, ...], int]] = {
    2: ((3, -1), 2),
    3: ((23, -16, 5), 12),
    4: ((55, -59, 37, -9), 24),
}

# Backward-difference stencils giving g_j = h^{j-1} p^{(j-1)}(t_n) for the
# degree k-1 interpolant p of c through the last k nodes (newest first).
EAB_STENCILS: dict[int, tuple[tuple[tuple[int, ...], int], ...]] = {
    2: (((1, 0), 1), ((1, -1), 1)),
    3: (((1, 0, 0), 1), ((3, -4, 1), 2), ((1, -2, 1), 1)),
    4: (
        ((1, 0, 0, 0), 1),
        ((11, -18, 9, -2), 6),
        ((2, -5, 4, -1), 1),
        ((1, -3, 3, -1), 1),
    ),
}


def ab_weight_fractions(k: int) -> list[Fraction]:
    nums, den = AB_WEIGHTS[k]
    return [Fraction(n, den) for n in nums]


class HistoryError(RuntimeError):
    """Raised when a multistep formula is applied to an incomplete history."""


class StepOverflow(ArithmeticError):
    """A step produced a non-finite state."""


class Record(NamedTuple):
    t: float
    y: np.ndarray
    a: np.ndarray
    b: np.ndarray


class History:
    """Ring buffer of the most recent (t, y, a, b) records, newest last."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("history capacity must be positive")
        self.capacity = capacity
        self._records: deque[Record] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, i: int) -> Record:
        return self._records[i]

    @property
    def full(self) -> bool:
        return len(self._records) == self.capacity

    def push(self, t: float, y, a, b) -> None:
        recs = self._records
        if recs:
            gap = t - recs[-1].t
            if gap <= 0:
                raise HistoryError(f"history times must increase (got {t} after {recs[-1].t})")
            if len(recs) >= 2:
                prev = recs[-1].t - recs[-2].t
                if abs(gap - prev) > 1e-12 * max(abs(t), 1.0):
                    raise HistoryError("history spacing is not uniform")
        recs.append(Record(t, y, a, b))

    def latest(self, k: int) -> list[Record]:
        """The k newest records, newest first."""
        if len(self._records) < k:
            raise HistoryError(f"need {k} history records, have {len(self._records)}")
        recs = self._records
        return [recs[-1 - i] for i in range(k)]


_SCHEME_RE = re.compile(r"^(RL|EAB|RK4)(\d)?$", re.IGNORECASE)


@dataclass(frozen=True)
class SchemeSpec:
    """Scheme family and order.

    ``constant_a`` selects the simplified beta of the constant-stabilizer
    case for RL3/RL4; it is only correct when a(t, y) really is constant.
    """

    family: str
    order: int = 4
    constant_a: bool = False

    def __post_init__(self):
        fam = self.family.upper()
        if fam == "RK4REF":
            fam = "RK4"
        object.__setattr__(self, "family", fam)
        if fam not in ("RL", "EAB", "RK4"):
            raise ValueError(f"unknown scheme family {self.family!r}")
        if fam == "RK4":
            if self.order != 4:
                raise ValueError("the RK4 reference scheme has order 4")
        elif self.order not in (2, 3, 4):
            raise ValueError(f"{fam} order must be 2, 3 or 4, got {self.order}")

    @classmethod
    def parse(cls, name: str) -> "SchemeSpec":
        """Parse ``"RL3"``, ``"EAB2"``, ``"RK4"``."""
        m = _SCHEME_RE.match(name.strip())
        if not m:
            raise ValueError(f"cannot parse scheme name {name!r}")
        fam = m.group(1).upper()
        if fam == "RK4":
            return cls("RK4", 4)
        if m.group(2) is None:
            raise ValueError(f"scheme {name!r} needs an order")
        return cls(fam, int(m.group(2)))

    @property
    def steps(self) -> int:
        """Number of history records consumed by one step."""
        return 1 if self.family == "RK4" else self.order

    @property
    def name(self) -> str:
        return "RK4" if self.family == "RK4" else f"{self.family}{self.order}"

    def __str__(self) -> str:
        return self.name


ALL_SCHEMES = tuple(SchemeSpec(f, k) for f in ("RL", "EAB") for k in (2, 3, 4))


def _combine(weights: Sequence[int], den: int, values: Sequence[np.ndarray]):
    acc = weights[0] * values[0]
    for w, v in zip(weights[1:], values[1:]):
        if w:
            acc = acc + w * v
    return acc / den


def rl_coefficients(k: int, hist: History, h: float, constant_a: bool = False):
    """(alpha_n, beta_n) of the order-k Rush-Larsen scheme."""
    recs = hist.latest(k)
    a = [r.a for r in recs]
    b = [r.b for r in recs]
    nums, den = AB_WEIGHTS[k]
    beta = _combine(nums, den, b)
    if constant_a:
        A = a[0]
        alpha = A
        if k == 3:
            beta = beta - h / 12 * A * (b[0] - b[1])
        elif k == 4:
            beta = beta - h / 12 * A * (2 * b[0] - 3 * b[1] + b[2])
        return alpha, beta
    alpha = _combine(nums, den, a)
    if k == 3:
        beta = beta + h / 12 * (a[0] * b[1] - a[1] * b[0])
    elif k == 4:
        beta = beta + h / 12 * (a[0] * (3 * b[1] - b[2]) - (3 * a[1] - a[2]) * b[0])
    return alpha, beta


def _check_finite(y: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(y)):
        raise StepOverflow("non-finite state")
    return y


def _rl_update(k, hist, h, constant_a=False):
    alpha, beta = rl_coefficients(k, hist, h, constant_a)
    y = hist[-1].y
    return y + h * phi_diag(1, alpha, h) * (alpha * y + beta)


def rl_step(k: int, hist: History, h: float, constant_a: bool = False) -> np.ndarray:
    """One RL_k step from the newest history record."""
    with np.errstate(all="ignore"):
        return _check_finite(_rl_update(k, hist, h, constant_a))


def eab_gamma(k: int, c_hist: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Interpolation coefficients g_1..g_k from (c_{n-k+1}, ..., c_n), oldest first."""
    if len(c_hist) != k:
        raise HistoryError(f"EAB{k} needs {k} c values, got {len(c_hist)}")
    newest_first = list(reversed(c_hist))
    return [_combine(nums, den, newest_first) for nums, den in EAB_STENCILS[k]]


def _eab_update(k, hist, h):
    recs = hist.latest(k)
    a_n = recs[0].a
    y_n = recs[0].y
    c = [(r.a - a_n) * r.y + r.b for r in reversed(recs)]
    gam = eab_gamma(k, c)
    phis = phi_diag_orders(k, a_n, h)
    incr = phis[0] * (a_n * y_n + gam[0])
    for p, g in zip(phis[1:], gam[1:]):
        incr = incr + p * g
    return y_n + h * incr


def eab_step(k: int, hist: History, h: float) -> np.ndarray:
    """One EAB_k step from the newest history record."""
    with np.errstate(all="ignore"):
        return _check_finite(_eab_update(k, hist, h))


def rk4_step(f: Callable, t: float, y: np.ndarray, h: float, k1=None) -> np.ndarray:
    """Classical four-stage Runge-Kutta step; ``k1 = f(t, y)`` may be passed in."""
    with np.errstate(all="ignore"):
        if k1 is None:
            k1 = f(t, y)
        return _check_finite(y + h / 6 * _rk4_tail(f, t, y, h, k1))


def _rk4_tail(f, t, y, h, k1):
    k2 = f(t + h / 2, y + h / 2 * k1)
    k3 = f(t + h / 2, y + h / 2 * k2)
    k4 = f(t + h, y + h * k3)
    return k1 + 2 * k2 + 2 * k3 + k4


@dataclass
class Trajectory:
    """Result of :func:`integrate`.

    On overflow the arrays hold only the finite states computed before the
    blow-up and ``overflow`` is set.
    """

    scheme: str
    h: float
    t: np.ndarray
    y: np.ndarray
    overflow: bool = False
    overflow_time: float | None = None
    n_evals: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.y[-1]


def n_steps_for(h: float, T: float) -> int:
    """Steps needed to reach T; exact multiples of h are not rounded up."""
    n = T / h
    return max(int(math.ceil(n - 1e-9 * max(n, 1.0))), 0)


STARTUP_STIFFNESS = 2.0


def _substeps(rule, h, a) -> int:
    if rule == "auto":
        stiff = float(np.max(np.abs(a))) * h if np.size(a) else 0.0
        if not math.isfinite(stiff):
            return 1
        return max(1, math.ceil(stiff / STARTUP_STIFFNESS - 1e-12))
    m = int(rule)
    if m < 1:
        raise ValueError(f"startup_substeps must be >= 1 or 'auto', got {rule!r}")
    return m


def integrate(
    problem,
    scheme: SchemeSpec,
    h: float,
    T: float | None = None,
    *,
    blowup: float = BLOWUP_BOUND,
    startup_perturbation=None,
    startup_substeps: int | str = "auto",
) -> Trajectory:
    """Integrate ``problem`` on [0, T] with a fixed step h.

    The first ``k - 1`` states of a k-step scheme are produced by RK4 over
    the same step h.  With ``startup_substeps="auto"`` each startup step is
    split into the fewest equal RK4 substeps with h_sub * max|a| <= 2, which
    is one substep unless the stabilizer is stiff at that step size; an
    integer forces that many substeps.

    (a, b) is evaluated exactly once per node that is stepped from, and every
    RK4 substep costs three more (four when it does not start on a node).
    ``startup_perturbation`` is added to every startup state y_0..y_{k-1}
    before their (a, b) records are taken.
    """
    if T is None:
        T = problem.T
    if not (h > 0 and math.isfinite(h)):
        raise ValueError(f"step must be positive and finite, got {h}")
    k = scheme.steps
    n = n_steps_for(h, T)
    if n < max(k - 1, 1):
        raise ValueError(f"horizon T={T} does not cover the {k - 1} startup steps of h={h}")

    evals = 0

    def ab(t, y):
        nonlocal evals
        evals += 1
        return problem.eval(t, y)

    def f(t, y):
        a, b = ab(t, y)
        return a * y + b

    y0 = np.array(problem.y0, dtype=np.result_type(np.asarray(problem.y0), float))
    ts = [0.0]
    ys = [y0]
    hist = History(k)
    overflow = False
    overflow_time = None

    def exceeded(y):
        return not np.all(np.isfinite(y)) or np.max(np.abs(y)) > blowup

    # startup
    try:
        nodes_ab = []
        for i in range(k):
            t = i * h
            a, b = ab(t, ys[i])
            nodes_ab.append((a, b))
            if i < k - 1:
                m = _substeps(startup_substeps, h, a)
                hs = h / m
                y_next = rk4_step(f, t, ys[i], hs, k1=a * ys[i] + b)
                for s_ in range(1, m):
                    y_next = rk4_step(f, t + s_ * hs, y_next, hs)
                if exceeded(y_next):
                    raise StepOverflow
                ts.append((i + 1) * h)
                ys.append(y_next)
    except StepOverflow:
        overflow, overflow_time = True, len(ys) * h
        nodes_ab = None

    if not overflow:
        if startup_perturbation is not None:
            delta = np.asarray(startup_perturbation)
            ys = [y + delta for y in ys]
            nodes_ab = [ab(ts[i], ys[i]) for i in range(k)]
        if scheme.family != "RK4":
            for i in range(k):
                hist.push(ts[i], ys[i], *nodes_ab[i])

        fam, order, const = scheme.family, scheme.order, scheme.constant_a
        ab_next = nodes_ab[-1]
        i = k - 1
        with np.errstate(all="ignore"):
            while i < n:
                t = i * h
                y = ys[-1]
                try:
                    if fam == "RK4":
                        a, b = ab_next if ab_next is not None else ab(t, y)
                        y_new = y + h / 6 * _rk4_tail(f, t, y, h, a * y + b)
                    elif fam == "RL":
                        y_new = _rl_update(order, hist, h, const)
                    else:
                        y_new = _eab_update(order, hist, h)
                except PhiDomainError:
                    # the stabilizer itself went non-finite
                    y_new = np.full_like(y, np.nan)
                ab_next = None
                if exceeded(y_new):
                    overflow, overflow_time = True, (i + 1) * h
                    break
                i += 1
                ts.append(i * h)
                ys.append(y_new)
                if fam != "RK4" and i < n:
                    hist.push(i * h, y_new, *ab(i * h, y_new))

    return Trajectory(
        scheme=scheme.name,
        h=h,
        t=np.array(ts),
        y=np.array(ys),
        overflow=overflow,
        overflow_time=overflow_time,
        n_evals=evals,
    )

