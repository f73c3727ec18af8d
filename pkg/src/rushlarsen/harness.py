"""Benchmark protocols: reference solutions, cubic projection, e(h), orders, critical steps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .schemes import SchemeSpec, Trajectory, integrate, n_steps_for

__all__ = [
    "ConvergenceReport",
    "ConvergenceRow",
    "CriticalDtReport",
    "Projection",
    "ReferenceSolution",
    "ReferenceSolutionError",
    "convergence_study",
    "critical_dt",
    "error_metric",
    "project_cubic",
    "reference_solution",
    "write_convergence_csv",
    "write_critical_csv",
]

log = logging.getLogger(__name__)

UNSTABLE = "unstable"


class ReferenceSolutionError(RuntimeError):
    """The RK4 reference run overflowed or its grid is unusable."""


@dataclass
class ReferenceSolution:
    h_ref: float
    t: np.ndarray
    y: np.ndarray
    generator: str = "RK4"


def reference_solution(problem, h_ref: float, T: float | None = None) -> ReferenceSolution:
    """RK4 solution on the grid n * h_ref; fails loudly on overflow."""
    tr = integrate(problem, SchemeSpec("RK4"), h_ref, T)
    if tr.overflow:
        raise ReferenceSolutionError(
            f"RK4 reference at h_ref={h_ref:g} overflowed at t={tr.overflow_time:g}")
    return ReferenceSolution(h_ref, tr.t, tr.y)


def exact_reference(problem, h_ref: float, T: float | None = None) -> ReferenceSolution:
    T = problem.T if T is None else T
    t = h_ref * np.arange(n_steps_for(h_ref, T) + 1)
    return ReferenceSolution(h_ref, t, np.asarray(problem.exact(t)), generator="exact")


# ---------------------------------------------------------------------------
# projection and error


@dataclass
class Projection:
    values: np.ndarray  # on the covered reference nodes
    nodes: np.ndarray
    dropped: int  # trailing trajectory nodes left out of the last window
    n_covered: int  # reference nodes covered, counted from the first


def _lagrange_cubic(s: np.ndarray) -> np.ndarray:
    # basis on the nodes s = 0, 1, 2, 3, shape (len(s), 4)
    return np.stack([
        -(s - 1) * (s - 2) * (s - 3) / 6,
        s * (s - 2) * (s - 3) / 2,
        -s * (s - 1) * (s - 3) / 2,
        s * (s - 1) * (s - 2) / 6,
    ], axis=-1)


def _grid_ratio(h: float, h_ref: float) -> int:
    r = h / h_ref
    ratio = int(round(r))
    if ratio < 1 or abs(r - ratio) > 1e-9 * r:
        raise ValueError(f"step {h:g} is not an integer multiple of the reference step {h_ref:g}")
    return ratio


def project_cubic(t, y, ref_nodes) -> Projection:
    """Piecewise-cubic interpolant of a trajectory evaluated on reference nodes.

    ``t``, ``y`` is a uniform trajectory starting at ``ref_nodes[0]``; windows
    (t_{3n}, t_{3n+3}) each carry the cubic through their four nodes.  Up to
    two trailing nodes that do not fill a window are dropped, and only the
    reference nodes inside the covered range are returned.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y)
    ref = np.asarray(ref_nodes, dtype=float)
    if t.ndim != 1 or len(t) != len(y):
        raise ValueError("trajectory times and states must have matching length")
    if len(t) < 4:
        raise ValueError("need at least 4 trajectory nodes for a cubic window")
    if len(ref) < 2:
        raise ValueError("need at least 2 reference nodes")
    h = t[1] - t[0]
    h_ref = ref[1] - ref[0]
    if not (h > 0 and h_ref > 0):
        raise ValueError("grids must be increasing")
    if np.max(np.abs(np.diff(t) - h)) > 1e-9 * max(h, abs(t[-1])):
        raise ValueError("trajectory grid is not uniform")
    if np.max(np.abs(np.diff(ref) - h_ref)) > 1e-9 * max(h_ref, abs(ref[-1])):
        raise ValueError("reference grid is not uniform")
    if abs(t[0] - ref[0]) > 1e-9 * max(h_ref, abs(t[0])):
        raise ValueError("trajectory and reference grids start at different times")
    ratio = _grid_ratio(h, h_ref)

    n_win = (len(t) - 1) // 3
    used = 3 * n_win + 1
    dropped = len(t) - used
    n_cov = min(len(ref), (used - 1) * ratio + 1)

    i = np.arange(n_cov)
    win = np.minimum(i // (3 * ratio), n_win - 1)
    s = (i - 3 * ratio * win) / ratio
    basis = _lagrange_cubic(s)
    idx = 3 * win[:, None] + np.arange(4)[None, :]
    nodes_y = y[idx]  # (n_cov, 4, ...)
    vals = np.einsum("nk,nk...->n...", basis, nodes_y)
    return Projection(values=vals, nodes=ref[:n_cov], dropped=dropped, n_covered=n_cov)


def error_metric(v, v_ref) -> float:
    """max |v_ref - v| / max |v_ref| over the shared nodes."""
    v = np.asarray(v)
    v_ref = np.asarray(v_ref)
    if v.shape != v_ref.shape:
        raise ValueError(f"grids differ: {v.shape} vs {v_ref.shape}")
    scale = np.max(np.abs(v_ref))
    if scale == 0:
        raise ZeroDivisionError("reference is identically zero")
    return float(np.max(np.abs(v_ref - v)) / scale)


# ---------------------------------------------------------------------------
# convergence


@dataclass
class ConvergenceRow:
    h: float
    m: int
    error: float | str  # "unstable" when the run overflowed
    observed_order: float | None = None
    dropped: int = 0


@dataclass
class ConvergenceReport:
    scheme: str
    order: int
    problem: str
    h_ref: float
    rows: list[ConvergenceRow]
    reference: str = "RK4"
    reference_disagreement: float | None = None
    reference_converged: bool | None = None

    @property
    def errors(self) -> list:
        return [r.error for r in self.rows]

    @property
    def orders(self) -> list:
        return [r.observed_order for r in self.rows]


def _run(args) -> Trajectory:
    problem, scheme, h, T = args
    return integrate(problem, scheme, h, T)


def _map(fn, items, workers: int):
    if workers > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _component(y: np.ndarray, component):
    return y[:, component] if y.ndim == 2 else y


def convergence_study(
    problem,
    scheme,
    h_ref: float,
    m_list=(5, 4, 3, 2),
    *,
    T: float | None = None,
    reference: ReferenceSolution | str = "auto",
    component: int = -1,
    check_reference: bool = True,
    workers: int = 1,
) -> ConvergenceReport:
    """e(h) at h = 2^m h_ref for each m, against a reference on the h_ref grid.

    ``reference`` is a precomputed :class:`ReferenceSolution`, ``"exact"``,
    ``"rk4"`` or ``"auto"`` (exact when the problem has one).  With an RK4
    reference and ``check_reference`` set, a second reference at 2 h_ref is
    compared on the shared nodes; the disagreement must stay below 1% of the
    largest finite error in the table, otherwise the report is flagged and a
    warning logged.
    """
    if isinstance(scheme, str):
        scheme = SchemeSpec.parse(scheme)
    T = problem.T if T is None else T
    ms = sorted({int(m) for m in m_list}, reverse=True)
    if not ms or ms[-1] < 0:
        raise ValueError("m_list must hold non-negative integers")

    kind = reference
    if isinstance(reference, str):
        kind = reference.lower()
        if kind == "auto":
            kind = "exact" if getattr(problem, "has_exact", False) else "rk4"
        if kind == "exact":
            ref = exact_reference(problem, h_ref, T)
        elif kind == "rk4":
            ref = reference_solution(problem, h_ref, T)
        else:
            raise ValueError(f"unknown reference kind {reference!r}")
    else:
        ref = reference
        if abs(ref.h_ref - h_ref) > 1e-12 * h_ref:
            raise ValueError("reference step does not match h_ref")
    v_ref = _component(ref.y, component)

    hs = [h_ref * 2**m for m in ms]
    trajs = _map(_run, [(problem, scheme, h, T) for h in hs], workers)
    rows = []
    for m, h, tr in zip(ms, hs, trajs):
        if tr.overflow:
            rows.append(ConvergenceRow(h, m, UNSTABLE))
            continue
        proj = project_cubic(tr.t, tr.y, ref.t)
        err = error_metric(_component(proj.values, component), v_ref[: proj.n_covered])
        rows.append(ConvergenceRow(h, m, err, dropped=proj.dropped))
    for prev, row in zip(rows, rows[1:]):
        e1, e2 = prev.error, row.error
        if isinstance(e1, float) and isinstance(e2, float) and e1 > 0 and e2 > 0:
            row.observed_order = math.log(e1 / e2) / math.log(prev.h / row.h)

    report = ConvergenceReport(scheme.name, scheme.order, getattr(problem, "name", "?"),
                               h_ref, rows, reference=ref.generator)
    if check_reference and ref.generator == "RK4":
        coarse = reference_solution(problem, 2 * h_ref, T)
        n = len(coarse.t)
        diff = error_metric(_component(coarse.y, component), v_ref[: 2 * n - 1 : 2])
        finite = [r.error for r in rows if isinstance(r.error, float) and r.error > 0]
        report.reference_disagreement = diff
        report.reference_converged = bool(finite) and diff < 0.01 * max(finite)
        if not report.reference_converged:
            log.warning("reference at h_ref=%g may be unconverged (2h_ref disagreement %.3g)",
                        h_ref, diff)
    return report


# ---------------------------------------------------------------------------
# critical time step


@dataclass
class CriticalDtReport:
    scheme: str
    order: int
    problem: str
    dt0: float | None
    bracket: tuple[float, float] | None  # (finishing h, overflowing h)
    status: str = "bracketed"  # or "unconditionally stable"
    runs: int = 0
    history: list = field(default_factory=list)  # (h, overflowed) in run order

    @property
    def unconditionally_stable(self) -> bool:
        return self.status == UNCONDITIONAL


UNCONDITIONAL = "unconditionally stable"


def critical_dt(
    problem,
    scheme,
    h_hi: float,
    tol: float = 1e-2,
    *,
    cap: float | None = None,
    h_min: float | None = None,
    T: float | None = None,
) -> CriticalDtReport:
    """Largest step that completes the horizon without overflow, to relative ``tol``.

    Starts from ``h_hi``: doubles while runs finish (up to ``cap``, default
    T / k where k is the number of startup nodes), halves while they
    overflow, then bisects the finishing/overflowing pair.
    """
    if isinstance(scheme, str):
        scheme = SchemeSpec.parse(scheme)
    T = problem.T if T is None else T
    if cap is None:
        cap = T / max(scheme.steps, 1)
    if h_min is None:
        h_min = h_hi * 2.0**-30
    history = []

    def overflows(h: float) -> bool:
        tr = integrate(problem, scheme, h, T)
        history.append((h, tr.overflow))
        return tr.overflow

    name = getattr(problem, "name", "?")
    h = min(h_hi, cap)
    if overflows(h):
        bad = h
        good = None
        while good is None:
            h /= 2
            if h < h_min:
                raise RuntimeError(f"{scheme.name} overflows down to h={h_min:g}")
            if not overflows(h):
                good = h
            else:
                bad = h
    else:
        good = h
        bad = None
        while bad is None:
            if good >= cap:
                return CriticalDtReport(scheme.name, scheme.order, name, None, None,
                                        UNCONDITIONAL, len(history), history)
            h = min(2 * good, cap)
            if overflows(h):
                bad = h
            else:
                good = h

    while (bad - good) > tol * good:
        mid = 0.5 * (good + bad)
        if overflows(mid):
            bad = mid
        else:
            good = mid
    return CriticalDtReport(scheme.name, scheme.order, name, good, (good, bad),
                            runs=len(history), history=history)


# ---------------------------------------------------------------------------
# CSV


def _family_order(name: str) -> tuple[str, str]:
    fam = name.rstrip("0123456789")
    return fam, name[len(fam):]


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_convergence_csv(fh, reports, header_comment: str | None = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    fh.write("scheme,k,h,error,observed_order\n")
    for rep in reports:
        fam, k = _family_order(rep.scheme)
        for row in rep.rows:
            fh.write(f"{fam},{k},{_fmt(row.h)},{_fmt(row.error)},{_fmt(row.observed_order)}\n")


def write_critical_csv(fh, reports, header_comment: str | None = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    fh.write("scheme,k,problem,dt0,bracket_lo,bracket_hi\n")
    for rep in reports:
        fam, k = _family_order(rep.scheme)
        lo, hi = rep.bracket if rep.bracket else (None, None)
        dt0 = _fmt(rep.dt0) if rep.dt0 is not None else rep.status
        problem = f'"{rep.problem}"' if "," in rep.problem else rep.problem
        fh.write(f"{fam},{k},{problem},{dt0},{_fmt(lo)},{_fmt(hi)}\n")
