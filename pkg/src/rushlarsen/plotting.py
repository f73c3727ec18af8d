"""PNG renderings of the CSV outputs.

Figures are built on bare ``Figure`` objects with the Agg canvas, so nothing
touches pyplot's global state and no display is needed.  The CSV files stay
the contract; these are conveniences.
"""

from __future__ import annotations

import functools
from pathlib import Path

import matplotlib as mpl
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def _styled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with mpl.rc_context(STYLE):
            return fn(*args, **kwargs)

    return wrapper


def _figure(width: float = 5.0, height: float | None = None) -> Figure:
    fig = Figure(figsize=(width, height or width * GOLDEN), layout="constrained")
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=150)
    return path


@_styled
def plot_trajectory(traj, path, labels=None, components=None) -> Path:
    """State components against time; by default only the last one (the potential)."""
    fig = _figure()
    ax = fig.add_subplot()
    y = np.real(traj.y)
    if components is None:
        components = [y.shape[1] - 1]
    for c in components:
        name = labels[c] if labels else f"y_{c + 1}"
        ax.plot(traj.t, y[:, c], lw=1, label=name)
    ax.set_xlabel("t")
    ax.set_title(f"{traj.scheme}, h = {traj.h:g}" + (" (overflow)" if traj.overflow else ""))
    ax.legend(frameon=False)
    return _save(fig, path)


@_styled
def plot_stability(grids, path, crossings=()) -> Path:
    """Stable sets (rho < 1) of several grids, one contour per theta."""
    fig = _figure(5.0, 4.0)
    ax = fig.add_subplot()
    colors = [f"C{i}" for i in range(10)]
    handles = []
    for i, g in enumerate(grids):
        col = colors[i % len(colors)]
        ax.contourf(g.re, g.im, g.stable.astype(float), levels=[0.5, 1.5], colors=[col], alpha=0.25)
        ax.contour(g.re, g.im, g.rho, levels=[1.0], colors=[col], linewidths=0.8)
        handles.append(ax.plot([], [], color=col, label=f"theta = {g.theta:.4g}")[0])
    for c in crossings:
        if c.status == "crossing" and grids and grids[0].rect[0] <= c.crossing <= grids[0].rect[1]:
            ax.plot([c.crossing], [0.0], "kv", ms=4)
    if grids:
        ax.set_title(grids[0].scheme)
    ax.axvline(0.0, color="0.5", lw=0.5)
    ax.set_xlabel("Re z")
    ax.set_ylabel("Im z")
    ax.legend(handles=handles, frameon=False, loc="upper left")
    return _save(fig, path)


@_styled
def plot_convergence(reports, path) -> Path:
    """log-log e(h) per scheme; unstable rows are skipped."""
    fig = _figure()
    ax = fig.add_subplot()
    for rep in reports:
        pts = [(r.h, r.error) for r in rep.rows if isinstance(r.error, float) and r.error > 0]
        if pts:
            h, e = zip(*pts)
            ax.loglog(h, e, "o-", ms=3, lw=1, label=rep.scheme)
    ax.set_xlabel("h")
    ax.set_ylabel("e(h)")
    ax.legend(frameon=False)
    return _save(fig, path)


@_styled
def plot_critical(reports, path) -> Path:
    """Bar chart of critical steps; unconditionally stable schemes are left out."""
    fig = _figure()
    ax = fig.add_subplot()
    done = [r for r in reports if r.dt0 is not None]
    ax.bar([r.scheme for r in done], [r.dt0 for r in done], color="C0")
    ax.set_ylabel("critical step")
    return _save(fig, path)
