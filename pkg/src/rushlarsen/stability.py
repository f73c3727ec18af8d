"""Linear stability of the schemes on the theta-split Dahlquist test problem.

For y' = lam y split as a = theta lam, b = (1 - theta) lam y, one step of any
RL or EAB scheme is a linear recurrence in the last k states whose
coefficients depend on z = lam h only.  The recurrence is recovered by
stepping the scheme itself on the k unit histories, with h = 1 so that the
step sees a = theta z and b = (1 - theta) z y.  Many z values are probed at
once by letting the grid points play the role of the state components.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .schemes import History, SchemeSpec, _eab_update, _rl_update

__all__ = [
    "CrossingResult",
    "RecurrenceMatrix",
    "StabilityDomainError",
    "StabilityGrid",
    "companion_matrices",
    "probe_recurrence",
    "real_axis_crossing",
    "recurrence_rows",
    "scan",
    "spectral_radius",
    "spectral_radii",
]


class StabilityDomainError(ValueError):
    """Non-finite recurrence coefficients."""


@dataclass(frozen=True)
class RecurrenceMatrix:
    """Companion matrix mapping (y_{n-k+1}, ..., y_n) to (y_{n-k+2}, ..., y_{n+1})."""

    scheme: SchemeSpec
    theta: float
    z: complex
    entries: np.ndarray

    @property
    def k(self) -> int:
        return self.entries.shape[0]

    @property
    def last_row(self) -> np.ndarray:
        return self.entries[-1]

    def step(self, history) -> complex:
        """Next value from ``history`` = (y_{n-k+1}, ..., y_n)."""
        return complex(self.last_row @ np.asarray(history, dtype=complex))


def _check_scheme(scheme) -> SchemeSpec:
    if isinstance(scheme, str):
        scheme = SchemeSpec.parse(scheme)
    if scheme.family not in ("RL", "EAB"):
        raise ValueError(f"stability analysis covers RL and EAB schemes, not {scheme.name}")
    return scheme


def _test_step(scheme: SchemeSpec, theta: float, z: np.ndarray, ys) -> np.ndarray:
    # one scheme step with h = 1 on histories ys (oldest first), one per z
    a = theta * z
    hist = History(scheme.order)
    for t, y in enumerate(ys):
        hist.push(float(t), y, a, (1.0 - theta) * z * y)
    with np.errstate(all="ignore"):
        if scheme.family == "RL":
            return _rl_update(scheme.order, hist, 1.0, scheme.constant_a)
        return _eab_update(scheme.order, hist, 1.0)


def recurrence_rows(scheme, theta: float, z) -> np.ndarray:
    """Last companion rows for an array of z, shape ``z.shape + (k,)``."""
    scheme = _check_scheme(scheme)
    z = np.asarray(z, dtype=complex)
    flat = z.ravel()
    k = scheme.order
    zero = np.zeros_like(flat)
    one = np.ones_like(flat)
    cols = [
        _test_step(scheme, theta, flat, [one if j == i else zero for j in range(k)])
        for i in range(k)
    ]
    return np.stack(cols, axis=-1).reshape(z.shape + (k,))


def companion_matrices(rows: np.ndarray) -> np.ndarray:
    k = rows.shape[-1]
    mats = np.zeros(rows.shape[:-1] + (k, k), dtype=complex)
    idx = np.arange(k - 1)
    mats[..., idx, idx + 1] = 1.0
    mats[..., -1, :] = rows
    return mats


def probe_recurrence(scheme, theta: float, z: complex) -> RecurrenceMatrix:
    scheme = _check_scheme(scheme)
    rows = recurrence_rows(scheme, theta, np.array([z]))
    return RecurrenceMatrix(scheme, theta, complex(z), companion_matrices(rows)[0])


def spectral_radii(mats: np.ndarray) -> np.ndarray:
    """Largest eigenvalue modulus of each matrix in a stack; inf where non-finite."""
    mats = np.asarray(mats)
    finite = np.isfinite(mats).all(axis=(-2, -1))
    out = np.full(mats.shape[:-2], np.inf)
    if finite.any():
        out[finite] = np.abs(np.linalg.eigvals(mats[finite])).max(axis=-1)
    return out


def spectral_radius(M) -> float:
    entries = M.entries if isinstance(M, RecurrenceMatrix) else np.asarray(M)
    if not np.isfinite(entries).all():
        raise StabilityDomainError("recurrence matrix has non-finite entries")
    return float(np.abs(np.linalg.eigvals(entries)).max())


def rho(scheme, theta: float, z) -> np.ndarray:
    """Spectral radius for an array of z values."""
    return spectral_radii(companion_matrices(recurrence_rows(scheme, theta, z)))


# ---------------------------------------------------------------------------


@dataclass
class StabilityGrid:
    scheme: str
    theta: float
    rect: tuple[float, float, float, float]  # re_min, re_max, im_min, im_max
    resolution: tuple[int, int]  # n_re, n_im
    re: np.ndarray
    im: np.ndarray
    rho: np.ndarray  # shape (n_im, n_re)

    @property
    def stable(self) -> np.ndarray:
        return self.rho < 1.0

    def rows(self):
        """(re, im, rho, stable) with re varying fastest, from (re_min, im_min)."""
        for i, y in enumerate(self.im):
            for j, x in enumerate(self.re):
                r = self.rho[i, j]
                yield float(x), float(y), float(r), bool(r < 1.0)

    def write_csv(self, fh, header_comment: str | None = None) -> None:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("re,im,rho,stable\n")
        for x, y, r, s in self.rows():
            fh.write(f"{x!r},{y!r},{r!r},{int(s)}\n")


def _rho_chunk(args):
    scheme, theta, z = args
    return rho(scheme, theta, z)


def scan(scheme, theta: float, rect, resolution=(200, 200), workers: int = 1) -> StabilityGrid:
    """Spectral radius on a uniform grid covering ``rect`` = (re_min, re_max, im_min, im_max)."""
    scheme = _check_scheme(scheme)
    re_min, re_max, im_min, im_max = map(float, rect)
    n_re, n_im = map(int, resolution)
    if n_re < 2 or n_im < 2:
        raise ValueError("resolution must be at least 2 x 2")
    if not (re_min < re_max and im_min < im_max):
        raise ValueError(f"empty rectangle {rect}")
    re = np.linspace(re_min, re_max, n_re)
    im = np.linspace(im_min, im_max, n_im)
    z = (re[None, :] + 1j * im[:, None]).ravel()
    if workers > 1 and z.size > 1:
        chunks = np.array_split(z, min(workers * 4, z.size))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_rho_chunk, [(scheme, theta, c) for c in chunks]))
        radii = np.concatenate(parts)
    else:
        radii = rho(scheme, theta, z)
    return StabilityGrid(
        scheme=scheme.name,
        theta=theta,
        rect=(re_min, re_max, im_min, im_max),
        resolution=(n_re, n_im),
        re=re,
        im=im,
        rho=radii.reshape(n_im, n_re),
    )


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossingResult:
    """Outcome of the leftward search along the negative real axis.

    ``status`` is ``"crossing"`` (``crossing`` holds x*), ``"none"`` (stable
    down to the search limit) or ``"degenerate"`` (unstable right at 0-).
    """

    scheme: str
    theta: float
    status: str
    crossing: float | None = None
    bracket: tuple[float, float] | None = None  # (stable x, unstable x)
    search_limit: float | None = None

    def __float__(self) -> float:
        if self.crossing is None:
            raise ValueError(f"no crossing ({self.status})")
        return self.crossing


MARCH_START = -1e-3


def real_axis_crossing(
    scheme,
    theta: float,
    search_limit: float = -1e4,
    *,
    rel_tol: float = 1e-4,
    rho_tol: float = 1e-9,
) -> CrossingResult:
    """Leftmost x* < 0 such that the scheme is stable on (x*, 0).

    Marches left from x = -1e-3 doubling each time, then bisects the first
    stable/unstable pair until the bracket is within ``rel_tol`` of |x*|.
    A point counts as stable when rho <= 1 + ``rho_tol``.
    """
    scheme = _check_scheme(scheme)
    if not search_limit < 0:
        raise ValueError("search_limit must be negative")

    def stable(x: float) -> bool:
        return bool(rho(scheme, theta, np.array([x]))[0] <= 1.0 + rho_tol)

    common = dict(scheme=scheme.name, theta=theta, search_limit=search_limit)
    x = max(MARCH_START, search_limit)
    if not stable(x):
        return CrossingResult(status="degenerate", **common)
    good = x
    while good > search_limit:
        x = max(2.0 * good, search_limit)
        if not stable(x):
            bad = x
            break
        good = x
    else:
        return CrossingResult(status="none", **common)

    while abs(bad - good) > rel_tol * abs(good):
        mid = 0.5 * (good + bad)
        if stable(mid):
            good = mid
        else:
            bad = mid
    return CrossingResult(status="crossing", crossing=0.5 * (good + bad), bracket=(good, bad), **common)


def write_crossings_csv(fh, results, header_comment: str | None = None) -> None:
    if header_comment:
        fh.write(f"# {header_comment}\n")
    fh.write("scheme,k,theta,crossing\n")
    for r in results:
        fam = r.scheme.rstrip("0123456789")
        k = r.scheme[len(fam):]
        value = repr(r.crossing) if r.status == "crossing" else r.status
        fh.write(f"{fam},{k},{r.theta!r},{value}\n")
