"""Evaluation of the exponential-integrator functions phi_j.

    phi_0(z) = exp(z),    phi_{j+1}(z) = (phi_j(z) - 1/j!) / z

The recurrence cancels catastrophically near z = 0, so small arguments are
handled by the Taylor series ``sum_m z^m / (m+j)!``.  Both branches are
purely elementwise and shared by every entry point, which keeps the scalar
and diagonal (vector) evaluations bit-for-bit identical.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

__all__ = [
    "MAX_ORDER",
    "SWITCH_RADIUS",
    "PhiDomainError",
    "phi",
    "phi_array",
    "phi_diag",
    "phi_diag_orders",
]

MAX_ORDER = 4

#: |z| below which the truncated series is used.
SWITCH_RADIUS = 1.0

# Terms z^1..z^SERIES_DEGREE; the first dropped term is below 2e-20 for |z| < 1.
SERIES_DEGREE = 20

_INV_FACT = [1.0 / math.factorial(n) for n in range(SERIES_DEGREE + MAX_ORDER + 2)]
# _SERIES_COEFFS[j][m-1] = 1/(m+j)!
_SERIES_COEFFS = [np.array(_INV_FACT[j + 1 : j + 1 + SERIES_DEGREE]) for j in range(MAX_ORDER + 1)]


class PhiDomainError(ValueError):
    """Raised for non-finite arguments or unsupported orders."""


def _series(z: np.ndarray, orders: Sequence[int]) -> list[np.ndarray]:
    pows = np.multiply.accumulate(np.repeat(z[..., None], SERIES_DEGREE, axis=-1), axis=-1)
    return [_INV_FACT[j] + (pows * _SERIES_COEFFS[j]).sum(axis=-1) for j in orders]


def _closed(z: np.ndarray, orders: Sequence[int]) -> list[np.ndarray]:
    out = {}
    if orders[0] == 0:
        out[0] = np.exp(z)
    # expm1 keeps phi_1 accurate right down to the switch radius
    p = np.expm1(z) / z
    out[1] = p
    for i in range(1, orders[-1]):
        p = (p - _INV_FACT[i]) / z
        out[i + 1] = p
    return [out[j] for j in orders]


def _phi_orders(z: np.ndarray, orders: Sequence[int]) -> list[np.ndarray]:
    for j in orders:
        if not (isinstance(j, (int, np.integer)) and 0 <= j <= MAX_ORDER):
            raise PhiDomainError(f"phi order must be an integer in [0, {MAX_ORDER}], got {j!r}")
    z = np.asarray(z)
    if z.dtype.kind not in "fc":
        z = z.astype(float)
    if not np.isfinite(z).all():
        raise PhiDomainError("phi argument must be finite")
    small = np.abs(z) < SWITCH_RADIUS
    with np.errstate(over="ignore", invalid="ignore"):
        if small.all():
            return _series(z, orders)
        if not small.any():
            return _closed(z, orders)
        ser = _series(np.where(small, z, 0), orders)
        clo = _closed(np.where(small, 1, z), orders)
        return [np.where(small, s, c) for s, c in zip(ser, clo)]


def phi_array(j: int, z) -> np.ndarray:
    """Elementwise phi_j on an array of real or complex arguments."""
    return _phi_orders(z, (j,))[0]


def phi(j: int, z):
    """phi_j(z) for a single real or complex scalar.

    Returns a Python ``float`` for real input and ``complex`` otherwise.
    ``phi(j, 0)`` is exactly ``1/j!``.
    """
    value = phi_array(j, np.array([z]))[0]
    return complex(value) if np.iscomplexobj(value) else float(value)


def phi_diag(j: int, d, h: float) -> np.ndarray:
    """phi_j(h * D) for the diagonal matrix D = diag(d), returned as its diagonal."""
    return phi_array(j, np.asarray(d) * h)


def phi_diag_orders(jmax: int, d, h: float) -> list[np.ndarray]:
    """[phi_1(hD), ..., phi_jmax(hD)] diagonals, sharing one pass over the arguments."""
    return _phi_orders(np.asarray(d) * h, tuple(range(1, jmax + 1)))
