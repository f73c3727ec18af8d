"""Split ODE problems y' = a(t, y) y + b(t, y) with a diagonal stabilizer.

Problems are plain picklable objects so independent runs can be farmed out
to worker processes.
"""

from __future__ import annotations

import copy
import json
import math
import logging
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

__all__ = [
    "BeelerReuter",
    "ManufacturedMembrane",
    "ManufacturedSmooth",
    "ModelLoadError",
    "SplitProblem",
    "ThetaSplit",
    "br_model",
    "default_br_params_path",
    "load_model_params",
    "manufactured_membrane",
    "manufactured_smooth",
    "theta_split",
]

log = logging.getLogger(__name__)


class SplitProblem:
    """Base class for a problem given by its splitting.

    Subclasses implement ``eval(t, y) -> (a, b)`` where ``a`` is the length-N
    diagonal of the stabilizer.  ``exact(t)`` is overridden when a closed-form
    solution exists and ``rhs(t, y)`` when f can be evaluated directly,
    independently of the splitting.
    """

    name = "problem"
    labels: tuple[str, ...] = ()
    units: tuple[str, ...] = ()
    has_exact = False

    def __init__(self, y0, T: float):
        self.y0 = np.atleast_1d(np.asarray(y0))
        self.T = float(T)

    @property
    def dim(self) -> int:
        return self.y0.size

    def eval(self, t: float, y: np.ndarray):
        raise NotImplementedError

    def f(self, t: float, y: np.ndarray) -> np.ndarray:
        a, b = self.eval(t, y)
        return a * y + b

    def rhs(self, t: float, y: np.ndarray) -> np.ndarray:
        return self.f(t, y)

    def exact(self, t):
        raise NotImplementedError(f"{self.name} has no closed-form solution")

    def with_horizon(self, T: float) -> "SplitProblem":
        other = copy.copy(self)
        other.T = float(T)
        return other

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} N={self.dim} T={self.T:g}>"


# ---------------------------------------------------------------------------
# manufactured problems


class ManufacturedSmooth(SplitProblem):
    """Scalar problem with exact solution exp(sin t) and a = -(2 + cos t).

    b(t) is manufactured so that exp(sin t) solves y' = a y + b.
    """

    name = "smooth"
    labels = ("y",)
    units = ("",)
    has_exact = True

    def __init__(self, T: float = 6.0):
        super().__init__([1.0], T)

    def eval(self, t, y):
        a = -(2.0 + np.cos(t))
        ys = np.exp(np.sin(t))
        return np.array([a]), np.array([np.cos(t) * ys - a * ys])

    def exact(self, t):
        return np.exp(np.sin(np.asarray(t, dtype=float)))[..., None]


class ManufacturedMembrane(SplitProblem):
    """Two-variable gate/potential model with tunable gate stiffness.

    w' = (w_inf(v) - w) / tau(v),   v' = -w (v - E) + I_st(t)

    with w_inf(v) = 1/(1 + e^{-4v}), tau(v) = tau_min + 1/(1 + v^2), E = -1
    and a stimulus I_st = 2 on [0, 1].  State layout is (w, v).

    The box stimulus makes b jump at t = 1, which caps every multistep
    scheme at first order.  ``pulse="smooth"`` swaps in a Gaussian pulse of
    the same charge (centre 0.5, width 0.25) for order measurements.
    """

    labels = ("w", "v")
    units = ("", "")
    E = -1.0

    PULSE_CENTRE = 0.5
    PULSE_WIDTH = 0.25

    def __init__(self, tau_min: float = 1.0, T: float = 10.0, pulse: str = "box"):
        if not tau_min > 0:
            raise ValueError("tau_min must be positive")
        if pulse not in ("box", "smooth"):
            raise ValueError(f"pulse must be 'box' or 'smooth', got {pulse!r}")
        super().__init__([0.0, -0.5], T)
        self.tau_min = float(tau_min)
        self.pulse = pulse
        self.name = f"membrane(tau_min={tau_min:g})" if pulse == "box" else f"membrane(tau_min={tau_min:g}, smooth)"

    def w_inf(self, v):
        return 1.0 / (1.0 + np.exp(-4.0 * v))

    def tau(self, v):
        return self.tau_min + 1.0 / (1.0 + v * v)

    def stimulus(self, t):
        if self.pulse == "box":
            return 2.0 if 0.0 <= t <= 1.0 else 0.0
        s = self.PULSE_WIDTH
        x = (t - self.PULSE_CENTRE) / s
        return 2.0 / (s * math.sqrt(2.0 * math.pi)) * math.exp(-0.5 * x * x)

    def eval(self, t, y):
        w, v = y
        tv = self.tau(v)
        return (
            np.array([-1.0 / tv, 0.0]),
            np.array([self.w_inf(v) / tv, -w * (v - self.E) + self.stimulus(t)]),
        )

    def rhs(self, t, y):
        w, v = y
        return np.array([
            (self.w_inf(v) - w) / self.tau(v),
            -w * (v - self.E) + self.stimulus(t),
        ])


class ThetaSplit(SplitProblem):
    """Dahlquist test y' = lam y split as a = theta lam, b = (1 - theta) lam y."""

    def __init__(self, lam, theta: float, y0=1.0, T: float = 10.0):
        dtype = complex if np.iscomplexobj(lam) or np.iscomplexobj(y0) else float
        super().__init__(np.asarray(y0, dtype=dtype), T)
        self.lam = lam
        self.theta = theta
        self._a = np.full(self.dim, theta * lam, dtype=dtype)
        self._rest = (1.0 - theta) * lam
        self.name = f"theta(lam={lam:g},theta={theta:g})"
        self.labels = tuple(f"y_{i + 1}" for i in range(self.dim))

    has_exact = True

    def eval(self, t, y):
        return self._a, self._rest * y

    def rhs(self, t, y):
        return self.lam * y

    def exact(self, t):
        return np.exp(self.lam * np.asarray(t, dtype=float))[..., None] * self.y0


def manufactured_smooth() -> ManufacturedSmooth:
    return ManufacturedSmooth()


def manufactured_membrane(tau_min: float = 1.0, pulse: str = "box") -> ManufacturedMembrane:
    return ManufacturedMembrane(tau_min, pulse=pulse)


def theta_split(lam, theta: float, y0=1.0, T: float = 10.0) -> ThetaSplit:
    return ThetaSplit(lam, theta, y0, T)


# ---------------------------------------------------------------------------
# Beeler-Reuter membrane model from a parameter document

RATE_KEYS = ("c1", "c2", "c3", "c4", "c5", "c6", "c7")

CURRENT_TEMPLATES = {
    # (g_na m^3 h j + g_nac) (v - e_na)
    "br_sodium": ("g_na", "g_nac", "e_na"),
    # g_s d f (v - e_s),  e_s = e_s0 - e_s_log ln([Ca])
    "br_slow_inward": ("g_s", "e_s0", "e_s_log"),
    # scale (4 (e^{0.04(v+85)} - 1) / (e^{0.08(v+53)} + e^{0.04(v+53)})
    #        + 0.2 (v+23) / (1 - e^{-0.04(v+23)}))
    "br_time_independent_k": ("scale", "r1", "k1", "v1", "k2", "k3", "v2", "r2", "v3", "k4"),
    # x1 g (e^{k(v+v1)} - 1) / e^{k(v+v2)}
    "br_time_dependent_k": ("g", "k", "v1", "v2"),
}
CURRENT_GATES = {
    "br_sodium": ("m", "h", "j"),
    "br_slow_inward": ("d", "f"),
    "br_time_independent_k": (),
    "br_time_dependent_k": ("x1",),
}
CONCENTRATION_TEMPLATES = {
    # d[Ca]/dt = -release I_s + uptake (ca_ref - [Ca])
    "br_calcium": ("release", "uptake", "ca_ref"),
}


def _constants_schema(names):
    return {
        "type": "object",
        "properties": {n: {"type": "number"} for n in names},
        "required": list(names),
        "additionalProperties": False,
    }


_RATE_SCHEMA = _constants_schema(RATE_KEYS)

MODEL_SCHEMA = {
    "type": "object",
    "required": [
        "name", "p", "q", "gates", "currents", "concentration_dynamics",
        "rest_state", "stimulation",
    ],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "source": {"type": "string"},
        "p": {"type": "integer", "minimum": 1},
        "q": {"type": "integer", "minimum": 0},
        "capacitance": {"type": "number", "exclusiveMinimum": 0},
        "gates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "alpha", "beta"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "alpha": _RATE_SCHEMA,
                    "beta": _RATE_SCHEMA,
                },
            },
        },
        "currents": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "template", "constants"],
                "additionalProperties": False,
                "properties": {
                    "name": {"type": "string"},
                    "template": {"enum": sorted(CURRENT_TEMPLATES)},
                    "constants": {"type": "object", "additionalProperties": {"type": "number"}},
                },
            },
        },
        "concentration_dynamics": {
            "type": "object",
            "required": ["template", "constants"],
            "additionalProperties": False,
            "properties": {
                "template": {"enum": sorted(CONCENTRATION_TEMPLATES)},
                "constants": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
        "rest_state": {"type": "array", "items": {"type": "number"}},
        "stimulation": {
            "type": "object",
            "required": ["amplitude", "start", "duration"],
            "additionalProperties": False,
            "properties": {
                "amplitude": {"type": "number"},
                "start": {"type": "number"},
                "duration": {"type": "number", "minimum": 0},
                "period": {"type": ["number", "null"], "exclusiveMinimum": 0},
            },
        },
        "horizon": {"type": "number", "exclusiveMinimum": 0},
    },
}


class ModelLoadError(ValueError):
    """The model parameter document is invalid."""


def _field_path(err: jsonschema.ValidationError) -> str:
    path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
    return path.lstrip(".") or "<root>"


def validate_model_params(doc: dict) -> dict:
    """Check a parameter document against the schema and cross-field rules."""
    validator = jsonschema.Draft202012Validator(MODEL_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ModelLoadError(f"{_field_path(e)}: {e.message}")
    if len(doc["gates"]) != doc["p"]:
        raise ModelLoadError(f"gates: expected p={doc['p']} entries, got {len(doc['gates'])}")
    n = doc["p"] + doc["q"] + 1
    if len(doc["rest_state"]) != n:
        raise ModelLoadError(f"rest_state: expected {n} values (p + q + 1), got {len(doc['rest_state'])}")
    gate_names = {g["name"] for g in doc["gates"]}
    for i, cur in enumerate(doc["currents"]):
        tmpl = cur["template"]
        missing = set(CURRENT_TEMPLATES[tmpl]) - set(cur["constants"])
        extra = set(cur["constants"]) - set(CURRENT_TEMPLATES[tmpl])
        if missing or extra:
            bad = sorted(missing) or sorted(extra)
            raise ModelLoadError(f"currents[{i}].constants: bad or missing constant(s) {bad} for {tmpl}")
        need = set(CURRENT_GATES[tmpl]) - gate_names
        if need:
            raise ModelLoadError(f"currents[{i}]: template {tmpl} needs gate(s) {sorted(need)}")
    conc = doc["concentration_dynamics"]
    want = set(CONCENTRATION_TEMPLATES[conc["template"]])
    if set(conc["constants"]) != want:
        raise ModelLoadError(f"concentration_dynamics.constants: expected {sorted(want)}")
    if doc["q"] != 1:
        raise ModelLoadError("q: the calcium template models exactly one concentration")
    return doc


def load_model_params(path) -> dict:
    """Read and validate a model parameter document (JSON)."""
    path = Path(path)
    with path.open() as fh:  # OSError propagates as an I/O error
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelLoadError(f"{path}: not valid JSON ({exc})") from exc
    return validate_model_params(doc)


def default_br_params_path() -> Path:
    return Path(str(resources.files("rushlarsen") / "data" / "beeler_reuter_1977.json"))


def _exp(x: float) -> float:
    # math.exp without the OverflowError; nan propagates
    return math.exp(x) if x < 709.0 else (math.inf if x == x else x)


def _expm1(x: float) -> float:
    return math.expm1(x) if x < 709.0 else (math.inf if x == x else x)


class RateTable:
    """Exponential-rational rates (c1 e^{c2(v+c3)} + c4 (v+c5)) / (e^{c6(v+c3)} + c7).

    ``coeffs`` has shape (n, 7).  Rows of the form c4 (v+c3) / (e^{c6(v+c3)} - 1)
    are evaluated as (c4/c6) x / expm1(x), which removes the 0/0 point.
    Evaluation is scalar Python arithmetic: for a handful of rates it is much
    cheaper than a chain of small numpy operations.
    """

    def __init__(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.ndim != 2 or coeffs.shape[1] != 7:
            raise ValueError(f"rate table must have shape (n, 7), got {coeffs.shape}")
        self.coeffs = coeffs
        self._rows = []
        for c1, c2, c3, c4, c5, c6, c7 in coeffs.tolist():
            if c1 == 0.0 and c7 == -1.0 and c3 == c5 and c6 != 0.0:
                self._rows.append((True, c4 / c6, c3, c6, 0.0, 0.0, 0.0))
            else:
                self._rows.append((False, c1, c2, c3, c4, c5, c6, c7))

    def __len__(self) -> int:
        return len(self._rows)

    def values(self, v: float) -> list[float]:
        out = []
        for row in self._rows:
            if row[0]:
                _, scale, c3, c6 = row[:4]
                x = c6 * (v + c3)
                out.append(scale * (x / _expm1(x) if x != 0.0 else 1.0))
            else:
                _, c1, c2, c3, c4, c5, c6, c7 = row
                num = (c1 * _exp(c2 * (v + c3)) if c1 else 0.0) + (c4 * (v + c5) if c4 else 0.0)
                den = _exp(c6 * (v + c3)) + c7 if c6 else 1.0 + c7
                try:
                    out.append(num / den)
                except ZeroDivisionError:
                    out.append(math.copysign(math.inf, num) if num else math.nan)
        return out

    def __call__(self, v: float) -> np.ndarray:
        return np.array(self.values(float(v)))


def rate_function(coeffs, v: float) -> np.ndarray:
    """Evaluate a (n, 7) table of exponential-rational rates at potential v."""
    return RateTable(coeffs)(v)


def _x_over_one_minus_exp(x: float) -> float:
    # x / (1 - e^{-x}), limit 1 at x = 0
    return x / -_expm1(-x) if x != 0.0 else 1.0


class BeelerReuter(SplitProblem):
    """Beeler-Reuter ventricular membrane model built from a parameter document.

    State layout is (gates..., [Ca], v).  Gates relax as
    w' = alpha (1 - w) - beta w, split as a = -(alpha + beta), b = alpha.
    Times are in ms and the potential in mV.
    """

    def __init__(self, params: dict, stimulation: dict | None = None, T: float | None = None):
        params = validate_model_params(params)
        self.params = params
        self.name = params["name"]
        p, q = params["p"], params["q"]
        self.p = p
        self.ca_index = p
        self.v_index = p + q
        gates = params["gates"]
        self.gate_index = {g["name"]: i for i, g in enumerate(gates)}
        alpha_c = [[g["alpha"][k] for k in RATE_KEYS] for g in gates]
        beta_c = [[g["beta"][k] for k in RATE_KEYS] for g in gates]
        self.rate_coeffs = np.array(alpha_c + beta_c, dtype=float)
        self._rates = RateTable(self.rate_coeffs)
        self.capacitance = params.get("capacitance", 1.0)
        stim = dict(params["stimulation"])
        if stimulation:
            stim.update(stimulation)
        stim.setdefault("period", None)
        self.stimulation = stim
        self.currents = {c["template"]: c["constants"] for c in params["currents"]}
        self.calcium = params["concentration_dynamics"]["constants"]
        self.labels = tuple(g["name"] for g in gates) + ("Ca", "v")
        self.units = ("",) * p + ("mol/L", "mV")
        self._warned_ca = False
        super().__init__(np.array(params["rest_state"], dtype=float),
                         T if T is not None else params.get("horizon", 400.0))

    def gate_rates(self, v: float):
        """(alpha, beta) arrays for every gate at potential v."""
        r = self._rates(float(v))
        return r[: self.p], r[self.p:]

    def stimulus(self, t: float) -> float:
        s = self.stimulation
        start, period = s["start"], s["period"]
        if period and t >= start:
            t = start + (t - start) % period
        return s["amplitude"] if start <= t < start + s["duration"] else 0.0

    def ionic_currents(self, y: np.ndarray) -> dict:
        """Individual membrane currents (uA/cm^2) at state y."""
        y = y.tolist() if isinstance(y, np.ndarray) else list(y)
        v = y[self.v_index]
        gi = self.gate_index
        out = {}
        c = self.currents.get("br_sodium")
        if c:
            out["I_Na"] = (c["g_na"] * y[gi["m"]] ** 3 * y[gi["h"]] * y[gi["j"]] + c["g_nac"]) * (v - c["e_na"])
        c = self.currents.get("br_slow_inward")
        if c:
            ca = y[self.ca_index]
            # ln of a non-positive concentration: let the run blow up
            e_s = c["e_s0"] - c["e_s_log"] * math.log(ca) if ca > 0 else math.nan
            out["I_s"] = c["g_s"] * y[gi["d"]] * y[gi["f"]] * (v - e_s)
        c = self.currents.get("br_time_independent_k")
        if c:
            e = _exp
            part1 = c["r1"] * _expm1(c["k1"] * (v + c["v1"])) / (
                e(c["k2"] * (v + c["v2"])) + e(c["k3"] * (v + c["v2"])))
            part2 = c["r2"] / c["k4"] * _x_over_one_minus_exp(c["k4"] * (v + c["v3"]))
            out["I_K1"] = c["scale"] * (part1 + part2)
        c = self.currents.get("br_time_dependent_k")
        if c:
            out["I_x1"] = (y[gi["x1"]] * c["g"] * _expm1(c["k"] * (v + c["v1"]))
                           / _exp(c["k"] * (v + c["v2"])))
        return out

    def _nongate(self, t, y):
        try:
            cur = self.ionic_currents(y)
        except ArithmeticError:
            # the state has left every physical range; let the step blow up
            return math.nan, math.nan
        ca = y[self.ca_index]
        if ca < 0 and not self._warned_ca:
            log.warning("negative calcium concentration %.3g at t=%.4g", ca, t)
            self._warned_ca = True
        k = self.calcium
        dca = -k["release"] * cur.get("I_s", 0.0) + k["uptake"] * (k["ca_ref"] - ca)
        dv = (-sum(cur.values()) + self.stimulus(t)) / self.capacitance
        return dca, dv

    def eval(self, t, y):
        p = self.p
        y = y.tolist()
        r = self._rates.values(y[self.v_index])
        dca, dv = self._nongate(t, y)
        a = [-(r[i] + r[p + i]) for i in range(p)] + [0.0, 0.0]
        b = r[:p] + [dca, dv]
        return np.array(a), np.array(b)

    def rhs(self, t, y):
        p = self.p
        y = y.tolist()
        r = self._rates.values(y[self.v_index])
        w = y[:p]
        dca, dv = self._nongate(t, y)
        return np.array([r[i] * (1.0 - w[i]) - r[p + i] * w[i] for i in range(p)] + [dca, dv])


def br_model(params=None, *, stimulation: dict | None = None, T: float | None = None) -> BeelerReuter:
    """Beeler-Reuter problem from a parameter document, a path to one, or the shipped file."""
    if params is None:
        params = default_br_params_path()
    if isinstance(params, (str, Path)):
        params = load_model_params(params)
    return BeelerReuter(params, stimulation=stimulation, T=T)
