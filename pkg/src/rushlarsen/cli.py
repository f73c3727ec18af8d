"""Command-line entry point: ``rushlarsen {solve,stability,converge,critical-dt}``.

A run is described by a JSON or YAML file (``--config``) plus dotted
overrides (``--set stability.resolution=[50,40]``).  Every CSV starts with a
``# config-sha256: ...`` line so results can be traced back to their config.

Exit codes: 0 success, 2 bad configuration, 3 solve stopped by overflow,
4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import harness, stability
from .problems import (
    ModelLoadError,
    br_model,
    manufactured_membrane,
    manufactured_smooth,
    theta_split,
)
from .schemes import ALL_SCHEMES, SchemeSpec, integrate

log = logging.getLogger("rushlarsen")

EXIT_OK, EXIT_CONFIG, EXIT_OVERFLOW, EXIT_IO = 0, 2, 3, 4

# Axis ranges of the published stability pictures, keyed by order.
DEFAULT_RECTS = {2: (-6.0, 1.0, 0.0, 8.0), 3: (-250.0, 0.0, 0.0, 140.0), 4: (-90.0, 0.0, 0.0, 50.0)}
DEFAULT_THETAS = {
    2: [0.0, 0.5, 2 / 3, 0.7, 5 / 6, 2.0],
    3: [0.0, 0.85, 0.9, 0.95, 1.05, 1.1],
    4: [0.0, 0.85, 0.9, 0.95, 1.05, 1.1],
}

# Not part of the digest: they change where and how, not what.
NON_SEMANTIC = ("workers", "out", "figures")


class ConfigError(ValueError):
    pass


def _number(v):
    # accept "2/3" and friends wherever a float is expected
    if isinstance(v, str):
        try:
            return float(Fraction(v.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ValueError(f"not a number: {v!r}") from exc
    return v


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _scheme_list(v):
    if v is None:
        return None
    return [SchemeSpec.parse(s).name for s in v]


class StimulationConfig(_Section):
    amplitude: Optional[float] = None
    start: Optional[float] = None
    duration: Optional[float] = Field(default=None, ge=0)
    period: Optional[float] = Field(default=None, gt=0)


class StabilityConfig(_Section):
    schemes: list[str] = ["RL2", "RL3", "RL4"]
    thetas: Optional[list[float]] = None
    rect: Optional[tuple[float, float, float, float]] = None
    resolution: tuple[int, int] = (141, 81)
    search_limit: float = Field(default=-1e4, lt=0)

    @field_validator("thetas", mode="before")
    @classmethod
    def _thetas(cls, v):
        return None if v is None else [_number(x) for x in v]

    @field_validator("resolution")
    @classmethod
    def _res(cls, v):
        if min(v) < 2:
            raise ValueError("resolution must be at least 2 x 2")
        return v

    @field_validator("rect")
    @classmethod
    def _rect(cls, v):
        if v is not None and not (v[0] < v[1] and v[2] < v[3]):
            raise ValueError("rect is (re_min, re_max, im_min, im_max) with min < max")
        return v

    @field_validator("schemes")
    @classmethod
    def _schemes(cls, v):
        return _scheme_list(v)


class ConvergenceConfig(_Section):
    schemes: Optional[list[str]] = None
    h_ref: Optional[float] = Field(default=None, gt=0)
    m_list: list[int] = [5, 4, 3, 2]
    reference: Literal["auto", "exact", "rk4"] = "auto"
    check_reference: bool = True

    @field_validator("schemes")
    @classmethod
    def _schemes(cls, v):
        return _scheme_list(v)


class CriticalConfig(_Section):
    schemes: Optional[list[str]] = None
    h_hi: float = Field(default=0.3, gt=0)
    tol: float = Field(default=1e-2, gt=0, lt=1)
    cap: Optional[float] = Field(default=None, gt=0)

    @field_validator("schemes")
    @classmethod
    def _schemes(cls, v):
        return _scheme_list(v)


class RunConfig(_Section):
    problem: Literal["smooth", "membrane", "theta", "br"] = "smooth"
    params: Optional[str] = None
    tau_min: float = Field(default=1.0, gt=0)
    pulse: Literal["box", "smooth"] = "box"
    lam: float = -1.0
    theta: float = 0.0
    y0: float = 1.0
    stimulation: StimulationConfig = StimulationConfig()
    scheme: str = "RL2"
    h: float = Field(default=0.01, gt=0)
    T: Optional[float] = Field(default=None, gt=0)
    convergence: ConvergenceConfig = ConvergenceConfig()
    critical: CriticalConfig = CriticalConfig()
    stability: StabilityConfig = StabilityConfig()
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    out: str = "."
    figures: bool = False

    @field_validator("theta", "lam", mode="before")
    @classmethod
    def _fraction(cls, v):
        return _number(v)

    @field_validator("scheme")
    @classmethod
    def _scheme(cls, v):
        SchemeSpec.parse(v)
        return v.upper()

    def digest(self, command: str) -> str:
        data = self.model_dump(mode="json", exclude=set(NON_SEMANTIC))
        blob = json.dumps({"command": command, "config": data}, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# config assembly


def _read_config_file(path: str) -> dict:
    text = Path(path).read_text()  # OSError -> exit 4
    try:
        doc = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse ({exc})") from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _apply_override(doc: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"--set expects key=value, got {item!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"--set {key}: cannot parse value {raw!r}") from exc
    parts = key.strip().split(".")
    node = doc
    for p in parts[:-1]:
        nxt = node.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {key}: {p} is not a section")
        node = nxt
    node[parts[-1]] = value


def _loc(loc) -> str:
    out = ""
    for part in loc:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def build_config(config_path: str | None, overrides=(), **cli_values) -> RunConfig:
    doc = _read_config_file(config_path) if config_path else {}
    for item in overrides:
        _apply_override(doc, item)
    for k, v in cli_values.items():
        if v is not None:
            doc[k] = v
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        msgs = [f"{_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ConfigError("invalid configuration\n  " + "\n  ".join(msgs)) from exc


def make_problem(cfg: RunConfig):
    if cfg.problem == "smooth":
        p = manufactured_smooth()
    elif cfg.problem == "membrane":
        p = manufactured_membrane(cfg.tau_min, cfg.pulse)
    elif cfg.problem == "theta":
        p = theta_split(cfg.lam, cfg.theta, y0=cfg.y0)
    else:
        stim = {k: v for k, v in cfg.stimulation.model_dump().items() if v is not None}
        try:
            p = br_model(cfg.params, stimulation=stim or None)
        except ModelLoadError as exc:
            raise ConfigError(f"params: {exc}") from exc
    return p.with_horizon(cfg.T) if cfg.T is not None else p


# ---------------------------------------------------------------------------
# commands


def _header(cfg: RunConfig, command: str) -> str:
    return f"config-sha256: {cfg.digest(command)}"


def _open_out(cfg: RunConfig, name: str):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return (out / name).open("w", newline="")


def _scheme_names(names) -> list[SchemeSpec]:
    if names is None:
        return list(ALL_SCHEMES)
    return [SchemeSpec.parse(s) for s in names]


def cmd_solve(cfg: RunConfig) -> int:
    problem = make_problem(cfg)
    scheme = SchemeSpec.parse(cfg.scheme)
    tr = integrate(problem, scheme, cfg.h)
    fname = f"solve_{scheme.name}.csv"
    with _open_out(cfg, fname) as fh:
        fh.write(f"# {_header(cfg, 'solve')}\n")
        fh.write(",".join(["t"] + [f"y_{i + 1}" for i in range(tr.y.shape[1])]) + "\n")
        for t, row in zip(tr.t, tr.y):
            fh.write(",".join([repr(float(t))] + [_value(x) for x in row]) + "\n")
    if cfg.figures:
        from .plotting import plot_trajectory

        plot_trajectory(tr, Path(cfg.out) / fname.replace(".csv", ".png"), labels=problem.labels or None)
    if tr.overflow:
        log.error("%s overflowed at t=%g", scheme.name, tr.overflow_time)
        return EXIT_OVERFLOW
    log.info("%s: %d steps, %d (a,b) evaluations", scheme.name, len(tr.t) - 1, tr.n_evals)
    return EXIT_OK


def _value(x) -> str:
    if isinstance(x, complex) or np.iscomplexobj(x):
        return repr(complex(x))
    return repr(float(x))


def _theta_tag(theta: float) -> str:
    return f"{theta:.4g}".replace("-", "m")


def cmd_stability(cfg: RunConfig) -> int:
    sc = cfg.stability
    crossings = []
    for name in sc.schemes:
        scheme = SchemeSpec.parse(name)
        thetas = sc.thetas if sc.thetas is not None else DEFAULT_THETAS[scheme.order]
        rect = sc.rect or DEFAULT_RECTS[scheme.order]
        grids = []
        for theta in thetas:
            grid = stability.scan(scheme, theta, rect, sc.resolution, workers=cfg.workers)
            grids.append(grid)
            fname = f"stability_{scheme.name}_theta{_theta_tag(theta)}.csv"
            with _open_out(cfg, fname) as fh:
                grid.write_csv(fh, _header(cfg, "stability"))
            res = stability.real_axis_crossing(scheme, theta, sc.search_limit)
            crossings.append(res)
            log.info("%s theta=%.4g: %s %s", scheme.name, theta, res.status,
                     "" if res.crossing is None else f"{res.crossing:.6g}")
        if cfg.figures:
            from .plotting import plot_stability

            plot_stability(grids, Path(cfg.out) / f"stability_{scheme.name}.png",
                           [c for c in crossings if c.scheme == scheme.name])
    with _open_out(cfg, "crossings.csv") as fh:
        stability.write_crossings_csv(fh, crossings, _header(cfg, "stability"))
    return EXIT_OK


def _default_h_ref(problem, cfg: RunConfig) -> float:
    if cfg.convergence.h_ref is not None:
        return cfg.convergence.h_ref
    # finest row at h = T / 2^9 unless told otherwise
    return problem.T / 2 ** (9 + min(cfg.convergence.m_list))


def cmd_converge(cfg: RunConfig) -> int:
    problem = make_problem(cfg)
    cc = cfg.convergence
    h_ref = _default_h_ref(problem, cfg)
    kind = cc.reference
    if kind == "auto":
        kind = "exact" if problem.has_exact else "rk4"
    ref = (harness.exact_reference(problem, h_ref) if kind == "exact"
           else harness.reference_solution(problem, h_ref))
    reports = []
    for i, scheme in enumerate(_scheme_names(cc.schemes)):
        rep = harness.convergence_study(
            problem, scheme, h_ref, cc.m_list, reference=ref,
            check_reference=cc.check_reference and i == 0, workers=cfg.workers)
        reports.append(rep)
        if rep.reference_converged is False:
            log.warning("reference check failed: 2h_ref disagreement %.3g", rep.reference_disagreement)
    with _open_out(cfg, "convergence.csv") as fh:
        harness.write_convergence_csv(fh, reports, _header(cfg, "converge"))
    if cfg.figures:
        from .plotting import plot_convergence

        plot_convergence(reports, Path(cfg.out) / "convergence.png")
    return EXIT_OK


def cmd_critical(cfg: RunConfig) -> int:
    problem = make_problem(cfg)
    cc = cfg.critical
    reports = [harness.critical_dt(problem, s, cc.h_hi, cc.tol, cap=cc.cap)
               for s in _scheme_names(cc.schemes)]
    for r in reports:
        log.info("%s: %s", r.scheme, r.status if r.dt0 is None else f"dt0={r.dt0:.4g}")
    with _open_out(cfg, "critical_dt.csv") as fh:
        harness.write_critical_csv(fh, reports, _header(cfg, "critical-dt"))
    if cfg.figures:
        from .plotting import plot_critical

        plot_critical(reports, Path(cfg.out) / "critical_dt.png")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "stability": cmd_stability,
    "converge": cmd_converge,
    "critical-dt": cmd_critical,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rushlarsen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
        p.add_argument("--config", help="JSON or YAML run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry (dotted keys for sections)")
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--workers", type=int, help="worker processes")
        p.add_argument("--figures", action="store_true", default=None,
                       help="also render PNG figures next to the CSV files")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    try:
        cfg = build_config(args.config, args.set, out=args.out, workers=args.workers,
                           figures=args.figures)
        return COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except harness.ReferenceSolutionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
