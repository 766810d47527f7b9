"""Experiment driver: exact solutions, configs, time loops, CSV output.

Three experiment families are exposed both as library functions and through
the command line (`entrolax integrate|burgers-study|sweep`):

* a single-step Burgers study recording entropy and residual against the
  number of nonlinear iterations,
* long-time integration of KdV/BBM traveling waves with configurable solver
  tolerances and relaxation, and
* a tolerance sweep producing one CSV per solver setting.

Configs are flat `key = value` text with dotted section prefixes; the
resolved config is echoed into the CSV header and a companion .meta file so
every result is reproducible from its own output.
"""

import argparse
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from . import integrators, nonlinear
from .linalg import SingularMatrixError
from .nonlinear import NonConvergenceError, SolverConfig
from .operators import grid_nodes, make_central_fd, make_fourier
from .relaxation import RelaxationError, RelaxationPolicy
from .semidisc import (Grid, make_bbm_central, make_bbm_split, make_burgers,
                       make_kdv)

EQUATIONS = ("burgers", "kdv", "bbm-split", "bbm-central")
SCHEMES = ("midpoint", "lobatto_iiic", "avf")
FAMILIES = ("central-fd", "fourier")
STUDY_VARIANTS = ("newton", "newton_type", "inexact_entropy")

INVARIANT_KINDS = {
    "burgers": ("mass", "quadratic_entropy"),
    "kdv": ("mass", "quadratic_entropy"),
    "bbm-split": ("mass", "j2"),
    "bbm-central": ("mass", "j3", "hamiltonian"),
}

FULL_SCALE_T_END = {"burgers": 1.0, "kdv": 1000.0, "bbm-split": 1000.0, "bbm-central": 1000.0}


class ConfigError(Exception):
    """Invalid experiment configuration."""


# ---------------------------------------------------------------------------
# exact solutions and error metric

def _wrap(z, length):
    return z - length * np.round(z / length)


def exact_kdv_soliton(x, t, c, domain):
    """Soliton c/2 sech^2(sqrt(c)/2 (x - c t)) reduced periodically into domain."""
    if c <= 0.0:
        raise ValueError("soliton speed must be positive")
    x_min, x_max = domain
    z = _wrap(np.asarray(x, dtype=float) - c * t, x_max - x_min)
    return 0.5 * c / np.cosh(0.5 * np.sqrt(c) * z) ** 2


def exact_bbm_wave(x, t, c, domain):
    """Traveling wave A sech^2(K (x - c t)), A = 3(c-1), K = sqrt(1 - 1/c)/2."""
    if c <= 1.0:
        raise ValueError("BBM traveling waves require speed c > 1")
    x_min, x_max = domain
    amplitude = 3.0 * (c - 1.0)
    width = 0.5 * np.sqrt(1.0 - 1.0 / c)
    z = _wrap(np.asarray(x, dtype=float) - c * t, x_max - x_min)
    return amplitude / np.cosh(width * z) ** 2


def exact_solution(equation, x, t, c, domain):
    """Reference profile at time t, or None when no closed form exists."""
    if equation == "kdv":
        return exact_kdv_soliton(x, t, c, domain)
    if equation in ("bbm-split", "bbm-central"):
        return exact_bbm_wave(x, t, c, domain)
    if equation == "burgers" and t == 0.0:
        return exact_kdv_soliton(x, 0.0, c, domain)
    return None


def l2_error(u, u_exact, weights):
    u = np.asarray(u, dtype=float)
    u_exact = np.asarray(u_exact, dtype=float)
    if u.shape != u_exact.shape:
        raise ValueError("state and reference have different shapes")
    diff = u - u_exact
    return float(np.sqrt(weights @ (diff * diff)))


# ---------------------------------------------------------------------------
# configuration

_CONFIG_KEYS = (
    "equation", "domain.x_min", "domain.x_max", "grid.n",
    "operator.family", "operator.accuracy",
    "scheme", "dt", "t_end", "wave.c",
    "solver.linear", "solver.method", "solver.abs_tol", "solver.rel_tol",
    "solver.max_iters", "solver.forcing", "solver.eta",
    "solver.ew_gamma", "solver.ew_eta_max",
    "relaxation.mode", "relaxation.target", "relaxation.tol",
    "relaxation.gamma_min", "relaxation.gamma_max",
    "output.record_every",
    "study.variant", "study.k_max",
    "sweep.tolerances", "sweep.relaxed_tolerances",
)


@dataclass(frozen=True)
class ExperimentConfig:
    equation: str = "kdv"
    x_min: float = -10.0
    x_max: float = 10.0
    n: int = 200
    operator_family: str = "central-fd"
    accuracy_order: int = 4
    scheme: str = "midpoint"
    dt: float = 0.05
    t_end: float = 100.0
    wave_speed: float = 2.0
    solver: SolverConfig = None
    relax: RelaxationPolicy = None
    record_every: int = 20
    study_variant: str = "newton"
    study_k_max: int = 8
    sweep_tolerances: tuple = (1e-3, 1e-4, 1e-5)
    sweep_relaxed_tolerances: tuple = (1e-3,)

    def __post_init__(self):
        if self.solver is None:
            object.__setattr__(self, "solver", SolverConfig(rel_tol=1e-3, linear_solver="gmres"))
        if self.relax is None:
            object.__setattr__(self, "relax", RelaxationPolicy())
        if self.equation not in EQUATIONS:
            raise ConfigError(f"unknown equation {self.equation!r}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.operator_family not in FAMILIES:
            raise ConfigError(f"unknown operator family {self.operator_family!r}")
        if self.study_variant not in STUDY_VARIANTS:
            raise ConfigError(f"unknown study variant {self.study_variant!r}")
        if not self.x_max > self.x_min:
            raise ConfigError("domain must satisfy x_max > x_min")
        if self.dt <= 0.0 or self.t_end <= 0.0:
            raise ConfigError("dt and t_end must be positive")
        if self.n < 8:
            raise ConfigError("grid.n is too small")
        if self.record_every < 1 or self.study_k_max < 0:
            raise ConfigError("output.record_every must be >= 1 and study.k_max >= 0")
        if self.equation.startswith("bbm") and self.wave_speed <= 1.0:
            raise ConfigError("BBM runs require wave.c > 1")
        if self.equation == "kdv" and self.operator_family == "fourier":
            raise ConfigError("no Fourier third-derivative operator; use central-fd for kdv")
        if self.operator_family == "fourier" and self.n % 2 != 0:
            raise ConfigError("Fourier collocation requires an even grid.n")

    @property
    def domain(self):
        return (self.x_min, self.x_max)

    def to_mapping(self):
        s, r = self.solver, self.relax
        return {
            "equation": self.equation,
            "domain.x_min": f"{self.x_min:.17g}",
            "domain.x_max": f"{self.x_max:.17g}",
            "grid.n": str(self.n),
            "operator.family": self.operator_family,
            "operator.accuracy": str(self.accuracy_order),
            "scheme": self.scheme,
            "dt": f"{self.dt:.17g}",
            "t_end": f"{self.t_end:.17g}",
            "wave.c": f"{self.wave_speed:.17g}",
            "solver.linear": s.linear_solver,
            "solver.method": s.method,
            "solver.abs_tol": f"{s.abs_tol:.17g}",
            "solver.rel_tol": f"{s.rel_tol:.17g}",
            "solver.max_iters": str(s.max_iters),
            "solver.forcing": s.forcing,
            "solver.eta": f"{s.eta_fixed:.17g}",
            "solver.ew_gamma": f"{s.ew_gamma:.17g}",
            "solver.ew_eta_max": f"{s.ew_eta_max:.17g}",
            "relaxation.mode": r.mode,
            "relaxation.target": r.eta_target,
            "relaxation.tol": f"{r.root_tol:.17g}",
            "relaxation.gamma_min": f"{r.gamma_bounds[0]:.17g}",
            "relaxation.gamma_max": f"{r.gamma_bounds[1]:.17g}",
            "output.record_every": str(self.record_every),
            "study.variant": self.study_variant,
            "study.k_max": str(self.study_k_max),
            "sweep.tolerances": ",".join(f"{t:g}" for t in self.sweep_tolerances),
            "sweep.relaxed_tolerances": ",".join(f"{t:g}" for t in self.sweep_relaxed_tolerances),
        }


def _convert(key, value, kind):
    try:
        return kind(value)
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {value!r}") from exc


def _float_list(key, value):
    try:
        return tuple(float(part) for part in value.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"key {key!r}: cannot parse {value!r}") from exc


def config_from_mapping(mapping) -> ExperimentConfig:
    unknown = sorted(set(mapping) - set(_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    m = dict(mapping)

    def take(key, default, kind=str):
        if key not in m:
            return default
        return _convert(key, m[key], kind)

    try:
        solver = SolverConfig(
            abs_tol=take("solver.abs_tol", 0.0, float),
            rel_tol=take("solver.rel_tol", 1e-3, float),
            max_iters=take("solver.max_iters", 25, int),
            linear_solver=take("solver.linear", "gmres"),
            method=take("solver.method", "newton"),
            forcing=take("solver.forcing", "eisenstat_walker"),
            eta_fixed=take("solver.eta", 1e-12, float),
            ew_gamma=take("solver.ew_gamma", 0.9, float),
            ew_eta_max=take("solver.ew_eta_max", 0.9, float),
        )
        relax = RelaxationPolicy(
            mode=take("relaxation.mode", "off"),
            eta_target=take("relaxation.target", "conserve"),
            gamma_bounds=(take("relaxation.gamma_min", 0.5, float),
                          take("relaxation.gamma_max", 1.5, float)),
            root_tol=take("relaxation.tol", 1e-12, float),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    return ExperimentConfig(
        equation=take("equation", "kdv"),
        x_min=take("domain.x_min", -10.0, float),
        x_max=take("domain.x_max", 10.0, float),
        n=take("grid.n", 200, int),
        operator_family=take("operator.family", "central-fd"),
        accuracy_order=take("operator.accuracy", 4, int),
        scheme=take("scheme", "midpoint"),
        dt=take("dt", 0.05, float),
        t_end=take("t_end", 100.0, float),
        wave_speed=take("wave.c", 2.0, float),
        solver=solver,
        relax=relax,
        record_every=take("output.record_every", 20, int),
        study_variant=take("study.variant", "newton"),
        study_k_max=take("study.k_max", 8, int),
        sweep_tolerances=_float_list("sweep.tolerances", m["sweep.tolerances"])
        if "sweep.tolerances" in m else (1e-3, 1e-4, 1e-5),
        sweep_relaxed_tolerances=_float_list("sweep.relaxed_tolerances",
                                             m["sweep.relaxed_tolerances"])
        if "sweep.relaxed_tolerances" in m else (1e-3,),
    )


def parse_config_text(text) -> dict:
    mapping = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        mapping[key] = value
    return mapping


def apply_overrides(mapping, overrides):
    out = dict(mapping)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (part.strip() for part in item.split("=", 1))
        out[key] = value
    return out


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            mapping = parse_config_text(handle.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_mapping(apply_overrides(mapping, overrides))


# ---------------------------------------------------------------------------
# discretization assembly

def build_semidiscretization(cfg: ExperimentConfig):
    length = cfg.x_max - cfg.x_min
    dx = length / cfg.n
    grid = Grid(n=cfg.n, dx=dx, x_min=cfg.x_min, x_max=cfg.x_max)
    if cfg.operator_family == "fourier":
        d1 = make_fourier(1, cfg.n, length)
        d2 = make_fourier(2, cfg.n, length) if cfg.equation.startswith("bbm") else None
        d3 = None
    else:
        d1 = make_central_fd(1, cfg.n, dx, cfg.accuracy_order)
        d2 = (make_central_fd(2, cfg.n, dx, cfg.accuracy_order)
              if cfg.equation.startswith("bbm") else None)
        d3 = make_central_fd(3, cfg.n, dx, cfg.accuracy_order) if cfg.equation == "kdv" else None
    if cfg.equation == "burgers":
        return make_burgers(d1, grid)
    if cfg.equation == "kdv":
        return make_kdv(d1, d3, grid)
    if cfg.equation == "bbm-split":
        return make_bbm_split(d1, d2, grid)
    return make_bbm_central(d1, d2, grid)


def initial_state(cfg: ExperimentConfig, x):
    if cfg.equation in ("burgers", "kdv"):
        return exact_kdv_soliton(x, 0.0, cfg.wave_speed, cfg.domain)
    return exact_bbm_wave(x, 0.0, cfg.wave_speed, cfg.domain)


def make_stage_system(cfg: ExperimentConfig, sd, u, dt):
    if cfg.scheme == "midpoint":
        return integrators.midpoint_stage_system(sd, u, dt)
    if cfg.scheme == "lobatto_iiic":
        return integrators.lobatto_iiic_stage_system(sd, u, dt)
    if cfg.scheme != "avf":
        raise ConfigError(f"unknown scheme {cfg.scheme!r}")
    if cfg.relax.mode == "off" or cfg.relax.eta_target == "conserve":
        return integrators.avf_stage_system(sd, u, dt)
    raise ConfigError("the AVF method supports only the conservative relaxation target")


# ---------------------------------------------------------------------------
# time integration

@dataclass(frozen=True)
class TimeSeriesRow:
    step: int
    t: float
    l2_error: float | None
    invariants: tuple
    drifts: tuple
    gamma: float | None
    newton_iters: int
    gmres_iters: int
    residual: float | None


def iterate_rows(cfg: ExperimentConfig):
    """Generate TimeSeriesRow records; streamable so partial output survives failures."""
    sd = build_semidiscretization(cfg)
    x = sd.grid.nodes
    weights = sd.mass.weights
    u = initial_state(cfg, x)
    t = 0.0
    reference = [f.value(u) for f in sd.invariants]

    def make_row(step_idx, t_now, u_now, report):
        exact = exact_solution(cfg.equation, x, t_now, cfg.wave_speed, cfg.domain)
        err = l2_error(u_now, exact, weights) if exact is not None else None
        values = tuple(f.value(u_now) for f in sd.invariants)
        drifts = tuple(v - v0 for v, v0 in zip(values, reference))
        if report is None:
            return TimeSeriesRow(step_idx, t_now, err, values, drifts, None, 0, 0, None)
        return TimeSeriesRow(step_idx, t_now, err, values, drifts, report.gamma,
                             report.iterations, report.gmres_iterations,
                             report.residual_norms[-1])

    yield make_row(0, t, u, None)
    step_idx = 0
    max_steps = int(np.ceil(4.0 * cfg.t_end / cfg.dt)) + 16
    while t < cfg.t_end - 1e-12:
        if step_idx >= max_steps:
            raise RuntimeError("time loop exceeded its step budget; gamma may be stuck below 1")
        sys_ = make_stage_system(cfg, sd, u, cfg.dt)
        u, t, report = integrators.step(sys_, t, cfg.solver, cfg.relax)
        step_idx += 1
        if step_idx % cfg.record_every == 0 or t >= cfg.t_end - 1e-12:
            yield make_row(step_idx, t, u, report)


def run_time_integration(cfg: ExperimentConfig):
    return list(iterate_rows(cfg))


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def timeseries_header(sd_invariant_kinds):
    names = list(sd_invariant_kinds)
    return (["step", "t", "l2_error"]
            + [f"inv_{k}" for k in names] + [f"drift_{k}" for k in names]
            + ["gamma", "newton_iters", "gmres_iters", "residual"])


def write_timeseries_csv(cfg: ExperimentConfig, rows, path):
    """Write rows (any iterable) to CSV, flushing as they arrive; returns row count."""
    sd_kinds = INVARIANT_KINDS[cfg.equation]
    written = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, value in cfg.to_mapping().items():
            handle.write(f"# {key} = {value}\n")
        handle.write(",".join(timeseries_header(sd_kinds)) + "\n")
        try:
            for row in rows:
                fields = ([_fmt(row.step), _fmt(row.t), _fmt(row.l2_error)]
                          + [_fmt(v) for v in row.invariants]
                          + [_fmt(v) for v in row.drifts]
                          + [_fmt(row.gamma), _fmt(row.newton_iters),
                             _fmt(row.gmres_iters), _fmt(row.residual)])
                handle.write(",".join(fields) + "\n")
                written += 1
        finally:
            handle.flush()
    return written


def write_meta(cfg: ExperimentConfig, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, value in cfg.to_mapping().items():
            handle.write(f"{key} = {value}\n")


# ---------------------------------------------------------------------------
# Burgers iteration study

@dataclass(frozen=True)
class StudyRow:
    k: int
    entropy: float
    drift: float
    residual: float
    predicted_drift: float | None
    alpha: float | None


def run_burgers_newton_study(cfg: ExperimentConfig, k_max=None):
    """Entropy and residual of the first step after exactly k = 0..k_max iterations."""
    if cfg.equation != "burgers":
        raise ConfigError("the iteration study is defined for equation = burgers")
    k_max = cfg.study_k_max if k_max is None else int(k_max)
    sd = build_semidiscretization(cfg)
    u0 = initial_state(cfg, sd.grid.nodes)
    if cfg.scheme == "lobatto_iiic":
        sys_ = integrators.lobatto_iiic_stage_system(sd, u0, cfg.dt)
    else:
        sys_ = integrators.midpoint_stage_system(sd, u0, cfg.dt)
    trace = nonlinear.iterate_exactly(sys_, k_max, method=cfg.study_variant, cfg=cfg.solver)
    entropy0 = 0.5 * sd.grid.dx * float(u0 @ u0)

    rows = []
    for k in range(k_max + 1):
        predicted = None
        if k >= 1 and cfg.study_variant == "newton":
            du = trace.iterates[k] - trace.iterates[k - 1]
            predicted = nonlinear.entropy_drift_quadratic_form(
                sys_.scheme.b, sd.d1.action, sd.grid.dx, cfg.dt, trace.iterates[k - 1], du)
            if cfg.scheme == "lobatto_iiic":
                y1 = sys_.stages(trace.iterates[k])[0]
                predicted -= 0.5 * sd.grid.dx * float((y1 - u0) @ (y1 - u0))
        alpha = trace.alphas[k - 1] if (cfg.study_variant == "inexact_entropy" and k >= 1) else None
        rows.append(StudyRow(k=k,
                             entropy=trace.update_entropies[k],
                             drift=trace.update_entropies[k] - entropy0,
                             residual=trace.residual_norms[k],
                             predicted_drift=predicted,
                             alpha=alpha))
    return rows


def write_study_csv(cfg: ExperimentConfig, rows, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for key, value in cfg.to_mapping().items():
            handle.write(f"# {key} = {value}\n")
        handle.write("k,entropy,drift,residual,predicted_drift,alpha\n")
        for row in rows:
            handle.write(",".join([_fmt(row.k), _fmt(row.entropy), _fmt(row.drift),
                                   _fmt(row.residual), _fmt(row.predicted_drift),
                                   _fmt(row.alpha)]) + "\n")


# ---------------------------------------------------------------------------
# tolerance sweep

def sweep_cases(cfg: ExperimentConfig):
    """(label, config) pairs: unrelaxed runs per tolerance plus relaxed companions."""
    rmode = cfg.relax.mode if cfg.relax.mode != "off" else _default_relax_mode(cfg)
    cases = []
    for tol in cfg.sweep_tolerances:
        solver = replace(cfg.solver, rel_tol=tol,
                         abs_tol=tol if cfg.solver.abs_tol > 0.0 else 0.0)
        cases.append((f"unrelaxed_{tol:g}",
                      replace(cfg, solver=solver, relax=RelaxationPolicy())))
    for tol in cfg.sweep_relaxed_tolerances:
        solver = replace(cfg.solver, rel_tol=tol,
                         abs_tol=tol if cfg.solver.abs_tol > 0.0 else 0.0)
        cases.append((f"relaxed_{tol:g}",
                      replace(cfg, solver=solver, relax=replace(cfg.relax, mode=rmode))))
    return cases


def _default_relax_mode(cfg: ExperimentConfig):
    return "cubic" if cfg.equation == "bbm-central" else "quadratic"


# ---------------------------------------------------------------------------
# command line

def _add_common(parser):
    parser.add_argument("--config", required=True, help="path to a key = value config file")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry (repeatable)")
    parser.add_argument("--out", default=None, help="output CSV path")
    parser.add_argument("--full-scale", action="store_true",
                        help="run the long-time version (t_end = 1000)")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="entrolax",
                                     description="entropy-aware implicit time integration runs")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("integrate", "burgers-study", "sweep"):
        _add_common(sub.add_parser(name))
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config, args.override)
        if args.full_scale:
            cfg = replace(cfg, t_end=FULL_SCALE_T_END[cfg.equation])
        out = args.out or f"{args.command.replace('-', '_')}.csv"
        if args.command == "integrate":
            write_meta(cfg, out + ".meta")
            write_timeseries_csv(cfg, iterate_rows(cfg), out)
        elif args.command == "burgers-study":
            write_meta(cfg, out + ".meta")
            write_study_csv(cfg, run_burgers_newton_study(cfg), out)
        else:
            out_dir = args.out or "sweep_out"
            os.makedirs(out_dir, exist_ok=True)
            for label, case_cfg in sweep_cases(cfg):
                path = os.path.join(out_dir, f"{label}.csv")
                write_meta(case_cfg, path + ".meta")
                write_timeseries_csv(case_cfg, iterate_rows(case_cfg), path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, RelaxationError, SingularMatrixError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 1
    return 0
