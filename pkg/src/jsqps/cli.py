"""Command-line front end.

Every command writes comma-separated output whose first line is a ``#``
comment recording the fully resolved experiment, so identical inputs give
byte-identical files.

Exit codes: 0 success, 1 bad parameters, 2 numerical failure (including a
percentile the grid never reaches), 3 resource limits.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DEFAULT_DT,
    DEFAULT_L1,
    DEFAULT_L2,
    DEFAULT_TMAX,
    URLLC_ETAS,
    Hyperparameters,
    NumericalError,
    ParameterError,
    ResourceError,
    SaturationError,
    SystemConfig,
    make_time_grid,
    percentile,
)
from .markov import solve_chain
from .metrics import SimBudget, compare, regime_scan, simulate_cdf, write_reports_csv
from .simulator import run_simulation, write_samples, aggregate_trials
from .sojourn import MethodId, RegimeMap, best_method, compute_method

log = logging.getLogger("jsqps")

COMMANDS = ("cdf", "percentile", "simulate", "compare", "regime-scan", "reproduce")
TARGETS = ("table5", "table6", "fig4", "fig8", "fig9")
DESK_RS = (1, 3, 5, 7, 10)
SCAN_RS = (2, 3, 4, 5)
TABLE6_RHOS = (0.10, 0.25, 0.50, 0.75, 0.85, 0.90, 0.95, 0.99)
FIG4_RHOS = (0.85, 0.90, 0.95)
FIG4_MAX_STATES = 10**6
SCALE_QMAX = {"desk": 40000.0, "full": 160000.0}
SCALE_RHO_STEP = {"desk": 0.05, "full": 0.01}
SERVICES = ("exp", "uniform", "det")

# key in a config file (dashes and underscores ignored) -> ExperimentSpec field
_CONFIG_KEYS = {
    "r": "R",
    "lambda": "lam",
    "mu": "mu",
    "method": "method",
    "l1": "L1",
    "l2": "L2",
    "tmax": "tmax",
    "dt": "dt",
    "qmax": "qmax",
    "warmup": "warmup",
    "trials": "trials",
    "seed": "seed",
    "service": "service",
    "psvariant": "ps_variant",
    "eta": "eta",
    "urllc": "urllc",
    "out": "out",
    "regimemap": "regime_map",
    "scale": "scale",
    "confirmlongrun": "confirm_long_run",
    "tail": "tail",
    "rho": "rho",
    "samples": "samples",
}
_LIST_FIELDS = {"eta", "rho"}
_BOOL_FIELDS = {"urllc", "confirm_long_run"}


@dataclass
class ExperimentSpec:
    command: str
    target: str | None = None
    R: int | None = None
    lam: float | None = None
    mu: float = 1.0
    method: str | None = None
    L1: int | None = None
    L2: int = DEFAULT_L2
    tmax: float = DEFAULT_TMAX
    dt: float = DEFAULT_DT
    qmax: float | None = None
    warmup: float | None = None
    trials: int = 4
    seed: int = 0
    service: str = "exp"
    ps_variant: str = "standard"
    eta: list = field(default_factory=list)
    urllc: bool = False
    out: str | None = None
    regime_map: str | None = None
    scale: str = "desk"
    confirm_long_run: bool = False
    tail: str = "printed"
    rho: list = field(default_factory=list)
    samples: str | None = None

    def resolved_qmax(self) -> float:
        return self.qmax if self.qmax is not None else SCALE_QMAX[self.scale]

    def resolved_warmup(self) -> float:
        if self.warmup is not None:
            return self.warmup
        return min(8000.0, 0.2 * self.resolved_qmax())

    def etas(self) -> list[float]:
        etas = list(self.eta) + (list(URLLC_ETAS) if self.urllc else [])
        if not etas:
            etas = list(URLLC_ETAS) if self.command in ("compare", "reproduce") else [0.9999]
        for eta in etas:
            if not 0 < eta < 1:
                raise ParameterError(f"eta must lie in (0, 1), got {eta}")
        return sorted(set(etas))

    def system(self) -> SystemConfig:
        if self.R is None or self.lam is None:
            raise ParameterError(f"{self.command} needs --R and --lambda")
        return SystemConfig(self.R, self.lam, self.mu)

    def hyper(self, R: int) -> Hyperparameters:
        overrides = {"L2": self.L2, "tail": self.tail}
        if self.L1 is not None:
            overrides["L1"] = self.L1
        return Hyperparameters.default_for(R, **overrides)

    def budget(self) -> SimBudget:
        return SimBudget(self.resolved_qmax(), self.resolved_warmup(), self.trials, self.seed, self.service, self.ps_variant)

    def describe(self) -> str:
        skip = {"out", "samples", "confirm_long_run"}
        items = []
        for key, value in asdict(self).items():
            if key in skip or value == []:
                continue
            if value is None and key not in ("qmax", "warmup"):
                continue
            if key == "qmax":
                value = self.resolved_qmax()
            if key == "warmup":
                value = self.resolved_warmup()
            if isinstance(value, list):
                value = ";".join(f"{v:g}" for v in value)
            items.append(f"{key}={value}")
        return "jsqps " + " ".join(items)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    add = common.add_argument
    # defaults are None so that flags can be told apart from config-file values
    add("--R", type=int, help="number of servers")
    add("--lambda", dest="lam", type=float, help="total arrival rate")
    add("--mu", type=float, help="service rate per server")
    add("--method", choices=[m.value for m in MethodId] + ["auto"], help="approximation method")
    add("--L1", type=int, help="per-server chain truncation (default: tabulated per R)")
    add("--L2", type=int, help="system-level truncation")
    add("--tmax", type=float, help="time grid horizon")
    add("--dt", type=float, help="time grid step")
    add("--qmax", type=float, help="simulated time per trial")
    add("--warmup", type=float, help="discarded initial simulated time")
    add("--trials", type=int, help="independent simulation trials")
    add("--seed", type=int, help="master random seed")
    add("--service", choices=SERVICES, help="simulated service distribution")
    add("--ps-variant", dest="ps_variant", help="standard, limited:k or capacitated:k")
    add("--eta", type=float, action="append", help="percentile level in (0, 1); repeatable")
    add("--urllc", action="store_true", default=None, help="add the 0.99 ... 0.99999 levels")
    add("--out", help="output file (default: stdout)")
    add("--config", help="key = value file; flags take precedence")
    add("--regime-map", dest="regime_map", help="override file for automatic method choice")
    add("--scale", choices=("desk", "full"), help="sweep size for scans and reproductions")
    add("--confirm-long-run", dest="confirm_long_run", action="store_true", default=None)
    add("--tail", choices=("printed", "limit"), help="arrival-rate form beyond the chain truncation")
    add("--rho", type=float, action="append", help="restrict a sweep to these loads; repeatable")
    add("--samples", help="simulate: also write raw sojourn samples under this prefix")

    parser = _Parser(prog="jsqps", description="Sojourn-time distributions of JSQ processor-sharing server farms.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("cdf", parents=[common], help="approximate CDF on the time grid")
    sub.add_parser("percentile", parents=[common], help="percentiles of the approximate CDF")
    sub.add_parser("simulate", parents=[common], help="simulated CDF")
    sub.add_parser("compare", parents=[common], help="methods against a simulation")
    sub.add_parser("regime-scan", parents=[common], help="most accurate method per (R, rho)")
    rep = sub.add_parser("reproduce", parents=[common], help="datasets behind the published exhibits")
    rep.add_argument("target", choices=TARGETS)
    return parser


def read_config_file(path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParameterError(f"{path}:{lineno}: expected 'key = value'")
        norm = key.strip().lower().replace("-", "").replace("_", "")
        if norm not in _CONFIG_KEYS:
            raise ParameterError(f"{path}:{lineno}: unknown key {key.strip()!r}")
        name = _CONFIG_KEYS[norm]
        value = value.strip()
        if name in _LIST_FIELDS:
            values.setdefault(name, []).extend(float(v) for v in value.replace(",", " ").split())
        elif name in _BOOL_FIELDS:
            values[name] = value.lower() in ("1", "true", "yes", "on")
        else:
            values[name] = value
    return values


def resolve_spec(args: argparse.Namespace) -> ExperimentSpec:
    merged = read_config_file(args.config) if args.config else {}
    for name in _CONFIG_KEYS.values():
        flag = getattr(args, name, None)
        if flag is not None:
            merged[name] = flag
    spec = ExperimentSpec(args.command, getattr(args, "target", None))
    for name, value in merged.items():
        default = getattr(spec, name)
        try:
            if isinstance(value, str) and name not in ("method", "service", "ps_variant", "out", "regime_map", "scale", "tail", "samples"):
                value = int(value) if name in ("R", "L1", "L2", "trials", "seed") else float(value)
        except ValueError:
            raise ParameterError(f"bad value for {name}: {value!r}")
        setattr(spec, name, value if value is not None else default)
    if spec.method is not None:
        spec.method = spec.method.upper() if spec.method.lower() != "auto" else "auto"
    if spec.scale not in SCALE_QMAX:
        raise ParameterError(f"unknown scale {spec.scale!r}")
    if spec.service not in SERVICES:
        raise ParameterError(f"unknown service distribution {spec.service!r}")
    return spec


def _regime_map(spec: ExperimentSpec) -> RegimeMap | None:
    return RegimeMap.load(spec.regime_map) if spec.regime_map else None


def _pick_method(spec: ExperimentSpec, config: SystemConfig) -> MethodId:
    if spec.method in (None, "auto"):
        return best_method(config, _regime_map(spec))
    return MethodId(spec.method)


def _grid(spec: ExperimentSpec):
    return make_time_grid(spec.tmax, spec.dt)


def _writer(stream):
    return csv.writer(stream, lineterminator="\n")


def _g(x) -> str:
    return "" if x is None else f"{x:.10g}"


def _rho_grid(spec: ExperimentSpec, default=None) -> list[float]:
    if spec.rho:
        return sorted(spec.rho)
    if default is not None:
        return list(default)
    step = SCALE_RHO_STEP[spec.scale]
    n = int(round(1 / step))
    return [round(k * step, 2) for k in range(1, n)]


def _r_grid(spec: ExperimentSpec, default=DESK_RS) -> list[int]:
    return [spec.R] if spec.R is not None else list(default)


def _require_confirmation(spec: ExperimentSpec) -> None:
    if spec.scale == "full" and not spec.confirm_long_run:
        raise ParameterError("full-scale runs take many hours; pass --confirm-long-run to proceed")


def cmd_cdf(spec: ExperimentSpec, out) -> None:
    config = spec.system()
    method = _pick_method(spec, config)
    cdf = compute_method(method, config, spec.hyper(config.R), _grid(spec))
    w = _writer(out)
    w.writerow(["t", "cdf", "method"])
    for t, v in zip(cdf.grid.points, cdf.values):
        w.writerow([f"{t:.6g}", f"{v:.12g}", method.value])


def cmd_percentile(spec: ExperimentSpec, out) -> None:
    config = spec.system()
    etas = spec.etas()
    method = _pick_method(spec, config)
    cdf = compute_method(method, config, spec.hyper(config.R), _grid(spec))
    rows = [[f"{eta:g}", f"{percentile(cdf, eta):.6g}", method.value] for eta in etas]
    w = _writer(out)
    w.writerow(["eta", "t_eta", "method"])
    w.writerows(rows)


def cmd_simulate(spec: ExperimentSpec, out) -> None:
    config = spec.system()
    per_trial = run_simulation(spec.budget().simulation_config(config))
    if spec.samples:
        write_samples(spec.samples, per_trial)
    cdf = aggregate_trials(per_trial, _grid(spec))
    w = _writer(out)
    w.writerow(["t", "cdf", "method"])
    for t, v in zip(cdf.grid.points, cdf.values):
        w.writerow([f"{t:.6g}", f"{v:.12g}", "simulation"])


def cmd_compare(spec: ExperimentSpec, out) -> None:
    config = spec.system()
    grid = _grid(spec)
    if spec.method is None:
        methods = list(MethodId)
    else:
        methods = [_pick_method(spec, config)]
    sim = simulate_cdf(config, spec.budget(), grid)
    hyper = spec.hyper(config.R)
    reports = [compare(compute_method(m, config, hyper, grid), sim, config, m, spec.etas()) for m in methods]
    write_reports_csv(reports, out)


def _scan(spec: ExperimentSpec, R_default):
    _require_confirmation(spec)
    cells = [(R, rho) for R in _r_grid(spec, R_default) for rho in _rho_grid(spec)]
    methods = [MethodId(spec.method)] if spec.method not in (None, "auto") else list(MethodId)
    return regime_scan(cells, methods, spec.budget(), _grid(spec), spec.hyper, mu=spec.mu)


def cmd_regime_scan(spec: ExperimentSpec, out) -> None:
    result = _scan(spec, SCAN_RS)
    for (R, rho), dist in sorted(result.distances.items()):
        detail = " ".join(f"{m.value}={d:.6g}" for m, d in sorted(dist.items(), key=lambda kv: kv[0].value))
        out.write(f"# R={R} rho={rho:g} winner={result.winners[R, rho].value} {detail}\n")
    out.write(result.regime_map().to_text())


def reproduce_table5(spec: ExperimentSpec, out) -> None:
    w = _writer(out)
    w.writerow(["R", "L1"])
    for R in sorted(DEFAULT_L1):
        w.writerow([R, DEFAULT_L1[R]])


def reproduce_fig4(spec: ExperimentSpec, out) -> None:
    w = _writer(out)
    w.writerow(["R", "rho", "L1", "boundary_mass"])
    Rs = _r_grid(spec, range(1, 10))
    for R in Rs:
        for rho in _rho_grid(spec, FIG4_RHOS):
            config = SystemConfig.from_load(R, rho, spec.mu)
            L1 = 2
            while L1**R <= FIG4_MAX_STATES and L1 <= 40:
                w.writerow([R, f"{rho:g}", L1, f"{solve_chain(config, L1).truncation_mass():.6e}"])
                L1 += 1


def reproduce_table6(spec: ExperimentSpec, out) -> None:
    _require_confirmation(spec)
    grid = _grid(spec)
    budget = spec.budget()
    w = _writer(out)
    w.writerow(["R", "rho", "method", "eta", "approx_pct", "sim_pct", "error"])
    for R in _r_grid(spec):
        for rho in _rho_grid(spec, TABLE6_RHOS):
            config = SystemConfig.from_load(R, rho, spec.mu)
            method = best_method(config, _regime_map(spec))
            approx = compute_method(method, config, spec.hyper(R), grid)
            report = compare(approx, simulate_cdf(config, budget, grid), config, method, spec.etas())
            for eta, (a, s, err) in sorted(report.percentile_errors.items()):
                w.writerow([R, f"{rho:g}", method.value, f"{eta:g}", _g(a), _g(s), _g(err)])


def reproduce_fig8(spec: ExperimentSpec, out) -> None:
    result = _scan(spec, DESK_RS)
    methods = sorted({m for d in result.distances.values() for m in d}, key=lambda m: m.value)
    w = _writer(out)
    w.writerow(["R", "rho", "winner"] + [f"W_{m.value}" for m in methods])
    for (R, rho), dist in sorted(result.distances.items()):
        w.writerow([R, f"{rho:g}", result.winners[R, rho].value] + [_g(dist[m]) for m in methods])


def reproduce_fig9(spec: ExperimentSpec, out) -> None:
    _require_confirmation(spec)
    grid = _grid(spec)
    w = _writer(out)
    w.writerow(["R", "rho", "source", "eta", "t_eta"])
    for R in _r_grid(spec):
        for rho in _rho_grid(spec):
            config = SystemConfig.from_load(R, rho, spec.mu)
            method = best_method(config, _regime_map(spec))
            curves = [(f"best:{method.value}", compute_method(method, config, spec.hyper(R), grid))]
            for service in SERVICES:
                budget = SimBudget(spec.resolved_qmax(), spec.resolved_warmup(), spec.trials, spec.seed, service, spec.ps_variant)
                curves.append((f"sim:{service}", simulate_cdf(config, budget, grid)))
            for source, cdf in curves:
                for eta in spec.etas():
                    try:
                        value = _g(percentile(cdf, eta))
                    except SaturationError:
                        value = ""
                    w.writerow([R, f"{rho:g}", source, f"{eta:g}", value])


REPRODUCERS = {
    "table5": reproduce_table5,
    "table6": reproduce_table6,
    "fig4": reproduce_fig4,
    "fig8": reproduce_fig8,
    "fig9": reproduce_fig9,
}

HANDLERS = {
    "cdf": cmd_cdf,
    "percentile": cmd_percentile,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "regime-scan": cmd_regime_scan,
    "reproduce": lambda spec, out: REPRODUCERS[spec.target](spec, out),
}


def run(spec: ExperimentSpec) -> str:
    """Execute a resolved spec and return the full output text."""
    buf = io.StringIO()
    buf.write(f"# {spec.describe()}\n")
    HANDLERS[spec.command](spec, buf)
    return buf.getvalue()


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, ResourceError):
        return 3
    if isinstance(exc, (NumericalError, np.linalg.LinAlgError)):
        return 2
    if isinstance(exc, (ParameterError, ValueError, OSError)):
        return 1
    raise exc


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        spec = resolve_spec(args)
        text = run(spec)
    except Exception as exc:
        code = exit_code(exc)
        print(f"jsqps: error: {exc}", file=sys.stderr)
        return code
    if spec.out:
        Path(spec.out).write_text(text)
    else:
        try:
            sys.stdout.write(text)
            sys.stdout.flush()
        except BrokenPipeError:
            # reader closed early (e.g. piped into head); not an error of ours
            sys.stdout = open(os.devnull, "w")
    return 0


if __name__ == "__main__":
    sys.exit(main())
