"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 coupling-invariant violation,
3 critical-value bracket failure.

Parameters come from built-in defaults, then ``--config FILE`` (a JSON
object whose keys are the long flag names with dashes or underscores), then
explicit flags, later sources winning.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Dict, List, Optional

import numpy as np

from flockcp import __version__
from flockcp.analytics import compute_threshold, gw_extinction, offspring_pmf, simulate_gw
from flockcp.coupling import run_coupled_pair, run_phi_coupled_pair
from flockcp.events import write_event_log
from flockcp.experiments import (
    BRANCHING,
    CONTACT,
    CSV_HEADER,
    DEFAULT_TORUS_SIDE,
    ETA,
    AllN,
    BracketError,
    ExplicitConfiguration,
    SingleAtOrigin,
    TrialPlan,
    analytic_m,
    density_decay,
    estimate_critical_N,
    estimate_critical_lambda,
    estimate_survival,
    plan_row,
    sweep,
    write_manifest,
    write_table,
)
from flockcp.model import Configuration, ModelParams, SparseUnbounded, Torus
from flockcp.simulator import BranchingConfig, run_branching, run_contact, run_eta
from flockcp.streams import ClockStreams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VIOLATION = 2
EXIT_BRACKET = 3

DEFAULTS = {
    "d": 1,
    "N": 1,
    "lambda": 1.0,
    "phi": 1.0,
    "torus": None,
    "seed": 0,
    "t_max": 100.0,
    "trials": 400,
    "process": "eta",
    "init": "single:1",
    "cap": 10_000,
    "json": False,
    "out": None,
    "workers": 1,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _real(text: str) -> float:
    if text.strip().lower() in ("inf", "infinity"):
        return math.inf
    return float(text)


def _shared(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", default=S, help="JSON file with parameter values")
    p.add_argument("-d", type=int, default=S, help="lattice dimension (default 1)")
    p.add_argument("-N", type=int, default=S, help="maximum flock size (default 1)")
    p.add_argument("--lambda", dest="lambda", type=float, default=S, help="external birth rate (default 1)")
    p.add_argument("--phi", type=_real, default=S, help="internal birth rate, or 'inf' (default 1)")
    p.add_argument("--torus", type=int, default=S, metavar="L", help="periodic box of side L instead of Z^d")
    p.add_argument("--seed", type=int, default=S, help="base seed (default 0)")
    p.add_argument("--json", action="store_true", default=S, help="machine-readable output")


def _run_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--t-max", dest="t_max", type=float, default=S, help="censoring horizon (default 100)")
    p.add_argument("--process", choices=["eta", "contact", "branching"], default=S)
    p.add_argument("--init", default=S, help="single:K, alln, or a JSON file of [[site, state], ...]")
    p.add_argument("--cap", type=int, default=S, help="flock cap for the branching process (default 10000)")


def _table_flags(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--trials", type=int, default=S, help="trials per point (default 400)")
    p.add_argument("--out", default=S, help="write a CSV table here (plus a .manifest.json sidecar)")
    p.add_argument("--workers", type=int, default=S, help="worker processes (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flockcp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("threshold", help="extinction threshold m and P(reach N)")
    _shared(p)

    p = sub.add_parser("gw", help="founder offspring law and Galton-Watson extinction")
    _shared(p)
    p.add_argument("--k-max", dest="k_max", type=int, default=argparse.SUPPRESS)
    p.add_argument("--lineages", type=int, default=argparse.SUPPRESS, help="also simulate this many lineages")
    p.add_argument("--generations", type=int, default=argparse.SUPPRESS)

    p = sub.add_parser("simulate", help="one run, optionally logging every event")
    _shared(p)
    _run_flags(p)
    p.add_argument("--log-events", dest="log_events", default=argparse.SUPPRESS, metavar="PATH")

    p = sub.add_parser("survival", help="survival probability estimate")
    _shared(p)
    _run_flags(p)
    _table_flags(p)

    p = sub.add_parser("sweep", help="survival estimates over a parameter grid")
    _shared(p)
    _run_flags(p)
    _table_flags(p)
    p.add_argument("--grid", action="append", default=argparse.SUPPRESS, metavar="AXIS=V1,V2,...",
                   help="axis in {N, lambda, phi, d}; repeat for a product grid")

    p = sub.add_parser("critical", help="bisection for lambda_c (N=1) or N_c (constant lambda)")
    _shared(p)
    _table_flags(p)
    p.add_argument("--kind", choices=["lambda", "N"], required=True)
    p.add_argument("--bracket", default=argparse.SUPPRESS, metavar="LO,HI")
    p.add_argument("--eps", type=float, default=argparse.SUPPRESS)
    p.add_argument("--t-max", dest="t_max", type=float, default=argparse.SUPPRESS)
    p.add_argument("--resolution", type=float, default=argparse.SUPPRESS)

    p = sub.add_parser("couple-check", help="pathwise check of the monotone couplings")
    _shared(p)
    p.add_argument("--mode", choices=["N", "phi"], default=argparse.SUPPRESS)
    p.add_argument("--n1", type=int, default=argparse.SUPPRESS)
    p.add_argument("--n2", type=int, default=argparse.SUPPRESS)
    p.add_argument("--seeds", type=int, default=argparse.SUPPRESS)
    p.add_argument("--t-max", dest="t_max", type=float, default=argparse.SUPPRESS)

    p = sub.add_parser("density", help="occupied-site fraction on a torus started all full")
    _shared(p)
    _table_flags(p)
    p.add_argument("--t-grid", dest="t_grid", default=argparse.SUPPRESS)
    return parser


# per-command defaults layered over DEFAULTS
COMMAND_DEFAULTS = {
    "gw": {"k_max": 50, "lineages": 0, "generations": 1000},
    "simulate": {"log_events": None},
    "critical": {"t_max": 300.0, "bracket": None, "eps": 0.05, "resolution": 0.25},
    "couple-check": {"t_max": 50.0, "mode": "N", "n1": 2, "n2": 5, "seeds": 100},
    "density": {"trials": 20, "N": 6, "t_grid": "0,10,20,30,40,50,60,70,80,90,100"},
}


def resolve(ns: argparse.Namespace) -> Dict:
    """Defaults < config file < explicit flags."""
    cfg = dict(DEFAULTS)
    cfg.update(COMMAND_DEFAULTS.get(ns.command, {}))
    path = getattr(ns, "config", None)
    if path:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}")
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        for key, value in loaded.items():
            cfg[key.replace("-", "_")] = value
    for key, value in vars(ns).items():
        if key not in ("config", "command"):
            cfg[key] = value
    if isinstance(cfg.get("phi"), str):
        cfg["phi"] = _real(cfg["phi"])
    return cfg


def make_params(cfg: Dict) -> ModelParams:
    try:
        geometry = Torus(int(cfg["torus"])) if cfg.get("torus") else SparseUnbounded()
        return ModelParams(d=int(cfg["d"]), N=int(cfg["N"]), lam=float(cfg["lambda"]), phi=float(cfg["phi"]),
                           geometry=geometry)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc))


def make_init(cfg: Dict, params: ModelParams):
    spec = str(cfg["init"])
    if spec.startswith("single:"):
        return SingleAtOrigin(int(spec.split(":", 1)[1]))
    if spec == "alln":
        if not params.is_torus:
            raise UsageError("--init alln needs --torus L")
        return AllN()
    try:
        with open(spec) as fh:
            pairs = json.load(fh)
        return ExplicitConfiguration(Configuration({tuple(site): state for site, state in pairs}))
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"bad --init {spec!r}: {exc}")


_PROCESS = {"eta": ETA, "contact": CONTACT, "branching": BRANCHING}


def make_plan(cfg: Dict) -> TrialPlan:
    params = make_params(cfg)
    try:
        return TrialPlan(
            params=params,
            init=make_init(cfg, params),
            t_max=float(cfg["t_max"]),
            n_trials=int(cfg["trials"]),
            base_seed=int(cfg["seed"]),
            process=_PROCESS[cfg["process"]],
            flock_cap=int(cfg["cap"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _emit(cfg: Dict, payload: Dict, lines: List[str]) -> None:
    if cfg.get("json"):
        print(json.dumps(payload, sort_keys=True, default=_jsonable))
    else:
        print("\n".join(lines))


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, tuple):
        return list(x)
    return str(x)


def _config_record(cfg: Dict) -> Dict:
    """Effective configuration for the manifest; infinities spelled "inf"."""
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in sorted(cfg.items())}


def cmd_threshold(cfg: Dict) -> int:
    params = make_params(cfg)
    if params.phi_infinite:
        raise UsageError("m is defined for finite phi only")
    rep = compute_threshold(params)
    verdict = "EXTINCT" if rep.subcritical else "SUPERCRITICAL-POSSIBLE"
    _emit(
        cfg,
        {"d": params.d, "N": params.N, "lambda": params.lam, "phi": params.phi, "m": rep.m,
         "p_reach": rep.p_reach, "log_m": rep.log_m, "verdict": verdict},
        [f"m = {rep.m:.12g}", f"P(A) = {rep.p_reach:.12g}",
         f"verdict: {verdict}" + (" (m <= 1: finite populations die out)" if rep.subcritical else "")],
    )
    return EXIT_OK


def cmd_gw(cfg: Dict) -> int:
    params = make_params(cfg)
    if params.phi_infinite:
        raise UsageError("the founder law is defined for finite phi only")
    dist = offspring_pmf(params, int(cfg["k_max"]))
    res = gw_extinction(dist)
    payload = {"m": compute_threshold(params).m, "p_geo": dist.p_geo, "p_reach": dist.p_reach,
               "pmf": dist.pmf.tolist(), "remainder": dist.remainder,
               "extinction_prob": res.extinction_prob, "is_subcritical": res.is_subcritical}
    lines = [f"m = {payload['m']!r}", f"p_geo = {dist.p_geo!r}", f"P(A) = {dist.p_reach!r}",
             f"extinction probability = {res.extinction_prob!r}"]
    n = int(cfg["lineages"])
    if n > 0:
        rng = ClockStreams(int(cfg["seed"])).generator(2)
        extinct = sum(simulate_gw(dist, int(cfg["generations"]), rng).extinct for _ in range(n))
        payload["simulated_extinction"] = extinct / n
        payload["lineages"] = n
        lines.append(f"simulated extinction = {extinct / n!r} over {n} lineages")
    _emit(cfg, payload, lines)
    return EXIT_OK


def cmd_simulate(cfg: Dict) -> int:
    plan = make_plan(dict(cfg, trials=1))
    streams = ClockStreams(plan.base_seed)
    init = plan.configuration()
    record = bool(cfg.get("log_events"))
    try:
        if plan.process == BRANCHING:
            res = run_branching(plan.params, BranchingConfig.from_configuration(init), plan.t_max, plan.flock_cap,
                                streams, record=record)
            outcome, t_end, size = res.outcome, res.time, res.final.n_flocks
        else:
            run = run_contact if plan.process == CONTACT else run_eta
            res = run(plan.params, init, plan.t_max, streams, record=record)
            outcome = res.outcome
            t_end = res.extinction_time if res.extinction_time is not None else res.t_max
            size = sum(s for _, s in res.final.items())
    except ValueError as exc:
        raise UsageError(str(exc))
    if record:
        with open(cfg["log_events"], "w") as fh:
            write_event_log(res.events, fh)
    _emit(
        cfg,
        {"process": plan.process, "outcome": outcome, "time": t_end, "t_max": plan.t_max,
         "n_events": res.n_events, "final_size": size, "seed": plan.base_seed},
        [f"outcome: {outcome}", f"time: {t_end!r}", f"events: {res.n_events}",
         f"final individuals{' (flocks)' if plan.process == BRANCHING else ''}: {size}"],
    )
    return EXIT_OK


def _write_rows(cfg: Dict, command: str, rows: List[Dict[str, str]]) -> None:
    if cfg.get("out"):
        with open(cfg["out"], "w") as fh:
            write_table(rows, fh)
        write_manifest(cfg["out"], command, _config_record(cfg))


def cmd_survival(cfg: Dict) -> int:
    plan = make_plan(cfg)
    est = estimate_survival(plan, int(cfg["workers"]))
    row = plan_row(plan, analytic_m(plan.params), est)
    _write_rows(cfg, "survival", [row])
    _emit(cfg, row, [f"survival = {est.point!r}  (95% CI [{est.ci_low:.4f}, {est.ci_high:.4f}], "
                     f"{est.surviving}/{est.n_trials}, t_max={plan.t_max:g})", f"m = {row['m']}"])
    return EXIT_OK


_AXES = {"N": ("N", int), "lambda": ("lam", float), "lam": ("lam", float), "phi": ("phi", _real), "d": ("d", int)}


def parse_grid(specs: List[str]) -> Dict[str, List]:
    grid = {}
    for spec in specs:
        name, _, values = spec.partition("=")
        if name not in _AXES or not values:
            raise UsageError(f"bad --grid {spec!r}; expected AXIS=V1,V2 with AXIS in N, lambda, phi, d")
        axis, conv = _AXES[name]
        try:
            grid[axis] = [conv(v) for v in values.split(",")]
        except ValueError:
            raise UsageError(f"bad values in --grid {spec!r}")
    return grid


def cmd_sweep(cfg: Dict) -> int:
    specs = cfg.get("grid")
    if not specs:
        raise UsageError("sweep needs at least one --grid AXIS=V1,V2,...")
    grid = parse_grid([specs] if isinstance(specs, str) else list(specs))
    plan = make_plan(cfg)
    try:
        rows = sweep(grid, plan, int(cfg["workers"]))
    except ValueError as exc:
        raise UsageError(str(exc))
    table = [plan_row(r.plan, r.m, r.estimate) for r in rows]
    _write_rows(cfg, "sweep", table)
    if cfg.get("json"):
        print(json.dumps(table))
    else:
        print(",".join(CSV_HEADER))
        for row in table:
            print(",".join(row[k] for k in CSV_HEADER))
    return EXIT_OK


def _bracket(text: Optional[str], conv):
    if text is None:
        return None
    try:
        lo, hi = (conv(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"bad --bracket {text!r}; expected LO,HI")
    return lo, hi


def cmd_critical(cfg: Dict) -> int:
    t_max = float(cfg["t_max"])
    trials = int(cfg["trials"])
    common = dict(eps=float(cfg["eps"]), trials_per_point=trials, t_max=t_max, base_seed=int(cfg["seed"]),
                  workers=int(cfg["workers"]))
    try:
        if cfg["kind"] == "lambda":
            bracket = _bracket(cfg.get("bracket"), float) or (0.5, 5.0)
            est = estimate_critical_lambda(int(cfg["d"]), bracket, resolution=float(cfg["resolution"]), **common)
            base = ModelParams(d=int(cfg["d"]), N=1, lam=1.0, phi=0.0)
            axis = "lam"
        else:
            bracket = _bracket(cfg.get("bracket"), int)
            est = estimate_critical_N(int(cfg["d"]), float(cfg["lambda"]), float(cfg["phi"]), bracket, **common)
            base = make_params(cfg)
            axis = "N"
    except BracketError as exc:
        _report_path(exc.points, cfg["kind"])
        values = [v for v, _ in exc.points]
        print(f"bracket failure on [{min(values)}, {max(values)}]: {exc}", file=sys.stderr)
        return EXIT_BRACKET
    except ValueError as exc:
        raise UsageError(str(exc))
    rows = []
    for value, e in est.path:
        params = base.with_(**{axis: value})
        plan = TrialPlan(params, SingleAtOrigin(1), t_max, trials, int(cfg["seed"]))
        rows.append(plan_row(plan, analytic_m(params), e))
    _write_rows(cfg, "critical", rows)
    payload = {"kind": est.kind, "bracket_low": est.bracket_low, "bracket_high": est.bracket_high,
               "eps": est.survival_threshold_eps, "trials_per_point": est.trials_per_point, "t_max": est.t_max,
               "analytic_bound": est.analytic_bound,
               "path": [[v, e.point, e.ci_low, e.ci_high] for v, e in est.path]}
    lines = [f"{est.kind} bracket: [{est.bracket_low}, {est.bracket_high}]"]
    if est.analytic_bound is not None:
        lines.append(f"analytic bound (smallest N with m <= 1): {est.analytic_bound}")
    lines += [f"  {v}: survival {e.point:.4f} [{e.ci_low:.4f}, {e.ci_high:.4f}]" for v, e in est.path]
    _emit(cfg, payload, lines)
    return EXIT_OK


def _report_path(points, kind) -> None:
    lines = [f"  {kind}={v}: survival {e.point:.4f} [{e.ci_low:.4f}, {e.ci_high:.4f}]" for v, e in points]
    if lines:
        print("evaluated points:", file=sys.stderr)
        print("\n".join(lines), file=sys.stderr)


def cmd_couple_check(cfg: Dict) -> int:
    params = make_params(cfg)
    base = int(cfg["seed"])
    total = 0
    for i in range(int(cfg["seeds"])):
        streams = ClockStreams.for_trial(base, i)
        try:
            if cfg["mode"] == "N":
                res = run_coupled_pair(params.with_(N=int(cfg["n2"])), int(cfg["n1"]), int(cfg["n2"]),
                                       float(cfg["t_max"]), streams)
            else:
                init = Configuration.all_N(params) if params.is_torus else Configuration.single(params.N, params.d)
                res = run_phi_coupled_pair(params, float(cfg["t_max"]), streams, init)
        except ValueError as exc:
            raise UsageError(str(exc))
        total += res.violation_count
    _emit(cfg, {"mode": cfg["mode"], "seeds": int(cfg["seeds"]), "violations": total},
          [f"{total} violations over {cfg['seeds']} seeds"])
    return EXIT_VIOLATION if total else EXIT_OK


DENSITY_HEADER = ("t", "mean_occupied_fraction", "m", "L", "n_trials", "base_seed")


def cmd_density(cfg: Dict) -> int:
    if not cfg.get("torus"):
        cfg = dict(cfg, torus=DEFAULT_TORUS_SIDE.get(int(cfg["d"]), 32))
    params = make_params(cfg)
    try:
        grid = [float(v) for v in str(cfg["t_grid"]).split(",")]
        trials = int(cfg["trials"])
        series = density_decay(params, grid, trials, int(cfg["seed"]))
    except ValueError as exc:
        raise UsageError(str(exc))
    rows = [(repr(float(t)), repr(float(f)), repr(series.m), str(series.side), str(trials), str(cfg["seed"]))
            for t, f in zip(series.times, series.mean_fraction)]
    if cfg.get("out"):
        with open(cfg["out"], "w") as fh:
            fh.write(",".join(DENSITY_HEADER) + "\n")
            for r in rows:
                fh.write(",".join(r) + "\n")
        write_manifest(cfg["out"], "density", _config_record(cfg))
    _emit(cfg, {"m": series.m, "L": series.side, "times": series.times.tolist(),
                "mean_fraction": series.mean_fraction.tolist()},
          [",".join(DENSITY_HEADER)] + [",".join(r) for r in rows])
    return EXIT_OK


COMMANDS = {
    "threshold": cmd_threshold,
    "gw": cmd_gw,
    "simulate": cmd_simulate,
    "survival": cmd_survival,
    "sweep": cmd_sweep,
    "critical": cmd_critical,
    "couple-check": cmd_couple_check,
    "density": cmd_density,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        cfg = resolve(ns)
        return COMMANDS[ns.command](cfg)
    except UsageError as exc:
        print(f"flockcp {ns.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
