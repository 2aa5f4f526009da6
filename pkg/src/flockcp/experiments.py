"""Monte Carlo campaigns: survival estimates, critical-value searches,
parameter sweeps and density decay, plus CSV/manifest persistence.

Trial ``i`` of a campaign always runs on ``ClockStreams.for_trial(base_seed,
i)``, so results do not depend on how trials are scheduled.  A run that is
still alive at ``t_max`` (or, for the multi-flock process, has exceeded the
flock cap) counts as surviving.
"""

from __future__ import annotations

import csv
import datetime
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, IO, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import binomtest

from flockcp import __version__
from flockcp.analytics import compute_threshold, smallest_extinct_N
from flockcp.model import Configuration, ModelParams, SparseUnbounded, Torus
from flockcp.simulator import BranchingConfig, run_branching, run_contact, run_eta
from flockcp.streams import ClockStreams

ETA = "ETA"
CONTACT = "CONTACT"
BRANCHING = "BRANCHING"
PROCESSES = (ETA, CONTACT, BRANCHING)

DEFAULT_EPS = 0.05
DEFAULT_TRIALS_PER_POINT = 400
DEFAULT_FLOCK_CAP = 10_000
DEFAULT_TORUS_SIDE = {1: 200, 2: 64}


class BracketError(ValueError):
    """Both ends of a critical-value bracket fall on the same side."""

    def __init__(self, message: str, points: Sequence[Tuple[float, "SurvivalEstimate"]] = ()):
        super().__init__(message)
        self.points = list(points)


@dataclass(frozen=True)
class SingleAtOrigin:
    state: int = 1

    def describe(self) -> str:
        return f"single:{self.state}"


@dataclass(frozen=True)
class AllN:
    def describe(self) -> str:
        return "alln"


@dataclass(frozen=True)
class ExplicitConfiguration:
    config: Configuration

    def describe(self) -> str:
        return "explicit:" + ";".join(
            ",".join(map(str, site)) + "=" + str(s) for site, s in sorted(self.config.items())
        )


InitSpec = Union[SingleAtOrigin, AllN, ExplicitConfiguration]


@dataclass(frozen=True)
class TrialPlan:
    params: ModelParams
    init: InitSpec
    t_max: float
    n_trials: int
    base_seed: int = 0
    process: str = ETA
    flock_cap: int = DEFAULT_FLOCK_CAP

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise ValueError(f"process must be one of {PROCESSES}, got {self.process!r}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if isinstance(self.init, SingleAtOrigin) and not 1 <= self.init.state <= self.params.N:
            raise ValueError(f"initial state {self.init.state} outside [1, N={self.params.N}]")
        if self.process == CONTACT:
            cfg = self.configuration()
            if any(s != self.params.N for _, s in cfg.items()):
                raise ValueError("CONTACT plans need initial states in {0, N}")
        elif self.params.phi_infinite:
            raise ValueError("phi=INFINITY is only valid with the CONTACT process")

    def configuration(self) -> Configuration:
        if isinstance(self.init, SingleAtOrigin):
            return Configuration.single(self.init.state, self.params.d)
        if isinstance(self.init, AllN):
            return Configuration.all_N(self.params)
        return self.init.config


def _run_trial(plan: TrialPlan, trial: int) -> bool:
    streams = ClockStreams.for_trial(plan.base_seed, trial)
    init = plan.configuration()
    if plan.process == BRANCHING:
        res = run_branching(plan.params, BranchingConfig.from_configuration(init), plan.t_max, plan.flock_cap, streams)
        return res.survived
    run = run_contact if plan.process == CONTACT else run_eta
    return run(plan.params, init, plan.t_max, streams).survived


def _run_chunk(plan: TrialPlan, trials: Sequence[int]) -> List[bool]:
    return [_run_trial(plan, i) for i in trials]


def run_trials(plan: TrialPlan, workers: int = 1) -> List[bool]:
    """Survival flag of every trial, in trial order."""
    trials = range(plan.n_trials)
    if workers <= 1:
        return _run_chunk(plan, trials)
    chunks = [list(trials[k::workers]) for k in range(workers)]
    out = [False] * plan.n_trials
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for chunk, flags in zip(chunks, pool.map(_run_chunk, [plan] * workers, chunks)):
            for i, f in zip(chunk, flags):
                out[i] = f
    return out


@dataclass(frozen=True)
class SurvivalEstimate:
    surviving: int
    n_trials: int
    point: float
    ci_low: float
    ci_high: float
    censored_horizon: float

    @classmethod
    def from_counts(cls, surviving: int, n_trials: int, horizon: float) -> "SurvivalEstimate":
        ci = binomtest(surviving, n_trials).proportion_ci(confidence_level=0.95, method="wilson")
        point = surviving / n_trials
        # the Wilson bounds can land a rounding error outside [0, point]
        return cls(surviving, n_trials, point, min(ci.low, point), max(ci.high, point), float(horizon))

    @property
    def stderr(self) -> float:
        p = self.point
        return math.sqrt(p * (1 - p) / self.n_trials)


def estimate_survival(plan: TrialPlan, workers: int = 1) -> SurvivalEstimate:
    flags = run_trials(plan, workers)
    return SurvivalEstimate.from_counts(sum(flags), plan.n_trials, plan.t_max)


LAMBDA_C = "LAMBDA_C"
N_C = "N_C"


@dataclass(frozen=True)
class CriticalEstimate:
    """Final bracket of a critical-value search.

    ``path`` lists every evaluated point as ``(value, estimate)`` in
    evaluation order so the statistical ambiguity near criticality is
    visible.
    """

    kind: str
    bracket_low: float
    bracket_high: float
    survival_threshold_eps: float
    trials_per_point: int
    t_max: float
    path: Tuple[Tuple[float, SurvivalEstimate], ...] = ()
    analytic_bound: Optional[int] = None

    @property
    def consistent(self) -> bool:
        """False if an N_C bracket ends above the smallest N with m <= 1."""
        return self.analytic_bound is None or self.bracket_high <= self.analytic_bound


def _survives(est: SurvivalEstimate, eps: float) -> bool:
    return est.point > eps


def estimate_critical_lambda(
    d: int,
    bracket: Tuple[float, float],
    eps: float = DEFAULT_EPS,
    trials_per_point: int = DEFAULT_TRIALS_PER_POINT,
    t_max: float = 300.0,
    resolution: float = 0.25,
    base_seed: int = 0,
    workers: int = 1,
) -> CriticalEstimate:
    """Bisection on lambda for the contact process (N = 1) from one occupied site."""
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ValueError("bracket must satisfy 0 < low < high")
    path = []

    def point(lam):
        plan = TrialPlan(
            ModelParams(d=d, N=1, lam=lam, phi=0.0), SingleAtOrigin(1), t_max, trials_per_point, base_seed
        )
        est = estimate_survival(plan, workers)
        path.append((lam, est))
        return _survives(est, eps)

    lo_alive, hi_alive = point(lo), point(hi)
    if lo_alive == hi_alive:
        side = "surviving" if lo_alive else "extinct"
        raise BracketError(f"both bracket ends are {side} at eps={eps}", list(path))
    if lo_alive:
        raise BracketError("survival at the low end but not the high end", list(path))
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if point(mid):
            hi = mid
        else:
            lo = mid
    return CriticalEstimate(LAMBDA_C, lo, hi, eps, trials_per_point, float(t_max), tuple(path))


def estimate_critical_N(
    d: int,
    lam: float,
    phi: float,
    N_bracket: Optional[Tuple[int, int]] = None,
    eps: float = DEFAULT_EPS,
    trials_per_point: int = DEFAULT_TRIALS_PER_POINT,
    t_max: float = 300.0,
    base_seed: int = 0,
    workers: int = 1,
    N_max: int = 10_000,
) -> CriticalEstimate:
    """Integer bisection for the largest surviving N at constant lambda.

    Returns ``bracket_low`` = largest N seen surviving and ``bracket_high`` =
    smallest N seen extinct, adjacent integers.  The default upper end is the
    analytic bound: the smallest N with m <= 1, where extinction is certain.
    """
    bound = smallest_extinct_N(d, phi, lambda N: lam, N_max)
    if N_bracket is None:
        if bound is None:
            raise ValueError(f"m(N) > 1 for all N <= {N_max}; pass N_bracket explicitly")
        N_bracket = (1, bound)
    lo, hi = int(N_bracket[0]), int(N_bracket[1])
    if not 1 <= lo < hi:
        raise ValueError("N bracket must satisfy 1 <= low < high")
    path = []

    def point(N):
        plan = TrialPlan(ModelParams(d=d, N=N, lam=lam, phi=phi), SingleAtOrigin(1), t_max, trials_per_point, base_seed)
        est = estimate_survival(plan, workers)
        path.append((N, est))
        return _survives(est, eps)

    lo_alive, hi_alive = point(lo), point(hi)
    if lo_alive == hi_alive:
        side = "surviving" if lo_alive else "extinct"
        raise BracketError(f"both bracket ends are {side} at eps={eps}", list(path))
    if not lo_alive:
        raise BracketError("extinction at the low end but survival at the high end", list(path))
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if point(mid):
            lo = mid
        else:
            hi = mid
    return CriticalEstimate(N_C, lo, hi, eps, trials_per_point, float(t_max), tuple(path), analytic_bound=bound)


SWEEP_AXES = ("N", "lam", "phi", "d")


@dataclass(frozen=True)
class SweepRow:
    plan: TrialPlan
    m: Optional[float]
    estimate: SurvivalEstimate


def sweep(grid: Dict[str, Sequence], template: TrialPlan, workers: int = 1) -> List[SweepRow]:
    """One survival estimate per point of the Cartesian grid, in grid order.

    Every row reuses the template's ``base_seed``, so a one-point grid gives
    exactly :func:`estimate_survival` of the template.
    """
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ValueError("grid must be non-empty")
    unknown = set(grid) - set(SWEEP_AXES)
    if unknown:
        raise ValueError(f"unknown sweep axes {sorted(unknown)}; choose from {SWEEP_AXES}")
    axes = list(grid)
    rows = []
    for values in itertools.product(*(grid[a] for a in axes)):
        params = template.params.with_(**dict(zip(axes, values)))
        plan = replace(template, params=params)
        rows.append(SweepRow(plan, analytic_m(params), estimate_survival(plan, workers)))
    return rows


def analytic_m(params: ModelParams) -> Optional[float]:
    if params.phi_infinite:
        return None
    return compute_threshold(params).m


@dataclass(frozen=True)
class DensitySeries:
    times: np.ndarray
    mean_fraction: np.ndarray
    per_trial: np.ndarray
    m: float
    side: int


def density_decay(
    params: ModelParams,
    t_grid: Sequence[float],
    n_trials: int = 20,
    base_seed: int = 0,
) -> DensitySeries:
    """Mean fraction of occupied torus sites over time, from all sites full.

    Only defined when m < 1, the regime where every infinite population dies.
    """
    if not isinstance(params.geometry, Torus):
        params = params.with_(geometry=Torus(DEFAULT_TORUS_SIDE.get(params.d, 32)))
    m = compute_threshold(params).m
    if not m < 1.0 or abs(m - 1.0) <= 1e-12:
        raise ValueError(f"density decay needs m < 1, got m = {m!r}")
    times = np.asarray(sorted(t_grid), dtype=np.float64)
    if len(times) == 0 or times[0] < 0:
        raise ValueError("t_grid must be non-empty and non-negative")
    n_sites = params.geometry.L**params.d
    init = Configuration.all_N(params)
    horizon = float(times[-1]) + 1e-9
    frac = np.empty((n_trials, len(times)))
    for i in range(n_trials):
        run = run_eta(params, init, horizon, ClockStreams.for_trial(base_seed, i), snap_times=times)
        frac[i] = run.occupied / n_sites
    return DensitySeries(times, frac.mean(axis=0), frac, m, params.geometry.L)


# ---------------------------------------------------------------- persistence

PARAM_COLUMNS = ("d", "N", "lambda", "phi", "geometry", "L", "process", "init")
RESULT_COLUMNS = ("m", "surviving", "n_trials", "point", "ci_low", "ci_high", "t_max", "base_seed")
CSV_HEADER = PARAM_COLUMNS + RESULT_COLUMNS


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "inf" if math.isinf(x) else repr(x)
    return str(x)


def plan_row(plan: TrialPlan, m: Optional[float], est: SurvivalEstimate) -> Dict[str, str]:
    p = plan.params
    torus = isinstance(p.geometry, Torus)
    values = {
        "d": p.d,
        "N": p.N,
        "lambda": float(p.lam),
        "phi": float(p.phi),
        "geometry": "torus" if torus else "sparse",
        "L": p.geometry.L if torus else "",
        "process": plan.process,
        "init": plan.init.describe(),
        "m": m,
        "surviving": est.surviving,
        "n_trials": est.n_trials,
        "point": est.point,
        "ci_low": float(est.ci_low),
        "ci_high": float(est.ci_high),
        "t_max": float(plan.t_max),
        "base_seed": plan.base_seed,
    }
    return {k: _fmt(values[k]) for k in CSV_HEADER}


def write_table(rows: Iterable[Dict[str, str]], fh: IO[str]) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_HEADER, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def read_table(fh: IO[str]) -> List[Dict[str, str]]:
    reader = csv.DictReader(fh)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValueError(f"unexpected header {reader.fieldnames!r}")
    return list(reader)


def row_estimate(row: Dict[str, str]) -> SurvivalEstimate:
    return SurvivalEstimate(
        surviving=int(row["surviving"]),
        n_trials=int(row["n_trials"]),
        point=float(row["point"]),
        ci_low=float(row["ci_low"]),
        ci_high=float(row["ci_high"]),
        censored_horizon=float(row["t_max"]),
    )


def timestamp() -> str:
    """UTC timestamp; honours SOURCE_DATE_EPOCH for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc)
        if epoch
        else datetime.datetime.now(datetime.timezone.utc)
    )
    return when.strftime("%Y-%m-%dT%H:%M:%SZ")


def write_manifest(path: str, command: str, config: Dict) -> str:
    """Sidecar ``<path>.manifest.json`` describing how a table was produced."""
    manifest = {
        "command": command,
        "config": config,
        "code_version": __version__,
        "timestamp": timestamp(),
        "csv_header": list(CSV_HEADER),
    }
    out = path + ".manifest.json"
    with open(out, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return out
