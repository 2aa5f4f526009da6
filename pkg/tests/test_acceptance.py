"""Acceptance criteria; each test appends one PASS/FAIL line to the summary."""

import math
import os
import subprocess
import sys
import time
from collections import Counter

import numpy as np
import pytest

from _ctmc import ring_law
from conftest import ACCEPTANCE_LINES
from flockcp.analytics import (
    compute_threshold,
    gw_extinction,
    offspring_pmf,
    simulate_gw,
    smallest_extinct_N,
)
from flockcp.coupling import run_coupled_pair, run_phi_coupled_pair
from flockcp.experiments import (
    BRANCHING,
    SingleAtOrigin,
    TrialPlan,
    density_decay,
    estimate_critical_N,
    estimate_survival,
    sweep,
)
from flockcp.model import Configuration, ModelParams, Torus
from flockcp.simulator import founder_trials, run_eta
from flockcp.streams import ClockStreams


def record(number, title, ok, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] #{number:<2} {title}: {detail}")
    assert ok, detail


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def overlapping(a, b):
    return a.ci_low <= b.ci_high and b.ci_low <= a.ci_high


def test_01_threshold_identity():
    with Timer() as t:
        worst = 0.0
        for N in range(2, 1001):
            m = compute_threshold(ModelParams(d=1, N=N, lam=1.0, phi=1.0)).m
            worst = max(worst, abs(m - 6 / (N + 2)) / (6 / (N + 2)))
    ok = worst <= 1e-10 and t.elapsed < 1.0
    record(1, "threshold identity", ok, f"max rel err {worst:.2e} over N=2..1000 in {t.elapsed:.2f}s")


def test_02_founder_mean():
    p = ModelParams(d=1, N=3, lam=1.0, phi=1.0)
    with Timer() as t:
        x = founder_trials(p, 100_000, ClockStreams(20_000))
    n = len(x)
    mean_se = x.std(ddof=1) / math.sqrt(n)
    dist = offspring_pmf(p, 50)
    target = dist.p_reach * dist.p_geo
    frac = float((x >= 1).mean())
    frac_se = math.sqrt(target * (1 - target) / n)
    ok = abs(x.mean() - 1.2) <= 3 * mean_se and abs(frac - target) <= 3 * frac_se and t.elapsed < 30
    record(2, "founder mean", ok,
           f"mean {x.mean():.4f} (target 1.2, 3SE {3 * mean_se:.4f}); "
           f"P(X>=1) {frac:.4f} (target {target:.4f}, 3SE {3 * frac_se:.4f}); {t.elapsed:.1f}s")


def test_03_small_lattice_exactness():
    L, N, lam, phi = 3, 2, 0.7, 0.3
    start = (2, 0, 0)
    states, law = ring_law(L, N, lam, phi, start, 1.0)
    params = ModelParams(d=1, N=N, lam=lam, phi=phi, geometry=Torus(L))
    init = Configuration({(x,): s for x, s in enumerate(start) if s})
    n = 100_000
    counts = Counter()
    with Timer() as t:
        for trial in range(n):
            fin = run_eta(params, init, 1.0, ClockStreams.for_trial(3, trial)).final
            counts[tuple(fin[(x,)] for x in range(L))] += 1
    tv = 0.5 * sum(abs(counts[s] / n - law[k]) for k, s in enumerate(states))
    ok = tv < 0.01 and t.elapsed < 120
    record(3, "small-lattice exactness", ok, f"TV distance {tv:.4f} over {n} runs in {t.elapsed:.1f}s")


def test_04_coupling_invariant():
    params = ModelParams(d=1, N=2, lam=1.0, phi=1.0)
    total = 0
    with Timer() as t:
        for N1, N2 in [(1, 2), (2, 5), (3, 8)]:
            for seed in range(1000):
                res = run_coupled_pair(params.with_(N=N2), N1, N2, 50.0, ClockStreams.for_trial(4, seed))
                total += res.violation_count
    ok = total == 0 and t.elapsed < 120
    record(4, "N coupling invariant", ok, f"{total} violations over 3x1000 seeds in {t.elapsed:.1f}s")


def test_05_phi_domination():
    total = 0
    with Timer() as t:
        for phi in (0.0, 1.0, 5.0):
            params = ModelParams(d=1, N=3, lam=1.0, phi=phi)
            init = Configuration.single(3, 1)
            for seed in range(1000):
                res = run_phi_coupled_pair(params, 50.0, ClockStreams.for_trial(5, seed), init)
                total += res.violation_count
    ok = total == 0 and t.elapsed < 120
    record(5, "phi domination", ok, f"{total} violations over 3x1000 seeds in {t.elapsed:.1f}s")


def test_06_subcritical_extinction():
    cases = [ModelParams(d=1, N=1, lam=0.4, phi=1.0), ModelParams(d=1, N=6, lam=1.0, phi=1.0)]
    points = []
    for k, params in enumerate(cases):
        est = estimate_survival(TrialPlan(params, SingleAtOrigin(1), 500.0, 1000, base_seed=60 + k))
        points.append(est.point)
    ok = all(p <= 0.01 for p in points)
    record(6, "subcritical extinction", ok, f"survival {points[0]:.3f} (N=1, lambda=0.4), "
                                           f"{points[1]:.3f} (N=6, m=0.75)")


def test_07_supercritical_survival():
    params = ModelParams(d=1, N=3, lam=20.0, phi=0.0)
    est = estimate_survival(TrialPlan(params, SingleAtOrigin(3), 100.0, 400, base_seed=7))
    record(7, "supercritical survival", est.point > 0.5, f"survival {est.point:.3f} over 400 trials")


def test_08_monotonicity_in_N():
    template = TrialPlan(ModelParams(d=1, N=1, lam=2.0, phi=1.0), SingleAtOrigin(1), 100.0, 1000, base_seed=8)
    rows = sweep({"N": [1, 2, 4, 8]}, template)
    est = [r.estimate for r in rows]
    monotone = all(b.point <= a.point or overlapping(a, b) for a, b in zip(est, est[1:]))
    crit = estimate_critical_N(1, 2.0, 1.0, trials_per_point=1000, t_max=100.0, base_seed=8)
    bound = smallest_extinct_N(1, 1.0, lambda N: 2.0, 10_000)
    ok = monotone and crit.bracket_high <= bound
    record(8, "monotonicity in N", ok,
           "survival " + ", ".join(f"N={r.plan.params.N}: {r.estimate.point:.3f}" for r in rows)
           + f"; N_c bracket [{crit.bracket_low}, {crit.bracket_high}] vs analytic bound {bound}")


def test_09_gw_consistency():
    # d=1, N=3, phi=1: m = 2 lam (1 + 2 lam) / (3 + 2 lam), equal to 1 at lam = sqrt(3)/2
    lams = [0.3, 0.5, 0.7, math.sqrt(3) / 2, 0.9, 1.0, 1.2, 1.5, 2.0]
    rng = np.random.default_rng(9)
    worst = 0.0
    exact_ones = True
    ms = []
    for lam in lams:
        params = ModelParams(d=1, N=3, lam=lam, phi=1.0)
        dist = offspring_pmf(params, 200)
        res = gw_extinction(dist)
        ms.append(compute_threshold(params).m)
        if compute_threshold(params).subcritical:
            exact_ones &= res.extinction_prob == 1.0
        sim = sum(simulate_gw(dist, 1000, rng).extinct for _ in range(10_000)) / 10_000
        worst = max(worst, abs(sim - res.extinction_prob))
    straddles = min(ms) < 1 < max(ms)
    ok = worst <= 0.02 and exact_ones and straddles
    record(9, "GW consistency", ok,
           f"max |q_sim - q| = {worst:.4f} over m in [{min(ms):.2f}, {max(ms):.2f}]; q = 1 exactly for m <= 1: "
           f"{exact_ones}")


def test_10_infinite_population():
    params = ModelParams(d=1, N=6, lam=1.0, phi=1.0, geometry=Torus(200))
    series = density_decay(params, [0.0, 25.0, 50.0, 75.0, 100.0], n_trials=20, base_seed=10)
    final = float(series.mean_fraction[-1])
    record(10, "infinite-population analogue", final < 0.01,
           f"mean occupied fraction {final:.4f} at t=100 (m={series.m:.2f}, L=200, 20 trials)")


def test_11_domination_by_b():
    params = ModelParams(d=1, N=3, lam=1.0, phi=1.0)
    eta = estimate_survival(TrialPlan(params, SingleAtOrigin(3), 100.0, 1000, base_seed=11))
    b = estimate_survival(TrialPlan(params, SingleAtOrigin(3), 100.0, 1000, base_seed=11, process=BRANCHING))
    pooled = (eta.surviving + b.surviving) / (eta.n_trials + b.n_trials)
    se = math.sqrt(pooled * (1 - pooled) * (1 / eta.n_trials + 1 / b.n_trials))
    ok = eta.point <= b.point + 3 * se
    record(11, "domination by b", ok, f"survival eta {eta.point:.3f} vs b {b.point:.3f} (3 pooled SE {3 * se:.3f})")


CLI_RUNS = [
    ["threshold", "-N", "3", "--json"],
    ["gw", "-N", "3", "--lineages", "2000", "--seed", "5"],
    ["simulate", "-N", "3", "--lambda", "2", "--init", "single:3", "--t-max", "20", "--seed", "7",
     "--log-events", "events.jsonl"],
    ["survival", "-N", "2", "--lambda", "2", "--trials", "200", "--t-max", "30", "--seed", "3", "--out", "s.csv"],
    ["sweep", "--grid", "N=1,2,4", "--lambda", "2", "--trials", "100", "--t-max", "30", "--out", "w.csv"],
    ["couple-check", "--seeds", "50", "--json"],
    ["density", "-N", "6", "--torus", "40", "--trials", "3", "--t-grid", "0,5,10", "--out", "d.csv"],
]


def _cli_outputs(workdir, argv):
    for name in os.listdir(workdir):
        os.remove(os.path.join(workdir, name))
    env = dict(os.environ, SOURCE_DATE_EPOCH="1700000000")
    proc = subprocess.run([sys.executable, "-m", "flockcp.cli", *argv], cwd=workdir, env=env,
                          capture_output=True)
    files = {}
    for name in sorted(os.listdir(workdir)):
        with open(os.path.join(workdir, name), "rb") as fh:
            files[name] = fh.read()
    return proc.returncode, proc.stdout, proc.stderr, files


def test_12_determinism(tmp_path):
    mismatched = []
    for argv in CLI_RUNS:
        first = _cli_outputs(tmp_path, argv)
        second = _cli_outputs(tmp_path, argv)
        if first != second or first[0] != 0:
            mismatched.append(argv[0])
    record(12, "determinism", not mismatched,
           f"{len(CLI_RUNS) - len(mismatched)}/{len(CLI_RUNS)} commands byte-identical across repeats"
           + (f"; differing: {mismatched}" if mismatched else ""))
