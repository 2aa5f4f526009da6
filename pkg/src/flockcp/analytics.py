"""Extinction threshold, founder offspring law and Galton-Watson tools.

A founder starts a flock of size 1 in the dominating branching process.  The
flock climbs from i to i+1 at rate ``i*phi + 2d*lam`` and is destroyed at rate
1.  Once it is full it produces new founders at total rate ``2d*lam`` until it
dies.  Writing ``c = 2d*lam``:

* ``p_reach = prod_{i=1}^{N-1} (i*phi + c) / (1 + i*phi + c)``
* ``P(X = k) = p_geo**k * (1 - p_geo) * p_reach`` for ``k >= 1``, with
  ``p_geo = c / (c + 1)``
* ``m = E[X] = c * p_reach``.

Founders form a Galton-Watson process which dies out iff ``m <= 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from flockcp.model import ModelParams

# m within this relative distance of 1 is treated as exactly critical, so that
# telescoping cases such as m = 2*3/(N+2) at N = 4 are classified correctly.
CRITICAL_RTOL = 1e-12

FIXED_POINT_TOL = 1e-12
FIXED_POINT_MAX_ITER = 1_000_000


@dataclass(frozen=True)
class ThresholdReport:
    m: float
    p_reach: float
    log_m: float

    @property
    def subcritical(self) -> bool:
        """True when extinction of finite populations is guaranteed (m <= 1)."""
        return is_at_most_one(self.m)


def is_at_most_one(m: float) -> bool:
    return m <= 1.0 + CRITICAL_RTOL


def _log_reach_factors(N: int, phi: float, c: float) -> float:
    """Sum over i=1..N-1 of log((i*phi + c) / (1 + i*phi + c))."""
    if N <= 1:
        return 0.0
    i = np.arange(1, N, dtype=np.float64)
    a = i * phi + c
    if a[0] == 0.0:
        return -math.inf
    return float(-np.log1p(1.0 / a).sum())


def compute_threshold(params: ModelParams) -> ThresholdReport:
    if params.phi_infinite:
        raise ValueError("the threshold m is defined for finite phi only")
    c = 2 * params.d * params.lam
    log_reach = _log_reach_factors(params.N, params.phi, c)
    p_reach = math.exp(log_reach)
    log_m = math.log(c) + log_reach if c > 0 else -math.inf
    return ThresholdReport(m=c * p_reach, p_reach=p_reach, log_m=log_m)


def threshold_naive(params: ModelParams) -> float:
    """Direct product form of m; only stable for moderate N."""
    c = 2 * params.d * params.lam
    m = c
    for i in range(1, params.N):
        m *= 1.0 - 1.0 / (1.0 + i * params.phi + c)
    return m


@dataclass(frozen=True)
class OffspringDist:
    """Founder offspring law, truncated at ``k_max``.

    ``pmf[k]`` is exact for ``0 <= k <= k_max``; the probability of
    ``X > k_max`` is kept in ``remainder`` instead of being renormalised away.
    """

    p_geo: float
    p_reach: float
    pmf: np.ndarray
    remainder: float

    @property
    def k_max(self) -> int:
        return len(self.pmf) - 1

    @property
    def truncated_mean(self) -> float:
        return float(np.dot(np.arange(len(self.pmf)), self.pmf))

    @property
    def tail_mean(self) -> float:
        """E[X; X > k_max] in closed form."""
        p = self.p_geo
        if p == 0.0:
            return 0.0
        K = self.k_max
        # sum_{k>K} k p^k (1-p) = p^{K+1} (K + 1 + p/(1-p))
        return self.p_reach * p ** (K + 1) * (K + 1 + p / (1.0 - p))

    @property
    def mean(self) -> float:
        return self.truncated_mean + self.tail_mean


def offspring_pmf(params: ModelParams, k_max: int) -> OffspringDist:
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    report = compute_threshold(params)
    c = 2 * params.d * params.lam
    p_geo = c / (c + 1.0)
    k = np.arange(k_max + 1, dtype=np.float64)
    pmf = p_geo**k * (1.0 - p_geo) * report.p_reach
    pmf[0] = 1.0 - p_geo * report.p_reach
    remainder = report.p_reach * p_geo ** (k_max + 1)
    return OffspringDist(p_geo=p_geo, p_reach=report.p_reach, pmf=pmf, remainder=remainder)


def founder_mean(dist: OffspringDist) -> float:
    """m implied by the defective geometric parameters."""
    if dist.p_geo == 0.0:
        return 0.0
    return dist.p_reach * dist.p_geo / (1.0 - dist.p_geo)


@dataclass(frozen=True)
class GwResult:
    extinction_prob: float
    is_subcritical: bool


def pgf(dist: OffspringDist, s: float) -> float:
    """Offspring pgf from the truncated pmf; the tail mass is placed at k_max+1."""
    powers = s ** np.arange(len(dist.pmf))
    return float(np.dot(dist.pmf, powers) + dist.remainder * s ** len(dist.pmf))


def _fixed_point(G: Callable[[float], float]) -> float:
    q = 0.0
    for _ in range(FIXED_POINT_MAX_ITER):
        nxt = G(q)
        if abs(nxt - q) < FIXED_POINT_TOL:
            return min(nxt, 1.0)
        q = nxt
    return min(q, 1.0)


def gw_extinction(dist: OffspringDist, method: str = "closed") -> GwResult:
    """Smallest root of ``q = G(q)`` on [0, 1].

    ``method="closed"`` uses the rational pgf of the defective geometric law,
    whose non-trivial root is ``(1 - p_reach*p_geo) / p_geo``.
    ``method="iterate"`` runs ``q <- G(q)`` from 0 on the truncated pmf and
    works for any offspring pmf.
    """
    m = founder_mean(dist) if method == "closed" else dist.mean
    subcritical = is_at_most_one(m)
    if dist.pmf[0] >= 1.0 or subcritical:
        return GwResult(extinction_prob=1.0, is_subcritical=subcritical)
    if method == "closed":
        p = dist.p_geo
        q = (1.0 - dist.p_reach * p) / p
    elif method == "iterate":
        q = _fixed_point(lambda s: pgf(dist, s))
    else:
        raise ValueError(f"unknown method {method!r}")
    return GwResult(extinction_prob=min(q, 1.0), is_subcritical=False)


@dataclass
class GwRun:
    extinct: bool
    trajectory: List[int]


def _offspring_total(rng: np.random.Generator, dist: OffspringDist, z: int) -> int:
    """Total offspring of ``z`` independent founders."""
    reached = int(rng.binomial(z, dist.p_reach)) if dist.p_reach < 1.0 else z
    if reached == 0 or dist.p_geo == 0.0:
        return 0
    # each full flock yields Geometric0(p_geo) founders; their sum is negative binomial
    return int(rng.negative_binomial(reached, 1.0 - dist.p_geo))


def simulate_gw(
    dist: OffspringDist,
    generations: int,
    seed=None,
    population_cap: int = 10_000,
) -> GwRun:
    """One Galton-Watson lineage from ``Z_0 = 1``.

    Stops early on extinction or once ``Z_n`` exceeds ``population_cap``; an
    escape counts as survival.
    """
    if generations < 1:
        raise ValueError("generations must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = 1
    traj = [z]
    for _ in range(generations):
        z = _offspring_total(rng, dist, z)
        traj.append(z)
        if z == 0:
            return GwRun(extinct=True, trajectory=traj)
        if z > population_cap:
            break
    return GwRun(extinct=False, trajectory=traj)


def smallest_extinct_N(
    d: int,
    phi: float,
    lambda_of_N: Callable[[int], float],
    N_max: int,
) -> Optional[int]:
    """Smallest N in [1, N_max] with m(N) <= 1, or None."""
    if N_max < 1:
        raise ValueError("N_max must be >= 1")
    for N in range(1, N_max + 1):
        if compute_threshold(ModelParams(d=d, N=N, lam=lambda_of_N(N), phi=phi)).subcritical:
            return N
    return None


def m_profile(d: int, phi: float, lambda_of_N: Callable[[int], float], Ns) -> List[Tuple[int, float]]:
    """(N, m(N)) pairs for a lambda schedule."""
    return [(N, compute_threshold(ModelParams(d=d, N=N, lam=lambda_of_N(N), phi=phi)).m) for N in Ns]
