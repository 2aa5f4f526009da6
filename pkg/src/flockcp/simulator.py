"""Exact continuous-time simulation of the flock process, its contact-process
limit (phi = INFINITY) and the dominating multi-flock process.

Solo runs use the direct Gillespie method in :mod:`flockcp._kernels`: an
exponential clock at the total rate, then an event picked proportionally to
its rate.  This is equal in law to the Poisson-clock construction; runs that
must share clocks live in :mod:`flockcp.coupling`.

On ``SparseUnbounded`` geometry the lattice is held in a dense box that is
doubled whenever an occupied site reaches its edge, so only a neighbourhood
of the population is ever stored.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from flockcp import _kernels as K
from flockcp.events import DISASTER, EXTERNAL_BIRTH, INTERNAL_BIRTH, TrajectoryEvent
from flockcp.model import Configuration, ModelParams, Site, SparseUnbounded, Torus
from flockcp.streams import ClockStreams

EXTINCT = "EXTINCT"
CENSORED = "CENSORED"
CAP_EXCEEDED = "CAP_EXCEEDED"

_KIND_NAMES = {K.KIND_INTERNAL: INTERNAL_BIRTH, K.KIND_EXTERNAL: EXTERNAL_BIRTH, K.KIND_DISASTER: DISASTER}

Observer = Callable[[TrajectoryEvent], None]


class _Box:
    """Dense window ``origin + [0, side)^d`` of the lattice, or the torus itself."""

    def __init__(self, d: int, side: int, origin: Tuple[int, ...], torus: bool):
        self.d = d
        self.side = side
        self.origin = np.asarray(origin, dtype=np.int64)
        self.torus = torus
        self.shape = (side,) * d
        n = side**d
        coords = np.stack(np.unravel_index(np.arange(n), self.shape), axis=1)
        nbr = np.empty((n, 2 * d), dtype=np.int64)
        k = 0
        for axis in range(d):
            for step in (1, -1):
                c = coords.copy()
                c[:, axis] += step
                if torus:
                    c[:, axis] %= side
                    nbr[:, k] = np.ravel_multi_index(c.T, self.shape)
                else:
                    ok = (c[:, axis] >= 0) & (c[:, axis] < side)
                    col = np.full(n, -1, dtype=np.int64)
                    col[ok] = np.ravel_multi_index(c[ok].T, self.shape)
                    nbr[:, k] = col
                k += 1
        self.nbr = nbr
        if torus:
            self.edge = np.zeros(n, dtype=np.bool_)
        else:
            self.edge = ((coords == 0) | (coords == side - 1)).any(axis=1)

    @classmethod
    def for_config(cls, params: ModelParams, config: Configuration) -> "_Box":
        d = params.d
        if isinstance(params.geometry, Torus):
            return _box(d, params.geometry.L, (0,) * d, True)
        if len(config):
            pts = np.array(list(config), dtype=np.int64)
            lo, hi = pts.min(axis=0), pts.max(axis=0)
        else:
            lo = hi = np.zeros(d, dtype=np.int64)
        extent = int((hi - lo).max()) + 1
        side = max(16 if d == 1 else 8, 2 * extent + 8)
        centre = (lo + hi) // 2
        return _box(d, side, tuple(int(c) for c in centre - side // 2), False)

    def index(self, site: Site) -> int:
        rel = np.asarray(site, dtype=np.int64) - self.origin
        return int(np.ravel_multi_index(tuple(rel), self.shape))

    def site(self, idx: int) -> Site:
        rel = np.unravel_index(int(idx), self.shape)
        return tuple(int(r + o) for r, o in zip(rel, self.origin))

    def sites(self, idx: np.ndarray) -> np.ndarray:
        rel = np.stack(np.unravel_index(idx, self.shape), axis=1)
        return rel + self.origin

    def dense(self, config: Configuration) -> np.ndarray:
        state = np.zeros(self.side**self.d, dtype=np.int64)
        for site, s in config.items():
            state[self.index(site)] = s
        return state

    def sparse(self, state: np.ndarray) -> Configuration:
        idx = np.flatnonzero(state)
        pts = self.sites(idx)
        return Configuration({tuple(int(c) for c in p): int(state[i]) for p, i in zip(pts, idx)})

    def doubled(self, state: np.ndarray) -> Tuple["_Box", np.ndarray]:
        big = _box(self.d, 2 * self.side, tuple(int(o) for o in self.origin - self.side // 2), False)
        new = np.zeros(big.side**big.d, dtype=np.int64)
        idx = np.flatnonzero(state)
        rel = self.sites(idx) - big.origin
        new[np.ravel_multi_index(tuple(rel.T), big.shape)] = state[idx]
        return big, new


# boxes are read-only once built, so repeated runs share them
_box = functools.lru_cache(maxsize=64)(_Box)


@dataclass
class RunResult:
    """Outcome of one solo run.  ``extinction_time`` is None when censored."""

    final: Configuration
    extinction_time: Optional[float]
    t_max: float
    n_events: int
    events: Optional[List[TrajectoryEvent]] = None
    occupied: Optional[np.ndarray] = None
    # total rate in force just before each recorded event
    event_rates: Optional[np.ndarray] = None

    @property
    def outcome(self) -> str:
        return EXTINCT if self.extinction_time is not None else CENSORED

    @property
    def survived(self) -> bool:
        return self.extinction_time is None


def _check_common(params: ModelParams, init: Configuration, t_max: float) -> None:
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max!r}")
    init.validate(params)


def _run_dense(params, init, t_max, streams, observer, record, snap_times, contact):
    box = _Box.for_config(params, init)
    state = box.dense(init)
    record = record or observer is not None
    snaps = np.asarray(snap_times if snap_times is not None else [], dtype=np.float64)
    snap_out = np.zeros(len(snaps), dtype=np.int64)
    phi = 0.0 if contact else float(params.phi)
    K.seed_engine(streams.kernel_seed())
    t, snap_idx, n_events = 0.0, 0, 0
    events: List[TrajectoryEvent] = []
    rates: List[np.ndarray] = []
    while True:
        status, t, snap_idx, n, ev_t, ev_x, ev_k, ev_new, ev_src, ev_rate = K.run_lattice(
            state, box.nbr, box.edge, params.N, phi, float(params.lam), contact,
            t, float(t_max), record, snaps, snap_idx, snap_out,
        )
        n_events += n
        if record and n:
            rates.append(ev_rate)
            xs = box.sites(ev_x)
            srcs = box.sites(np.maximum(ev_src, 0))
            for j in range(n):
                events.append(
                    TrajectoryEvent(
                        time=float(ev_t[j]),
                        site=tuple(int(c) for c in xs[j]),
                        kind=_KIND_NAMES[int(ev_k[j])],
                        new_state=int(ev_new[j]),
                        source=tuple(int(c) for c in srcs[j]) if ev_src[j] >= 0 else None,
                    )
                )
        if status != K.STATUS_GROW:
            break
        box, state = box.doubled(state)
    if observer is not None:
        for ev in events:
            observer(ev)
    return RunResult(
        final=box.sparse(state),
        extinction_time=t if status == K.STATUS_EXTINCT else None,
        t_max=float(t_max),
        n_events=n_events,
        events=events if record else None,
        occupied=snap_out if snap_times is not None else None,
        event_rates=np.concatenate(rates) if rates else (np.empty(0) if record else None),
    )


def run_eta(
    params: ModelParams,
    init: Configuration,
    t_max: float,
    streams: ClockStreams,
    observer: Optional[Observer] = None,
    record: bool = False,
    snap_times: Optional[Sequence[float]] = None,
) -> RunResult:
    """Simulate the flock process until extinction or ``t_max``.

    ``observer`` receives every event in time order once the run has
    finished.  ``snap_times`` (increasing) asks for the number of occupied
    sites at those times, returned in ``RunResult.occupied``.
    """
    if params.phi_infinite:
        raise ValueError("phi=INFINITY needs run_contact")
    _check_common(params, init, t_max)
    return _run_dense(params, init, t_max, streams, observer, record, snap_times, contact=False)


def run_contact(
    params: ModelParams,
    init: Configuration,
    t_max: float,
    streams: ClockStreams,
    observer: Optional[Observer] = None,
    record: bool = False,
    snap_times: Optional[Sequence[float]] = None,
) -> RunResult:
    """Two-state dynamics: ``0 -> N`` at rate ``lam * n_N``, ``N -> 0`` at rate 1.

    This is the phi = INFINITY model.  ``params.phi`` is ignored, so a finite
    phi may be passed when comparing against :func:`run_eta` at N = 1.
    """
    _check_common(params, init, t_max)
    for site, s in init.items():
        if s != params.N:
            raise ValueError(f"contact mode needs states in {{0, N}}; {site!r} has {s}")
    return _run_dense(params, init, t_max, streams, observer, record, snap_times, contact=True)


def run_process(params: ModelParams, init: Configuration, t_max: float, streams: ClockStreams, **kw) -> RunResult:
    """Dispatch on phi: contact mode for INFINITY, flock process otherwise."""
    if params.phi_infinite:
        return run_contact(params, init, t_max, streams, **kw)
    return run_eta(params, init, t_max, streams, **kw)


class BranchingConfig:
    """Site -> multiset of flock sizes, stored as a sorted tuple."""

    __slots__ = ("_flocks",)

    def __init__(self, flocks: Dict[Site, Sequence[int]] | None = None):
        out = {}
        for site, sizes in (flocks or {}).items():
            sizes = tuple(sorted(int(s) for s in sizes))
            if sizes:
                out[tuple(int(c) for c in site)] = sizes
        self._flocks = out

    @classmethod
    def single(cls, size: int, d: int) -> "BranchingConfig":
        return cls({(0,) * d: [size]})

    @classmethod
    def from_configuration(cls, config: Configuration) -> "BranchingConfig":
        return cls({site: [s] for site, s in config.items()})

    def __getitem__(self, site: Site) -> Tuple[int, ...]:
        return self._flocks.get(site, ())

    def items(self):
        return self._flocks.items()

    def __iter__(self):
        return iter(self._flocks)

    def __len__(self) -> int:
        return len(self._flocks)

    @property
    def n_flocks(self) -> int:
        return sum(len(v) for v in self._flocks.values())

    def __eq__(self, other) -> bool:
        if isinstance(other, BranchingConfig):
            return self._flocks == other._flocks
        return NotImplemented

    def __repr__(self) -> str:
        return f"BranchingConfig({dict(sorted(self._flocks.items()))!r})"


@dataclass
class BranchingResult:
    final: BranchingConfig
    outcome: str
    time: float
    t_max: float
    n_events: int
    events: Optional[List[TrajectoryEvent]] = None

    @property
    def survived(self) -> bool:
        return self.outcome != EXTINCT


def _directions(d: int) -> np.ndarray:
    out = np.zeros((2 * d, d), dtype=np.int64)
    for axis in range(d):
        out[2 * axis, axis] = 1
        out[2 * axis + 1, axis] = -1
    return out


def run_branching(
    params: ModelParams,
    init: BranchingConfig,
    t_max: float,
    flock_cap: int,
    streams: ClockStreams,
    observer: Optional[Observer] = None,
    record: bool = False,
) -> BranchingResult:
    """Simulate the multi-flock process.

    A site's new-flock rate is ``lam`` times the number of size-N *flocks*
    (not sites) among its neighbours.  The run stops with ``CAP_EXCEEDED``
    once more than ``flock_cap`` flocks are alive.
    """
    if params.phi_infinite:
        raise ValueError("the multi-flock process needs a finite phi")
    if flock_cap < 1:
        raise ValueError("flock_cap must be >= 1")
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max!r}")
    d = params.d
    rows, sizes = [], []
    for site, fl in init.items():
        if len(site) != d:
            raise ValueError(f"site {site!r} is not {d}-dimensional")
        for s in fl:
            if not 1 <= s <= params.N:
                raise ValueError(f"flock size {s} at {site!r} outside [1, {params.N}]")
            rows.append(site)
            sizes.append(s)
    fsite = np.array(rows, dtype=np.int64).reshape(len(rows), d)
    fsize = np.array(sizes, dtype=np.int64)
    torus_L = params.geometry.L if isinstance(params.geometry, Torus) else 0
    record = record or observer is not None
    K.seed_engine(streams.kernel_seed())
    status, t, out_sites, out_sizes, n_live, n_ev, ev_t, ev_x, ev_k, ev_new, ev_src = K.run_flocks(
        fsite, fsize, len(sizes), _directions(d), params.N, float(params.phi), float(params.lam),
        torus_L, 0.0, float(t_max), int(flock_cap), record,
    )
    flocks: Dict[Site, List[int]] = {}
    for p, s in zip(out_sites, out_sizes):
        flocks.setdefault(tuple(int(c) for c in p), []).append(int(s))
    events = None
    if record:
        events = [
            TrajectoryEvent(
                time=float(ev_t[j]),
                site=tuple(int(c) for c in ev_x[j]),
                kind=_KIND_NAMES[int(ev_k[j])],
                new_state=int(ev_new[j]),
                source=tuple(int(c) for c in ev_src[j]) if ev_k[j] == K.KIND_EXTERNAL else None,
            )
            for j in range(len(ev_t))
        ]
        if observer is not None:
            for ev in events:
                observer(ev)
    outcome = {K.STATUS_EXTINCT: EXTINCT, K.STATUS_CENSORED: CENSORED, K.STATUS_CAP: CAP_EXCEEDED}[status]
    return BranchingResult(
        final=BranchingConfig(flocks), outcome=outcome, time=float(t), t_max=float(t_max),
        n_events=int(n_ev), events=events,
    )


def founder_trials(params: ModelParams, n: int, streams: ClockStreams) -> np.ndarray:
    """Offspring counts of ``n`` independent isolated founders.

    Each flock gets one Exponential(1) disaster time and independent
    Exponential(i*phi + 2d*lam) climbing times; if it fills before the
    disaster it produces founders as a Poisson stream of rate ``2d*lam`` over
    the time it has left.
    """
    if params.phi_infinite:
        raise ValueError("founder trials need a finite phi")
    rng = streams.generator(1)
    c = 2 * params.d * params.lam
    death = rng.exponential(1.0, n)
    climb = np.zeros(n)
    for i in range(1, params.N):
        r = i * params.phi + c
        climb += rng.exponential(1.0 / r, n) if r > 0 else np.inf
    left = np.clip(death - climb, 0.0, None)
    return rng.poisson(c * left)


def founder_trial(params: ModelParams, streams: ClockStreams) -> int:
    return int(founder_trials(params, 1, streams)[0])
