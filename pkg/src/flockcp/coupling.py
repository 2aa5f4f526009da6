"""Processes driven by one shared set of Poisson clocks.

Every clock ``L^{x,y}``, ``F^{x,i}``, ``D^x`` owns a fixed arrival sequence
drawn from its own substream (see :class:`flockcp.streams.ClockStreams`).
An arrival is offered to every process, and each process reacts according
to its own state:

* ``L^{x,y}``: add one individual at y if x is full (own N) and y is not;
* ``F^{x,i}``: move x from i to i+1 if x is in state i and ``i <= f_limit``;
* ``D^x``: empty x.

Only clocks that can change some process are kept in the event queue.  A
clock that drops out keeps its position in its own arrival sequence and is
fast-forwarded past the current time when it becomes relevant again; the
arrivals skipped that way would have had no effect on any process.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

from flockcp.events import DISASTER, EXTERNAL_BIRTH, INTERNAL_BIRTH, TrajectoryEvent
from flockcp.model import Configuration, ModelParams, Site, neighbors
from flockcp.streams import ClockStreams

# tie order between families at equal times
_FAMILY_ORDER = {"D": 0, "F": 1, "L": 2}

Key = Tuple[str, Site, int]


class _Member:
    """One process under the shared clocks."""

    def __init__(self, params: ModelParams, init: Configuration, f_limit: Optional[int] = None):
        self.params = params
        self.N = params.N
        self.infinite = params.phi_infinite
        self.f_limit = params.N - 1 if f_limit is None else f_limit
        self.state: Dict[Site, int] = init.as_dict()
        self.events: List[TrajectoryEvent] = []

    def keys_at(self, x: Site) -> Set[Key]:
        s = self.state.get(x, 0)
        keys: Set[Key] = set()
        if s == 0:
            return keys
        keys.add(("D", x, 0))
        if s == self.N:
            if self.params.lam > 0:
                keys.update(("L", x, k) for k in range(2 * self.params.d))
        elif not self.infinite and s <= self.f_limit and self.params.phi > 0:
            keys.add(("F", x, s))
        return keys

    def apply(self, t: float, key: Key, target: Optional[Site]) -> Optional[Site]:
        """Apply one arrival; return the site that changed, if any."""
        family, x, index = key
        s = self.state.get(x, 0)
        if family == "D":
            if s == 0:
                return None
            del self.state[x]
            self.events.append(TrajectoryEvent(t, x, DISASTER, 0))
            return x
        if family == "F":
            if self.infinite or s != index or index > self.f_limit:
                return None
            self.state[x] = s + 1
            self.events.append(TrajectoryEvent(t, x, INTERNAL_BIRTH, s + 1))
            return x
        # L^{x,y}
        if s != self.N:
            return None
        sy = self.state.get(target, 0)
        if sy >= self.N:
            return None
        new = self.N if self.infinite else sy + 1
        self.state[target] = new
        self.events.append(TrajectoryEvent(t, target, EXTERNAL_BIRTH, new, source=x))
        return target

    def configuration(self) -> Configuration:
        return Configuration(self.state)


class _Clock:
    __slots__ = ("rng", "rate", "next", "live")

    def __init__(self, rng, rate: float):
        self.rng = rng
        self.rate = rate
        self.next = rng.exponential(1.0 / rate)
        self.live = False


class SharedClocks:
    """Lazily materialised Poisson clocks of the graphical construction."""

    def __init__(self, params: ModelParams, streams: ClockStreams):
        self.params = params
        self.streams = streams
        self.clocks: Dict[Key, _Clock] = {}
        self.heap: List[tuple] = []

    def rate(self, key: Key) -> float:
        family, _, index = key
        if family == "L":
            return self.params.lam
        if family == "F":
            return index * self.params.phi
        return 1.0

    def activate(self, key: Key, now: float) -> None:
        clock = self.clocks.get(key)
        if clock is None:
            family, x, index = key
            clock = _Clock(self.streams.clock(family, x, index), self.rate(key))
            self.clocks[key] = clock
        if clock.live:
            return
        while clock.next <= now:
            clock.next += clock.rng.exponential(1.0 / clock.rate)
        clock.live = True
        self._push(key, clock)

    def deactivate(self, key: Key) -> None:
        clock = self.clocks.get(key)
        if clock is not None:
            clock.live = False

    def _push(self, key: Key, clock: _Clock) -> None:
        family, x, index = key
        heapq.heappush(self.heap, (clock.next, _FAMILY_ORDER[family], x, index, family))

    def pop(self) -> Optional[Tuple[float, Key]]:
        """Next live arrival; the clock is advanced past it."""
        while self.heap:
            t, _, x, index, family = heapq.heappop(self.heap)
            key = (family, x, index)
            clock = self.clocks[key]
            if not clock.live or clock.next != t:
                continue
            clock.next += clock.rng.exponential(1.0 / clock.rate)
            self._push(key, clock)
            return t, key
        return None


@dataclass
class CoupledResult:
    configs: List[Configuration]
    trajectories: List[List[TrajectoryEvent]]
    violation_count: int
    t_end: float
    n_arrivals: int
    violations: List[Tuple[float, Site]] = field(default_factory=list)


Invariant = Callable[[List[Dict[Site, int]], Sequence[Site]], List[Site]]


def run_shared(
    members: Sequence[_Member],
    clock_params: ModelParams,
    t_max: float,
    streams: ClockStreams,
    invariant: Optional[Invariant] = None,
) -> CoupledResult:
    """Drive ``members`` from one set of clocks until all are empty or ``t_max``.

    ``invariant(states, sites)`` returns the offending sites among ``sites``.
    It runs on every occupied site at the start and at the end, and on the
    changed sites after each arrival; a site nothing touched keeps its
    relation to the other processes, so this covers every site at all times.
    """
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max!r}")
    clocks = SharedClocks(clock_params, streams)
    geometry, d = clock_params.geometry, clock_params.d
    live_keys: Dict[Site, Set[Key]] = {}

    def refresh(x: Site, now: float) -> None:
        want: Set[Key] = set()
        for m in members:
            want |= m.keys_at(x)
        have = live_keys.get(x, set())
        for key in have - want:
            clocks.deactivate(key)
        for key in sorted(want - have):
            clocks.activate(key, now)
        if want:
            live_keys[x] = want
        else:
            live_keys.pop(x, None)

    sites = set()
    for m in members:
        sites.update(m.state)
    for x in sorted(sites):
        refresh(x, 0.0)

    violations: List[Tuple[float, Site]] = []

    def check(now: float, where) -> None:
        if invariant is not None:
            for site in invariant([m.state for m in members], where):
                violations.append((now, site))

    def everywhere():
        out = set()
        for m in members:
            out.update(m.state)
        return sorted(out)

    check(0.0, everywhere())
    n_arrivals = 0
    t = 0.0
    while any(m.state for m in members):
        nxt = clocks.pop()
        if nxt is None:
            break
        t, key = nxt
        if t > t_max:
            t = t_max
            break
        n_arrivals += 1
        family, x, index = key
        target = neighbors(x, geometry, d)[index] if family == "L" else None
        changed = {m.apply(t, key, target) for m in members} - {None}
        for y in changed:
            refresh(y, t)
        if changed:
            check(t, sorted(changed))
    check(t, everywhere())
    return CoupledResult(
        configs=[m.configuration() for m in members],
        trajectories=[m.events for m in members],
        violation_count=len(violations),
        t_end=t,
        n_arrivals=n_arrivals,
        violations=violations,
    )


def run_graphical(params: ModelParams, init: Configuration, t_max: float, streams: ClockStreams) -> CoupledResult:
    """A single process built from the Poisson clocks (phi may be INFINITY)."""
    init.validate(params)
    return run_shared([_Member(params, init)], params, t_max, streams)


def _n_ordering(N1: int) -> Invariant:
    def check(states, sites):
        low, high = states
        return [x for x in sites if min(high.get(x, 0), N1) > low.get(x, 0)]

    return check


def run_coupled_pair(
    params: ModelParams,
    N1: int,
    N2: int,
    t_max: float,
    streams: ClockStreams,
    init: Optional[Configuration] = None,
) -> CoupledResult:
    """Processes with maximum flock sizes ``N1 < N2`` on the same clocks.

    The smaller process only listens to ``F^{x,i}`` for ``i <= N1 - 1``.
    The ordering ``min(eta2(x), N1) <= eta1(x)`` is checked after every
    arrival; ``violation_count`` counts failures.
    """
    if not N1 < N2:
        raise ValueError(f"need N1 < N2, got N1={N1}, N2={N2}")
    if params.phi_infinite:
        raise ValueError("the flock-size coupling needs a finite phi")
    p1, p2 = params.with_(N=N1), params.with_(N=N2)
    if init is None:
        init = Configuration.single(1, params.d)
    init.validate(p1)
    members = [_Member(p1, init), _Member(p2, init)]
    return run_shared(members, p2, t_max, streams, invariant=_n_ordering(N1))


def _dominates(states, sites):
    finite, infinite = states
    return [x for x in sites if infinite.get(x, 0) < finite.get(x, 0)]


def run_phi_coupled_pair(
    params: ModelParams,
    t_max: float,
    streams: ClockStreams,
    init: Configuration,
) -> CoupledResult:
    """Finite ``params.phi`` against phi = INFINITY on the same clocks.

    Index 0 of the result is the finite-phi process, index 1 the contact
    process; the check is ``infinite(x) >= finite(x)`` at every site.
    """
    if params.phi_infinite:
        raise ValueError("params.phi must be finite; the INFINITY partner is built here")
    init.validate(params)
    for site, s in init.items():
        if s != params.N:
            raise ValueError("the phi coupling starts from full sites only")
    members = [_Member(params, init), _Member(params.with_(phi=math.inf), init)]
    return run_shared(members, params, t_max, streams, invariant=_dominates)
