import math

import pytest

from flockcp import coupling
from flockcp.coupling import SharedClocks, run_coupled_pair, run_graphical, run_phi_coupled_pair, run_shared
from flockcp.events import DISASTER, INTERNAL_BIRTH
from flockcp.model import Configuration, ModelParams, Torus, neighbors, site_rates
from flockcp.streams import ClockStreams


def P(d=1, N=2, lam=1.0, phi=1.0, **kw):
    return ModelParams(d=d, N=N, lam=lam, phi=phi, **kw)


def test_pair_needs_ordered_sizes():
    with pytest.raises(ValueError):
        run_coupled_pair(P(), 3, 3, 1.0, ClockStreams(0))


def test_pair_starts_equal_and_first_event_shared():
    res = run_coupled_pair(P(lam=2.0, phi=1.0), 2, 5, 20.0, ClockStreams(3))
    a, b = res.trajectories
    assert a and b
    assert a[0] == b[0]


@pytest.mark.parametrize("d, lam, phi, N1, N2", [(1, 2.0, 1.0, 2, 5), (2, 0.5, 0.5, 1, 3), (1, 3.0, 0.2, 3, 4)])
def test_flock_size_ordering_holds(d, lam, phi, N1, N2):
    total = 0
    for s in range(1000):
        res = run_coupled_pair(P(d=d, lam=lam, phi=phi), N1, N2, 10.0, ClockStreams.for_trial(s, 0))
        total += res.violation_count
    assert total == 0


def test_smaller_process_survives_at_least_as_often():
    # the smaller N process dominates, so it is alive whenever the larger one is
    for s in range(200):
        res = run_coupled_pair(P(lam=2.5, phi=1.0), 1, 3, 10.0, ClockStreams(s))
        low, high = res.configs
        if len(high):
            assert len(low)


def test_phi_pair_dominance():
    init = Configuration({(0,): 3, (1,): 3})
    total = 0
    for s in range(1000):
        res = run_phi_coupled_pair(P(N=3, lam=1.5, phi=0.8), 10.0, ClockStreams(s), init)
        total += res.violation_count
        finite, infinite = res.configs
        assert all(infinite[x] >= v for x, v in finite.items())
    assert total == 0


def test_phi_pair_rejects_partial_sites():
    with pytest.raises(ValueError):
        run_phi_coupled_pair(P(N=3), 1.0, ClockStreams(0), Configuration.single(2, 1))


def test_broken_coupling_is_detected(monkeypatch):
    # a smaller process that ignores its seeding clocks must break the order
    original = coupling._Member.apply

    def lazy_apply(self, t, key, target):
        if key[0] == "L" and self.N < 5:
            return None
        return original(self, t, key, target)

    monkeypatch.setattr(coupling._Member, "apply", lazy_apply)
    total = sum(run_coupled_pair(P(lam=2.0, phi=1.0), 1, 5, 20.0, ClockStreams(s)).violation_count
                for s in range(50))
    assert total > 0


def test_clock_sequences_are_reproducible():
    p = P(d=2, lam=1.0, phi=1.0)

    def arrivals(seed):
        clocks = SharedClocks(p, ClockStreams(seed))
        for key in [("D", (0, 0), 0), ("F", (0, 0), 1), ("L", (1, 0), 2)]:
            clocks.activate(key, 0.0)
        return [clocks.pop() for _ in range(30)]

    assert arrivals(4) == arrivals(4)
    assert arrivals(4) != arrivals(5)


def test_clock_rates():
    # disaster clock inter-arrivals average 1
    p = P(phi=2.0)
    clocks = SharedClocks(p, ClockStreams(12))
    clocks.activate(("D", (0,), 0), 0.0)
    n = 20_000
    last = 0.0
    for _ in range(n):
        t, _ = clocks.pop()
        last = t
    assert abs(last / n - 1.0) < 3 / math.sqrt(n)


def test_graphical_single_process_is_legal(replay_events):
    p = P(d=1, N=3, lam=1.5, phi=0.7, geometry=Torus(6))
    init = Configuration({(x,): 3 for x in range(6)})
    res = run_graphical(p, init, 10.0, ClockStreams(2))
    events = res.trajectories[0]
    assert events
    for config, ev in replay_events(init, events):
        if ev is None:
            assert config == res.configs[0]
            break
        before = config[ev.site]
        if ev.kind == DISASTER:
            assert before >= 1
        else:
            assert ev.new_state == before + 1 and site_rates(ev.site, config, p).birth > 0
            if ev.kind == INTERNAL_BIRTH:
                assert before >= 1
            else:
                assert ev.source in neighbors(ev.site, p.geometry, p.d)


def test_graphical_empty_init():
    res = run_graphical(P(), Configuration(), 5.0, ClockStreams(1))
    assert res.n_arrivals == 0 and res.configs[0] == Configuration()
