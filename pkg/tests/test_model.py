import itertools

import pytest
from hypothesis import given, settings, strategies as st

from flockcp.model import (
    INFINITY,
    Configuration,
    ModelParams,
    SparseUnbounded,
    Torus,
    neighbors,
    site_rates,
    total_rate,
)


def test_neighbors_sparse_2d():
    assert set(neighbors((0, 0), SparseUnbounded(), 2)) == {(1, 0), (-1, 0), (0, 1), (0, -1)}


@pytest.mark.parametrize("x, L, expected", [((0,), 5, {(1,), (4,)}), ((3,), 4, {(0,), (2,)})])
def test_neighbors_torus_wrap(x, L, expected):
    assert set(neighbors(x, Torus(L), 1)) == expected


def test_neighbors_count_and_order():
    nb = neighbors((2, 5, 7), SparseUnbounded(), 3)
    assert nb == [(3, 5, 7), (1, 5, 7), (2, 6, 7), (2, 4, 7), (2, 5, 8), (2, 5, 6)]


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(d=1, N=0, lam=1, phi=1)
    with pytest.raises(ValueError):
        ModelParams(d=0, N=1, lam=1, phi=1)
    with pytest.raises(ValueError):
        ModelParams(d=1, N=1, lam=-1, phi=1)
    with pytest.raises(ValueError):
        ModelParams(d=1, N=1, lam=1, phi=-0.5)
    with pytest.raises(ValueError):
        Torus(2)
    assert ModelParams(d=1, N=2, lam=1, phi=INFINITY).phi_infinite


def test_configuration_drops_zeros_and_validates():
    c = Configuration({(0,): 2, (1,): 0})
    assert len(c) == 1 and c[(1,)] == 0
    with pytest.raises(ValueError):
        c.validate(ModelParams(d=1, N=1, lam=1, phi=1))
    with pytest.raises(ValueError):
        Configuration({(7,): 1}).validate(ModelParams(d=1, N=1, lam=1, phi=1, geometry=Torus(5)))


def test_site_rates_examples():
    p = ModelParams(d=1, N=3, lam=1.0, phi=0.5)
    c = Configuration({(0,): 2, (1,): 3, (-1,): 3})
    r = site_rates((0,), c, p)
    assert (r.birth, r.death, r.n_N) == (3.0, 1.0, 2)
    r = site_rates((1,), c, p)
    assert (r.birth, r.death) == (0.0, 1.0)
    r = site_rates((10,), c, p)
    assert (r.birth, r.death, r.n_N) == (0.0, 0.0, 0)


def test_site_rates_rejects_infinite_phi():
    with pytest.raises(ValueError):
        site_rates((0,), Configuration(), ModelParams(d=1, N=2, lam=1, phi=INFINITY))


def test_total_rate_examples():
    assert total_rate(Configuration(), ModelParams(d=1, N=2, lam=1, phi=1)) == 0
    assert total_rate(Configuration({(0,): 1}), ModelParams(d=1, N=2, lam=1, phi=1)) == 2
    assert total_rate(Configuration({(0,): 1}), ModelParams(d=1, N=1, lam=1, phi=1)) == 3


def _random_config(draw, L, d, N):
    states = draw(st.lists(st.integers(0, N), min_size=L**d, max_size=L**d))
    return Configuration(dict(zip(itertools.product(range(L), repeat=d), states)))


@st.composite
def torus_case(draw):
    d = draw(st.integers(1, 2))
    L = draw(st.integers(3, 5))
    N = draw(st.integers(1, 4))
    lam = draw(st.floats(0, 5))
    phi = draw(st.floats(0, 5))
    p = ModelParams(d=d, N=N, lam=lam, phi=phi, geometry=Torus(L))
    return p, _random_config(draw, L, d, N)


@settings(max_examples=60, deadline=None)
@given(torus_case())
def test_site_rates_bounded(case):
    p, c = case
    for x in itertools.product(range(p.geometry.L), repeat=p.d):
        r = site_rates(x, c, p)
        assert r.birth <= p.N * p.phi + 2 * p.d * p.lam + 1e-12
        assert r.death in (0.0, 1.0)
        assert 0 <= r.n_N <= 2 * p.d


@settings(max_examples=60, deadline=None)
@given(torus_case())
def test_total_rate_matches_brute_force(case):
    p, c = case
    brute = 0.0
    for x in itertools.product(range(p.geometry.L), repeat=p.d):
        i = c[x]
        n_full = sum(c[y] == p.N for y in neighbors(x, p.geometry, p.d))
        brute += (i * p.phi + p.lam * n_full if i < p.N else 0.0) + (1.0 if i else 0.0)
    assert total_rate(c, p) == pytest.approx(brute, rel=1e-12, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(torus_case())
def test_only_full_sites_export_births(case):
    p, c = case
    c = Configuration({x: min(s, p.N - 1) for x, s in c.items()})
    for x in itertools.product(range(p.geometry.L), repeat=p.d):
        assert site_rates(x, c, p).birth == pytest.approx(c[x] * p.phi)
