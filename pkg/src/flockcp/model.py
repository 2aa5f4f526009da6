"""Parameters, lattice geometry, configurations and per-site transition rates.

A site in state ``i`` (``0 <= i <= N``) moves

* ``i -> i+1`` at rate ``i*phi + lam*n_N`` while ``i < N``, where ``n_N`` is
  the number of nearest neighbours in state ``N``;
* ``i -> 0`` at rate 1 while ``i >= 1``.

Sites are d-tuples of ints.  A :class:`Configuration` only stores non-zero
states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, List, Mapping, Tuple, Union

Site = Tuple[int, ...]

INFINITY = math.inf


@dataclass(frozen=True)
class Torus:
    """Periodic box ``[0, L)^d``."""

    L: int

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 3:
            raise ValueError(f"torus side must be an integer >= 3, got {self.L!r}")


@dataclass(frozen=True)
class SparseUnbounded:
    """The whole of Z^d; only occupied sites are ever stored."""


Geometry = Union[Torus, SparseUnbounded]


@dataclass(frozen=True)
class ModelParams:
    d: int
    N: int
    lam: float
    phi: float
    geometry: Geometry = field(default_factory=SparseUnbounded)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"d must be a positive integer, got {self.d!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not (self.lam >= 0) or math.isinf(self.lam):
            raise ValueError(f"lambda must be a finite non-negative real, got {self.lam!r}")
        if not (self.phi >= 0):
            raise ValueError(f"phi must be >= 0 or INFINITY, got {self.phi!r}")
        if not isinstance(self.geometry, (Torus, SparseUnbounded)):
            raise TypeError(f"unknown geometry {self.geometry!r}")

    @property
    def phi_infinite(self) -> bool:
        return math.isinf(self.phi)

    @property
    def is_torus(self) -> bool:
        return isinstance(self.geometry, Torus)

    def with_(self, **changes) -> "ModelParams":
        """Copy with some fields replaced."""
        values = dict(d=self.d, N=self.N, lam=self.lam, phi=self.phi, geometry=self.geometry)
        values.update(changes)
        return ModelParams(**values)


def neighbors(x: Site, geometry: Geometry, d: int) -> List[Site]:
    """The 2d nearest neighbours of ``x``, ordered axis by axis as (+1, -1)."""
    if len(x) != d:
        raise ValueError(f"site {x!r} is not {d}-dimensional")
    out = []
    if isinstance(geometry, Torus):
        L = geometry.L
        for axis in range(d):
            for step in (1, -1):
                y = list(x)
                y[axis] = (y[axis] + step) % L
                out.append(tuple(y))
    else:
        for axis in range(d):
            for step in (1, -1):
                y = list(x)
                y[axis] += step
                out.append(tuple(y))
    return out


class Configuration:
    """Sparse map site -> flock size.  Absent sites are empty.

    Treat instances as values: library code never mutates a configuration it
    did not create.
    """

    __slots__ = ("_occ",)

    def __init__(self, occupancy: Mapping[Site, int] | None = None):
        occ: Dict[Site, int] = {}
        for site, state in (occupancy or {}).items():
            state = int(state)
            if state < 0:
                raise ValueError(f"negative state {state} at {site!r}")
            if state:
                occ[tuple(int(c) for c in site)] = state
        self._occ = occ

    @classmethod
    def single(cls, state: int, d: int, origin: Site | None = None) -> "Configuration":
        return cls({origin if origin is not None else (0,) * d: state})

    @classmethod
    def all_N(cls, params: ModelParams) -> "Configuration":
        if not params.is_torus:
            raise ValueError("an all-N configuration needs a torus geometry")
        L = params.geometry.L
        return cls({site: params.N for site in _box_sites(L, params.d)})

    def __getitem__(self, site: Site) -> int:
        return self._occ.get(site, 0)

    get = __getitem__

    def __len__(self) -> int:
        return len(self._occ)

    def __iter__(self) -> Iterator[Site]:
        return iter(self._occ)

    def items(self):
        return self._occ.items()

    def as_dict(self) -> Dict[Site, int]:
        return dict(self._occ)

    def __eq__(self, other) -> bool:
        if isinstance(other, Configuration):
            return self._occ == other._occ
        return NotImplemented

    def __repr__(self) -> str:
        return f"Configuration({dict(sorted(self._occ.items()))!r})"

    def validate(self, params: ModelParams) -> None:
        """Raise ``ValueError`` unless every state and coordinate is legal."""
        for site, state in self._occ.items():
            if len(site) != params.d:
                raise ValueError(f"site {site!r} is not {params.d}-dimensional")
            if state > params.N:
                raise ValueError(f"state {state} at {site!r} exceeds N={params.N}")
            if params.is_torus and not all(0 <= c < params.geometry.L for c in site):
                raise ValueError(f"site {site!r} lies outside the torus")


def _box_sites(L: int, d: int) -> Iterable[Site]:
    import itertools

    return itertools.product(range(L), repeat=d)


@dataclass(frozen=True)
class SiteRates:
    birth: float
    death: float
    n_N: int


def count_full_neighbors(x: Site, config: Configuration, params: ModelParams) -> int:
    return sum(config[y] == params.N for y in neighbors(x, params.geometry, params.d))


def site_rates(x: Site, config: Configuration, params: ModelParams) -> SiteRates:
    if params.phi_infinite:
        raise ValueError("site_rates needs a finite phi; phi=INFINITY is the contact mode")
    i = config[x]
    n_full = count_full_neighbors(x, config, params)
    birth = i * params.phi + params.lam * n_full if i < params.N else 0.0
    return SiteRates(birth=float(birth), death=1.0 if i >= 1 else 0.0, n_N=n_full)


def rate_bearing_sites(config: Configuration, params: ModelParams) -> set:
    """Occupied sites plus the empty neighbours of full sites."""
    sites = set(config)
    for x, state in config.items():
        if state == params.N:
            sites.update(neighbors(x, params.geometry, params.d))
    return sites


def total_rate(config: Configuration, params: ModelParams) -> float:
    if params.phi_infinite:
        raise ValueError("total_rate needs a finite phi")
    total = 0.0
    for x in rate_bearing_sites(config, params):
        r = site_rates(x, config, params)
        total += r.birth + r.death
    return total
