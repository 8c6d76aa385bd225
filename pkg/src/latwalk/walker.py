"""Continuous- and discrete-time random walks on lattice domains.

The simple walk jumps at the constant rate d * 2^(2k) and picks a uniform
lattice neighbor.  The biased walk is the conductance walk with symmetric
edge weights mu_xy built from a log-density h and jump rate a(x) * d / eps^2;
with h = 0 and a = 1 it reduces exactly to the simple walk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonpositiveWeight
from .geometry import LatticeDomain

SIMPLE = "simple"
BIASED = "biased"
CONTINUOUS = "continuous"
DISCRETE = "discrete-interpolated"


@dataclass
class Conductances:
    """Symmetric positive edge weights aligned with the lattice neighbor slots."""

    mu: np.ndarray        # (n, 2d), 0.0 in empty slots
    mu_total: np.ndarray  # (n,)

    def symmetry_error(self, lattice: LatticeDomain) -> float:
        worst = 0.0
        for slot in range(lattice.neighbors.shape[1]):
            back = slot + 1 if slot % 2 == 0 else slot - 1
            nb = lattice.neighbors[:, slot]
            ok = nb >= 0
            worst = max(worst, np.abs(
                self.mu[ok, slot] - self.mu[nb[ok], back]).max(initial=0.0))
        return worst


def build_conductances(lattice: LatticeDomain, h_fn) -> Conductances:
    """Edge weights mu from the drift potential h.

    For an edge lo -> hi along axis i (hi = lo + eps e_i) with at least one
    interior endpoint:

        mu = (1 + h(hi) - h(lo)) * (e^{2 h(lo)} + e^{2 h(hi)}) / 2 * eps^{d-2} / 2

    Edges between two graph-boundary sites get eps^{d-2} / 2.  A single value
    per undirected edge makes the symmetry mu_xy = mu_yx exact by construction.
    Raises NonpositiveWeight if 1 + h-increment <= 0 anywhere.
    """
    eps = lattice.h
    d = lattice.dim
    base = eps ** (d - 2) / 2.0
    hv = np.asarray(h_fn(lattice.coords), float)
    if hv.shape != (lattice.n_sites,):
        hv = np.broadcast_to(hv, (lattice.n_sites,)).astype(float)
    e2h = np.exp(2.0 * hv)
    interior = ~lattice.boundary_mask

    mu = np.zeros_like(lattice.neighbors, dtype=float)
    for axis in range(d):
        up = 2 * axis          # slot of +e_i: lo -> hi
        lo_idx = np.flatnonzero(lattice.neighbors[:, up] >= 0)
        hi_idx = lattice.neighbors[lo_idx, up]
        inc = 1.0 + hv[hi_idx] - hv[lo_idx]
        avg = 0.5 * (e2h[lo_idx] + e2h[hi_idx])
        w = inc * avg * base
        both_boundary = ~(interior[lo_idx] | interior[hi_idx])
        w[both_boundary] = base
        bad = (~both_boundary) & (inc <= 0.0)
        if bad.any():
            raise NonpositiveWeight(
                "h increment makes a conductance <= 0; refine the lattice")
        mu[lo_idx, up] = w
        mu[hi_idx, 2 * axis + 1] = w
    return Conductances(mu=mu, mu_total=mu.sum(axis=1))


@dataclass
class WalkConfig:
    """A walk on a lattice: jump rates and one-step law, ready to simulate.

    neighbors/probs/cum are (n, 2d) arrays aligned with the lattice slots;
    empty slots carry probability 0 and the site's own index.
    """

    lattice: LatticeDomain
    kind: str = SIMPLE
    time_mode: str = CONTINUOUS
    a_fn: object = None
    h_fn: object = None
    rates: np.ndarray = field(default=None, repr=False)
    probs: np.ndarray = field(default=None, repr=False)
    cum: np.ndarray = field(default=None, repr=False)
    padded_neighbors: np.ndarray = field(default=None, repr=False)
    conductances: Conductances | None = field(default=None, repr=False)
    stationary_m: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        lat = self.lattice
        d = lat.dim
        self.padded_neighbors = np.where(
            lat.neighbors >= 0, lat.neighbors,
            np.arange(lat.n_sites)[:, None])
        if self.kind == SIMPLE:
            self.rates = np.full(lat.n_sites, d * 4.0 ** lat.k)
            self.probs = np.where(lat.neighbors >= 0,
                                  1.0 / lat.degree[:, None], 0.0)
            self.stationary_m = lat.m
        elif self.kind == BIASED:
            h_fn = self.h_fn if self.h_fn is not None else (lambda x: np.zeros(len(x)))
            self.conductances = build_conductances(lat, h_fn)
            a = (np.asarray(self.a_fn(lat.coords), float)
                 if self.a_fn is not None else np.ones(lat.n_sites))
            a = np.broadcast_to(a, (lat.n_sites,)).astype(float)
            if (a <= 0).any():
                raise ValueError("a(x) must be strictly positive")
            self.rates = a * d / lat.h ** 2
            self.probs = self.conductances.mu / self.conductances.mu_total[:, None]
            self.stationary_m = self.conductances.mu_total / self.rates
        else:
            raise ValueError(f"unknown walk kind {self.kind!r}")
        if self.time_mode == DISCRETE and np.ptp(self.rates) > 1e-12 * self.rates[0]:
            raise ValueError(
                "discrete-interpolated mode needs a constant jump rate; "
                "biased walks with nonconstant a(x) must run in continuous time")
        if self.time_mode not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"unknown time mode {self.time_mode!r}")
        self.cum = np.cumsum(self.probs, axis=1)
        # Pin each row's final entry to exactly 1 so u in [0,1) never lands
        # past the last real slot (padded slots keep zero-width intervals).
        self.cum /= self.cum[:, -1:]

    @property
    def tick(self) -> float:
        """Deterministic step length of the discrete-interpolated mode."""
        return 1.0 / float(self.rates[0])

    def row_sum_error(self) -> float:
        return float(np.abs(self.probs.sum(axis=1) - 1.0).max())


def make_walk(lattice: LatticeDomain, kind: str = SIMPLE,
              time_mode: str = CONTINUOUS, a=None, h=None) -> WalkConfig:
    return WalkConfig(lattice=lattice, kind=kind, time_mode=time_mode,
                      a_fn=a, h_fn=h)


@dataclass
class Path:
    """One cadlag walk realization: the walk sits on sites[i] during
    [jump_times[i-1], jump_times[i]) with jump_times[-1] capped at horizon."""

    jump_times: np.ndarray
    sites: np.ndarray
    horizon: float
    k: int

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def site_at(self, t: float) -> int:
        """Cadlag state at time t in [0, horizon]."""
        return int(self.sites[np.searchsorted(self.jump_times, t, side="right")])

    def dwell_segments(self):
        """(site, start, end) triples covering [0, horizon]."""
        starts = np.concatenate([[0.0], self.jump_times])
        ends = np.concatenate([self.jump_times, [self.horizon]])
        return zip(self.sites, starts, ends)


def path_rng(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based per-path stream: (seed, path_index) -> independent Philox."""
    ss = np.random.SeedSequence(seed, spawn_key=(path_index,))
    return np.random.Generator(np.random.Philox(ss))


def stationary_sample(config: WalkConfig, rng: np.random.Generator) -> int:
    """Sample a site with probability proportional to the stationary measure."""
    m = config.stationary_m
    cum = np.cumsum(m)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


def simulate_path(config: WalkConfig, start, T: float, seed: int,
                  path_index: int = 0) -> Path:
    """Simulate one path up to horizon T.

    start is a site index or the token "stationary".  Identical
    (seed, path_index) pairs give bit-identical paths regardless of how many
    other paths run concurrently.
    """
    if T < 0:
        raise ValueError("T must be >= 0")
    rng = path_rng(seed, path_index)
    if isinstance(start, str):
        if start != "stationary":
            raise ValueError(f"unknown start token {start!r}")
        site = stationary_sample(config, rng)
    else:
        site = int(start)

    times: list[float] = []
    sites: list[int] = [site]
    t = 0.0
    discrete = config.time_mode == DISCRETE
    tick = config.tick if discrete else 0.0
    while True:
        if discrete:
            t_next = t + tick
        else:
            t_next = t + rng.exponential(1.0 / config.rates[site])
        if t_next > T:
            break
        u = rng.random()
        slot = int(np.searchsorted(config.cum[site], u, side="right"))
        slot = min(slot, config.cum.shape[1] - 1)
        site = int(config.padded_neighbors[site, slot])
        times.append(t_next)
        sites.append(site)
        t = t_next
    return Path(jump_times=np.asarray(times), sites=np.asarray(sites, dtype=np.int64),
                horizon=T, k=config.lattice.k)
