"""Pathwise boundary local time and the rejected comparison estimators.

The discrete local time credits each dwell at an assigned site z with slope
sigma_k(z) / (2 m(z)), giving an exact piecewise-linear trajectory per path.
The occupation-strip and naive graph-boundary candidates are kept as
comparison functionals.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import MismatchedLevel
from .geometry import Domain, LatticeDomain
from .partition import Assignment
from .walker import Path


@dataclass
class LocalTimeTrajectory:
    """Nondecreasing piecewise-linear accumulation of boundary local time."""

    times: np.ndarray    # breakpoints, starting at 0.0 and ending at horizon
    values: np.ndarray   # trajectory values at the breakpoints

    def at(self, t: float) -> float:
        """Exact trajectory value at any t in [0, horizon]."""
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        i = min(max(i, 0), len(self.times) - 2)
        t0, t1 = self.times[i], self.times[i + 1]
        v0, v1 = self.values[i], self.values[i + 1]
        if t1 == t0:
            return float(v1)
        return float(v0 + (v1 - v0) * (t - t0) / (t1 - t0))

    @property
    def total(self) -> float:
        return float(self.values[-1])


def _check_levels(path: Path, assignment: Assignment, lattice: LatticeDomain):
    if path.k != lattice.k or assignment.lattice is not lattice:
        raise MismatchedLevel(
            f"path level {path.k}, assignment level {assignment.k}, "
            f"lattice level {lattice.k}")


def accumulate(path: Path, assignment: Assignment,
               lattice: LatticeDomain) -> LocalTimeTrajectory:
    """Exact local-time trajectory of a path, O(1) work per jump."""
    _check_levels(path, assignment, lattice)
    slopes = assignment.slopes()
    starts = np.concatenate([[0.0], path.jump_times])
    ends = np.concatenate([path.jump_times, [path.horizon]])
    increments = slopes[path.sites] * (ends - starts)
    times = np.concatenate([[0.0], ends])
    values = np.concatenate([[0.0], np.cumsum(increments)])
    return LocalTimeTrajectory(times=times, values=values)


def stieltjes_integral(path: Path, assignment: Assignment,
                       lattice: LatticeDomain, f, time_dependent: bool = False,
                       tol: float = 1e-10) -> float:
    """Integral of f against the local time along the path.

    Time-constant f(z) uses the closed form slope * dwell per segment.  Time
    dependent f(s, z) integrates each constant-site segment by adaptive
    quadrature to the given relative tolerance.
    """
    _check_levels(path, assignment, lattice)
    slopes = assignment.slopes()
    total = 0.0
    for site, t0, t1 in path.dwell_segments():
        c = slopes[site]
        if c == 0.0 or t1 <= t0:
            continue
        if not time_dependent:
            total += f(int(site)) * c * (t1 - t0)
        else:
            val, _ = quad(lambda s: f(s, int(site)), t0, t1,
                          epsabs=0.0, epsrel=tol, limit=200)
            total += c * val
    return total


def occupation_candidate(path: Path, lattice: LatticeDomain, domain: Domain,
                         delta: float) -> float:
    """Strip-occupation estimator: time spent within delta of the boundary,
    scaled by 1/(2 delta)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    in_strip = domain.dist_to_boundary(lattice.coords) < delta
    occ = 0.0
    for site, t0, t1 in path.dwell_segments():
        if in_strip[site]:
            occ += t1 - t0
    return occ / (2.0 * delta)


def naive_boundary_time(path: Path, lattice: LatticeDomain) -> float:
    """Graph-boundary occupation scaled by 2^(k-1)."""
    occ = 0.0
    for site, t0, t1 in path.dwell_segments():
        if lattice.boundary_mask[site]:
            occ += t1 - t0
    return occ * 2.0 ** (lattice.k - 1)


def accumulate_by_patches(path: Path, assignment: Assignment,
                          lattice: LatticeDomain) -> float:
    """Total local time via the double sum over (patch, site) pairs.

    Independent of accumulate(): spreads each patch mass over its sites
    explicitly instead of pre-aggregating sigma_k.
    """
    _check_levels(path, assignment, lattice)
    occupation = np.zeros(lattice.n_sites)
    for site, t0, t1 in path.dwell_segments():
        occupation[site] += t1 - t0
    total = 0.0
    for patch, sites in zip(assignment.patches, assignment.sites_for_patch):
        share = patch.sigma / len(sites)
        for z in sites:
            total += 0.5 * occupation[z] * share / lattice.m[z]
    return total


def shift_path(path: Path, t: float) -> Path:
    """The path time-shifted by t (theta_t omega), horizon reduced by t."""
    if not 0.0 <= t <= path.horizon:
        raise ValueError("shift time outside [0, horizon]")
    i = int(np.searchsorted(path.jump_times, t, side="right"))
    return Path(jump_times=path.jump_times[i:] - t, sites=path.sites[i:],
                horizon=path.horizon - t, k=path.k)
