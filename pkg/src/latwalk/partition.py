"""Boundary partitions into comparable-size patches and patch-to-site assignments.

Each boundary piece carries its surface mass sigma(lambda) and a midpoint
anchor.  Assignments tie every patch to nearby lattice sites (within
alpha * 2^-k) and spread the patch mass evenly over them, producing the
per-site boundary masses sigma_k used by the local time accumulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.spatial import cKDTree

from .errors import AlphaTooSmall, ModeUnsatisfiable, UnsupportedDomain
from .geometry import Domain, LatticeDomain, _point_segment_dist

NEAREST_SINGLE = "nearest-single"
COVER_GRAPH_BOUNDARY = "cover-graph-boundary"


def default_alpha(domain: Domain) -> float:
    """Smallest safe margin above the admissibility threshold sqrt(1 + M^2)."""
    return 1.01 * math.sqrt(1.0 + domain.lipschitz_m ** 2)


@dataclass(frozen=True)
class BoundaryPatch:
    """One piece of the boundary partition.

    support is kind-specific: a point (1-D), a segment (a, b) in 2-D, or an
    axis-aligned rectangle (corner, corner) on a box face in 3-D.
    """

    id: int
    kind: str                      # "point", "segment", "rect"
    support: tuple
    sigma: float
    anchor: np.ndarray

    def dist(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        if self.kind == "point":
            return np.linalg.norm(pts - np.asarray(self.support[0]), axis=1)
        if self.kind == "segment":
            a, b = (np.asarray(p, float) for p in self.support)
            return _point_segment_dist(pts, a, b)
        lo, hi = (np.asarray(p, float) for p in self.support)
        clipped = np.clip(pts, lo, hi)
        return np.linalg.norm(pts - clipped, axis=1)


def _split_segment(a: np.ndarray, b: np.ndarray, h: float):
    """Pieces of length exactly h along a->b, the last one possibly shorter."""
    length = float(np.linalg.norm(b - a))
    n = max(1, math.ceil(length / h - 1e-12))
    direction = (b - a) / length
    cuts = [min(i * h, length) for i in range(n + 1)]
    cuts[-1] = length
    return [(a + s0 * direction, a + s1 * direction, s1 - s0)
            for s0, s1 in zip(cuts[:-1], cuts[1:])]


def build_partition(domain: Domain, k: int) -> list[BoundaryPatch]:
    """Uniform dyadic partition of the boundary at level k.

    1-D: the two endpoint patches with counting mass 1 each.  2-D: every edge
    is cut into pieces of length 2^-k (last piece shorter).  3-D box: every
    face is cut into a 2^-k grid of cells.  Piece diameters are at most
    2^-k * sqrt(d-1) and masses at most 2^-k(d-1).
    """
    h = 2.0 ** -k
    patches: list[BoundaryPatch] = []
    if domain.dim == 1:
        for p in (domain.lows[0], domain.highs[0]):
            pt = np.array([p])
            patches.append(BoundaryPatch(len(patches), "point", (pt,), 1.0, pt))
        return patches
    if domain.dim == 2:
        for a, b in domain.edges():
            # Half-open parametrization: each corner belongs to one edge only.
            for p0, p1, sigma in _split_segment(a, b, h):
                patches.append(BoundaryPatch(
                    len(patches), "segment", (p0, p1), sigma, 0.5 * (p0 + p1)))
        return patches
    if domain.kind != "box":
        raise UnsupportedDomain("3-D partitions support boxes only")
    lows, highs = np.asarray(domain.lows), np.asarray(domain.highs)
    for axis in range(3):
        u_axis, v_axis = [a for a in range(3) if a != axis]
        for fixed in (lows[axis], highs[axis]):
            u_cuts = _cuts(lows[u_axis], highs[u_axis], h)
            v_cuts = _cuts(lows[v_axis], highs[v_axis], h)
            for u0, u1 in zip(u_cuts[:-1], u_cuts[1:]):
                for v0, v1 in zip(v_cuts[:-1], v_cuts[1:]):
                    lo = np.zeros(3)
                    hi = np.zeros(3)
                    lo[axis] = hi[axis] = fixed
                    lo[u_axis], hi[u_axis] = u0, u1
                    lo[v_axis], hi[v_axis] = v0, v1
                    patches.append(BoundaryPatch(
                        len(patches), "rect", (lo, hi),
                        (u1 - u0) * (v1 - v0), 0.5 * (lo + hi)))
    return patches


def _cuts(lo: float, hi: float, h: float) -> list[float]:
    n = max(1, math.ceil((hi - lo) / h - 1e-12))
    cuts = [min(lo + i * h, hi) for i in range(n + 1)]
    cuts[-1] = hi
    return cuts


def partition_mass_constant(patches: list[BoundaryPatch], k: int, dim: int) -> float:
    """Empirical constant C with sigma(lambda) <= C * 2^-k(d-1)."""
    scale = (2.0 ** -k) ** (dim - 1)
    return max(p.sigma for p in patches) / scale


def count_patches_in_ball(patches: list[BoundaryPatch], x, s: float) -> int:
    """Number of patches meeting the open ball B(x, s)."""
    pt = np.atleast_2d(np.asarray(x, float))
    return int(sum(1 for p in patches if p.dist(pt)[0] < s))


@dataclass
class Assignment:
    """Patch-to-site assignment with the induced site masses sigma_k."""

    lattice: LatticeDomain
    patches: list[BoundaryPatch]
    alpha: float
    mode: str
    sites_for_patch: list[np.ndarray]
    sigma_k: np.ndarray
    assigned_mask: np.ndarray      # indicator of the accumulation set
    _slopes: np.ndarray | None = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.lattice.k

    def max_set_size(self) -> int:
        return max(len(s) for s in self.sites_for_patch)

    def max_dist_ratio(self) -> float:
        """max over (patch, assigned site) of dist(site, patch) / 2^-k."""
        worst = 0.0
        for patch, sites in zip(self.patches, self.sites_for_patch):
            if len(sites):
                worst = max(worst, patch.dist(self.lattice.coords[sites]).max())
        return worst / self.lattice.h

    def slopes(self) -> np.ndarray:
        """Local-time slope per site: sigma_k(z) / (2 m(z)) on the assigned set."""
        if self._slopes is None:
            self._slopes = 0.5 * self.sigma_k / self.lattice.m
        return self._slopes

    def patch_ids_for_site(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.lattice.n_sites)]
        for patch, sites in zip(self.patches, self.sites_for_patch):
            for z in sites:
                out[int(z)].append(patch.id)
        return out


def _nearest_site(lattice: LatticeDomain, tree: cKDTree, point: np.ndarray) -> int:
    """Nearest site to a point; exact ties break lexicographically."""
    kq = min(4, lattice.n_sites)
    dist, idx = tree.query(np.atleast_1d(point), k=kq)
    dist, idx = np.atleast_1d(dist), np.atleast_1d(idx)
    close = idx[dist <= dist[0] * (1 + 1e-12) + 1e-300]
    if close.size == 1:
        return int(close[0])
    order = np.lexsort(lattice.ints[close].T[::-1])
    return int(close[order[0]])


def assign_patches(patches: list[BoundaryPatch], lattice: LatticeDomain,
                   alpha: float | None = None,
                   mode: str = NEAREST_SINGLE) -> Assignment:
    """Assign lattice sites to boundary patches and build sigma_k.

    nearest-single: each patch gets the single site nearest to its anchor.
    cover-graph-boundary: every graph-boundary site joins the patch with the
    nearest anchor among patches within alpha * 2^-k of the site, and every
    patch keeps its nearest graph-boundary site so none is empty.  Total mass
    is conserved exactly: sum_z sigma_k(z) = sum_lambda sigma(lambda).
    """
    domain = lattice.domain
    if alpha is None:
        alpha = default_alpha(domain)
    threshold = math.sqrt(1.0 + domain.lipschitz_m ** 2)
    if alpha <= threshold:
        raise AlphaTooSmall(
            f"alpha={alpha:.6g} must exceed sqrt(1+M^2)={threshold:.6g}")
    max_dist = alpha * lattice.h

    site_tree = cKDTree(lattice.coords)
    sites_for_patch: list[list[int]] = [[] for _ in patches]

    if mode == NEAREST_SINGLE:
        for patch in patches:
            z = _nearest_site(lattice, site_tree, patch.anchor)
            if patch.dist(lattice.coords[[z]])[0] > max_dist:
                raise AlphaTooSmall(
                    f"patch {patch.id} has no site within alpha*2^-k={max_dist:.6g}")
            sites_for_patch[patch.id].append(z)
    elif mode == COVER_GRAPH_BOUNDARY:
        boundary_sites = np.flatnonzero(lattice.boundary_mask)
        anchors = np.stack([p.anchor for p in patches])
        anchor_tree = cKDTree(anchors)
        # Patch support lies within diam/2 of its anchor; pad the radius so the
        # candidate set surely contains every patch within max_dist of the site.
        pad = lattice.h * math.sqrt(max(1, lattice.dim - 1))
        for z in boundary_sites:
            pt = lattice.coords[z]
            cand = anchor_tree.query_ball_point(pt, max_dist + pad)
            eligible = [(float(np.linalg.norm(anchors[pid] - pt)), pid)
                        for pid in cand
                        if patches[pid].dist(pt[None, :])[0] <= max_dist * (1 + 1e-12)]
            if not eligible:
                raise ModeUnsatisfiable(
                    f"graph-boundary site {int(z)} has no patch within "
                    f"alpha*2^-k={max_dist:.6g}")
            eligible.sort()
            sites_for_patch[eligible[0][1]].append(int(z))
        bnd_tree = cKDTree(lattice.coords[boundary_sites])
        for patch in patches:
            if sites_for_patch[patch.id]:
                continue
            kq = min(8, boundary_sites.size)
            _, local = bnd_tree.query(patch.anchor, k=kq)
            cand = boundary_sites[np.atleast_1d(local)]
            dists = patch.dist(lattice.coords[cand])
            best = cand[dists <= dists.min() * (1 + 1e-12)]
            order = np.lexsort(lattice.ints[best].T[::-1])
            z = int(best[order[0]])
            if patch.dist(lattice.coords[[z]])[0] > max_dist:
                raise AlphaTooSmall(
                    f"patch {patch.id} has no graph-boundary site within "
                    f"alpha*2^-k={max_dist:.6g}")
            sites_for_patch[patch.id].append(z)
    else:
        raise ValueError(f"unknown assignment mode {mode!r}")

    sigma_k = np.zeros(lattice.n_sites)
    assigned = np.zeros(lattice.n_sites, dtype=bool)
    arrays = []
    for patch, sites in zip(patches, sites_for_patch):
        arr = np.asarray(sorted(set(sites)), dtype=np.int64)
        arrays.append(arr)
        sigma_k[arr] += patch.sigma / len(arr)
        assigned[arr] = True
    return Assignment(lattice=lattice, patches=patches, alpha=alpha, mode=mode,
                      sites_for_patch=arrays, sigma_k=sigma_k,
                      assigned_mask=assigned)


def boundary_integral(domain: Domain, F, tol: float = 1e-10) -> float:
    """Adaptive quadrature of a scalar function over the boundary."""
    if domain.dim == 1:
        return F(np.array([domain.lows[0]])) + F(np.array([domain.highs[0]]))
    if domain.dim == 2:
        total = 0.0
        for a, b in domain.edges():
            length = float(np.linalg.norm(b - a))
            val, _ = quad(lambda s: F(a + s * (b - a)), 0.0, 1.0,
                          epsabs=tol, epsrel=tol, limit=200)
            total += val * length
        return total
    if domain.kind != "box":
        raise UnsupportedDomain("boundary_integral supports boxes in 3-D")
    from scipy.integrate import dblquad
    lows, highs = np.asarray(domain.lows), np.asarray(domain.highs)
    total = 0.0
    for axis in range(3):
        u_axis, v_axis = [a for a in range(3) if a != axis]
        for fixed in (lows[axis], highs[axis]):
            def integrand(v, u):
                p = np.zeros(3)
                p[axis], p[u_axis], p[v_axis] = fixed, u, v
                return F(p)
            val, _ = dblquad(integrand, lows[u_axis], highs[u_axis],
                             lows[v_axis], highs[v_axis],
                             epsabs=1e-8, epsrel=1e-8)
            total += val
    return total


def check_weak_convergence(assignments: list[Assignment], F) -> list[float]:
    """Errors |sum_z F(z) sigma_k(z) - int_boundary F dsigma| per assignment."""
    errors = []
    for asg in assignments:
        target = boundary_integral(asg.lattice.domain, F)
        discrete = float(np.sum(
            [F(asg.lattice.coords[z]) * asg.sigma_k[z]
             for z in np.flatnonzero(asg.sigma_k > 0)]))
        errors.append(abs(discrete - target))
    return errors
