"""Bounded domains (intervals, boxes, convex polygons) and their dyadic lattice graphs.

A level-k lattice places sites on the grid 2^-k * Z^d strictly inside the
domain.  Sites are connected to axis neighbors at distance 2^-k; the vertex
measure is m(x) = 2^-kd * v(x) / (2d) where v is the graph degree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyLattice, UnsupportedDomain

# Half-plane membership tolerance for polygon sites is POLYGON_TOL * 2^-k.
POLYGON_TOL = 1e-9


@dataclass(frozen=True)
class Domain:
    """A bounded Lipschitz domain from the supported family.

    kind is one of "interval", "box", "polygon".  Intervals and boxes are
    described by lows/highs; polygons by a counterclockwise, strictly convex
    vertex list.  lipschitz_m records a chart constant for the boundary; it is
    configuration metadata and never enters the geometry predicates.
    """

    kind: str
    lows: tuple[float, ...] = ()
    highs: tuple[float, ...] = ()
    vertices: tuple[tuple[float, float], ...] = ()
    lipschitz_m: float = 1.0

    def __post_init__(self):
        if self.kind == "interval":
            if len(self.lows) != 1 or self.lows[0] >= self.highs[0]:
                raise UnsupportedDomain("interval needs a < b")
        elif self.kind == "box":
            d = len(self.lows)
            if d not in (1, 2, 3) or len(self.highs) != d:
                raise UnsupportedDomain("box supports d in {1,2,3}")
            if any(l >= h for l, h in zip(self.lows, self.highs)):
                raise UnsupportedDomain("box needs lows[i] < highs[i]")
        elif self.kind == "polygon":
            _validate_convex_ccw(self.vertices)
        else:
            raise UnsupportedDomain(f"unknown domain kind {self.kind!r}")
        if not np.isfinite(self.lipschitz_m) or self.lipschitz_m < 0:
            raise UnsupportedDomain("lipschitz_m must be finite and >= 0")

    @property
    def dim(self) -> int:
        return 2 if self.kind == "polygon" else len(self.lows)

    def volume(self) -> float:
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            x, y = v[:, 0], v[:, 1]
            return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
        return float(np.prod(np.asarray(self.highs) - np.asarray(self.lows)))

    def surface_measure(self) -> float:
        """Total boundary measure: counting measure (=2) in 1-D, perimeter in
        2-D, face area in 3-D."""
        if self.dim == 1:
            return 2.0
        if self.kind == "polygon":
            v = np.asarray(self.vertices)
            return float(np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1).sum())
        ext = np.asarray(self.highs) - np.asarray(self.lows)
        if self.dim == 2:
            return float(2.0 * ext.sum())
        return float(2.0 * (ext[0] * ext[1] + ext[0] * ext[2] + ext[1] * ext[2]))

    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Boundary edges as (start, end) pairs, counterclockwise (2-D only)."""
        if self.kind == "polygon":
            v = [np.asarray(p, float) for p in self.vertices]
            return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]
        if self.kind == "box" and self.dim == 2:
            (x0, y0), (x1, y1) = self.lows, self.highs
            c = [np.array(p) for p in ((x0, y0), (x1, y0), (x1, y1), (x0, y1))]
            return [(c[i], c[(i + 1) % 4]) for i in range(4)]
        raise UnsupportedDomain("edges() needs a 2-D domain")

    def dist_to_boundary(self, points: np.ndarray) -> np.ndarray:
        """Exact Euclidean distance from interior points to the boundary."""
        pts = np.atleast_2d(np.asarray(points, float))
        if self.kind == "polygon":
            d = np.full(pts.shape[0], np.inf)
            for a, b in self.edges():
                d = np.minimum(d, _point_segment_dist(pts, a, b))
            return d
        lows, highs = np.asarray(self.lows), np.asarray(self.highs)
        d = np.minimum(pts - lows, highs - pts).min(axis=1)
        return d

    def project_to_boundary(self, points: np.ndarray) -> np.ndarray:
        """Nearest boundary point for each input point."""
        pts = np.atleast_2d(np.asarray(points, float))
        if self.kind == "polygon":
            best = np.full(pts.shape[0], np.inf)
            proj = np.zeros_like(pts)
            for a, b in self.edges():
                q = _project_segment(pts, a, b)
                d = np.linalg.norm(pts - q, axis=1)
                mask = d < best
                best[mask] = d[mask]
                proj[mask] = q[mask]
            return proj
        lows, highs = np.asarray(self.lows), np.asarray(self.highs)
        gaps = np.concatenate([pts - lows, highs - pts], axis=1)
        which = gaps.argmin(axis=1)
        proj = pts.copy()
        rows = np.arange(pts.shape[0])
        dim = self.dim
        lo_side = which < dim
        proj[rows[lo_side], which[lo_side]] = lows[which[lo_side]]
        hi = ~lo_side
        proj[rows[hi], which[hi] - dim] = highs[which[hi] - dim]
        return proj


def interval(a: float, b: float, lipschitz_m: float = 0.0) -> Domain:
    return Domain("interval", (a,), (b,), lipschitz_m=lipschitz_m)


def box(lows, highs, lipschitz_m: float = 1.0) -> Domain:
    return Domain("box", tuple(lows), tuple(highs), lipschitz_m=lipschitz_m)


def polygon(vertices, lipschitz_m: float = 1.0) -> Domain:
    return Domain("polygon", vertices=tuple(tuple(v) for v in vertices),
                  lipschitz_m=lipschitz_m)


def unit_square() -> Domain:
    return box((0.0, 0.0), (1.0, 1.0), lipschitz_m=1.0)


def rotated_square() -> Domain:
    """The square with vertices (1,0), (0,1), (-1,0), (0,-1)."""
    return polygon([(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)],
                   lipschitz_m=1.0)


@dataclass
class LatticeDomain:
    """The nearest-neighbor graph on D intersected with 2^-k Z^d.

    coords holds site positions (n, d); ints the integer grid coordinates;
    neighbors is (n, 2d) with -1 padding, slot order (+e1, -e1, +e2, ...).
    """

    domain: Domain
    k: int
    h: float
    coords: np.ndarray
    ints: np.ndarray
    neighbors: np.ndarray
    degree: np.ndarray
    m: np.ndarray
    boundary_mask: np.ndarray
    dropped_sites: int = 0
    _index: dict = field(default_factory=dict, repr=False)

    @property
    def n_sites(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def site_index(self, point) -> int:
        """Index of the site at the given coordinates (must be a site)."""
        ints = tuple(int(round(c * 2 ** self.k)) for c in np.atleast_1d(point))
        try:
            return self._index[ints]
        except KeyError:
            raise KeyError(f"{point} is not a site of the level-{self.k} lattice")

    def nearest_site(self, point) -> int:
        p = np.atleast_1d(np.asarray(point, float))
        d2 = ((self.coords - p) ** 2).sum(axis=1)
        best = np.flatnonzero(d2 <= d2.min() + 1e-30)
        if best.size == 1:
            return int(best[0])
        order = np.lexsort(self.ints[best].T[::-1])
        return int(best[order[0]])

    def total_mass(self) -> float:
        return float(self.m.sum())


def _validate_convex_ccw(vertices) -> None:
    if len(vertices) < 3:
        raise UnsupportedDomain("polygon needs >= 3 vertices")
    v = np.asarray(vertices, float)
    if v.shape[1] != 2:
        raise UnsupportedDomain("polygon vertices must be 2-D")
    n = len(v)
    for i in range(n):
        a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= 0:
            raise UnsupportedDomain(
                "polygon must be strictly convex and counterclockwise")


def _point_segment_dist(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.linalg.norm(pts - _project_segment(pts, a, b), axis=1)


def _project_segment(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    t = ((pts - a) @ ab) / (ab @ ab)
    t = np.clip(t, 0.0, 1.0)
    return a + t[:, None] * ab


def _interval_site_range(lo: float, hi: float, k: int) -> tuple[int, int]:
    """Integer j with lo < j*2^-k < hi, strict, via exact rational arithmetic.

    Floats are binary fractions, so Fraction(float) is exact and the strict
    comparison is reproducible across platforms.
    """
    scale = Fraction(2) ** k
    lo_s, hi_s = Fraction(lo) * scale, Fraction(hi) * scale
    j_min = lo_s.numerator // lo_s.denominator + 1          # smallest j > lo_s
    j_max = -((-hi_s).numerator // (-hi_s).denominator) - 1  # largest j < hi_s
    return j_min, j_max


def _polygon_interior_ints(domain: Domain, k: int) -> np.ndarray:
    h = 2.0 ** -k
    v = np.asarray(domain.vertices, float)
    j_lo = np.floor(v.min(axis=0) / h).astype(int) - 1
    j_hi = np.ceil(v.max(axis=0) / h).astype(int) + 1
    gi = np.arange(j_lo[0], j_hi[0] + 1)
    gj = np.arange(j_lo[1], j_hi[1] + 1)
    ii, jj = np.meshgrid(gi, gj, indexing="ij")
    ints = np.stack([ii.ravel(), jj.ravel()], axis=1)
    pts = ints * h
    tol = h * POLYGON_TOL
    inside = np.ones(len(pts), dtype=bool)
    for a, b in domain.edges():
        ab = b - a
        length = np.hypot(*ab)
        # CCW orientation: interior lies strictly left of each directed edge.
        signed = ((pts[:, 0] - a[0]) * (-ab[1]) + (pts[:, 1] - a[1]) * ab[0]) / length
        inside &= -signed > tol
    return ints[inside]


def build_lattice(domain: Domain, k: int) -> LatticeDomain:
    """Build the level-k lattice graph for a supported domain.

    Sites are the grid points strictly inside D, ordered lexicographically by
    integer coordinates.  If the graph is disconnected only the largest
    component is kept and dropped_sites records how many were discarded.
    Raises EmptyLattice when fewer than two connected sites remain.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if domain.kind in ("interval", "box"):
        ranges = [_interval_site_range(lo, hi, k)
                  for lo, hi in zip(domain.lows, domain.highs)]
        if any(jmax < jmin for jmin, jmax in ranges):
            raise EmptyLattice(f"no interior sites at level k={k}")
        axes = [np.arange(jmin, jmax + 1) for jmin, jmax in ranges]
        mesh = np.meshgrid(*axes, indexing="ij")
        ints = np.stack([a.ravel() for a in mesh], axis=1)
    elif domain.kind == "polygon":
        ints = _polygon_interior_ints(domain, k)
    else:  # pragma: no cover - Domain.__post_init__ guards this
        raise UnsupportedDomain(domain.kind)

    if ints.shape[0] == 0:
        raise EmptyLattice(f"no interior sites at level k={k}")

    order = np.lexsort(ints.T[::-1])
    ints = np.ascontiguousarray(ints[order])
    d = ints.shape[1]
    index = {tuple(row): i for i, row in enumerate(ints)}

    n = ints.shape[0]
    neighbors = np.full((n, 2 * d), -1, dtype=np.int64)
    for axis in range(d):
        for sign, slot in ((1, 2 * axis), (-1, 2 * axis + 1)):
            shifted = ints.copy()
            shifted[:, axis] += sign
            for i, row in enumerate(shifted):
                j = index.get(tuple(row))
                if j is not None:
                    neighbors[i, slot] = j
    degree = (neighbors >= 0).sum(axis=1).astype(np.int64)

    keep = None
    dropped = 0
    if (degree == 0).any() or n > 1:
        src, dst = np.nonzero(neighbors >= 0)[0], neighbors[neighbors >= 0]
        graph = coo_matrix((np.ones(len(src)), (src, dst)), shape=(n, n))
        ncomp, labels = connected_components(graph, directed=False)
        if ncomp > 1:
            sizes = np.bincount(labels, minlength=ncomp)
            keep_label = sizes.argmax()
            keep = labels == keep_label
            dropped = int(n - sizes[keep_label])

    if keep is not None:
        remap = -np.ones(n, dtype=np.int64)
        remap[keep] = np.arange(keep.sum())
        ints = ints[keep]
        neighbors = neighbors[keep]
        neighbors = np.where(neighbors >= 0, remap[neighbors], -1)
        degree = (neighbors >= 0).sum(axis=1).astype(np.int64)
        index = {tuple(row): i for i, row in enumerate(ints)}

    if ints.shape[0] < 2 or degree.max() == 0:
        raise EmptyLattice(
            f"lattice at level k={k} has no connected component with >= 2 sites")

    h = 2.0 ** -k
    coords = ints * h
    m = h ** d * degree / (2.0 * d)
    return LatticeDomain(
        domain=domain, k=k, h=h, coords=coords, ints=ints,
        neighbors=neighbors, degree=degree, m=m,
        boundary_mask=degree < 2 * d, dropped_sites=dropped, _index=index)


def dist_to_boundary(domain: Domain, point) -> float:
    """Euclidean distance from a point in the closure of D to its boundary."""
    return float(domain.dist_to_boundary(np.atleast_2d(point))[0])


def lattice_rows(lattice: LatticeDomain):
    """Rows (index, coords..., degree, boundary_flag, m) for CSV export."""
    for i in range(lattice.n_sites):
        yield (i, *lattice.coords[i], int(lattice.degree[i]),
               int(lattice.boundary_mask[i]), lattice.m[i])
