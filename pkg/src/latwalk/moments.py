"""Exact and Monte Carlo moments of boundary local-time integrals.

The ell-th moment of int_a^b f dL is an iterated simplex integral of kernel
chains weighted by the boundary masses.  On the lattice the chain collapses
in the eigenbasis of the symmetric generator and every simplex time integral
has a closed form built from divided differences of the exponential, so the
discrete values carry no quadrature error.  Continuum counterparts use the
cosine-series kernel with adaptive composite quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .errors import TooManySites, UnsupportedDomain, UnsupportedOrder
from .geometry import Domain, LatticeDomain, rotated_square, build_lattice
from .kernels import SpectralOperator, reference_kernel, SPECTRAL_SITE_CAP
from .partition import Assignment, build_partition, assign_patches, COVER_GRAPH_BOUNDARY
from .walker import WalkConfig, make_walk
from . import montecarlo

MAX_ORDER = 3


@dataclass(frozen=True)
class MomentSpec:
    """Order, time window, test function and start law of one moment query."""

    ell: int
    window: tuple[float, float]
    f: object = None              # callable on coordinates, None means f = 1
    start: object = "stationary"  # "stationary", a site index, or a point

    def __post_init__(self):
        a, b = self.window
        if not 0 <= a <= b:
            raise ValueError("window must satisfy 0 <= a <= b")
        if not 1 <= self.ell <= MAX_ORDER:
            raise UnsupportedOrder(f"order {self.ell} not in 1..{MAX_ORDER}")


# ---------------------------------------------------------------------------
# Stable divided differences of the exponential over the time simplex.
# I_ell(nu_1..nu_ell; T) = int over {u_i >= 0, sum u <= T} of prod e^{nu_i u_i}
#                        = T^ell * phi_ell(nu_1 T, ..., nu_ell T).

def _phi1(x):
    x = np.asarray(x, float)
    small = np.abs(x) < 1e-12
    safe = np.where(small, 1.0, x)
    return np.where(small, 1.0 + x / 2.0, np.expm1(x) / safe)


def _phi1_prime(x):
    x = np.asarray(x, float)
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    series = 0.5 + x / 3.0 + x ** 2 / 8.0 + x ** 3 / 30.0 + x ** 4 / 144.0
    direct = (np.exp(safe) * (safe - 1.0) + 1.0) / safe ** 2
    return np.where(small, series, direct)


def _phi2(x, y):
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    close = np.abs(x - y) < 1e-7
    safe = np.where(close, 1.0, x - y)
    direct = (_phi1(x) - _phi1(y)) / safe
    return np.where(close, _phi1_prime(0.5 * (x + y)), direct)


def _phi3(x, y, z):
    x, y, z = np.broadcast_arrays(*(np.asarray(a, float) for a in (x, y, z)))
    close = np.abs(x - y) < 1e-6
    safe = np.where(close, 1.0, x - y)
    direct = (_phi2(x, z) - _phi2(y, z)) / safe
    # Coincident pair: derivative of phi2 in its first slot, via a centered
    # difference at a scale large enough to dominate roundoff.
    eps = 5e-6
    mid = 0.5 * (x + y)
    fallback = (_phi2(mid + eps, z) - _phi2(mid - eps, z)) / (2 * eps)
    return np.where(close, fallback, direct)


# ---------------------------------------------------------------------------
# Discrete moments: spectral assembly.

def _site_weights(spec: MomentSpec, assignment: Assignment) -> np.ndarray:
    lat = assignment.lattice
    w = assignment.sigma_k.copy()
    if spec.f is not None:
        w = w * np.asarray(spec.f(lat.coords), float)
    return w


def _start_vector(spec: MomentSpec, sp: SpectralOperator,
                  lattice: LatticeDomain) -> np.ndarray:
    """Coefficients R_j of the start law in the eigenbasis."""
    if isinstance(spec.start, str):
        if spec.start != "stationary":
            raise ValueError(f"unknown start token {spec.start!r}")
        total = lattice.m.sum()
        return (sp.U.T @ sp.s) / total
    if np.isscalar(spec.start) and isinstance(spec.start, (int, np.integer)):
        x = int(spec.start)
    else:
        x = lattice.nearest_site(spec.start)
    return sp.U[x, :] / sp.s[x]


def exact_moment_discrete(spec: MomentSpec, assignment: Assignment,
                          config: WalkConfig,
                          site_cap: int = SPECTRAL_SITE_CAP) -> float:
    """E[(int_a^b f dL)^ell] for the lattice walk, exact to spectral accuracy."""
    lat = assignment.lattice
    if lat.n_sites > site_cap:
        raise TooManySites(f"{lat.n_sites} sites exceeds cap {site_cap}")
    sp = SpectralOperator.build(config, site_cap=site_cap)
    a, b = spec.window
    T = b - a
    if T == 0.0:
        return 0.0
    W = _site_weights(spec, assignment)
    nus = sp.eigenvalues
    R = _start_vector(spec, sp, lat) * np.exp(nus * a)
    q = sp.U.T @ (W / sp.s)
    x = nus * T
    if spec.ell == 1:
        return 0.5 * float(R @ (q * T * _phi1(x)))
    B = sp.U.T @ ((W / lat.m)[:, None] * sp.U)
    if spec.ell == 2:
        core = B * _phi2(x[:, None], x[None, :]) * (T * T)
        return 0.5 * float(R @ core @ q)
    # ell == 3
    n = len(nus)
    if n > 512:
        raise TooManySites("order-3 moments are capped at 512 sites")
    phi = _phi3(x[:, None, None], x[None, :, None], x[None, None, :]) * T ** 3
    chain = np.einsum("i,ij,ijk,jk,k->", R, B, phi, B, q, optimize=True)
    return 0.75 * float(chain)


def moment_order1_direct(spec: MomentSpec, assignment: Assignment,
                         config: WalkConfig, tol: float = 1e-10) -> float:
    """First moment by direct patch-sum quadrature (independent code path).

    Integrates (1/2) sum over patches of p(a+s, x, z_patch) f(z) sigma(patch)
    with adaptive quadrature; spreads multi-site patches evenly.
    """
    lat = assignment.lattice
    sp = SpectralOperator.build(config)
    nus, U, s = sp.eigenvalues, sp.U, sp.s
    R = _start_vector(spec, sp, lat)
    weights = np.zeros(lat.n_sites)
    for patch, sites in zip(assignment.patches, assignment.sites_for_patch):
        for z in sites:
            fz = 1.0 if spec.f is None else float(spec.f(lat.coords[[z]])[0])
            weights[z] += patch.sigma / len(sites) * fz
    q = U.T @ (weights / s)

    def integrand(u):
        return float(R @ (np.exp(nus * (spec.window[0] + u)) * q))

    T = spec.window[1] - spec.window[0]
    val, _ = quad(integrand, 0.0, T, epsabs=tol, epsrel=tol, limit=400)
    return 0.5 * val


# ---------------------------------------------------------------------------
# Continuum moments: series kernel + adaptive composite quadrature.

def _surface_nodes(domain: Domain, per_edge: int = 48):
    """Quadrature nodes and weights for the surface measure."""
    if domain.dim == 1:
        pts = np.array([[domain.lows[0]], [domain.highs[0]]])
        return pts, np.array([1.0, 1.0])
    if domain.dim == 2:
        gl_x, gl_w = np.polynomial.legendre.leggauss(per_edge)
        pts, wts = [], []
        for a, b in domain.edges():
            mid, half = 0.5 * (a + b), 0.5 * (b - a)
            length = np.linalg.norm(b - a)
            pts.append(mid[None, :] + gl_x[:, None] * half[None, :])
            wts.append(gl_w * length / 2.0)
        return np.concatenate(pts), np.concatenate(wts)
    raise UnsupportedDomain("continuum moments support intervals and 2-D boxes")


def _panel_nodes(lo: float, hi: float, n_panels: int, order: int = 8):
    gl_x, gl_w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])[:, None]
    half = 0.5 * (edges[1:] - edges[:-1])[:, None]
    return (mid + gl_x[None, :] * half).ravel(), (half * gl_w[None, :]).ravel()


def exact_moment_continuum(spec: MomentSpec, domain: Domain,
                           rtol: float = 1e-6) -> float:
    """Continuum moment for the reflected Brownian motion on intervals/boxes.

    Surface integrals use Gauss-Legendre nodes; the simplex time integrals
    use composite Gauss panels on sqrt-substituted coordinates (u = w^2),
    which removes the short-time kernel singularity at boundary starts.
    Panel counts double until the value is stable to rtol.
    """
    if domain.kind == "polygon":
        raise UnsupportedDomain("no continuum reference on polygons")
    if spec.ell == 3 and domain.dim > 1:
        raise UnsupportedOrder("order-3 continuum moments: interval only")
    a, b = spec.window
    T = b - a
    if T == 0.0:
        return 0.0
    pts, wts = _surface_nodes(domain)
    f_vals = np.ones(len(pts)) if spec.f is None else np.asarray(spec.f(pts), float)
    wf = wts * f_vals
    stationary = isinstance(spec.start, str) and spec.start == "stationary"
    if not stationary:
        x0 = np.atleast_1d(np.asarray(spec.start, float))

    def first_factor(u):
        """Vector over surface nodes: start-law kernel at time a + u."""
        if stationary:
            return np.full(len(pts), 1.0 / domain.volume())
        return np.asarray(reference_kernel(domain, a + u, x0[None, :], pts),
                          float).ravel()

    def value(n_panels: int) -> float:
        # sqrt substitution in every simplex coordinate
        w_nodes, w_wts = _panel_nodes(0.0, math.sqrt(T), n_panels)
        u1 = w_nodes ** 2
        j1 = 2.0 * w_nodes * w_wts
        if spec.ell == 1:
            vals = np.array([first_factor(u) @ wf for u in u1])
            return 0.5 * float(vals @ j1)
        total = 0.0
        for u_a, j_a in zip(u1, j1):
            g1 = first_factor(u_a) * wf
            rem = T - u_a
            if rem <= 0:
                continue
            v_nodes, v_wts = _panel_nodes(0.0, math.sqrt(rem), max(2, n_panels // 2))
            u2 = v_nodes ** 2
            j2 = 2.0 * v_nodes * v_wts
            if spec.ell == 2:
                inner = 0.0
                for u_b, j_b in zip(u2, j2):
                    K = reference_kernel(domain, u_b, pts, pts)
                    inner += j_b * float(g1 @ K @ wf)
                total += j_a * inner
            else:
                for u_b, j_b in zip(u2, j2):
                    K1 = reference_kernel(domain, u_b, pts, pts)
                    g2 = (g1 @ K1) * wf
                    rem2 = rem - u_b
                    if rem2 <= 0:
                        continue
                    s_nodes, s_wts = _panel_nodes(0.0, math.sqrt(rem2),
                                                  max(2, n_panels // 4))
                    for u_c, j_c in zip(s_nodes ** 2, 2 * s_nodes * s_wts):
                        K2 = reference_kernel(domain, u_c, pts, pts)
                        total += j_a * j_b * j_c * float(g2 @ K2 @ wf)
        factor = math.factorial(spec.ell) / 2.0 ** spec.ell
        return factor * total

    n_panels = 8
    prev = value(n_panels)
    while n_panels <= 64:
        n_panels *= 2
        cur = value(n_panels)
        if abs(cur - prev) <= rtol * max(abs(cur), 1e-300):
            return cur
        prev = cur
    return prev


def mc_moment(spec: MomentSpec, assignment: Assignment, config: WalkConfig,
              n_paths: int, seed: int, threads: int = 1) -> tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the moment."""
    weights = assignment.slopes().copy()
    if spec.f is not None:
        weights = weights * np.asarray(spec.f(assignment.lattice.coords), float)
    start = spec.start
    if not isinstance(start, str) and not (
            np.isscalar(start) and isinstance(start, (int, np.integer))):
        start = assignment.lattice.nearest_site(start)
    return montecarlo.window_functional_moment(
        config, weights, spec.window, spec.ell, n_paths, seed, start, threads)


def increment_scaling(config: WalkConfig, assignment: Assignment,
                      window_sizes, start: str = "stationary") -> dict:
    """Second moments of local-time increments over a ladder of window sizes.

    start "stationary" averages over the stationary law; "worst" maximizes
    the exact per-site moment over starting sites.  Returns the fitted
    log-log slope of moment versus window size.
    """
    lat = assignment.lattice
    sp = SpectralOperator.build(config)
    W = assignment.sigma_k
    nus = sp.eigenvalues
    q = sp.U.T @ (W / sp.s)
    B = sp.U.T @ ((W / lat.m)[:, None] * sp.U)
    moments = []
    for T in window_sizes:
        x = nus * T
        core = B * _phi2(x[:, None], x[None, :]) * (T * T)
        coef = core @ q
        if start == "stationary":
            R = (sp.U.T @ sp.s) / lat.m.sum()
            moments.append(0.5 * float(R @ coef))
        elif start == "worst":
            per_site = 0.5 * (sp.U @ coef) / sp.s
            moments.append(float(per_site.max()))
        else:
            raise ValueError("start must be 'stationary' or 'worst'")
    sizes = np.asarray(list(window_sizes), float)
    mom = np.asarray(moments)
    slope = float(np.polyfit(np.log(sizes), np.log(mom), 1)[0])
    return {"window_sizes": sizes.tolist(), "moments": mom.tolist(),
            "slope": slope, "start": start}


# ---------------------------------------------------------------------------
# Rotated-square comparison ratios (exact, Monte-Carlo-free).

def stationary_boundary_functionals(lattice: LatticeDomain, delta: float) -> dict:
    """Exact stationary expectation rates of the three boundary functionals.

    Under the normalized stationary law the occupation of each site grows at
    rate mhat(z), so every functional rate is a plain weighted site sum.
    """
    domain = lattice.domain
    mhat = lattice.m / lattice.m.sum()
    strip = domain.dist_to_boundary(lattice.coords) < delta
    occupation_rate = float(mhat[strip].sum() / (2.0 * delta))
    naive_rate = float(mhat[lattice.boundary_mask].sum() * 2.0 ** (lattice.k - 1))
    local_time_rate = float(domain.surface_measure() / (2.0 * lattice.m.sum()))
    return {"occupation_rate": occupation_rate, "naive_rate": naive_rate,
            "local_time_rate": local_time_rate}


def example54_ratios(k: int, t: float = 1.0, c_occ: float = 2.0,
                     site_cap: int = 50_000) -> dict:
    """Comparison ratios on the square with vertices (1,0),(0,1),(-1,0),(0,-1).

    Returns E[A_{C 2^-k}(t)] / E[L_t] and E[naive(t)] / E[L_t] under the
    normalized stationary start, both exact.  c_occ must lie in
    (sqrt(2), 3/sqrt(2)) so the strip picks up the same two site rings for
    every admissible constant.
    """
    if not math.sqrt(2) < c_occ < 3 / math.sqrt(2):
        raise ValueError("c_occ must lie in (sqrt(2), 3/sqrt(2))")
    domain = rotated_square()
    lattice = build_lattice(domain, k)
    if lattice.n_sites > site_cap:
        raise TooManySites(f"{lattice.n_sites} sites exceeds cap {site_cap}")
    rates = stationary_boundary_functionals(lattice, c_occ * lattice.h)
    el = rates["local_time_rate"] * t
    return {"k": k, "t": t, "c_occ": c_occ,
            "ratio_occupation": rates["occupation_rate"] / rates["local_time_rate"],
            "ratio_naive": rates["naive_rate"] / rates["local_time_rate"],
            "mean_local_time": el,
            "n_sites": lattice.n_sites}


def example54_assignment(k: int) -> tuple[WalkConfig, Assignment]:
    """Walk and cover-mode assignment on the rotated square, for cross-checks."""
    domain = rotated_square()
    lattice = build_lattice(domain, k)
    patches = build_partition(domain, k)
    assignment = assign_patches(patches, lattice, mode=COVER_GRAPH_BOUNDARY)
    return make_walk(lattice), assignment
