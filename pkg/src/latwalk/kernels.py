"""Exact transition densities of lattice walks and continuum reference kernels.

The walk generator Q is reversible for the vertex measure m, so
S = M^(1/2) Q M^(-1/2) is symmetric.  Dense kernels use uniformization
(Poisson-weighted powers of the sub-stochastic matrix I + S/rate) with a
certified tail, plus scaling-and-squaring when rate * t is large.  Vector
actions use the same series without forming matrices, which keeps boundary
sums cheap at levels where dense kernels are out of reach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.special import gammaln

from .errors import TooManySites, UnsupportedDomain
from .geometry import Domain
from .walker import WalkConfig

DENSE_SITE_CAP = 20_000
SPECTRAL_SITE_CAP = 4_096
POISSON_TAIL = 1e-12
UNIFORMIZATION_DIRECT_LIMIT = 256.0


def generator_matrix(config: WalkConfig, site_cap: int = DENSE_SITE_CAP,
                     dense: bool = True):
    """Generator Q(x,y) = rate(x) p_xy off-diagonal, Q(x,x) = -rate(x)."""
    n = config.lattice.n_sites
    if n > site_cap:
        raise TooManySites(f"{n} sites exceeds cap {site_cap}")
    rows, cols, vals = [], [], []
    nb = config.lattice.neighbors
    for slot in range(nb.shape[1]):
        ok = nb[:, slot] >= 0
        rows.append(np.flatnonzero(ok))
        cols.append(nb[ok, slot])
        vals.append(config.rates[ok] * config.probs[ok, slot])
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(-config.rates)
    Q = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n)).tocsr()
    return Q.toarray() if dense else Q


def symmetric_generator(config: WalkConfig, site_cap: int = DENSE_SITE_CAP):
    """S = M^(1/2) Q M^(-1/2) as a sparse CSR matrix, symmetrized exactly."""
    Q = generator_matrix(config, site_cap=site_cap, dense=False)
    s = np.sqrt(config.stationary_m)
    S = sparse.diags(s) @ Q @ sparse.diags(1.0 / s)
    return (S + S.T) * 0.5, s


def _poisson_window(lam: float, tail: float) -> tuple[int, int, np.ndarray]:
    """Index window [j_lo, j_hi] and pmf values with total mass >= 1 - tail."""
    if lam <= 0.0:
        return 0, 0, np.array([1.0])
    spread = 10.0 * math.sqrt(lam) + 30.0
    j_lo = max(0, int(lam - spread))
    j_hi = int(lam + spread) + 5
    while True:
        j = np.arange(j_lo, j_hi + 1)
        logw = j * math.log(lam) - lam - gammaln(j + 1)
        w = np.exp(logw)
        if 1.0 - w.sum() < tail and (j_lo == 0 or w[0] < tail * 1e-3):
            return j_lo, j_hi, w
        j_lo = max(0, j_lo - int(spread))
        j_hi += int(spread)


def expm_action(S, s_weights: np.ndarray, v: np.ndarray, t: float,
                rate: float, tail: float = POISSON_TAIL) -> np.ndarray:
    """e^{tQ} v via uniformization of the symmetric form.

    S is the symmetric generator, s_weights = sqrt(m).  The substochastic
    matrix B = I + S/rate has spectral radius <= 1, so the power recursion is
    stable at any rate * t; Poisson weights come from log-space to avoid
    underflow and the neglected tail is below `tail`.
    """
    lam = rate * t
    if lam == 0.0:
        return v.copy()
    j_lo, j_hi, w = _poisson_window(lam, tail)
    x = v * s_weights
    acc = np.zeros_like(x)
    if j_lo == 0:
        acc += w[0] * x
    for j in range(1, j_hi + 1):
        x = x + (S @ x) / rate
        if j >= j_lo:
            acc += w[j - j_lo] * x
    return acc / s_weights


@dataclass
class DiscreteKernel:
    """Dense table of p(t, x, y), the transition density against m."""

    k: int
    t: float
    p: np.ndarray
    m: np.ndarray
    coords: np.ndarray

    def symmetry_error(self) -> float:
        return float(np.abs(self.p - self.p.T).max())

    def conservation_error(self) -> float:
        return float(np.abs(self.p @ self.m - 1.0).max())

    def min_value(self) -> float:
        return float(self.p.min())


def _uniformized_base(S_dense: np.ndarray, rate: float, tau: float,
                      tail: float) -> np.ndarray:
    """exp(tau * S) for moderate rate*tau by direct Poisson series."""
    lam = rate * tau
    j_lo, j_hi, w = _poisson_window(lam, tail)
    n = S_dense.shape[0]
    term = np.eye(n)
    acc = np.zeros_like(term)
    if j_lo == 0:
        acc += w[0] * term
    for j in range(1, j_hi + 1):
        term = term + (S_dense @ term) / rate
        if j >= j_lo:
            acc += w[j - j_lo] * term
    return acc


def _expm_symmetric(S_dense: np.ndarray, rate: float, t: float) -> np.ndarray:
    """exp(t*S) by uniformization, with scaling-and-squaring for large rate*t.

    The base-step Poisson tail is pushed to 1e-15 so that after <= ~20
    squarings the accumulated truncation stays below the 1e-12 budget.
    """
    lam = rate * t
    if lam <= UNIFORMIZATION_DIRECT_LIMIT:
        E = _uniformized_base(S_dense, rate, t, POISSON_TAIL)
    else:
        n_sq = max(0, math.ceil(math.log2(lam / UNIFORMIZATION_DIRECT_LIMIT)))
        E = _uniformized_base(S_dense, rate, t / 2 ** n_sq, 1e-15)
        for _ in range(n_sq):
            E = E @ E
    return 0.5 * (E + E.T)


def transition_density(config: WalkConfig, t: float, base: int | None = None,
                       site_cap: int = DENSE_SITE_CAP):
    """Transition density p(t, x, y) with respect to the vertex measure.

    Returns a DiscreteKernel (dense, all pairs) or a single row when `base`
    is given.  Continuous time exponentiates the generator; the
    discrete-interpolated mode takes s = round(t * rate) steps of the jump
    matrix.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    lat = config.lattice
    n = lat.n_sites
    if n > site_cap:
        raise TooManySites(f"{n} sites exceeds cap {site_cap}")
    S, s = symmetric_generator(config, site_cap=site_cap)
    rate = float(config.rates.max())

    if base is not None:
        # Row via one semigroup action: p(t, base, .) = e^{tQ} (delta_base / m(base))
        # by reversibility, so no dense kernel is needed.
        g = np.zeros(n)
        g[base] = 1.0 / config.stationary_m[base]
        if config.time_mode == "discrete-interpolated":
            steps = int(round(t * rate))
            x = g * s
            B = sparse.identity(n, format="csr") + S / rate
            for _ in range(steps):
                x = B @ x
            return x / s
        return expm_action(S, s, g, t, rate)

    S_dense = S.toarray()
    if config.time_mode == "discrete-interpolated":
        steps = int(round(t * rate))
        B = np.eye(n) + S_dense / rate
        E = _matrix_power_sym(B, steps)
    else:
        E = _expm_symmetric(S_dense, rate, t)
    p = E / np.outer(s, s)
    return DiscreteKernel(k=lat.k, t=t, p=p, m=config.stationary_m, coords=lat.coords)


def _matrix_power_sym(B: np.ndarray, steps: int) -> np.ndarray:
    out = np.eye(B.shape[0])
    base = B.copy()
    e = steps
    while e > 0:
        if e & 1:
            out = out @ base
        base = base @ base
        e >>= 1
    return 0.5 * (out + out.T)


@dataclass
class SpectralOperator:
    """Eigendecomposition of the symmetric generator, for exact time calculus.

    kernel rows, semigroup actions, and simplex time integrals all become
    O(n^2) once the factorization exists.  Only for moderate site counts.
    """

    eigenvalues: np.ndarray
    U: np.ndarray
    s: np.ndarray           # sqrt of the symmetrizing measure
    m: np.ndarray
    shift: np.ndarray | None = field(default=None)

    @classmethod
    def build(cls, config: WalkConfig, kill: np.ndarray | None = None,
              site_cap: int = SPECTRAL_SITE_CAP) -> "SpectralOperator":
        n = config.lattice.n_sites
        if n > site_cap:
            raise TooManySites(f"{n} sites exceeds spectral cap {site_cap}")
        S, s = symmetric_generator(config, site_cap=site_cap)
        A = S.toarray()
        if kill is not None:
            A = A - np.diag(kill)
        w, U = np.linalg.eigh(0.5 * (A + A.T))
        return cls(eigenvalues=w, U=U, s=s, m=config.stationary_m)

    def kernel(self, t: float) -> np.ndarray:
        E = (self.U * np.exp(self.eigenvalues * t)) @ self.U.T
        return E / np.outer(self.s, self.s)

    def action(self, t: float, v: np.ndarray) -> np.ndarray:
        """e^{tQ} v (or the killed semigroup when built with a kill vector)."""
        coef = self.U.T @ (v * self.s)
        return (self.U @ (np.exp(self.eigenvalues * t) * coef)) / self.s

    def density_coeffs(self, v: np.ndarray) -> np.ndarray:
        """Coefficients <U_j, v * s> used by the moment assembly."""
        return self.U.T @ (v * self.s)


def reference_kernel(domain: Domain, t: float, x, y, tol: float = 1e-10):
    """Neumann heat kernel of the interval/box against Lebesgue measure.

    Interval (a, b) of length L:
        p(t, x, y) = 1/L + (2/L) sum_n e^{-n^2 pi^2 t / (2 L^2)}
                     cos(n pi (x-a)/L) cos(n pi (y-a)/L)
    Boxes take coordinate products.  The series is truncated once the
    geometric tail bound drops below tol.
    """
    if domain.kind == "polygon":
        raise UnsupportedDomain("no closed-form reference kernel for polygons")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if domain.dim == 1:
        return _interval_series(domain.lows[0], domain.highs[0], t,
                                np.atleast_1d(x), np.atleast_1d(y), tol)
    xs = np.atleast_2d(x)
    ys = np.atleast_2d(y)
    out = np.ones(np.broadcast_shapes(xs.shape[:-1], ys.shape[:-1]))
    for axis in range(domain.dim):
        out = out * _interval_series(domain.lows[axis], domain.highs[axis], t,
                                     xs[..., axis], ys[..., axis], tol)
    return out


def _interval_series(a: float, b: float, t: float, x: np.ndarray,
                     y: np.ndarray, tol: float) -> np.ndarray:
    L = b - a
    c = math.pi ** 2 * t / (2.0 * L ** 2)
    n_terms = 8
    while True:
        decay = math.exp(-c * (2 * n_terms + 1))
        tail = (2.0 / L) * math.exp(-c * n_terms ** 2) * decay / max(1e-300, 1 - decay)
        if tail < tol or n_terms > 100_000:
            break
        n_terms *= 2
    n = np.arange(1, n_terms + 1)
    weights = (2.0 / L) * np.exp(-c * n ** 2)
    cx = np.cos(np.pi * np.outer(np.ravel(x) - a, n) / L)
    cy = np.cos(np.pi * np.outer(np.ravel(y) - a, n) / L)
    vals = 1.0 / L + (cx * weights) @ cy.T
    return vals.reshape(np.shape(x) + np.shape(y))


def llt_error(config: WalkConfig, t: float,
              site_cap: int = DENSE_SITE_CAP) -> float:
    """sup over site pairs of |p^(k)(t,x,y) - p(t,x,y)|."""
    kern = transition_density(config, t, site_cap=site_cap)
    coords = config.lattice.coords
    if config.lattice.dim == 1:
        ref = reference_kernel(config.lattice.domain, t, coords[:, 0], coords[:, 0])
    else:
        ref = reference_kernel(config.lattice.domain, t, coords, coords)
    return float(np.abs(kern.p - ref).max())


def boundary_sum(config: WalkConfig, t: float, indicator: np.ndarray | None = None,
                 site_cap: int = DENSE_SITE_CAP) -> float:
    """sup_x eps^(d-1) * sum over boundary sites y of p(t, x, y).

    Runs as a single semigroup action on the vector 1_boundary * eps^(d-1)/m,
    so it stays cheap at site counts where dense kernels are not.
    """
    lat = config.lattice
    if lat.n_sites > site_cap:
        raise TooManySites(f"{lat.n_sites} sites exceeds cap {site_cap}")
    if indicator is None:
        indicator = lat.boundary_mask
    S, s = symmetric_generator(config, site_cap=site_cap)
    f = np.where(indicator, lat.h ** (lat.dim - 1) / config.stationary_m, 0.0)
    vals = expm_action(S, s, f, t, float(config.rates.max()))
    return float(vals.max())


def verify_bounds(config: WalkConfig, t_grid, n_probe_pairs: int = 400,
                  exit_paths: int = 20_000, seed: int = 7,
                  site_cap: int = SPECTRAL_SITE_CAP) -> dict:
    """Empirical Gaussian-envelope, Hoelder, and exit-time constants.

    For each t in the grid the kernel is compared to the envelope
    C1 (eps v sqrt(t))^-d exp(-C2 |x-y|^2 / t): the upper constant is the max
    of p * (eps v sqrt(t))^d * exp(C2 |x-y|^2/t) over probe pairs for a grid
    of C2 choices, the lower constant the min.  The Hoelder quotient uses
    displacement eps with exponents (alpha, beta) = (1, 1).  Exit-time tails
    are estimated by Monte Carlo and fitted log-linearly in eta.
    """
    from .montecarlo import exit_time_probabilities

    lat = config.lattice
    sp = SpectralOperator.build(config, site_cap=site_cap)
    eps = lat.h
    d = lat.dim
    rng = np.random.default_rng(seed)
    n = lat.n_sites
    xi = rng.integers(0, n, size=n_probe_pairs)
    yi = rng.integers(0, n, size=n_probe_pairs)
    c2_grid = np.array([0.125, 0.25, 0.375, 0.5])

    report: dict = {"t_grid": list(t_grid), "upper": {}, "lower": {},
                    "holder": [], "exit": {}}
    upper_by_c2 = {c2: [] for c2 in c2_grid}
    lower_by_c2 = {c2: [] for c2 in c2_grid}
    holder_max = 0.0
    for t in t_grid:
        p = sp.kernel(t)
        scale = max(eps, math.sqrt(t)) ** d
        dist2 = ((lat.coords[xi] - lat.coords[yi]) ** 2).sum(axis=1)
        pv = p[xi, yi]
        for c2 in c2_grid:
            ratios = pv * scale * np.exp(c2 * dist2 / t)
            upper_by_c2[c2].append(float(ratios.max()))
            lower_by_c2[c2].append(float(ratios.min()))
        # Hoelder probe: shift x by one lattice step along each axis.
        denom = eps ** 1 / (t ** ((d + 1) / 2))
        for slot in range(lat.neighbors.shape[1]):
            ok = lat.neighbors[:, slot] >= 0
            diff = np.abs(p[ok] - p[lat.neighbors[ok, slot]]).max()
            holder_max = max(holder_max, float(diff) / denom)
    report["upper"] = {f"C2={c2}": max(v) for c2, v in upper_by_c2.items()}
    report["lower"] = {f"C2={c2}": min(v) for c2, v in lower_by_c2.items()}
    report["holder"] = holder_max

    t_exit = float(np.median(np.asarray(t_grid)))
    etas = np.sqrt(t_exit) * np.array([0.5, 1.0, 1.5, 2.0])
    probs = exit_time_probabilities(config, t_exit, etas, exit_paths, seed)
    good = probs > 0
    slope = float("nan")
    if good.sum() >= 2:
        slope = float(np.polyfit(etas[good], np.log(probs[good]), 1)[0])
    report["exit"] = {"t": t_exit, "etas": etas.tolist(),
                      "probs": probs.tolist(), "log_slope": slope,
                      "decay_scale": -slope * max(eps, math.sqrt(t_exit))}
    return report
