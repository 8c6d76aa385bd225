"""Vectorized Monte Carlo over blocks of paths with deterministic reductions.

Paths are simulated in fixed-size blocks; block b draws from its own
counter-based stream SeedSequence(seed, spawn_key=(b,)), and partial sums are
reduced in block order.  Results are therefore bit-identical for any worker
count, and adding threads never reorders the arithmetic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .walker import CONTINUOUS, WalkConfig

BLOCK_SIZE = 4096


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(seed, spawn_key=(block,))))


def _start_sites(config: WalkConfig, start, rng: np.random.Generator,
                 size: int) -> np.ndarray:
    if isinstance(start, str):
        if start != "stationary":
            raise ValueError(f"unknown start token {start!r}")
        m = config.stationary_m
        cum = np.cumsum(m)
        return np.searchsorted(cum, rng.random(size) * cum[-1],
                               side="right").astype(np.int64)
    return np.full(size, int(start), dtype=np.int64)


def _evolve(config: WalkConfig, rng: np.random.Generator, size: int,
            T: float, start, on_segment) -> np.ndarray:
    """Drive `size` paths to horizon T, reporting every dwell segment.

    on_segment(paths, sites, t0, t1) receives the dwell [t0, t1) per active
    path.  Returns the final site of each path (its state at time T).
    """
    pos = _start_sites(config, start, rng, size)
    t = np.zeros(size)
    alive = np.arange(size)
    discrete = config.time_mode != CONTINUOUS
    tick = config.tick if discrete else 0.0
    while alive.size:
        cur = pos[alive]
        if discrete:
            t_next = t[alive] + tick
        else:
            t_next = t[alive] + rng.exponential(1.0, alive.size) / config.rates[cur]
        seg_end = np.minimum(t_next, T)
        on_segment(alive, cur, t[alive], seg_end)
        jumping = t_next <= T
        jump_ids = alive[jumping]
        if jump_ids.size:
            u = rng.random(jump_ids.size)
            rows = config.cum[pos[jump_ids]]
            slots = (u[:, None] >= rows).sum(axis=1)
            np.minimum(slots, rows.shape[1] - 1, out=slots)
            pos[jump_ids] = config.padded_neighbors[pos[jump_ids], slots]
        t[alive] = t_next
        alive = alive[jumping]
    return pos


def _run_blocks(n_paths: int, seed: int, threads: int, worker):
    """Map worker(block_index, block_size, rng) over blocks, reduce in order."""
    blocks = [(b, min(BLOCK_SIZE, n_paths - b * BLOCK_SIZE))
              for b in range((n_paths + BLOCK_SIZE - 1) // BLOCK_SIZE)]

    def run(args):
        b, size = args
        return worker(b, size, _block_rng(seed, b))

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(args) for args in blocks]
    return results


def _mean_se(total: float, total_sq: float, n: int) -> tuple[float, float]:
    mean = total / n
    var = max(0.0, total_sq / n - mean * mean)
    return mean, np.sqrt(var / n)


def window_functional_moment(config: WalkConfig, weights: np.ndarray,
                             window: tuple[float, float], ell: int,
                             n_paths: int, seed: int, start="stationary",
                             threads: int = 1) -> tuple[float, float]:
    """Mean and standard error of (int_a^b w(omega_s) ds)^ell over paths.

    With w = f * slopes this is the Monte Carlo moment of the local-time
    integral; any per-site weight vector works.
    """
    a, b = window
    T = b

    def worker(block, size, rng):
        acc = np.zeros(size)

        def on_segment(paths, sites, t0, t1):
            overlap = np.minimum(t1, b) - np.maximum(t0, a)
            np.maximum(overlap, 0.0, out=overlap)
            acc[paths] += weights[sites] * overlap

        _evolve(config, rng, size, T, start, on_segment)
        powered = acc ** ell
        return powered.sum(), (powered ** 2).sum(), size

    parts = _run_blocks(n_paths, seed, threads, worker)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    return _mean_se(total, total_sq, n_paths)


def feynman_kac_estimate(config: WalkConfig, slopes: np.ndarray,
                         f_vals: np.ndarray, g_vals: np.ndarray,
                         h_vals: np.ndarray, T: float, start, n_paths: int,
                         seed: int, threads: int = 1) -> tuple[float, float]:
    """Monte Carlo Feynman-Kac payoff for time-constant boundary data.

    Per path: f(omega_T) e^{-int g dL} - int h e^{-int_0^theta g dL} dL_theta,
    with every segment contribution in closed form.
    """

    def worker(block, size, rng):
        expo = np.zeros(size)    # accumulated int_0^t g dL
        sink = np.zeros(size)    # accumulated h-source term

        def on_segment(paths, sites, t0, t1):
            c = slopes[sites]
            active = c > 0.0
            if not active.any():
                return
            ids = paths[active]
            dL = c[active] * (t1[active] - t0[active])
            g = g_vals[sites[active]]
            h = h_vals[sites[active]]
            w0 = np.exp(-expo[ids])
            gdL = g * dL
            # int_0^dL h e^{-(A + g l)} dl, exact for constant g, h
            with np.errstate(divide="ignore", invalid="ignore"):
                inc = np.where(g != 0.0,
                               h * w0 * -np.expm1(-gdL) / np.where(g == 0, 1, g),
                               h * w0 * dL)
            sink[ids] += inc
            expo[ids] += gdL

        final = _evolve(config, rng, size, T, start, on_segment)
        payoff = f_vals[final] * np.exp(-expo) - sink
        return payoff.sum(), (payoff ** 2).sum(), size

    parts = _run_blocks(n_paths, seed, threads, worker)
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    return _mean_se(total, total_sq, n_paths)


def occupation_time_estimate(config: WalkConfig, indicator: np.ndarray,
                             T: float, n_paths: int, seed: int,
                             start="stationary",
                             threads: int = 1) -> tuple[float, float]:
    """Mean and SE of the time spent in a site set up to T."""
    weights = indicator.astype(float)
    return window_functional_moment(config, weights, (0.0, T), 1,
                                    n_paths, seed, start, threads)


def exit_time_probabilities(config: WalkConfig, t: float, etas: np.ndarray,
                            n_paths: int, seed: int,
                            threads: int = 1) -> np.ndarray:
    """P(sup_{s<=t} |X_s - X_0| >= eta) for each eta, from a worst-case start.

    Starts at the site nearest the domain center so displacements are not
    clipped too early by the boundary.
    """
    lat = config.lattice
    center = lat.coords.mean(axis=0)
    start = lat.nearest_site(center)
    start_pt = lat.coords[start]
    dist = np.linalg.norm(lat.coords - start_pt, axis=1)

    def worker(block, size, rng):
        peak = np.zeros(size)

        def on_segment(paths, sites, t0, t1):
            peak[paths] = np.maximum(peak[paths], dist[sites])

        _evolve(config, rng, size, t, start, on_segment)
        return (peak[:, None] >= etas[None, :]).sum(axis=0)

    parts = _run_blocks(n_paths, seed, threads, worker)
    counts = np.sum(parts, axis=0)
    return counts / n_paths
