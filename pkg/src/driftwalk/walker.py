"""Continuous-time and lazy walks in a fixed drift field, plus the RWRS functional.

The total jump rate is ``sum_k (1 + V_k(x)) = 2d`` at every site, so a
continuous-time path over ``[0, T]`` is a ``Poisson(2dT)`` number of jumps of
the embedded chain, at i.i.d. uniform times.  Each trajectory owns a
generator seeded from ``SeedSequence(master_seed, spawn_key=(index,))``;
trajectories are split into fixed blocks, so the worker count never changes
the output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import RecordModeMismatch
from .lattice import DriftField, step_vectors
from .validation import check_drift

RECORD_MODES = ("endpoint", "full_path", "decomposition")
START_MODES = ("random", "origin")
BLOCK = 256


# --------------------------------------------------------------------------- kernels

@numba.njit(cache=True, nogil=True)
def _choose(row, x):
    n = row.shape[0]
    for k in range(n):
        if x < row[k]:
            return k
    # x rounded up onto the total: take the last direction with positive rate
    for k in range(n - 1, -1, -1):
        if k == 0 or row[k] > row[k - 1]:
            return k
    return n - 1


@numba.njit(cache=True, nogil=True)
def _endpoint_kernel(nbr, cum, steps, site, u, lazy):
    d = steps.shape[1]
    disp = np.zeros(d, dtype=np.int64)
    moves = 0
    for n in range(u.shape[0]):
        x = u[n]
        if lazy:
            if x < 0.5:
                continue
            x = 2.0 * x - 1.0
        row = cum[site]
        k = _choose(row, x * row[row.shape[0] - 1])
        for a in range(d):
            disp[a] += steps[k, a]
        site = nbr[site, k]
        moves += 1
    return disp, site, moves


@numba.njit(cache=True, nogil=True)
def _path_kernel(nbr, cum, site, u, lazy, sites, dirs):
    sites[0] = site
    for n in range(u.shape[0]):
        x = u[n]
        if lazy:
            if x < 0.5:
                dirs[n] = -1
                sites[n + 1] = site
                continue
            x = 2.0 * x - 1.0
        row = cum[site]
        k = _choose(row, x * row[row.shape[0] - 1])
        dirs[n] = k
        site = nbr[site, k]
        sites[n + 1] = site


@numba.njit(cache=True, nogil=True)
def _occupation_integral(phi, sites, times, T):
    """``int_0^T phi(site(s)) ds`` for a path visiting ``sites`` with jump ``times``."""
    d = phi.shape[1]
    out = np.zeros(d)
    prev = 0.0
    for n in range(times.shape[0]):
        dt = times[n] - prev
        s = sites[n]
        for a in range(d):
            out[a] += phi[s, a] * dt
        prev = times[n]
    s = sites[times.shape[0]]
    for a in range(d):
        out[a] += phi[s, a] * (T - prev)
    return out


@numba.njit(cache=True, nogil=True)
def _ssrw_sites(nbr, site, u, sites):
    m = nbr.shape[1]
    sites[0] = site
    for n in range(u.shape[0]):
        k = int(u[n] * m)
        if k >= m:
            k = m - 1
        site = nbr[site, k]
        sites[n + 1] = site


# --------------------------------------------------------------------------- tables

class WalkTables:
    """Flattened lookup tables for one environment (shared read-only)."""

    def __init__(self, env):
        env = check_drift(env)
        dims = env.dims
        d = dims.d
        self.env = env
        self.dims = dims
        self.steps = step_vectors(d)
        rates = 1.0 + env.expanded.reshape(2 * d, -1).T  # (N, 2d)
        total = rates.sum(axis=1)
        # exact rate conservation: sum_k (1 + V_k(x)) = 2d
        tol = 0.0 if env.exact else 1e-12
        if np.max(np.abs(total - 2 * d)) > tol:
            raise ValueError("jump rates do not sum to 2d; drift is not divergence-free")
        if np.any(rates < 0):
            raise ValueError("negative jump rate; |V| exceeds 1")
        self.rates = rates
        self.cum = np.ascontiguousarray(np.cumsum(rates / (2 * d), axis=1))
        idx = np.arange(dims.n_sites).reshape(dims.shape)
        nbr = np.empty((dims.n_sites, 2 * d), dtype=np.int64)
        for n, k in enumerate(self.steps):
            axis = int(np.flatnonzero(k)[0])
            nbr[:, n] = np.roll(idx, -int(k[axis]), axis=axis).ravel()
        self.nbr = nbr
        self.phi = np.ascontiguousarray(env.phi.reshape(d, -1).T)


# --------------------------------------------------------------------------- results

@dataclass
class Trajectory:
    start: tuple
    T: float | None
    endpoint: np.ndarray
    jump_count: int
    times: np.ndarray | None = None
    dirs: np.ndarray | None = None
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None

    def positions(self, steps):
        """Displacement after each event, starting with 0."""
        if self.dirs is None:
            raise RecordModeMismatch("trajectory was recorded without its path")
        inc = np.where(self.dirs[:, None] >= 0, steps[np.maximum(self.dirs, 0)], 0)
        return np.vstack([np.zeros((1, steps.shape[1]), dtype=np.int64), np.cumsum(inc, axis=0)])


@dataclass
class WalkResult:
    """Struct-of-arrays view of a batch of trajectories."""

    endpoints: np.ndarray
    jump_counts: np.ndarray
    starts: np.ndarray
    T: float | None = None
    n: int | None = None
    Y: np.ndarray | None = None
    Z: np.ndarray | None = None
    paths: list | None = field(default=None, repr=False)
    record: str = "endpoint"

    def __len__(self):
        return self.endpoints.shape[0]

    def __getitem__(self, i):
        path = self.paths[i] if self.paths is not None else (None, None)
        return Trajectory(
            start=tuple(int(c) for c in self.starts[i]), T=self.T,
            endpoint=self.endpoints[i], jump_count=int(self.jump_counts[i]),
            times=path[0], dirs=path[1],
            Y=None if self.Y is None else self.Y[i],
            Z=None if self.Z is None else self.Z[i])

    @property
    def trajectories(self):
        return [self[i] for i in range(len(self))]


@dataclass
class WalkConfig:
    env: object
    T: float | None = None
    n: int | None = None
    samples: int = 1
    master_seed: int = 0
    record: str = "endpoint"
    start: str = "random"
    workers: int = 1

    def __post_init__(self):
        if (self.T is None) == (self.n is None):
            raise ValueError("give exactly one of T (continuous time) or n (steps)")
        if self.T is not None and not self.T > 0:
            raise ValueError("T must be positive")
        if self.n is not None and self.n < 0:
            raise ValueError("n must be nonnegative")
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if self.record not in RECORD_MODES:
            raise ValueError(f"record must be one of {RECORD_MODES}")
        if self.start not in START_MODES:
            raise ValueError(f"start must be one of {START_MODES}")


def trajectory_rng(master_seed, index, stream=0):
    return np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(int(index), stream)))


def _blocks(samples):
    return [(lo, min(lo + BLOCK, samples)) for lo in range(0, samples, BLOCK)]


def _run_blocks(fn, samples, workers):
    blocks = _blocks(samples)
    if workers <= 1 or len(blocks) == 1:
        for lo, hi in blocks:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(lambda b: fn(*b), blocks))


def _tables_for(env, cache):
    if isinstance(env, WalkTables):
        return env
    key = id(env)
    if key not in cache:
        cache[key] = WalkTables(env)
    return cache[key]


def _simulate(cfg, lazy):
    env_factory = cfg.env if callable(cfg.env) and not isinstance(cfg.env, (DriftField, WalkTables)) else None
    cache = {}
    tables0 = None if env_factory else _tables_for(cfg.env, cache)
    dims = (tables0 or WalkTables(env_factory(trajectory_rng(cfg.master_seed, 0, 1)))).dims
    d = dims.d
    samples = cfg.samples
    endpoints = np.zeros((samples, d), dtype=np.int64)
    jumps = np.zeros(samples, dtype=np.int64)
    starts = np.zeros((samples, d), dtype=np.int64)
    want_z = cfg.record == "decomposition"
    Z = np.zeros((samples, d)) if want_z else None
    paths = [None] * samples if cfg.record == "full_path" else None

    def one(i):
        rng = trajectory_rng(cfg.master_seed, i)
        tables = tables0 if tables0 is not None else WalkTables(env_factory(trajectory_rng(cfg.master_seed, i, 1)))
        site = int(rng.integers(tables.dims.n_sites)) if cfg.start == "random" else 0
        starts[i] = tables.dims.coords_of(site)
        if lazy:
            count = int(cfg.n)
        else:
            count = int(rng.poisson(2 * d * cfg.T))
        u = rng.random(count)
        if cfg.record == "endpoint":
            disp, _, moves = _endpoint_kernel(tables.nbr, tables.cum, tables.steps, site, u, lazy)
            endpoints[i] = disp
            jumps[i] = moves if lazy else count
            return
        sites = np.empty(count + 1, dtype=np.int64)
        dirs = np.empty(count, dtype=np.int64)
        _path_kernel(tables.nbr, tables.cum, site, u, lazy, sites, dirs)
        moved = dirs[dirs >= 0]
        endpoints[i] = tables.steps[moved].sum(axis=0)
        jumps[i] = moved.size
        if lazy:
            times = np.arange(1, count + 1, dtype=float)
            horizon = float(count)
        else:
            times = np.sort(rng.random(count)) * cfg.T
            horizon = float(cfg.T)
        if want_z:
            Z[i] = _occupation_integral(tables.phi, sites, times, horizon)
        if paths is not None:
            paths[i] = (times, dirs)

    def block(lo, hi):
        for i in range(lo, hi):
            one(i)

    _run_blocks(block, samples, cfg.workers)
    Y = endpoints - Z if want_z else None
    return WalkResult(endpoints, jumps, starts, T=cfg.T, n=cfg.n, Y=Y, Z=Z, paths=paths,
                      record=cfg.record)


def simulate_ctmc(cfg):
    """Continuous-time walk with rates ``1 + V_k(x)`` up to time ``cfg.T``.

    ``cfg.env`` is a drift field (quenched; start site uniform or the origin)
    or a callable ``rng -> DriftField`` (annealed; fresh environment per
    trajectory).  ``record="decomposition"`` also returns
    ``Z(T) = int_0^T phi(eta_s) ds`` (exact, event-driven) and ``Y = X - Z``.
    """
    if cfg.T is None:
        raise ValueError("simulate_ctmc needs a time horizon T")
    return _simulate(cfg, lazy=False)


def simulate_lazy(cfg):
    """Discrete-time lazy walk: stay w.p. 1/2, else step ``k`` w.p. ``(1 + V_k)/(4d)``.

    For ``record="decomposition"`` the drift integral is taken over unit
    holding times, which is the natural discrete analogue.
    """
    if cfg.n is None:
        raise ValueError("simulate_lazy needs a step count n")
    return _simulate(cfg, lazy=True)


def simulate_quannealed(env_factory, R, M, T, master_seed=0, workers=1):
    """``R`` environments x ``M`` quenched walks each; returns a list of endpoint arrays."""
    out = []
    for r in range(R):
        env = env_factory(trajectory_rng(master_seed, r, 2))
        res = simulate_ctmc(WalkConfig(env, T=T, samples=M,
                                       master_seed=int(np.random.SeedSequence(
                                           int(master_seed), spawn_key=(r, 3)).generate_state(1)[0]),
                                       workers=workers))
        out.append(res.endpoints)
    return out


def decompose(traj, env):
    """Martingale/drift split ``X = Y + Z`` along a recorded path.

    Returns ``(times, Y, Z)``; ``times`` are ``0``, the jump times and ``T``,
    and the path values are taken right after each event.
    """
    if traj.dirs is None or traj.times is None:
        raise RecordModeMismatch("decompose needs a trajectory recorded with record='full_path'")
    tables = env if isinstance(env, WalkTables) else WalkTables(env)
    dims = tables.dims
    site = dims.flat_index(traj.start)
    steps = tables.steps
    X = traj.positions(steps)
    sites = np.empty(X.shape[0], dtype=np.int64)
    sites[0] = site
    for n, k in enumerate(traj.dirs):
        if k >= 0:
            site = tables.nbr[site, k]
        sites[n + 1] = site
    T = traj.T if traj.T is not None else float(len(traj.dirs))
    times = np.concatenate([[0.0], traj.times, [T]])
    dt = np.diff(times)
    Z = np.vstack([np.zeros((1, dims.d)), np.cumsum(tables.phi[sites] * dt[:, None], axis=0)])
    X = np.vstack([X, X[-1:]])
    Y = X - Z
    return times, Y, Z


@dataclass
class RWRSResult:
    integrals: np.ndarray  # (samples, d): int_0^T Phi(S_t) dt
    T: float

    @property
    def values(self):
        return (self.integrals**2).sum(axis=1) / self.T

    @property
    def estimate(self):
        return float(self.values.mean())

    @property
    def se(self):
        v = self.values
        return float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("inf")

    @property
    def matrix(self):
        I = self.integrals
        return I.T @ I / (I.shape[0] * self.T)


def simulate_rwrs(env, T, samples, seed=0, workers=1):
    """Monte Carlo estimate of ``T^-1 E |int_0^T Phi(S_t) dt|^2``.

    ``S`` is a simple symmetric walk with total rate ``2d``, independent of the
    scenery, started at a uniform site (the torus surrogate for averaging
    over the scenery).
    """
    tables = env if isinstance(env, WalkTables) else WalkTables(env)
    d = tables.dims.d
    out = np.zeros((samples, d))

    def block(lo, hi):
        for i in range(lo, hi):
            rng = trajectory_rng(seed, i)
            site = int(rng.integers(tables.dims.n_sites))
            count = int(rng.poisson(2 * d * T))
            u = rng.random(count)
            times = np.sort(rng.random(count)) * T
            sites = np.empty(count + 1, dtype=np.int64)
            _ssrw_sites(tables.nbr, site, u, sites)
            out[i] = _occupation_integral(tables.phi, sites, times, float(T))

    _run_blocks(block, samples, workers)
    return RWRSResult(out, float(T))
