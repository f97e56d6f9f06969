"""Exact finite-state homogenization on a periodic environment.

The environment process on an ``L^d`` torus is the finite chain with generator
``G[x, x+k] = 1 + V_k(x)``, ``G[x, x] = -2d``.  Divergence-freeness makes
``G`` doubly stochastic, so the uniform measure is stationary, the corrector
equation ``G chi = -phi`` is solvable for mean-zero ``phi``, and the effective
diffusivity is the quadratic-variation rate of ``X + chi(eta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator

from .exceptions import Reducible, SolverDivergence
from .lattice import step_vectors
from .validation import check_drift, check_mean_zero, check_positive

DIRECT_LIMIT = 4096


@dataclass(frozen=True, eq=False)
class EnvGenerator:
    matrix: sp.csr_matrix = field(repr=False)
    dims: object
    neighbours: np.ndarray = field(repr=False)
    rates: np.ndarray = field(repr=False)

    @property
    def symmetric_part(self):
        return 0.5 * (self.matrix + self.matrix.T)

    @property
    def skew_part(self):
        return 0.5 * (self.matrix - self.matrix.T)

    def laplacian(self):
        """Generator of the simple symmetric walk (rate 1 per direction)."""
        n = self.dims.n_sites
        m = self.neighbours.shape[1]
        rows = np.repeat(np.arange(n), m)
        adj = sp.csr_matrix((np.ones(n * m), (rows, self.neighbours.ravel())), shape=(n, n))
        return adj - m * sp.identity(n, format="csr")


def build_generator(env):
    """Sparse generator of the environment process."""
    env = check_drift(env)
    dims = env.dims
    d = dims.d
    n = dims.n_sites
    idx = np.arange(n).reshape(dims.shape)
    steps = step_vectors(d)
    nbr = np.empty((n, 2 * d), dtype=np.int64)
    for c, k in enumerate(steps):
        axis = int(np.flatnonzero(k)[0])
        nbr[:, c] = np.roll(idx, -int(k[axis]), axis=axis).ravel()
    rates = 1.0 + env.expanded.reshape(2 * d, -1).T
    rows = np.repeat(np.arange(n), 2 * d)
    off = sp.csr_matrix((rates.ravel(), (rows, nbr.ravel())), shape=(n, n))
    G = (off - 2 * d * sp.identity(n, format="csr")).tocsr()
    G.sum_duplicates()
    G.eliminate_zeros()
    return EnvGenerator(G, dims, nbr, rates)


def _as_generator(env):
    return env if isinstance(env, EnvGenerator) else build_generator(env)


def resolvent(env, lam, f, rtol=1e-10):
    """Solve ``(lam I - G) u = f``; returns ``u`` with relative residual <= ``rtol``."""
    check_positive(lam, "lambda")
    gen = _as_generator(env)
    f = np.asarray(f, dtype=float).ravel()
    A = (lam * sp.identity(gen.dims.n_sites, format="csc") - gen.matrix).tocsc()
    norm_f = np.linalg.norm(f)
    if norm_f == 0:
        return np.zeros_like(f)
    u = spla.splu(A).solve(f)
    for _ in range(3):
        r = f - A @ u
        if np.linalg.norm(r) <= rtol * norm_f:
            break
        u = u + spla.spsolve(A, r)
    if np.linalg.norm(f - A @ u) > rtol * norm_f:
        raise SolverDivergence("resolvent solve did not reach the requested residual")
    return u


def resolvent_residual(env, lam, u, f):
    gen = _as_generator(env)
    f = np.asarray(f, dtype=float).ravel()
    r = lam * u - gen.matrix @ u - f
    return float(np.linalg.norm(r) / max(np.linalg.norm(f), 1e-300))


def check_irreducible(gen):
    n_comp, labels = connected_components(gen.matrix, directed=True, connection="strong")
    if n_comp > 1:
        sizes = np.bincount(labels)
        raise Reducible(f"environment chain splits into {n_comp} communicating classes "
                        f"(sizes {sorted(sizes.tolist(), reverse=True)[:8]})", labels=labels)


def _solve_mean_zero(gen, rhs, rtol=1e-12):
    """Solve ``G x = rhs`` with ``sum x = 0`` via the bordered system."""
    n = gen.dims.n_sites
    ones = np.ones((n, 1))
    if n <= DIRECT_LIMIT:
        K = sp.bmat([[gen.matrix, sp.csr_matrix(ones)], [sp.csr_matrix(ones.T), None]], format="csc")
        lu = spla.splu(K)
        sols = []
        for b in rhs:
            x = lu.solve(np.concatenate([b, [0.0]]))[:n]
            r = b - gen.matrix @ x
            x = x + lu.solve(np.concatenate([r, [0.0]]))[:n]
            sols.append(x - x.mean())
        return np.array(sols)
    sols = []
    for b in rhs:
        x, info = spla.gmres(gen.matrix, b, rtol=rtol, restart=200, maxiter=2000)
        if info != 0:
            raise SolverDivergence(f"GMRES did not converge (info={info})")
        sols.append(x - x.mean())
    return np.array(sols)


@dataclass
class CorrectorSolution:
    chi: np.ndarray  # (d, N)
    residual: float
    sigma2: np.ndarray
    dims: object = None


def effective_diffusivity(gen, chi):
    """``sigma2_ij = L^-d sum_x sum_k (1 + V_k)(k_i + grad_k chi_i)(k_j + grad_k chi_j)``."""
    d = gen.dims.d
    steps = step_vectors(d).astype(float)
    # (N, 2d, d) corrected increments
    inc = steps[None, :, :] + np.stack([chi[i][gen.neighbours] - chi[i][:, None] for i in range(d)], axis=-1)
    sigma2 = np.einsum("xk,xki,xkj->ij", gen.rates, inc, inc) / gen.dims.n_sites
    return 0.5 * (sigma2 + sigma2.T)


def solve_corrector(env):
    """Corrector ``chi_i`` (mean zero) solving ``G chi_i = -phi_i`` and the exact ``sigma2``."""
    env = check_drift(env)
    gen = build_generator(env)
    check_irreducible(gen)
    d = env.dims.d
    phi = env.phi.reshape(d, -1)
    for i in range(d):
        check_mean_zero(phi[i])
    chi = _solve_mean_zero(gen, -phi)
    res = float(max(np.max(np.abs(gen.matrix @ chi[i] + phi[i])) for i in range(d)))
    scale = max(float(np.max(np.abs(phi), initial=0.0)), 1e-300)
    if res > 1e-9 * max(scale, 1.0):
        raise SolverDivergence(f"corrector residual {res:g} above tolerance")
    return CorrectorSolution(chi, res, effective_diffusivity(gen, chi), env.dims)


@dataclass
class KVRow:
    lam: float
    component: int
    lam_u_sq: float
    dirichlet: float
    two_u_f: float
    residual: float


def kv_diagnostics(env, lambdas):
    """Resolvent diagnostics for ``f = phi_i`` along a decreasing ``lambda`` grid.

    Per row: ``lam * ||u||^2``, ``||S^{1/2} u||^2 = <u, -Delta u>`` and
    ``2 <u, phi_i>`` (inner products are torus averages).
    """
    env = check_drift(env)
    lambdas = [float(l) for l in lambdas]
    if any(l <= 0 for l in lambdas) or any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda grid must be positive and strictly decreasing")
    gen = build_generator(env)
    lap = gen.laplacian()
    d = env.dims.d
    n = env.dims.n_sites
    phi = env.phi.reshape(d, -1)
    rows = []
    for lam in lambdas:
        for i in range(d):
            u = resolvent(gen, lam, phi[i])
            rows.append(KVRow(lam, i, lam * float(u @ u) / n, float(u @ (-(lap @ u))) / n,
                              2 * float(u @ phi[i]) / n, resolvent_residual(gen, lam, u, phi[i])))
    return rows


def lambda_grid(spec):
    """Parse ``"1e-1:1e-8"`` into decades ``[1e-1, 1e-2, ..., 1e-8]``; lists pass through."""
    if isinstance(spec, str):
        hi, lo = (float(s) for s in spec.split(":"))
        k_hi, k_lo = np.log10(hi), np.log10(lo)
        n = int(round(k_hi - k_lo)) + 1
        return [float(x) for x in np.logspace(k_hi, k_lo, n)]
    return [float(x) for x in spec]


class CorrectorEstimator(BaseEstimator):
    """Effective diffusivity of a periodic environment.

    After ``fit(env)``: ``chi_`` (``(d, L^d)`` corrector), ``sigma2_``,
    ``residual_``; ``kv_`` holds resolvent diagnostics when ``lambdas`` is set.
    """

    def __init__(self, lambdas=None):
        self.lambdas = lambdas

    def fit(self, X, y=None):
        sol = solve_corrector(X)
        self.chi_ = sol.chi
        self.sigma2_ = sol.sigma2
        self.residual_ = sol.residual
        self.kv_ = kv_diagnostics(X, lambda_grid(self.lambdas)) if self.lambdas is not None else None
        return self

    def predict(self, T):
        """Predicted covariance ``sigma2 * T`` of the displacement at time ``T``."""
        return self.sigma2_ * float(T)
