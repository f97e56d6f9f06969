"""Statistical checks: diffusive bounds, CLT surrogates, heat kernel, isoperimetry.

Every "within k standard errors" verdict here is a deterministic function of
``(estimate, se, target)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps
from sklearn.base import BaseEstimator

from .exceptions import HorizonTooLong
from .lattice import Direction
from .validation import check_drift, check_endpoints

MIN_SAMPLES = 1000
KS_ALPHA = 0.01


@dataclass
class MSDRow:
    T: float
    msd_over_t: float
    se: float
    violation: str | None = None


def msd(runs, ctilde_trace=None, d=None, k=4.0, min_samples=MIN_SAMPLES):
    """``E|X(T)|^2 / T`` with standard errors, one row per ``(endpoints, T)`` pair.

    With ``ctilde_trace`` the rows are flagged when they leave
    ``[2d - k SE, 2d + 8 trace(Ctilde) + k SE]``.
    """
    rows = []
    for endpoints, T in runs:
        X = check_endpoints(endpoints, d, min_samples)
        sq = (X**2).sum(axis=1) / T
        est, se = float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(sq.size))
        flag = None
        dim = X.shape[1]
        if est < 2 * dim - k * se:
            flag = "below_lower_bound"
        elif ctilde_trace is not None and est > 2 * dim + 8 * ctilde_trace + k * se:
            flag = "above_upper_bound"
        rows.append(MSDRow(float(T), est, se, flag))
    return rows


def increasing_beyond(rows, k=4.0):
    """True if every consecutive MSD/T increase exceeds ``k`` combined SEs."""
    for a, b in zip(rows, rows[1:]):
        if not b.msd_over_t - a.msd_over_t > k * np.hypot(a.se, b.se):
            return False
    return True


def bound_margins(sigma2, ctilde, d=None, tol=1e-9):
    """Eigenvalue margins of the effective-diffusivity bounds.

    ``lower``: ``lambda_min(sigma2 - 2 I)`` (each coordinate's martingale part
    contributes rate 2); ``lower_trace``: ``trace(sigma2) - 2d``;
    ``lower_2dI``: ``lambda_min(sigma2 - 2d I)``, kept for reference;
    ``upper``: ``lambda_min(2d I + 8 Ctilde - sigma2)``.
    ``passed`` uses ``lower`` and ``upper`` at tolerance ``tol``.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    ctilde = np.asarray(ctilde, dtype=float)
    d = sigma2.shape[0] if d is None else d
    eye = np.eye(d)

    def lmin(m):
        return float(np.linalg.eigvalsh(0.5 * (m + m.T))[0])

    out = {
        "lower": lmin(sigma2 - 2 * eye),
        "lower_trace": float(np.trace(sigma2) - 2 * d),
        "lower_2dI": lmin(sigma2 - 2 * d * eye),
        "upper": lmin(2 * d * eye + 8 * ctilde - sigma2),
        "tolerance": float(tol),
    }
    out["passed"] = bool(out["lower"] >= -tol and out["upper"] >= -tol)
    return out


@dataclass
class Sigma2Estimate:
    sigma2: np.ndarray
    se: np.ndarray
    ks: list
    n: int
    T: float

    def within(self, target, k=3.0):
        return bool(np.all(np.abs(self.sigma2 - np.asarray(target)) <= k * self.se))


def lattice_ks(values, scale):
    """KS statistic and p-value of integer samples against ``N(0, scale^2)``.

    The normal law is discretised to the integers (mass of ``[k - 1/2, k + 1/2)``
    at ``k``) and both one-sided limits of the empirical CDF are compared, so
    the lattice step does not itself register as a deviation.  The p-value
    uses the continuous KS law, which is conservative for a discrete null.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = x.size
    ks, first = np.unique(x, return_index=True)
    upper = np.append(first[1:], n) / n
    lower = first / n
    D = max(float(np.max(np.abs(upper - sps.norm.cdf((ks + 0.5) / scale)))),
            float(np.max(np.abs(lower - sps.norm.cdf((ks - 0.5) / scale)))))
    return D, float(sps.kstwo.sf(D, n))


def estimate_sigma2(endpoints, T, min_samples=MIN_SAMPLES):
    """Empirical covariance of ``X(T)/sqrt(T)`` with entrywise SEs and KS tests.

    The SE of entry ``(i, j)`` is the standard error of the mean of the
    centred products ``(X_i - m_i)(X_j - m_j)/T``.  KS compares
    ``X_i / sqrt(T sigma2_ii)`` with the standard normal; integer-valued
    displacements go through :func:`lattice_ks`.
    """
    X = check_endpoints(endpoints, None, min_samples)
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    prods = Xc[:, :, None] * Xc[:, None, :] / T
    sigma2 = prods.sum(axis=0) / (n - 1)
    se = prods.std(axis=0, ddof=1) / np.sqrt(n)
    ks = []
    for i in range(X.shape[1]):
        scale = np.sqrt(T * sigma2[i, i])
        if np.all(X[:, i] == np.round(X[:, i])):
            ks.append(lattice_ks(X[:, i], scale))
        else:
            res = sps.kstest(X[:, i] / scale, "norm")
            ks.append((float(res.statistic), float(res.pvalue)))
    return Sigma2Estimate(sigma2, se, ks, n, float(T))


def quannealed_deviation(endpoint_sets, T, sigma2):
    """Average over environments of ``|E_w F(X(T)/sqrt T) - E F(W(1))|``.

    ``F`` runs over the bounded coordinate functions ``cos(x_i)``, whose
    Gaussian value is ``exp(-sigma2_ii / 2)``.  Returns per-coordinate
    ``(mean deviation, SE over environments)``.
    """
    sigma2 = np.asarray(sigma2, dtype=float)
    d = sigma2.shape[0]
    devs = []
    for X in endpoint_sets:
        X = np.asarray(X, dtype=float) / np.sqrt(T)
        devs.append([abs(np.cos(X[:, i]).mean() - np.exp(-sigma2[i, i] / 2)) for i in range(d)])
    devs = np.array(devs)
    se = devs.std(axis=0, ddof=1) / np.sqrt(len(devs)) if len(devs) > 1 else np.full(d, np.inf)
    return [(float(m), float(s)) for m, s in zip(devs.mean(axis=0), se)]


@dataclass
class HeatKernelReport:
    rows: list  # (n, sup_p, sup_times_n_half_d)
    exponent: float
    exponent_ci: tuple
    mass_error: float
    d: int
    notes: list = field(default_factory=list)

    def stability(self, n_lo, n_hi):
        """``max_{n in [n_lo, n_hi]} sup P_n n^{d/2}`` relative to its value at ``n_lo``."""
        vals = {int(r[0]): r[2] for r in self.rows}
        window = [vals[n] for n in range(n_lo, n_hi + 1)]
        return max(window) / vals[n_lo]

    def spread(self, n_lo, n_hi):
        """``max / min`` of ``sup P_n n^{d/2}`` over ``[n_lo, n_hi]``."""
        window = [r[2] for r in self.rows if n_lo <= r[0] <= n_hi]
        return max(window) / min(window)

    def to_dict(self):
        return {"report": "heatkernel", "d": self.d,
                "rows": [list(r) for r in self.rows],
                "exponent": self.exponent, "exponent_ci": list(self.exponent_ci),
                "mass_error": self.mass_error, "notes": list(self.notes)}


def lazy_step(env_rates, P):
    """One application of the lazy transition operator to a mass distribution."""
    d = P.ndim
    out = 0.5 * P
    for n in range(2 * d):
        k = Direction.from_index(n)
        flow = P * env_rates[n] / (4 * d)
        out = out + np.roll(flow, k.sign, axis=k.axis)
    return out


def heat_kernel(env, n_max, start=None, n_fit_min=None):
    """Exact lazy-walk distribution ``P_n`` from a point mass, ``n = 0..n_max``.

    Raises :class:`HorizonTooLong` when ``n_max > (L/4)^2`` (wrap-around).
    The decay exponent is fitted by least squares on ``log sup P_n`` vs
    ``log n`` over the upper half of the range.
    """
    env = check_drift(env)
    dims = env.dims
    if n_max > (dims.L / 4) ** 2:
        raise HorizonTooLong(f"n_max={n_max} exceeds (L/4)^2 = {(dims.L / 4) ** 2:g}")
    rates = 1.0 + env.expanded
    P = np.zeros(dims.shape)
    P[dims.wrap(start or (0,) * dims.d)] = 1.0
    rows = [(0, 1.0, 0.0)]
    mass_err = 0.0
    for n in range(1, n_max + 1):
        P = lazy_step(rates, P)
        mass_err = max(mass_err, abs(float(P.sum()) - 1.0))
        s = float(P.max())
        rows.append((n, s, s * n ** (dims.d / 2)))
    lo = max(1, n_fit_min if n_fit_min is not None else n_max // 2)
    ns = np.array([r[0] for r in rows[lo:]], dtype=float)
    sups = np.array([r[1] for r in rows[lo:]])
    if ns.size >= 3:
        fit = sps.linregress(np.log(ns), np.log(sups))
        tq = sps.t.ppf(0.975, ns.size - 2)
        alpha = -fit.slope
        ci = (alpha - tq * fit.stderr, alpha + tq * fit.stderr)
    else:
        alpha, ci = float("nan"), (float("nan"), float("nan"))
    return HeatKernelReport(rows, float(alpha), tuple(float(c) for c in ci), mass_err, dims.d)


def isoperimetry(env, S):
    """Lazy-walk flow ``Q(S, S^c)`` and the directed boundary size ``|dS|``.

    ``S`` is a boolean mask over the torus or an iterable of sites.  On
    dyadic environments the identity ``Q = |dS| / (4d)`` is asserted exactly.
    """
    env = check_drift(env)
    dims = env.dims
    mask = np.asarray(S)
    if mask.dtype != bool or mask.shape != dims.shape:
        m = np.zeros(dims.shape, dtype=bool)
        for x in S:
            m[dims.wrap(x)] = True
        mask = m
    d = dims.d
    Q = 0.0
    boundary = 0
    e = env.expanded
    for n in range(2 * d):
        k = Direction.from_index(n)
        target_in = np.roll(mask, -k.sign, axis=k.axis)  # is x + k in S
        cut = mask & ~target_in
        boundary += int(cut.sum())
        Q += float(((1.0 + e[n][cut]) / (4 * d)).sum())
    expected = boundary / (4 * d)
    tol = 0.0 if env.exact else 1e-12 * max(1, boundary)
    if abs(Q - expected) > tol:
        raise AssertionError(f"isoperimetric identity violated: Q={Q!r}, |dS|/(4d)={expected!r}")
    return Q, boundary


@dataclass
class RWRSConsistency:
    rows: list  # (T, estimate, se)
    target: float
    k: float
    passed: bool
    corrected_target: float
    corrected_passed: bool


def rwrs_consistency(env, T_values, samples, seed=0, k=4.0, workers=1):
    """Compare the Monte Carlo RWRS functional with ``trace(Ctilde)``.

    ``passed`` tests the last estimate against ``trace(Ctilde)`` within
    ``k`` SE and requires the sequence to approach it in trend;
    ``corrected_*`` repeats the final check against ``trace(Ctilde) / 2``,
    the asymptotic value for a walk with total jump rate ``2d``.
    """
    from .spectral import hminus_functional
    from .walker import simulate_rwrs

    env = check_drift(env)
    _, tr = hminus_functional(env)
    rows = []
    for n, T in enumerate(T_values):
        r = simulate_rwrs(env, T, samples, seed=seed + n, workers=workers)
        rows.append((float(T), r.estimate, r.se))
    est, se = rows[-1][1], rows[-1][2]
    gaps = [abs(e - tr) for _, e, _ in rows]
    trend = gaps[-1] <= gaps[0] + k * se
    passed = bool(abs(est - tr) <= k * se and trend) if tr > 0 or est > 0 else True
    half = tr / 2
    corrected = bool(abs(est - half) <= k * se) if tr > 0 or est > 0 else True
    return RWRSConsistency(rows, tr, k, passed, half, corrected)


class DiffusivityEstimator(BaseEstimator):
    """Effective diffusivity from walk endpoints at a single horizon ``T``.

    After ``fit(X)`` with ``X`` of shape ``(n_samples, d)``: ``sigma2_``,
    ``sigma2_se_``, ``msd_`` (one :class:`MSDRow`), ``ks_`` and, when
    ``ctilde`` is given, ``bound_check_`` (Monte Carlo tolerance ``k`` times
    the largest entrywise SE).
    """

    def __init__(self, T=1.0, ctilde=None, k=4.0, min_samples=MIN_SAMPLES):
        self.T = T
        self.ctilde = ctilde
        self.k = k
        self.min_samples = min_samples

    def fit(self, X, y=None):
        X = check_endpoints(X, None, self.min_samples)
        est = estimate_sigma2(X, self.T, self.min_samples)
        self.sigma2_ = est.sigma2
        self.sigma2_se_ = est.se
        self.ks_ = est.ks
        self.n_samples_ = est.n
        tr = None if self.ctilde is None else float(np.trace(np.asarray(self.ctilde)))
        self.msd_ = msd([(X, self.T)], tr, min_samples=self.min_samples)[0]
        if self.ctilde is not None:
            tol = self.k * float(np.max(est.se))
            self.bound_check_ = bound_margins(est.sigma2, self.ctilde, tol=tol)
        else:
            self.bound_check_ = None
        return self

    def report(self):
        return {
            "T": float(self.T),
            "n_samples": int(self.n_samples_),
            "msd_curve": [[self.msd_.T, self.msd_.msd_over_t, self.msd_.se]],
            "msd_violation": self.msd_.violation,
            "sigma2_hat": self.sigma2_.tolist(),
            "sigma2_se": self.sigma2_se_.tolist(),
            "bound_check": self.bound_check_,
            "clt": [{"component": i + 1, "ks_statistic": s, "p_value": p}
                    for i, (s, p) in enumerate(self.ks_)],
            "notes": [],
        }
