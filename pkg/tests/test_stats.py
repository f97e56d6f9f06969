import numpy as np
import pytest
from sklearn.base import clone

from conftest import make_env
from driftwalk.corrector import solve_corrector
from driftwalk.exceptions import HorizonTooLong, InsufficientSamples
from driftwalk.lattice import DriftField, LatticeDims
from driftwalk.spectral import hminus_functional
from driftwalk.stats import (DiffusivityEstimator, bound_margins, estimate_sigma2, heat_kernel,
                             increasing_beyond, isoperimetry, msd, quannealed_deviation,
                             rwrs_consistency)
from driftwalk.walker import WalkConfig, simulate_ctmc
from oracles import brute_isoperimetry


def _endpoints(env, T, samples, seed):
    return simulate_ctmc(WalkConfig(env, T=T, samples=samples, master_seed=seed)).endpoints


def test_msd_zero_field(zero8):
    rows = msd([(_endpoints(zero8, T, 2000, 1), T) for T in (10.0, 100.0)], ctilde_trace=0.0)
    for r in rows:
        assert r.se > 0
        assert abs(r.msd_over_t - 4.0) <= 4 * r.se
        assert r.violation is None


def test_msd_flags_violation():
    X = np.zeros((1000, 2))
    X[::2, 0] = 1
    (row,) = msd([(X, 10.0)])
    assert row.violation == "below_lower_bound"


def test_msd_needs_samples():
    with pytest.raises(InsufficientSamples):
        msd([(np.zeros((10, 2)), 1.0)])


def test_increasing_beyond():
    from driftwalk.stats import MSDRow
    rows = [MSDRow(1, 1.0, 0.1), MSDRow(2, 2.0, 0.1), MSDRow(3, 2.1, 0.1)]
    assert increasing_beyond(rows[:2]) and not increasing_beyond(rows)


def test_estimate_sigma2_zero_field(zero8):
    est = estimate_sigma2(_endpoints(zero8, 100.0, 5000, 2), 100.0)
    assert est.within(2 * np.eye(2), k=4)
    assert all(0 <= p <= 1 for _, p in est.ks)


def test_bound_margins_exact():
    m = bound_margins(2 * np.eye(2), np.zeros((2, 2)))
    assert m["lower"] == 0 and m["upper"] == 2 and m["passed"]
    assert m["lower_2dI"] == -2 and m["lower_trace"] == 0


def test_bound_margins_corrector(plaquette8):
    sol = solve_corrector(plaquette8)
    ct, _ = hminus_functional(plaquette8)
    m = bound_margins(sol.sigma2, ct)
    assert m["passed"] and m["lower"] > 0 and m["upper"] > 0 and m["lower_trace"] > 0


def test_quannealed_deviation(zero8):
    sets = [_endpoints(zero8, 50.0, 1000, s) for s in range(3)]
    dev = quannealed_deviation(sets, 50.0, 2 * np.eye(2))
    assert all(m < 0.1 for m, _ in dev)


def test_heat_kernel_origin(plaquette8):
    rep = heat_kernel(plaquette8, 4)
    assert rep.rows[0][:2] == (0, 1.0)
    assert rep.rows[1][1] == 0.5
    assert rep.mass_error < 1e-12


def test_heat_kernel_horizon_guard(plaquette8):
    with pytest.raises(HorizonTooLong):
        heat_kernel(plaquette8, 5)


def test_heat_kernel_ssrw_local_clt():
    rep = heat_kernel(DriftField.zeros(LatticeDims(2, 64)), 100)
    assert rep.spread(20, 100) <= 1.1
    assert rep.exponent == pytest.approx(1.0, abs=0.02)
    assert rep.exponent_ci[0] <= rep.exponent <= rep.exponent_ci[1]


def test_heat_kernel_matches_lazy_walk_samples(plaquette8):
    from driftwalk.walker import simulate_lazy
    env = make_env("plaquette_iid", 2, 16, 3)
    rep = heat_kernel(env, 6)
    r = simulate_lazy(WalkConfig(env, n=6, samples=40000, master_seed=9, start="origin"))
    p0 = np.mean(np.all(r.endpoints == 0, axis=1))
    # mass at the origin after 6 steps
    from driftwalk.stats import lazy_step
    P = np.zeros(env.dims.shape)
    P[0, 0] = 1
    for _ in range(6):
        P = lazy_step(1 + env.expanded, P)
    assert abs(p0 - P[0, 0]) < 4 * np.sqrt(P[0, 0] / 40000)
    assert rep.rows[6][1] == P.max()


def test_isoperimetry_trivial(plaquette8):
    Q, b = isoperimetry(plaquette8, [(2, 3)])
    assert (Q, b) == (0.5, 4)
    full = np.ones(plaquette8.dims.shape, dtype=bool)
    assert isoperimetry(plaquette8, full) == (0.0, 0)


def test_isoperimetry_matches_brute_force(plaquette8):
    mask = np.random.default_rng(0).random(plaquette8.dims.shape) < 0.4
    Q, b = isoperimetry(plaquette8, mask)
    Qb, bb = brute_isoperimetry(plaquette8, mask)
    assert b == bb and Q == Qb == b / 8


def test_rwrs_consistency_zero(zero8):
    rep = rwrs_consistency(zero8, [10.0, 20.0], samples=100)
    assert rep.target == 0 and rep.rows[-1][1] == 0 and rep.passed


def test_diffusivity_estimator(zero8):
    X = _endpoints(zero8, 200.0, 3000, 5)
    est = DiffusivityEstimator(T=200.0, ctilde=np.zeros((2, 2))).fit(X)
    rep = est.report()
    assert rep["bound_check"]["passed"]
    assert rep["sigma2_se"][0][0] > 0
    assert clone(est).get_params()["T"] == 200.0
    with pytest.raises(InsufficientSamples):
        DiffusivityEstimator(T=1.0).fit(X[:10])


def test_lattice_ks_calibrated():
    from driftwalk.stats import lattice_ks
    rng = np.random.default_rng(0)
    ps = [lattice_ks(rng.poisson(500, 4000) - rng.poisson(500, 4000), np.sqrt(1000))[1] for _ in range(40)]
    assert 0.1 < np.mean(ps) < 0.9
    assert np.mean(np.array(ps) < 0.05) < 0.2
    D, p = lattice_ks(rng.integers(-50, 51, 4000), np.sqrt(1000))
    assert p < 1e-6


def test_lattice_ks_zero_for_exact_lattice_gaussian():
    from driftwalk.stats import lattice_ks
    from scipy import stats as sps
    ks = np.arange(-200, 201)
    w = sps.norm.cdf((ks + 0.5) / 30) - sps.norm.cdf((ks - 0.5) / 30)
    counts = np.round(w * 1e6).astype(int)
    D, _ = lattice_ks(np.repeat(ks, counts), 30)
    assert D < 1e-5
