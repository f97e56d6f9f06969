import numpy as np
import pytest

from conftest import make_env
from driftwalk.exceptions import RecordModeMismatch, ValidationError
from driftwalk.lattice import DriftField, LatticeDims
from driftwalk.walker import (WalkConfig, WalkTables, decompose, simulate_ctmc, simulate_lazy,
                              simulate_quannealed, simulate_rwrs)


def test_config_validation(plaquette8):
    with pytest.raises(ValueError):
        WalkConfig(plaquette8)
    with pytest.raises(ValueError):
        WalkConfig(plaquette8, T=1.0, n=3)
    with pytest.raises(ValueError):
        WalkConfig(plaquette8, T=-1.0)
    with pytest.raises(ValueError):
        WalkConfig(plaquette8, T=1.0, record="movie")


def test_tables_rates_sum_to_2d(plaquette8):
    tables = WalkTables(plaquette8)
    assert np.all(tables.rates.sum(axis=1) == 4.0)
    assert np.all(tables.cum[:, -1] == 1.0)


def test_worker_count_does_not_change_results(plaquette8):
    runs = [simulate_ctmc(WalkConfig(plaquette8, T=50.0, samples=700, master_seed=3, workers=w))
            for w in (1, 3)]
    assert np.array_equal(runs[0].endpoints, runs[1].endpoints)
    assert np.array_equal(runs[0].jump_counts, runs[1].jump_counts)


def test_prefix_stability(plaquette8):
    a = simulate_ctmc(WalkConfig(plaquette8, T=20.0, samples=300, master_seed=1))
    b = simulate_ctmc(WalkConfig(plaquette8, T=20.0, samples=600, master_seed=1))
    assert np.array_equal(a.endpoints, b.endpoints[:300])


def test_jump_counts_poisson(zero8):
    r = simulate_ctmc(WalkConfig(zero8, T=10.0, samples=4000, master_seed=2))
    m = r.jump_counts.mean()
    assert abs(m - 40.0) < 4 * np.sqrt(40.0 / 4000)


def test_zero_horizon_lazy(plaquette8):
    r = simulate_lazy(WalkConfig(plaquette8, n=0, samples=10, start="origin"))
    assert np.all(r.endpoints == 0) and np.all(r.jump_counts == 0)


def test_lazy_walk_holds_about_half(zero8):
    r = simulate_lazy(WalkConfig(zero8, n=200, samples=2000, master_seed=4))
    frac = r.jump_counts.mean() / 200
    assert abs(frac - 0.5) < 0.01


def test_full_path_consistency(plaquette8):
    r = simulate_ctmc(WalkConfig(plaquette8, T=30.0, samples=20, master_seed=5, record="full_path"))
    tables = WalkTables(plaquette8)
    for traj in r.trajectories:
        pos = traj.positions(tables.steps)
        assert np.array_equal(pos[-1], traj.endpoint)
        assert np.all(np.diff(traj.times) >= 0)
        assert traj.times.size == traj.jump_count


def test_zero_rate_directions_never_used():
    env = make_env("manhattan", 2, 8, 6)
    r = simulate_ctmc(WalkConfig(env, T=40.0, samples=50, master_seed=6, record="full_path"))
    tables = WalkTables(env)
    for traj in r.trajectories:
        site = env.dims.flat_index(traj.start)
        for k in traj.dirs:
            assert tables.rates[site, k] > 0
            site = tables.nbr[site, k]


def test_decomposition_sums(plaquette8):
    r = simulate_ctmc(WalkConfig(plaquette8, T=25.0, samples=200, master_seed=7, record="decomposition"))
    assert np.allclose(r.Y + r.Z, r.endpoints)
    full = simulate_ctmc(WalkConfig(plaquette8, T=25.0, samples=5, master_seed=7, record="full_path"))
    for i, traj in enumerate(full.trajectories):
        times, Y, Z = decompose(traj, plaquette8)
        assert times[0] == 0 and times[-1] == 25.0
        assert np.allclose(Z[-1], r.Z[i])


def test_decompose_needs_path(plaquette8):
    r = simulate_ctmc(WalkConfig(plaquette8, T=5.0, samples=2))
    with pytest.raises(RecordModeMismatch):
        decompose(r[0], plaquette8)


def test_zero_field_decomposition_is_trivial(zero8):
    r = simulate_ctmc(WalkConfig(zero8, T=10.0, samples=50, record="decomposition"))
    assert np.all(r.Z == 0)


def test_annealed_mode():
    dims = LatticeDims(2, 8)
    from driftwalk.generators import GeneratorSpec, generate
    spec = GeneratorSpec("plaquette_iid", dims)

    def factory(rng):
        return generate(spec.with_seed(int(rng.integers(2**32))))[1]

    a = simulate_ctmc(WalkConfig(factory, T=10.0, samples=40, master_seed=1))
    b = simulate_ctmc(WalkConfig(factory, T=10.0, samples=40, master_seed=1, workers=2))
    assert np.array_equal(a.endpoints, b.endpoints)
    sets = simulate_quannealed(factory, R=3, M=20, T=5.0)
    assert len(sets) == 3 and sets[0].shape == (20, 2)


def test_rwrs_zero_field(zero8):
    r = simulate_rwrs(zero8, T=10.0, samples=50)
    assert r.estimate == 0.0 and r.matrix.shape == (2, 2)


def test_rwrs_deterministic(plaquette8):
    a = simulate_rwrs(plaquette8, T=20.0, samples=300, seed=3, workers=1)
    b = simulate_rwrs(plaquette8, T=20.0, samples=300, seed=3, workers=2)
    assert np.array_equal(a.integrals, b.integrals)


def test_constant_drift_rejected():
    v = np.zeros((2, 8, 8))
    v[0] = 0.5
    with pytest.raises(ValidationError):
        WalkTables(DriftField(LatticeDims(2, 8), v))
