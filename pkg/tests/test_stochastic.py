import numpy as np
import pytest

from flowlab.geometry import FlatCylinder, FlatSlab3D, FlatDisk, build_mesh
from flowlab import oracles, stochastic


@pytest.fixture(scope="module")
def disk():
    return build_mesh(FlatDisk(1.0, 12, 36))


def test_positions_stay_inside(disk):
    pos = stochastic.sample_rbm_positions(disk, np.array([0.5, 0.0]),
                                          t=0.05, n_paths=5000, seed=0)
    assert np.all(np.linalg.norm(pos, axis=1) <= 1.0 + 1e-12)


def test_positions_deterministic(disk):
    a = stochastic.sample_rbm_positions(disk, np.array([0.5, 0.0]),
                                        t=0.02, n_paths=1000, seed=3)
    b = stochastic.sample_rbm_positions(disk, np.array([0.5, 0.0]),
                                        t=0.02, n_paths=1000, seed=3)
    assert np.array_equal(a, b)


def test_mean_squared_displacement_free_regime():
    # far from walls, E|X_t - y|^2 = n * t (generator Laplacian/2 with
    # variance-t increments per unit time)
    m = build_mesh(FlatSlab3D(1.0, 1.0, 1.0, 8, 8, 8))
    y = np.array([0.5, 0.5, 0.5])
    t = 0.005
    pos = stochastic.sample_rbm_positions(m, y, t, n_paths=100_000, seed=1)
    msd = np.mean(np.sum((pos - y) ** 2, axis=1))
    assert abs(msd - 3 * t) < 0.02 * 3 * t


def test_exit_times_positive_and_censoring_flagged(disk):
    s = stochastic.sample_exit_times(disk, np.array([0.9, 0.0]), r=0.2,
                                     n_paths=20_000, horizon=0.02, seed=0)
    exited = ~s.censored
    assert np.all(s.tau[exited] > 0)
    assert np.all(s.tau[exited] <= 0.02 + 1e-12)


def test_interior_mean_exit_time():
    # for a ball B(y, r) away from walls, E[tau] = r^2 / n
    m = build_mesh(FlatSlab3D(1.0, 1.0, 1.0, 8, 8, 8))
    y = np.array([0.5, 0.5, 0.5])
    r = 0.15
    s = stochastic.sample_exit_times(m, y, r, n_paths=40_000,
                                     horizon=10 * r * r, seed=2)
    assert s.censored.mean() < 0.001
    mean_tau = s.tau[~s.censored].mean()
    assert abs(mean_tau - r * r / 3) < 0.02 * r * r / 3


def test_tail_estimate_positive_eta(disk):
    y = np.array([0.92, 0.0])
    r = 0.2
    s = stochastic.sample_exit_times(disk, y, r, n_paths=50_000,
                                     horizon=0.55 * r * r, seed=0)
    eta, rep = stochastic.exit_tail_estimate(
        s, np.linspace(0.1, 0.5, 6))
    assert eta > 0
    assert rep.monotone
    assert np.all(np.diff(rep.kappa) > 0)


def test_tail_grid_beyond_horizon_rejected(disk):
    s = stochastic.sample_exit_times(disk, np.array([0.9, 0.0]), r=0.1,
                                     n_paths=1000, horizon=0.003, seed=0)
    with pytest.raises(ValueError):
        stochastic.exit_tail_estimate(s, np.array([0.2, 1.0]))


def test_halfline_matches_oracle():
    r = 0.3
    hl = stochastic.halfline_exit_times(r, dt=5e-5, n_paths=100_000,
                                        horizon=0.25, seed=4)
    for t in (0.02, 0.05, 0.1, 0.2):
        p_sim = float(np.mean(hl.tau < t))
        p = oracles.rbm_halfline_oracle(r, t)
        se = np.sqrt(p * (1 - p) / hl.n_paths)
        assert abs(p_sim - p) < 3 * se + 1e-4


def test_interpolation_exact_for_multilinear():
    m = build_mesh(FlatCylinder(1.0, 1.0, 8, 8))
    f = 2.0 + 3.0 * m.coords[:, 0]
    pts = np.array([[0.31, 0.49], [0.127, 0.211], [0.9, 0.05]])
    vals = stochastic.interpolate_vertex_field(m, f, pts)
    assert np.allclose(vals, 2.0 + 3.0 * pts[:, 0], atol=1e-12)


def test_squared_distance_identity_products():
    for desc, n in ((FlatCylinder(1.0, 1.0, 12, 12), 2),
                    (FlatSlab3D(1.0, 1.0, 1.0, 6, 6, 6), 3)):
        m = build_mesh(desc)
        rep = stochastic.squared_distance_checks(m, m.n_vertices // 2)
        assert rep.laplacian_target == 2 * n
        assert rep.max_laplacian_error < 1e-10
        assert rep.min_boundary_normal_derivative >= -1e-3


def test_squared_distance_disk_norms(disk):
    rep = stochastic.squared_distance_checks(disk, 0)
    h = 1.0 / 12
    assert rep.l2_laplacian_error <= 2 * h * h
    assert rep.max_laplacian_excess <= 3 * h
    assert rep.min_boundary_normal_derivative >= -1e-3


def test_local_time_accumulates_near_wall(disk):
    from flowlab.stochastic import WalkerState, rbm_step
    w = WalkerState(np.array([0.999, 0.0]),
                    rng=np.random.default_rng(0))
    for _ in range(200):
        w = rbm_step(w, 1e-5, disk)
    assert w.local_time > 0
    assert np.linalg.norm(w.position) <= 1.0 + 1e-12
    assert np.isclose(w.time, 200 * 1e-5)
