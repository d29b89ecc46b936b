import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowlab.geometry import FlatCylinder, FlatSlab3D, build_mesh
from flowlab.groups import get_group, BranchCutError
from flowlab.yang_mills import (random_connection, gauge_transform,
                                plaquette_curvature,
                                yang_mills_energy, q_vertex_field,
                                apply_boundary_conditions, bc_residual,
                                energy_gradient, run_flow, zeta_functional,
                                zeta_bound_constant, monotonicity_check,
                                bochner_residual)


@pytest.fixture(scope="module")
def cyl():
    return build_mesh(FlatCylinder(1.0, 1.0, 12, 12))


# ---------------------------------------------------------------- groups --- #

def test_u1_exp_log_roundtrip():
    G = get_group("U1")
    v = np.linspace(-2.5, 2.5, 11)[:, None]
    assert np.allclose(G.log(G.exp(v)),
                       np.angle(np.exp(1j * v[:, 0]))[:, None])


def test_su2_exp_log_roundtrip():
    G = get_group("SU2")
    rng = np.random.default_rng(0)
    v = rng.uniform(-0.8, 0.8, (50, 3))
    assert np.allclose(G.log(G.exp(v)), v, atol=1e-12)


def test_su2_multiply_associative():
    G = get_group("SU2")
    rng = np.random.default_rng(1)
    a, b, c = (G.exp(rng.uniform(-1, 1, (8, 3))) for _ in range(3))
    left = G.multiply(G.multiply(a, b), c)
    right = G.multiply(a, G.multiply(b, c))
    assert np.allclose(left, right, atol=1e-12)


def test_su2_adjoint_is_isometry():
    G = get_group("SU2")
    rng = np.random.default_rng(2)
    g = G.exp(rng.uniform(-1, 1, (20, 3)))
    v = rng.standard_normal((20, 3))
    w = G.adjoint(g, v)
    assert np.allclose(np.linalg.norm(w, axis=1),
                       np.linalg.norm(v, axis=1), atol=1e-12)


def test_branch_cut_detected():
    G = get_group("U1")
    with pytest.raises(BranchCutError):
        G.log(np.array([np.pi - 1e-12]))


# ------------------------------------------------------------ invariance --- #

@pytest.mark.parametrize("group", ["U1", "SU2"])
def test_gauge_invariance_of_energy(cyl, group):
    G = get_group(group)
    c = random_connection(cyl, G, amplitude=0.4, seed=0)
    rng = np.random.default_rng(5)
    if G.algebra_dim == 1:
        site = G.exp(rng.uniform(-1, 1, (cyl.n_vertices, 1)))
    else:
        site = G.exp(rng.uniform(-0.7, 0.7, (cyl.n_vertices, 3)))
    c2 = gauge_transform(c, site)
    assert np.isclose(yang_mills_energy(c), yang_mills_energy(c2),
                      rtol=1e-10)
    assert np.allclose(q_vertex_field(c), q_vertex_field(c2), atol=1e-10)


def test_flat_connection_zero_energy(cyl):
    G = get_group("SU2")
    c = random_connection(cyl, G, amplitude=0.0, seed=0)
    assert yang_mills_energy(c) == 0.0
    assert np.allclose(plaquette_curvature(c), 0.0)


def test_curvature_scales_linearly_small_amplitude(cyl):
    # F(eps * A) ~ eps * F(A) to leading order
    G = get_group("SU2")
    F1 = plaquette_curvature(random_connection(cyl, G, 1e-4, seed=3))
    F2 = plaquette_curvature(random_connection(cyl, G, 2e-4, seed=3))
    # nonabelian commutator correction is O(amplitude) relative
    assert np.abs(F2 - 2 * F1).max() < 2e-4 * np.abs(F1).max()


def test_gradient_matches_finite_difference(cyl):
    G = get_group("U1")
    c = random_connection(cyl, G, amplitude=0.3, seed=1)
    grad = energy_gradient(c)
    rng = np.random.default_rng(9)
    eps = 1e-6
    for e in rng.choice(cyl.n_edges, 5, replace=False):
        delta = np.zeros((cyl.n_edges, 1))
        delta[e, 0] = eps
        cp = c.copy()
        cp.links = G.multiply(G.exp(delta), c.links)
        cm = c.copy()
        cm.links = G.multiply(G.exp(-delta), c.links)
        fd = (yang_mills_energy(cp) - yang_mills_energy(cm)) / (2 * eps)
        assert np.isclose(grad[e, 0], fd, rtol=1e-5, atol=1e-8)


# ------------------------------------------------------------------ flow --- #

@pytest.mark.parametrize("group", ["U1", "SU2"])
@pytest.mark.parametrize("mode", ["Relative", "Absolute"])
def test_flow_descends_with_enforced_bcs(cyl, group, mode):
    run = run_flow(cyl, get_group(group), mode, amplitude=0.4, seed=2,
                   t_final=0.02)
    assert run.descent_violations == 0
    assert run.max_bc_residual <= 1e-12
    assert run.trace.energies[-1] < run.initial_energy


def test_bc_residual_nonzero_before_enforcement():
    # the relative condition constrains boundary-tangential plaquettes,
    # which exist only in dimension three
    m = build_mesh(FlatSlab3D(1.0, 1.0, 1.0, 6, 6, 6))
    c = random_connection(m, get_group("SU2"), amplitude=0.4, seed=4)
    assert bc_residual(c, "Relative") > 1e-6
    c2 = apply_boundary_conditions(c, "Relative")
    assert bc_residual(c2, "Relative") <= 1e-14


def test_flow_deterministic(cyl):
    r1 = run_flow(cyl, "U1", "Absolute", amplitude=0.3, seed=7,
                  t_final=0.01)
    r2 = run_flow(cyl, "U1", "Absolute", amplitude=0.3, seed=7,
                  t_final=0.01)
    assert np.array_equal(r1.trace.energies, r2.trace.energies)


# ------------------------------------------------------ derived functionals #

def test_zeta_bound_constant_dimension_scaling():
    assert np.isclose(zeta_bound_constant(1.0, 2), 2.0)
    assert np.isclose(zeta_bound_constant(1.0, 3), 2.0 ** 1.5)


def test_zeta_bounded_by_kernel_sup(cyl):
    from flowlab import heat
    r = 0.1
    ts = np.linspace(r / 10, r, 10)
    run = run_flow(cyl, "U1", "Absolute", amplitude=0.4, seed=0,
                   t_final=r, snapshot_times=[round(r - t, 9) for t in ts])
    y = cyl.n_vertices // 2
    sol = heat.solve_neumann_heat(cyl, heat.delta_field(cyl, y),
                                  [0.02, 0.05, 0.1, 0.5, 1.0],
                                  scheme="DenseExponential")
    C1 = zeta_bound_constant(heat.kernel_decay_bound([sol]), cyl.dim)
    for t in ts:
        z = zeta_functional(run, r, y, t)
        assert z >= 0
        assert z <= C1 * t ** (-1.0) * run.ym0 * (1 + 1e-9)


def test_monotonicity_report_finite(cyl):
    r = 0.1
    grid = np.linspace(r / 10, 0.9 * r, 6)
    run = run_flow(cyl, "SU2", "Absolute", amplitude=0.4, seed=1,
                   t_final=r, snapshot_times=[round(r - t, 9)
                                              for t in grid])
    rep = monotonicity_check(run, r, cyl.n_vertices // 2, grid)
    assert np.isfinite(rep.u_bar) and np.isfinite(rep.C3)
    assert rep.u_bar >= 0 and rep.C3 >= 0


def test_bochner_c2_nonnegative(cyl):
    t, d = 0.01, 2e-3
    run = run_flow(cyl, "SU2", "Absolute", amplitude=0.4, seed=0,
                   t_final=t + 2 * d, snapshot_times=[t - d, t, t + d])
    _, c2 = bochner_residual(run, t, d)
    assert c2 >= 0.0


def test_amplitude_guard():
    m = build_mesh(FlatCylinder(1.0, 1.0, 6, 6))
    with pytest.raises(ValueError):
        random_connection(m, "U1", amplitude=1.5, seed=0)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_energy_nonnegative_any_seed(seed):
    m = build_mesh(FlatCylinder(1.0, 1.0, 6, 6))
    c = random_connection(m, "SU2", amplitude=0.5, seed=seed)
    assert yang_mills_energy(c) >= 0
