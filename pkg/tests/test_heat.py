import numpy as np
import pytest

from flowlab.geometry import FlatCylinder, build_mesh, volume_integrate
from flowlab import heat
from flowlab.oracles import dense_heat_oracle


@pytest.fixture(scope="module")
def cyl():
    return build_mesh(FlatCylinder(1.0, 1.0, 16, 16))


def test_schemes_agree_smooth_data(cyl):
    rng = np.random.default_rng(0)
    u0 = rng.random(cyl.n_vertices)
    t = 0.05
    ref = dense_heat_oracle(cyl, u0, t)
    for scheme in ("CrankNicolson", "BackwardEuler"):
        sol = heat.solve_neumann_heat(cyl, u0, [t], scheme=scheme,
                                      dt=2e-4)
        assert np.max(np.abs(sol.at(t) - ref)) < 5e-4


def test_mass_conservation(cyl):
    rng = np.random.default_rng(1)
    u0 = rng.random(cyl.n_vertices)
    m0 = volume_integrate(cyl, u0)
    sol = heat.solve_neumann_heat(cyl, u0, [0.01, 0.1, 1.0], dt=1e-3)
    for t in sol.times:
        assert abs(volume_integrate(cyl, sol.at(t)) - m0) < 1e-10


def test_positivity_preserved(cyl):
    u0 = heat.delta_field(cyl, 40)
    sol = heat.solve_neumann_heat(cyl, u0, [0.005, 0.05], dt=1e-4)
    for t in sol.times:
        assert sol.at(t).min() > -1e-9


def test_kernel_symmetry(cyl):
    # g(t, x, y) = g(t, y, x) from the self-adjointness of the generator
    x, y = 37, 151
    t = 0.04
    gx = heat.heat_kernel_tilde(cyl, x, t, scheme="DenseExponential")
    gy = heat.heat_kernel_tilde(cyl, y, t, scheme="DenseExponential")
    assert np.isclose(gx[y], gy[x], rtol=1e-10)


def test_tilde_kernel_time_convention(cyl):
    # the walk-calibrated kernel at t equals the semigroup kernel at t/2
    y, t = 70, 0.08
    a = heat.heat_kernel(cyl, y, t, scheme="DenseExponential")
    b = heat.heat_kernel_tilde(cyl, y, t / 2, scheme="DenseExponential")
    assert np.allclose(a, b, atol=1e-12)


def test_log_hessian_gaussian(cyl):
    # log of exp(-|x-c|^2 / s): Hessian = -2/s * Id away from walls/wrap
    c, s = np.array([0.5, 0.5]), 0.3
    f = np.exp(-np.sum((cyl.coords - c) ** 2, axis=1) / s)
    H = heat.log_hessian(cyl, f)
    inner = (np.abs(cyl.coords[:, 0] - 0.5) < 0.2) \
        & (np.abs(cyl.coords[:, 1] - 0.5) < 0.2)
    target = -2.0 / s
    assert np.allclose(H[inner, 0, 0], target, atol=1e-2)
    assert np.allclose(H[inner, 1, 1], target, atol=1e-2)
    assert np.allclose(H[inner, 0, 1], 0.0, atol=1e-2)


def test_sharp_bound_holds_on_kernel(cyl):
    times = [0.02, 0.05, 0.1, 0.5]
    y = cyl.n_vertices // 2
    tol = heat.calibrate_lyh_tolerance(cyl, times, y=y)
    sol = heat.solve_neumann_heat(cyl, heat.delta_field(cyl, y), times,
                                  scheme="DenseExponential")
    rep = heat.lyh_check_sharp(sol, cyl, tol)
    assert rep.passed
    assert np.min(rep.margins) >= -tol


def test_sharp_bound_fails_on_non_solution(cyl):
    # a sawtooth is no heat kernel: the bound must be violated grossly
    times = [0.02, 0.05]
    vals = np.abs((cyl.coords[:, 0] * 7) % 1.0 - 0.5) + 0.05
    sol = heat.TimeField(cyl, np.array(times), np.stack([vals, vals]))
    rep = heat.lyh_check_sharp(sol, cyl, 1e-6)
    assert not rep.passed


def test_fit_constants_reasonable(cyl):
    times = [0.02, 0.05, 0.1, 0.5]
    y = cyl.n_vertices // 2
    sol = heat.solve_neumann_heat(cyl, heat.delta_field(cyl, y), times,
                                  scheme="DenseExponential")
    C = heat.kernel_decay_bound([sol])
    tol = heat.calibrate_lyh_tolerance(cyl, times, y=y)
    rep = heat.lyh_fit_constants(sol, cyl, C, tol)
    assert rep.fitted_A <= 0.05
    assert rep.fitted_B == C


def test_doubling_small_gap(cyl):
    rng = np.random.default_rng(3)
    u0 = rng.random(cyl.n_vertices) + 0.2
    gap = heat.doubling_equivalence_check(cyl, u0, t_final=0.2, dt=1e-3)
    assert gap <= 1e-8


def test_decay_slope_2d(cyl):
    times = np.geomspace(0.008, 0.05, 8)
    y = cyl.n_vertices // 2
    sol = heat.solve_neumann_heat(cyl, heat.delta_field(cyl, y),
                                  list(times), scheme="DenseExponential")
    sups = [sol.at(t).max() for t in times]
    slope = np.polyfit(np.log(times), np.log(sups), 1)[0]
    assert abs(slope + 1.0) < 0.1


def test_unknown_scheme_rejected(cyl):
    with pytest.raises(ValueError):
        heat.solve_neumann_heat(cyl, np.ones(cyl.n_vertices), [0.1],
                                scheme="Leapfrog")
