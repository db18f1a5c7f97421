import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stogeo import geometry as geo
from stogeo import stochastic_variational as sv
from stogeo.burgers import ColeHopfProfile, solve_burgers_backward
from stogeo.errors import NumericalError

PROFILE = ColeHopfProfile({1: 0.3}, {2: 0.15}, T=1.0)


def standard_burgers_cole_hopf(tau, x, a, b):
    """Independent oracle: w_τ + w w_x = ν w_xx with ν = ½ via w = -2ν ψ_x / ψ, ψ solving ψ_τ = ν ψ_xx.

    The initial datum w(0) = -u_T gives ψ(0) = φ(T) up to a constant.
    """
    nu = 0.5
    psi = 1.0 + sum(c * np.exp(-nu * k * k * tau) * np.cos(k * x) for k, c in a.items()) \
        + sum(c * np.exp(-nu * k * k * tau) * np.sin(k * x) for k, c in b.items())
    dpsi = sum(-k * c * np.exp(-nu * k * k * tau) * np.sin(k * x) for k, c in a.items()) \
        + sum(k * c * np.exp(-nu * k * k * tau) * np.cos(k * x) for k, c in b.items())
    return -2 * nu * dpsi / psi


@pytest.fixture(scope="module")
def reference_solution():
    return solve_burgers_backward(PROFILE.terminal, 1.0, 10000, nx=256)


def test_profile_solves_backward_heat_and_burgers():
    t, x, h = 0.4, np.linspace(0, 2 * np.pi, 9), 1e-4
    phi_t = (PROFILE.phi(t + h, x) - PROFILE.phi(t - h, x)) / (2 * h)
    phi_xx = (PROFILE.phi(t, x + h) - 2 * PROFILE.phi(t, x) + PROFILE.phi(t, x - h)) / h**2
    assert np.allclose(phi_t + 0.5 * phi_xx, 0, atol=1e-6)
    w = -PROFILE.u(t, x)
    assert np.allclose(w, standard_burgers_cole_hopf(1.0 - t, x, {1: 0.3}, {2: 0.15}), atol=1e-14)


def test_constant_final_data_stays_constant():
    u = solve_burgers_backward(np.full(32, 0.7), 1.0, 100)
    assert np.allclose(u.grid["values"], 0.7, atol=1e-14)


def test_spectral_solution_matches_cole_hopf(reference_solution):
    gd = reference_solution.grid
    tau = 1.0 - gd["times"][:, None]
    w = standard_burgers_cole_hopf(tau, gd["axes"][0][None, :], {1: 0.3}, {2: 0.15})
    assert np.max(np.abs(-gd["values"][..., 0] - w)) < 1e-5


def test_terminal_slice_is_the_data(reference_solution):
    x = reference_solution.grid["axes"][0]
    assert np.array_equal(reference_solution.grid["values"][-1, :, 0], PROFILE.terminal(x))


def test_residual_of_solution_small(reference_solution):
    assert sv.geodesic_residual(geo.flat(1), reference_solution).sup_norm <= 1e-3


def test_residual_second_order_under_refinement():
    sups = []
    for nx in (32, 64, 128):
        u = solve_burgers_backward(PROFILE.terminal, 1.0, 4 * nx, nx=nx)
        sups.append(sv.geodesic_residual(geo.flat(1), u, space_order=2).sup_norm)
    orders = np.log2(np.array(sups[:-1]) / np.array(sups[1:]))
    assert np.all(orders > 1.7)


def test_fd_method_second_order():
    errs = []
    for nx in (64, 128, 256):
        gd = solve_burgers_backward(PROFILE.terminal, 1.0, 2 * nx, nx=nx, method="fd").grid
        errs.append(np.max(np.abs(gd["values"][..., 0] - PROFILE.u(gd["times"][:, None], gd["axes"][0][None]))))
    assert np.allclose(np.log2(np.array(errs[:-1]) / np.array(errs[1:])), 2.0, atol=0.2)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.4, 0.4), st.floats(-0.4, 0.4), st.floats(-1, 1), st.integers(1, 3))
def test_spatial_mean_conserved(a, b, c, k):
    x = 2 * np.pi * np.arange(64) / 64
    uT = c + a * np.cos(k * x) + b * np.sin(x)
    gd = solve_burgers_backward(uT, 0.5, 500).grid
    means = gd["values"][..., 0].mean(axis=1)
    assert np.max(np.abs(means - means[-1])) <= 1e-8 * 0.5


def test_blow_up_detected():
    x = 2 * np.pi * np.arange(32) / 32
    with pytest.raises(NumericalError):
        solve_burgers_backward(40 * np.sin(x), 1.0, 10, method="fd")


def test_input_validation():
    with pytest.raises(ValueError):
        solve_burgers_backward(np.sin, 1.0, 10)
    with pytest.raises(ValueError):
        solve_burgers_backward(np.zeros(8), 1.0, 0)
    with pytest.raises(ValueError):
        solve_burgers_backward(np.zeros(8), 1.0, 10, nx=16)
    with pytest.raises(ValueError):
        solve_burgers_backward(np.zeros(8), 1.0, 10, method="magic")
    with pytest.raises(ValueError):
        ColeHopfProfile({1: 0.7}, {2: 0.4})
