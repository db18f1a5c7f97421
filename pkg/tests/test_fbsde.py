import numpy as np
import pytest

from stogeo import fbsde as fb
from stogeo import geometry as geo
from stogeo.burgers import ColeHopfProfile, solve_burgers_backward
from stogeo.errors import NumericalError
from stogeo.frame_bundle import DriftField

FLAT = geo.flat(1)
SPHERE = geo.sphere()
PROFILE = ColeHopfProfile(T=0.5)


def burgers_problem(**kw):
    args = dict(T=0.5, dt=2e-3, n_paths=4000, basis=fb.RegressionBasis("fourier", 8),
                initial=fb.von_mises_initial(), tol=1e-8)
    args.update(kw)
    return fb.FbsdeProblem(FLAT, PROFILE.terminal, **args)


@pytest.fixture(scope="module")
def burgers():
    return fb.picard_solve(burgers_problem(), seed=0)


@pytest.fixture(scope="module")
def reference():
    return solve_burgers_backward(PROFILE.terminal, 0.5, 5000, nx=256)


def ricci_of_w(m):
    w = np.stack([np.cos(m[..., 0]), np.zeros(m.shape[:-1])], -1)
    return np.einsum("...jk,...k->...j", geo.ricci_operator(SPHERE, m, 0), w)


@pytest.fixture(scope="module")
def sphere_solution():
    prob = fb.FbsdeProblem(SPHERE, lambda m: np.zeros(m.shape), T=0.25, dt=2e-3, n_paths=5000,
                           basis=fb.RegressionBasis("spherical", 3),
                           initial=fb.box_initial([np.pi / 2 - 0.3, 0], [np.pi / 2 + 0.3, 2 * np.pi]),
                           driver=ricci_of_w, coupled=False)
    return fb.picard_solve(prob, seed=3)


# ---------------------------------------------------------------------------
# bases and initial laws


def test_basis_sizes_and_independence():
    assert fb.RegressionBasis("fourier", 5).size == 11
    assert fb.RegressionBasis("chebyshev", 5).size == 6
    sph = fb.RegressionBasis("spherical", 4)
    assert sph.size == 25
    rng = np.random.default_rng(0)
    m = np.stack([np.arccos(rng.uniform(-1, 1, 400)), rng.uniform(0, 2 * np.pi, 400)], -1)
    assert np.linalg.matrix_rank(sph.evaluate(SPHERE, m)) == 25
    x = rng.uniform(0, 2 * np.pi, (400, 1))
    assert np.linalg.matrix_rank(fb.RegressionBasis("fourier", 5).evaluate(FLAT, x)) == 11
    with pytest.raises(ValueError):
        fb.RegressionBasis("wavelet")
    with pytest.raises(ValueError):
        fb.RegressionBasis("fourier", -1)


def test_chebyshev_basis_values():
    b = fb.RegressionBasis("chebyshev", 3, domain=(0.0, 2.0))
    v = b.evaluate(FLAT, np.array([[1.5]]))[0]
    s = 0.5
    assert np.allclose(v, [1, s, 2 * s * s - 1, 4 * s**3 - 3 * s])


def test_initial_laws():
    rng = np.random.default_rng(1)
    assert np.all(fb.point_initial([0.4])(rng, 5) == 0.4)
    box = fb.box_initial([0.0, 1.0], [1.0, 3.0])(rng, 1000)
    assert box.shape == (1000, 2) and box[:, 0].min() >= 0 and box[:, 1].max() <= 3
    vm = fb.von_mises_initial(kappa=2.0, mu=1.0)(rng, 20000)[:, 0]
    # E cos(x - μ) = I1(κ)/I0(κ)
    from scipy.special import iv
    assert abs(np.mean(np.cos(vm - 1.0)) - iv(1, 2.0) / iv(0, 2.0)) < 5 * np.sqrt(0.5 / 20000)


def test_problem_validation():
    with pytest.raises(ValueError):
        burgers_problem(dt=0.0)
    with pytest.raises(ValueError):
        burgers_problem(n_paths=20)


# ---------------------------------------------------------------------------
# trivial solutions


def test_constant_terminal_on_flat():
    prob = fb.FbsdeProblem(FLAT, lambda m: np.full(m.shape, 0.8), T=0.2, dt=0.01, n_paths=500,
                           basis=fb.RegressionBasis("fourier", 3))
    sol = fb.picard_solve(prob, seed=1)
    assert sol.converged and sol.iterations == 1
    assert np.allclose(sol.y, 0.8, atol=1e-12)
    assert np.allclose(sol.Z, 0, atol=1e-12)
    assert fb.martingale_residual(sol).sup < 1e-12


def test_consistency_check_against_own_drift_and_shift(sphere_solution):
    own = sphere_solution.drift_field()
    assert fb.consistency_check(sphere_solution, own).sup < 1e-12
    shifted = DriftField.closed_form(SPHERE, lambda t, m: own(t, m) + np.array([0.05, 0.0]))
    # |shift| in the metric is 0.05 along ∂θ
    assert np.allclose(fb.consistency_check(sphere_solution, shifted).values, 0.05, atol=1e-12)


def test_consistency_support_mismatch(sphere_solution):
    times = np.linspace(0, 0.25, 3)
    axes = [np.linspace(1.5, 1.6, 5), np.linspace(0, 2 * np.pi, 8, endpoint=False)]
    narrow = DriftField.from_grid(SPHERE, times, axes, np.zeros((3, 5, 8, 2)), periodic=[False, True])
    with pytest.raises(ValueError, match="support"):
        fb.consistency_check(sphere_solution, narrow)


# ---------------------------------------------------------------------------
# Burgers


def test_burgers_converges_and_matches_reference(burgers, reference):
    assert burgers.converged
    assert np.all(np.diff(np.log(burgers.history[:6])) < 0)
    assert fb.consistency_check(burgers, reference).sup < 5e-3
    x = np.linspace(0, 2 * np.pi, 50)[:, None]
    assert np.max(np.abs(burgers.drift_at(100, x)[:, 0] - PROFILE.u(0.2, x[:, 0]))) < 1e-2


def test_burgers_martingale_defect(burgers):
    assert burgers.diagnostics()["converged"]
    assert fb.martingale_residual(burgers).max_z < 3
    fresh = fb.martingale_residual(burgers, seed=17)
    assert fresh.max_z < 5 and fresh.sup < 5e-3


def test_z_is_gradient_of_drift(burgers):
    """For y = u(t, X) the martingale integrand is ∂x u."""
    x = burgers.m[:, 100, 0]
    h = 1e-5
    grad = (PROFILE.u(0.2, x + h) - PROFILE.u(0.2, x - h)) / (2 * h)
    assert np.sqrt(np.mean((burgers.Z[:, 100, 0, 0] - grad) ** 2)) < 0.03


def test_seed_invariance(burgers):
    other = fb.picard_solve(burgers_problem(), seed=1)
    x = np.linspace(0, 2 * np.pi, 64)[:, None]
    assert np.max(np.abs(other.drift_at(0, x) - burgers.drift_at(0, x))) < 1e-2


def test_unconverged_iterate_is_detected(reference):
    sol = fb.picard_solve(burgers_problem(), seed=0, max_iter=1)
    assert not sol.converged
    assert fb.martingale_residual(sol).max_z > 5


def test_ill_conditioned_regression_raises():
    with pytest.raises(NumericalError, match="ill-conditioned"):
        fb.picard_solve(burgers_problem(n_paths=200, cond_bound=1.0), seed=0)


def test_excess_discard_raises():
    prob = fb.FbsdeProblem(SPHERE, lambda m: np.zeros(m.shape), T=0.25, dt=5e-3, n_paths=200,
                           basis=fb.RegressionBasis("spherical", 2), band=1.4,
                           initial=fb.box_initial([np.pi / 2 - 0.1, 0], [np.pi / 2 + 0.1, 2 * np.pi]))
    with pytest.raises(NumericalError, match="band"):
        fb.picard_solve(prob, seed=0)


# ---------------------------------------------------------------------------
# curved space


def test_sphere_ricci_driver_closed_form(sphere_solution):
    """cos θ is a Laplace eigenfunction (eigenvalue -2) so y = -½ cos θ (1 - e^{-(T-t)}) ∂θ."""
    sol = sphere_solution
    assert sol.converged and sol.discard_fraction < 0.01
    pts = np.array([[np.pi / 2 - 0.25, 0.3], [np.pi / 2, 1.0], [np.pi / 2 + 0.2, 4.0]])
    for i in (0, 60):
        t = sol.times[i]
        exact = -0.5 * np.cos(pts[:, 0]) * (1 - np.exp(-(0.25 - t)))
        got = sol.drift_at(i, pts)
        assert np.allclose(got[:, 0], exact, atol=5e-4)
        assert np.allclose(got[:, 1], 0, atol=5e-4)
