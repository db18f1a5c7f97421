import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stogeo import geometry as geo
from stogeo.errors import ChartError, NumericalError
from stogeo.frame_bundle import (DriftField, frame_curvature, ito_parallel_transport, node_geometry,
                                 orthonormality_error, simulate_frame_path, simulate_frame_paths,
                                 variation_process)

SPHERE = geo.sphere()
SWIRL = DriftField.closed_form(SPHERE, lambda t, m: np.stack([0.3 * np.sin(m[..., 1]), 0.8 + 0 * m[..., 0]], -1))


def embed_node(man, fp, i):
    out = np.empty((fp.n_paths, 3))
    for c in np.unique(fp.charts[:, i]):
        s = fp.charts[:, i] == c
        out[s] = man.embed(fp.m[s, i], int(c))
    return out


# ---------------------------------------------------------------------------
# drift fields


def test_grid_drift_reproduces_nodes():
    man = geo.flat(2)
    times = np.linspace(0, 1, 4)
    axes = [np.linspace(0, 1, 5), np.linspace(-1, 1, 7)]
    vals = np.random.default_rng(1).normal(size=(4, 5, 7, 2))
    u = DriftField.from_grid(man, times, axes, vals)
    X = np.stack(np.meshgrid(*axes, indexing="ij"), -1)
    for k, t in enumerate(times):
        assert np.array_equal(u(t, X), vals[k])
    # piecewise constant in time, linear in space
    mid = 0.5 * (X[1:, :, :] + X[:-1, :, :])
    assert np.allclose(u(0.5, mid), 0.5 * (vals[1, 1:] + vals[1, :-1]))


def test_periodic_grid_wraps():
    x = 2 * np.pi * np.arange(8) / 8
    u = DriftField.from_grid(geo.flat(1), [0.0], [x], np.sin(x)[None, :, None], periodic=[True])
    assert np.allclose(u(0.0, x[:, None] + 2 * np.pi), np.sin(x)[:, None])


def test_drift_maps_between_charts():
    m = np.array([[0.2, 0.4]])
    y, J = SPHERE.to_chart(m, 0, 1)
    assert np.allclose(SWIRL(0.0, y, 1), J[0] @ SWIRL(0.0, m, 0)[0])


# ---------------------------------------------------------------------------
# frame paths


def test_flat_development_is_affine():
    man = geo.flat(2)
    e0 = geo.gram_schmidt(np.array([[1.0, 1.0], [-1.0, 1.0]]), np.eye(2))
    fp = simulate_frame_path(man, DriftField.zero(man), [0.5, -0.2], e0, 1.0, 0.01, seed=4, path_index=2)
    x = fp.noise(0).x
    assert np.allclose(fp.m[0], [0.5, -0.2] + x @ e0.T, atol=1e-13)
    assert np.allclose(fp.e[0], e0, atol=1e-15)
    assert np.array_equal(fp.m[0, 0], [0.5, -0.2])


def test_zero_noise_follows_ode_flow():
    """Zero increments: the path is the flow of u, second order in dt."""
    def err(dt):
        fp = simulate_frame_paths(SPHERE, SWIRL, [1.2, 0.3], 1.0, dt, noise_scale=0.0)
        # reference: the same flow by RK4 at a fine step
        m = np.array([1.2, 0.3])
        h = 1e-4
        f = lambda x: SWIRL(0.0, x)  # noqa: E731
        for _ in range(10000):
            k1 = f(m); k2 = f(m + h / 2 * k1); k3 = f(m + h / 2 * k2); k4 = f(m + h * k3)  # noqa: E702
            m = m + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        return np.max(np.abs(fp.m[0, -1] - m))
    e1, e2 = err(0.02), err(0.01)
    assert e1 < 1e-3 and 3 < e1 / e2 < 5


def test_zero_noise_frame_is_parallel_transported():
    fp = simulate_frame_paths(SPHERE, SWIRL, [1.2, 0.3], 1.0, 1e-3, noise_scale=0.0)
    curve = geo.CurvePath(fp.times, fp.m[0], SWIRL(0.0, fp.m[0]))
    for a in range(2):
        z = geo.parallel_transport_ode(SPHERE, curve, fp.e[0, 0, :, a])
        assert np.max(np.abs(z - fp.e[0, :, :, a])) < 1e-5


@pytest.mark.parametrize("man, m0", [(geo.flat(2), [0.0, 0.0]), (geo.sphere(), [1.0, 0.5]),
                                     (geo.sphere(2.0), [0.3, 0.0])])
def test_frame_orthonormality_everywhere(man, m0):
    fp = simulate_frame_paths(man, DriftField.zero(man), m0, 0.5, 1e-3, n_paths=200, seed=1)
    g = np.stack([[man.metric(fp.m[p, i], fp.charts[p, i]) for i in range(0, fp.n_steps + 1, 25)]
                  for p in range(fp.n_paths)])
    e = fp.e[:, ::25]
    gram = np.einsum("pnia,pnij,pnjb->pnab", e, g, e)
    assert np.max(np.abs(gram - np.eye(2))) <= 1e-6
    assert np.array_equal(fp.m[:, 0], np.broadcast_to(m0, fp.m[:, 0].shape))


def test_paths_cross_poles_continuously():
    fp = simulate_frame_paths(SPHERE, DriftField.zero(SPHERE), [0.3, 0.0], 0.5, 1e-3, n_paths=200, seed=2)
    assert np.any(fp.charts != 0)
    X = np.stack([embed_node(SPHERE, fp, i) for i in range(fp.n_steps + 1)], axis=1)
    step = np.linalg.norm(np.diff(X, axis=1), axis=-1)
    # no step moves further than an 8σ Brownian increment
    assert step.max() < 8 * np.sqrt(2e-3)


def test_substep_replay_is_exact():
    base = simulate_frame_paths(SPHERE, SWIRL, [1.0, 0.5], 0.2, 5e-3, n_paths=50, seed=5)
    again = simulate_frame_paths(SPHERE, SWIRL, [1.0, 0.5], 0.2, 5e-3, dx=base.dx, follow=base)
    assert np.array_equal(base.m, again.m) and np.array_equal(base.e, again.e)


def test_simulation_errors():
    with pytest.raises(ValueError):
        simulate_frame_paths(SPHERE, SWIRL, [1.0, 0.5], 1.0, 0.0)
    with pytest.raises(ValueError):
        simulate_frame_paths(SPHERE, SWIRL, [1.0, 0.5], 1.0, 0.1, e0=np.eye(2) * 2)
    with pytest.raises(ChartError):
        simulate_frame_paths(SPHERE, SWIRL, [0.0, 0.5], 1.0, 0.1)
    with pytest.raises(NumericalError):
        simulate_frame_paths(SPHERE, DriftField.zero(SPHERE), [1.0, 0.5], 1.0, 0.5, n_paths=200, seed=0)


def test_exit_marking_on_single_chart_manifold():
    man = geo.from_metric(lambda m: np.broadcast_to(np.eye(1), m.shape[:-1] + (1, 1)).copy(), 1,
                          contains=lambda m: np.abs(m[..., 0]) < 0.5)
    fp = simulate_frame_paths(man, DriftField.zero(man), [0.0], 1.0, 0.01, n_paths=100, on_exit="mark")
    assert fp.failed.any() and not fp.failed.all()
    assert np.all(np.isnan(fp.m[fp.failed, -1]))
    with pytest.raises(ChartError):
        simulate_frame_paths(man, DriftField.zero(man), [0.0], 1.0, 0.01, n_paths=100)


@pytest.mark.parametrize("R", [1.0, 2.0])
def test_generator_weak_consistency_sphere(R):
    """(E f(m_t) - f(m_0)) / t ≈ L_u f(m_0) = ½Δf + u·∇f for small t."""
    man = geo.sphere(R)
    drift = DriftField.closed_form(man, lambda t, m: np.stack([0.4 + 0 * m[..., 0], 0.3 + 0 * m[..., 0]], -1))
    m0 = np.array([1.1, 0.2])
    f = lambda m: np.cos(m[..., 0]) + np.sin(m[..., 0]) * np.cos(m[..., 1])  # noqa: E731
    t = 0.02
    fp = simulate_frame_paths(man, drift, m0, t, 1e-3, n_paths=10000, seed=9)
    assert np.all(fp.charts == 0)
    vals = (f(fp.m[:, -1]) - f(m0)) / t
    grad = np.array([-np.sin(1.1) + np.cos(1.1) * np.cos(0.2), -np.sin(1.1) * np.sin(0.2)])
    Lf = 0.5 * geo.laplace_beltrami(man, f, m0) + grad @ drift(0.0, m0)
    se = vals.std(ddof=1) / np.sqrt(len(vals))
    # bias O(t) from the second-order generator term
    assert abs(vals.mean() - Lf) < 3 * se + 0.05


def test_generator_weak_consistency_flat():
    man = geo.flat(2)
    drift = DriftField.constant(man, [0.5, -1.0])
    f = lambda m: np.sin(m[..., 0]) * m[..., 1]  # noqa: E731
    m0 = np.array([0.3, 0.7])
    t = 0.01
    fp = simulate_frame_paths(man, drift, m0, t, 1e-3, n_paths=20000, seed=3)
    vals = (f(fp.m[:, -1]) - f(m0)) / t
    Lf = 0.5 * (-np.sin(0.3) * 0.7) + 0.5 * np.cos(0.3) * 0.7 - np.sin(0.3)
    assert abs(vals.mean() - Lf) < 3 * vals.std(ddof=1) / np.sqrt(len(vals)) + 0.02


# ---------------------------------------------------------------------------
# Itô parallel transport


@pytest.fixture(scope="module")
def sphere_paths():
    return simulate_frame_paths(SPHERE, SWIRL, [1.0, 0.5], 0.3, 1e-3, n_paths=20, seed=8)


def test_transport_identity_and_composition(sphere_paths):
    fp = sphere_paths
    z = np.array([0.3, -0.2])
    assert np.allclose(ito_parallel_transport(fp, 0.1, 0.1, z), z)
    a = ito_parallel_transport(fp, 0.1, 0.2, z)
    ab = np.stack([ito_parallel_transport(fp.select([p]), 0.2, 0.3, a[p])[0] for p in range(fp.n_paths)])
    direct = ito_parallel_transport(fp, 0.1, 0.3, z)
    same = np.all(fp.charts[:, [100, 200, 300]] == fp.charts[:, [100]], axis=1)
    assert np.allclose(ab[same], direct[same], atol=1e-12)


def test_transport_preserves_norm(sphere_paths):
    fp = sphere_paths
    z = np.array([0.3, -0.2])
    w = ito_parallel_transport(fp, 0.0, 0.3, z)
    n0 = geo.norm2(SPHERE, fp.m[0, 0], z)
    for p in range(fp.n_paths):
        assert geo.norm2(SPHERE, fp.m[p, -1], w[p], fp.charts[p, -1]) == pytest.approx(n0, rel=1e-6)


def test_flat_transport_is_identity():
    man = geo.flat(2)
    fp = simulate_frame_paths(man, DriftField.zero(man), [0, 0], 0.1, 0.01, n_paths=3)
    assert np.allclose(ito_parallel_transport(fp, 0.02, 0.09, [1.0, 2.0]), [1.0, 2.0])
    with pytest.raises(ValueError):
        ito_parallel_transport(fp, 0.015, 0.09, [1.0, 2.0])


# ---------------------------------------------------------------------------
# variation process


def test_zero_perturbation_gives_zero_variation(sphere_paths):
    var = variation_process(SPHERE, sphere_paths, SWIRL, lambda t: np.zeros(2))
    assert np.all(var.zeta == 0) and np.all(var.rho == 0)


def test_flat_variation_is_perturbation():
    man = geo.flat(2)
    fp = simulate_frame_paths(man, DriftField.zero(man), [0, 0], 0.5, 0.01, n_paths=5, seed=1)
    h = lambda t: np.array([np.sin(t), t**2])  # noqa: E731
    var = variation_process(man, fp, DriftField.zero(man), h)
    assert np.all(var.rho == 0)
    assert np.allclose(var.zeta, var.h, atol=1e-14)


def test_rho_antisymmetric_and_initial_values(sphere_paths):
    var = variation_process(SPHERE, sphere_paths, SWIRL, lambda t: np.array([t, np.sin(3 * t)]))
    assert np.all(var.zeta[:, 0] == 0) and np.all(var.rho[:, 0] == 0)
    assert np.max(np.abs(var.rho + np.swapaxes(var.rho, -1, -2))) < 1e-12


def test_variation_rejects_bad_perturbations(sphere_paths):
    with pytest.raises(ValueError):
        variation_process(SPHERE, sphere_paths, SWIRL, lambda t: np.array([1.0, 0.0]))
    with pytest.raises(ValueError):
        variation_process(SPHERE, sphere_paths, SWIRL, np.zeros((7, 2)))


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_variation_linear_in_h(a, b):
    fp = simulate_frame_paths(SPHERE, SWIRL, [1.0, 0.5], 0.1, 1e-3, n_paths=4, seed=8)
    geom = node_geometry(SPHERE, fp, SWIRL)
    h1 = lambda t: np.array([t, 0.0])  # noqa: E731
    h2 = lambda t: np.array([np.sin(5 * t), t * t])  # noqa: E731
    v1 = variation_process(SPHERE, fp, SWIRL, h1, geom)
    v2 = variation_process(SPHERE, fp, SWIRL, h2, geom)
    v = variation_process(SPHERE, fp, SWIRL, lambda t: a * h1(t) + b * h2(t), geom)
    scale = 1 + abs(a) + abs(b)
    assert np.allclose(v.zeta, a * v1.zeta + b * v2.zeta, atol=1e-12 * scale)
    assert np.allclose(v.rho, a * v1.rho + b * v2.rho, atol=1e-12 * scale)


def test_frame_curvature_on_unit_sphere():
    """Constant curvature 1: R(a, b)c = <b, c> a - <a, c> b in an orthonormal frame."""
    cd = geo.curvature_and_ricci(SPHERE, [1.0, 0.3])
    e = geo.orthonormal_frame(SPHERE, np.array([1.0, 0.3]))
    riem = np.einsum("ai,ijkl,jb,kc,ld->abcd", np.linalg.inv(e), cd.riemann, e, e, e)
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    Om = frame_curvature(riem, a, b)
    assert np.allclose(Om @ b, a) and np.allclose(Om @ a, -b)
    assert np.allclose(Om, -Om.T)


def itomap_defect(drift, dt, n_paths=400, eps=1e-4, T=0.5, seed=3):
    """Embedded (FD variation − e h) at T for h(t) = (t, t²/2) on common noise."""
    base = simulate_frame_paths(SPHERE, drift, [1.0, 0.5], T, dt, seed=seed, n_paths=n_paths)
    var = variation_process(SPHERE, base, drift, lambda t: np.array([t, 0.5 * t * t]))
    dzeta = np.diff(var.zeta, axis=1)
    pert = simulate_frame_paths(SPHERE, drift, [1.0, 0.5], T, dt, dx=base.dx + eps * dzeta,
                                path_indices=base.path_indices, seed=seed, follow=base)
    i = base.n_steps
    fd = (embed_node(SPHERE, pert, i) - embed_node(SPHERE, base, i)) / eps
    pred = np.empty_like(fd)
    for c in np.unique(base.charts[:, i]):
        s = base.charts[:, i] == c
        pred[s] = SPHERE.embed_vector(base.m[s, i], np.einsum("pia,pa->pi", base.e[s, i], var.h[s, i]), int(c))
    return fd - pred, base


def test_pathwise_zeta_error_shrinks_with_dt():
    rms = []
    for dt in (2e-3, 5e-4):
        D, _ = itomap_defect(SWIRL, dt, n_paths=100)
        rms.append(np.sqrt(np.mean(np.sum(D**2, axis=1))))
    assert rms[1] < 0.7 * rms[0]
    assert rms[1] < 0.01
