import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stogeo.noise import NoisePath, brownian_increments, ensemble_increments, path_rng


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**63 - 1), st.integers(0, 10**6))
def test_increments_reproducible(seed, index):
    a = brownian_increments(seed, index, 20, 2, 1e-3)
    b = brownian_increments(seed, index, 20, 2, 1e-3)
    assert np.array_equal(a, b)


def test_streams_independent_of_ensemble_order():
    full = ensemble_increments(7, np.arange(10), 50, 2, 0.01)
    subset = ensemble_increments(7, [9, 3, 4], 50, 2, 0.01)
    assert np.array_equal(subset, full[[9, 3, 4]])
    assert not np.array_equal(full[0], full[1])
    assert not np.array_equal(brownian_increments(7, 0, 50, 2, 0.01), brownian_increments(8, 0, 50, 2, 0.01))


def test_increment_moments_at_five_sigma():
    dt = 1e-3
    n = 200000
    x = brownian_increments(11, 0, n, 1, dt)[:, 0]
    assert abs(x.mean()) < 5 * np.sqrt(dt / n)
    # var of the sample variance is 2 dt² / n
    assert abs(x.var() - dt) < 5 * np.sqrt(2 / n) * dt


def test_noise_path_grid_and_values():
    npath = NoisePath.generate(3, 4, 1.0, 0.1, 2)
    assert npath.dt == pytest.approx(0.1)
    assert len(npath.times) == 11 and npath.dx.shape == (10, 2)
    assert np.all(npath.x[0] == 0)
    assert np.allclose(npath.x[-1], npath.dx.sum(axis=0))


def test_negative_seed_rejected():
    with pytest.raises(ValueError):
        path_rng(-1, 0)
