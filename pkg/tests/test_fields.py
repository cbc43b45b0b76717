import numpy as np
import pytest

from ckli import build_grid
from ckli.fields import derive_seed, generate_reference, generate_references, relative_lp_error, sample_observations
from ckli.kernels import KernelSpec, kernel_eval

K = KernelSpec("Matern52", 1.0, 0.25)


def test_reference_deterministic(grid8):
    np.testing.assert_array_equal(generate_reference(K, grid8, 3), generate_reference(K, grid8, 3))
    assert not np.array_equal(generate_reference(K, grid8, 3), generate_reference(K, grid8, 4))


def test_monte_carlo_moments(grid8):
    draws = generate_references(KernelSpec("Matern52", 1.5, 0.25), grid8, 9, 10000)
    var = draws[:, 27].var()
    assert 0.96 * 2.25 < var < 1.04 * 2.25
    # cells (1, 1) and (3, 1) are 0.25 apart
    a, b = grid8.index(1, 1), grid8.index(3, 1)
    corr = np.corrcoef(draws[:, a], draws[:, b])[0, 1]
    assert abs(corr - kernel_eval(K, 0.25)) <= 0.03


def test_observation_sampling(grid4):
    f = np.arange(16.0)
    all_obs = sample_observations(f, grid4, 16, 0)
    np.testing.assert_array_equal(np.sort(all_obs.cells(grid4)), np.arange(16))
    one = sample_observations(f, grid4, 1, 5)
    assert one.values[0] == f[one.cells(grid4)[0]]
    np.testing.assert_array_equal(one.locations, sample_observations(f, grid4, 1, 5).locations)
    with pytest.raises(ValueError):
        sample_observations(f, grid4, 17, 0)


def test_different_seeds_differ():
    g = build_grid(32, 32)
    f = np.zeros(g.n_cells)
    for s in range(10):
        a = sample_observations(f, g, 50, derive_seed(s, "a")).cells(g)
        b = sample_observations(f, g, 50, derive_seed(s, "b")).cells(g)
        assert not np.array_equal(a, b)


def test_relative_error_examples():
    ref = np.array([3.0, 4.0])
    assert relative_lp_error(ref, ref) == 0
    assert relative_lp_error(ref, np.zeros(2)) == 1
    assert relative_lp_error(ref, np.array([3.0, 0.0])) == pytest.approx(0.8)
    assert relative_lp_error(ref, np.array([3.0, 0.0]), p=1) == pytest.approx(4 / 7)
    with pytest.raises(ValueError):
        relative_lp_error(np.zeros(2), ref)
    with pytest.raises(ValueError):
        relative_lp_error(ref, ref, p=3)


@pytest.mark.parametrize("p", [1, 2])
def test_scale_equivariance_and_triangle(p, rng):
    ref, a, b = rng.normal(size=(3, 50))
    c = -2.7
    assert relative_lp_error(c * ref, c * a, p) == pytest.approx(relative_lp_error(ref, a, p), rel=1e-14)
    bound = relative_lp_error(ref, b, p) + np.linalg.norm(a - b, p) / np.linalg.norm(ref, p)
    assert relative_lp_error(ref, a, p) <= bound + 1e-15


def test_derive_seed_distinct():
    seeds = {derive_seed(s, t) for s in range(5) for t in ("reference", "y_obs", "u_obs")}
    assert len(seeds) == 15
