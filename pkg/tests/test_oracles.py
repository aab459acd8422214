import numpy as np
import pytest

from soarlab.oracles import box_corners, quadratic_linf_max, quadratic_value, trust_region_max


def ball_samples(rng, n, d, radius):
    v = rng.normal(size=(n, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius * rng.uniform(size=(n, 1)) ** (1 / d)


@pytest.mark.parametrize("seed", range(30))
def test_trust_region_never_beaten_by_sampling(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(1, 6))
    A = rng.normal(size=(d, d))
    A = A + A.T
    g = rng.normal(size=d) if seed % 4 else np.zeros(d)
    R = rng.uniform(0.1, 2.0)
    val, delta = trust_region_max(g, A, R)
    assert np.linalg.norm(delta) <= R * (1 + 1e-9)
    assert val == pytest.approx(quadratic_value(delta, g, A)[0], rel=1e-12, abs=1e-12)
    assert quadratic_value(ball_samples(rng, 100_000, d, R), g, A).max() <= val + 1e-10


def test_trust_region_concave_interior():
    A = -np.eye(2)
    g = np.array([0.1, 0.0])
    val, delta = trust_region_max(g, A, 1.0)
    np.testing.assert_allclose(delta, [0.1, 0.0], atol=1e-12)
    assert val == pytest.approx(0.005)


def test_trust_region_hard_case():
    # gradient orthogonal to the top eigenvector
    A = np.diag([2.0, -1.0])
    g = np.array([0.0, 0.5])
    val, delta = trust_region_max(g, A, 1.0)
    sampled = quadratic_value(ball_samples(np.random.default_rng(0), 200_000, 2, 1.0), g, A).max()
    assert val >= sampled - 1e-12
    assert np.linalg.norm(delta) == pytest.approx(1.0)


def test_corners():
    c = box_corners(3)
    assert c.shape == (8, 3) and set(np.abs(c).ravel()) == {1.0}
    with pytest.raises(ValueError):
        box_corners(13)


def test_linf_max_of_linear_model_is_corner():
    g = np.array([1.0, -2.0, 0.5])
    assert quadratic_linf_max(g, np.zeros((3, 3)), 0.1, c=1.0, n_samples=10) == pytest.approx(1.0 + 0.35)
