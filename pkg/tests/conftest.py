import numpy as np
import pytest

from spades.dictionary import gaussian_dictionary


def random_pd_instance(rng, M, d=1):
    """Gaussian dictionary with random means plus moments from a random sample near them."""
    means = rng.uniform(0.0, 1.5 * M, size=(M, d))
    D = gaussian_dictionary(means, tau=rng.uniform(0.7, 1.3))
    pts = means[rng.integers(0, M, 40)] + rng.standard_normal((40, d))
    return D, D.empirical_moments(pts)


def random_quadratic(rng, M):
    """Well-conditioned random SPD Gram with unit diagonal and random linear term."""
    A = rng.standard_normal((M + 3, M))
    G = A.T @ A / (M + 3) + 0.2 * np.eye(M)
    s = 1.0 / np.sqrt(np.diag(G))
    G = G * np.outer(s, s)
    c = rng.standard_normal(M)
    return G, c


def subgradient_reference(c, G, omega, iters=40000):
    """Accelerated projected gradient on the split lam = u - v, u, v >= 0.

    Independent of coordinate descent: minimizes the smooth bound-constrained
    problem -2 c.(u-v) + (u-v)'G(u-v) + 2 omega.(u+v).
    """
    M = c.shape[0]
    step = 1.0 / (4.0 * np.linalg.eigvalsh(G).max())
    x = np.zeros(2 * M)
    y = x.copy()
    t = 1.0
    for _ in range(iters):
        u, v = y[:M], y[M:]
        g_lam = -2.0 * c + 2.0 * G @ (u - v)
        grad = np.concatenate([g_lam + 2.0 * omega, -g_lam + 2.0 * omega])
        x_new = np.maximum(y - step * grad, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + (t - 1.0) / t_new * (x_new - x)
        x, t = x_new, t_new
    return x[:M] - x[M:]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
