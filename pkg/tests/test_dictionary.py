import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import dblquad, quad
from scipy.optimize import minimize_scalar

from spades.dictionary import (
    DictionaryError,
    SampleSet,
    dictionary_from_config,
    gaussian_dictionary,
    gaussian_gram,
    haar_dictionary,
    haar_lmax,
)

PI_QUARTER = 0.7511255444649424  # pi^(-1/4), checked by quadrature of ||p|| in 1D


def gauss_pdf(x, mu, tau):
    x = np.atleast_1d(x)
    mu = np.atleast_1d(mu)
    d = x.shape[0]
    return (2 * math.pi * tau**2) ** (-d / 2) * math.exp(-np.sum((x - mu) ** 2) / (2 * tau**2))


def quad_inner(mu1, t1, mu2, t2):
    """Adaptive-quadrature <f_i, f_j> of L2-normalized Gaussians (d = 1 or 2)."""
    mu1, mu2 = np.atleast_1d(mu1), np.atleast_1d(mu2)
    d = mu1.shape[0]
    lo = np.minimum(mu1, mu2) - 12 * max(t1, t2)
    hi = np.maximum(mu1, mu2) + 12 * max(t1, t2)
    if d == 1:
        def integral(f):
            return quad(lambda x: f(np.array([x])), lo[0], hi[0], epsabs=1e-14, epsrel=1e-12,
                        points=[mu1[0], mu2[0]], limit=200)[0]
    else:
        def integral(f):
            return dblquad(lambda y, x: f(np.array([x, y])), lo[0], hi[0], lo[1], hi[1],
                           epsabs=1e-13, epsrel=1e-10)[0]
    n1 = math.sqrt(integral(lambda x: gauss_pdf(x, mu1, t1) ** 2))
    n2 = math.sqrt(integral(lambda x: gauss_pdf(x, mu2, t2) ** 2))
    return integral(lambda x: gauss_pdf(x, mu1, t1) * gauss_pdf(x, mu2, t2)) / (n1 * n2)


class TestEvaluate:
    def test_gaussian_at_mean(self):
        D = gaussian_dictionary([[0.0]], 1.0)
        assert D.evaluate(0, [0.0]) == pytest.approx(PI_QUARTER, rel=1e-12)

    def test_haar_father_constant(self):
        D = haar_dictionary(2)
        for x in (0.0, 0.3, 0.99, 1.0):
            assert D.evaluate(0, [x]) == 1.0

    def test_haar_mother_signs(self):
        D = haar_dictionary(0)
        assert D.evaluate(1, [0.25]) == 1.0
        assert D.evaluate(1, [0.75]) == -1.0

    def test_index_and_dimension_errors(self):
        D = gaussian_dictionary([[0.0, 0.0]], 1.0)
        with pytest.raises(DictionaryError):
            D.evaluate(1, [0.0, 0.0])
        with pytest.raises(DictionaryError):
            D.evaluate(0, [0.0])

    def test_feature_matrix_matches_pointwise(self, rng):
        D = gaussian_dictionary(rng.normal(size=(4, 2)), [0.5, 1.0, 1.5, 2.0])
        pts = rng.normal(size=(5, 2))
        F = D.feature_matrix(pts)
        for i in range(5):
            for j in range(4):
                expected = gauss_pdf(pts[i], D.atoms[j].mean, D.atoms[j].tau) / D.atoms[j].density_norm
                assert F[i, j] == pytest.approx(expected, rel=1e-12)


class TestGram:
    def test_two_gaussians_closed_form_vs_quadrature(self):
        D = gaussian_dictionary([[0.0], [4.0]], 1.0)
        assert D.gram[0, 1] == pytest.approx(math.exp(-4), rel=1e-12)
        assert D.gram[0, 1] == pytest.approx(0.018315638888734175, rel=1e-9)  # quad oracle

    def test_diagonal_is_one(self, rng):
        D = gaussian_dictionary(rng.normal(size=(6, 2)), rng.uniform(0.3, 3, 6))
        np.testing.assert_allclose(np.diag(D.gram), 1.0, atol=1e-10)

    def test_haar_identity(self):
        D = haar_dictionary(3)
        np.testing.assert_array_equal(D.gram, np.eye(D.M))

    @pytest.mark.parametrize("d", [1, 2])
    def test_unequal_tau_against_quadrature(self, rng, d):
        for _ in range(3 if d == 2 else 6):
            mu = rng.uniform(-2, 2, size=(2, d))
            taus = rng.uniform(0.5, 2.0, 2)
            closed = gaussian_gram(mu, taus)[0, 1]
            assert closed == pytest.approx(quad_inner(mu[0], taus[0], mu[1], taus[1]), rel=1e-6)

    @given(st.integers(2, 8), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_symmetry_exact(self, M, seed):
        r = np.random.default_rng(seed)
        D = gaussian_dictionary(r.normal(size=(M, 2)) * 3, r.uniform(0.2, 2, M))
        assert np.array_equal(D.gram, D.gram.T)

    def test_gram_is_immutable(self):
        D = gaussian_dictionary([[0.0], [1.0]])
        with pytest.raises(ValueError):
            D.gram[0, 1] = 3.0


class TestSupNorms:
    def test_gaussian_1d(self):
        assert gaussian_dictionary([[0.0]], 1.0).sup_norms[0] == pytest.approx(PI_QUARTER, rel=1e-12)

    def test_gaussian_2d(self):
        # numerically maximized 2D normalized density gives 0.5641895835477558
        assert gaussian_dictionary([[0.0, 0.0]], 1.0).sup_norms[0] == pytest.approx(0.5641895835477563, rel=1e-9)

    def test_haar_level4(self):
        D = haar_dictionary(4)
        j = [i for i, a in enumerate(D.atoms) if a.level == 4][0]
        assert D.sup_norms[j] == 4.0
        assert D.sup_norms[0] == 1.0

    def test_grid_maximum_never_exceeds(self, rng):
        for _ in range(5):
            mu, tau = rng.uniform(-3, 3), rng.uniform(0.3, 3)
            D = gaussian_dictionary([[mu]], tau)
            grid = np.linspace(mu - 5 * tau, mu + 5 * tau, 20001)
            assert D.feature_matrix(grid).max() <= D.sup_norms[0] + 1e-9
            res = minimize_scalar(lambda x: -D.evaluate(0, [x]), bracket=(mu - 1, mu + 1))
            assert -res.fun == pytest.approx(D.sup_norms[0], rel=1e-9)


class TestHaar:
    def test_normalization_by_quadrature(self):
        D = haar_dictionary(3)
        for j in range(D.M):
            a = D.atoms[j]
            cells = 2 ** max(a.level + 1, 1)
            edges = np.linspace(0, 1, 2 * cells + 1)
            val = sum(quad(lambda x: D.evaluate(j, [x]) ** 2, lo, hi)[0] for lo, hi in zip(edges[:-1], edges[1:]))
            assert val == pytest.approx(1.0, abs=1e-10)

    def test_frame_identity(self, rng):
        D = haar_dictionary(5)
        mids = (np.arange(2**6) + 0.5) / 2**6
        F = D.feature_matrix(mids)
        for _ in range(10):
            beta = rng.normal(size=D.M)
            f = F @ beta
            assert np.mean(f**2) == pytest.approx(np.sum(beta**2), rel=1e-8)
            assert beta @ D.gram @ beta == pytest.approx(np.sum(beta**2), rel=1e-12)

    @pytest.mark.parametrize("n,expected", [(100, 4), (200, 5), (500, 6), (2000, 8)])
    def test_lmax_rule(self, n, expected):
        assert haar_lmax(n) == expected
        assert 2**expected <= n / math.log(n) < 2 ** (expected + 1)

    def test_size(self):
        assert haar_dictionary(6).M == 128
        assert haar_dictionary(6, include_father=False).M == 127


class TestMoments:
    def test_single_point_at_mean(self):
        D = gaussian_dictionary([[0.0], [10.0]])
        m = D.empirical_moments(SampleSet([[0.0]]))
        assert m.c[0] == pytest.approx(PI_QUARTER, rel=1e-12)
        assert m.second_moment[0] == pytest.approx(PI_QUARTER**2, rel=1e-12)

    def test_haar_father(self, rng):
        D = haar_dictionary(3)
        m = D.empirical_moments(SampleSet(rng.uniform(size=50)))
        assert m.c[0] == 1.0

    def test_no_overlap_gives_zero(self):
        D = haar_dictionary(2)
        j = [i for i, a in enumerate(D.atoms) if a.level == 2 and a.position == 3][0]
        m = D.empirical_moments(SampleSet([[0.1], [0.2], [0.3]]))
        assert m.c[j] == 0.0

    def test_second_moment_bounded_by_sup(self, rng):
        D = gaussian_dictionary(rng.normal(size=(5, 1)), 0.7)
        m = D.empirical_moments(SampleSet(rng.normal(size=30)))
        assert np.all(m.second_moment <= D.sup_norms**2 + 1e-15)

    def test_empty_sample_rejected(self):
        D = haar_dictionary(1)
        with pytest.raises(DictionaryError):
            D.empirical_moments(SampleSet(np.empty((0, 1))))


class TestConstruction:
    def test_bad_tau(self):
        with pytest.raises(DictionaryError):
            gaussian_dictionary([[0.0]], 0.0)

    def test_sample_nonfinite(self):
        with pytest.raises(DictionaryError):
            SampleSet([[np.nan]])

    def test_config_grid(self):
        D = dictionary_from_config({"kind": "gaussian", "grid": {"spacing": 4, "count": 3}, "tau": 1})
        np.testing.assert_array_equal(D.means[:, 0], [4, 8, 12])

    def test_config_haar_from_n(self):
        assert dictionary_from_config({"kind": "haar"}, n=500).M == 128

    def test_config_unknown(self):
        with pytest.raises(DictionaryError):
            dictionary_from_config({"kind": "spline"})
