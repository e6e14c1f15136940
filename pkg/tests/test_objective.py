import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spades.dictionary import EmpiricalMoments, gaussian_dictionary, haar_dictionary
from spades.objective import (
    WeightSpec,
    coordinate_gradient,
    empirical_loss,
    l2_error_in_span,
    make_weights,
    mixture_L,
    mixture_rate,
    penalized_objective,
    penalty,
    rate_r,
    soft_threshold,
    support,
)

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


class TestRates:
    def test_rate_example(self):
        assert rate_r(200, 100, 0.05) == pytest.approx(0.2879939172986476, rel=1e-12)

    def test_mixture_rate_example(self):
        assert mixture_rate(200, 100, 0.1) == pytest.approx(0.3686782744704394, rel=1e-12)
        assert mixture_rate(200, 100, 0.1) == pytest.approx(math.sqrt(math.log(2 * 200**2 / 0.1) / 100))

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            rate_r(10, 10, 1.0)

    def test_mixture_L(self):
        assert mixture_L([0.7511255444649425]) == pytest.approx(0.7511255444649425)
        assert mixture_L([0.1, 0.2]) == pytest.approx(1 / math.sqrt(3))


class TestWeights:
    def test_simple_haar_father(self):
        D = haar_dictionary(4)
        m = EmpiricalMoments(np.zeros(D.M), np.zeros(D.M), 100)
        w = make_weights(D, m, n=100, delta=0.1, variant="simple")
        r = rate_r(D.M, 100, 0.05)
        assert w.omega[0] == pytest.approx(4 * r)
        assert D.M == 32

    def test_simple_example_value(self):
        # 4 * 0.75113 * r(M=200, n=100, delta/2=0.05)
        D = gaussian_dictionary(np.arange(200.0).reshape(-1, 1) * 10, 1.0)
        w = make_weights(D, None, 100, 0.1, "simple")
        assert w.omega[0] == pytest.approx(4 * 0.7511255444649424 * 0.2879939172986476, rel=1e-12)
        assert w.omega[0] == pytest.approx(0.8652783517341532, rel=1e-12)

    def test_mixture_example(self):
        D = gaussian_dictionary(np.arange(200.0).reshape(-1, 1) * 4, 1.0)
        w = make_weights(D, None, 100, 0.1, "mixture")
        np.testing.assert_allclose(w.omega, 1.1076946785760171, rtol=1e-12)

    def test_data_driven_zero_features(self):
        D = haar_dictionary(4)
        m = EmpiricalMoments(np.zeros(D.M), np.zeros(D.M), 100)
        w = make_weights(D, m, 100, 0.1, "data_driven")
        j = [i for i, a in enumerate(D.atoms) if a.level == 0][0]
        r = rate_r(D.M, 100, 0.05)
        T = math.sqrt(2) * r
        assert w.omega[j] == pytest.approx(2 * math.sqrt(2) * T * r + 8 / 3 * r**2, rel=1e-12)

    def test_data_driven_zero_feature_example(self):
        # L=1 atoms, M=200, n=100, delta=0.1 and all f_j(X)=0: 2 sqrt(2) sqrt(2) r^2 + 8/3 r^2
        D = haar_dictionary(6, include_father=False)
        D = type(D)(D.kind, D.atoms + D.atoms[:73], np.eye(200), np.ones(200), np.ones(200))
        m = EmpiricalMoments(np.zeros(200), np.zeros(200), 100)
        w = make_weights(D, m, 100, 0.1, "data_driven")
        np.testing.assert_allclose(w.omega, (4 + 8 / 3) * 0.2879939172986476**2, rtol=1e-12)

    def test_scalar(self):
        D = haar_dictionary(1)
        w = make_weights(D, None, 10, 0.1, "scalar", scalar=0.3)
        np.testing.assert_array_equal(w.omega, 0.3)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            WeightSpec("scalar", [-1.0])

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            make_weights(haar_dictionary(1), None, 10, 0.1, "fancy")

    def test_bernstein_uses_variance(self):
        D = haar_dictionary(1)
        m = EmpiricalMoments(np.array([1.0, 0.0, 0.0, 0.0]), np.array([1.0, 1.0, 0.0, 0.0]), 50)
        w = make_weights(D, m, 50, 0.1, "bernstein")
        r = rate_r(D.M, 50, 0.05)
        assert w.omega[0] == pytest.approx(8 / 3 * r**2)
        assert w.omega[1] == pytest.approx(2 * math.sqrt(2) * r + 8 / 3 * r**2)


class TestLoss:
    def test_zero(self):
        assert empirical_loss(np.zeros(3), np.ones(3), np.eye(3)) == 0.0

    def test_orthonormal_example(self):
        lam = np.array([1.0, 2.0])
        assert empirical_loss(lam, [0.5, 0.5], np.eye(2)) == pytest.approx(-3.0 + 5.0)

    def test_penalty_example(self):
        assert penalty([1.0, -2.0, 0.0], [0.5, 0.25, 9.0]) == pytest.approx(2.0)

    def test_objective_sum(self, rng):
        G = np.eye(4)
        lam, c, w = rng.normal(size=4), rng.normal(size=4), rng.uniform(size=4)
        assert penalized_objective(lam, c, G, w) == pytest.approx(empirical_loss(lam, c, G) + penalty(lam, w))

    def test_gradient_finite_difference(self, rng):
        D = gaussian_dictionary(rng.normal(size=(5, 1)) * 2, 1.0)
        lam, c = rng.normal(size=5), rng.normal(size=5)
        h = 1e-6
        for j in range(5):
            e = np.zeros(5)
            e[j] = h
            fd = (empirical_loss(lam + e, c, D.gram) - empirical_loss(lam - e, c, D.gram)) / (2 * h)
            assert coordinate_gradient(j, lam, c, D.gram) == pytest.approx(fd, rel=1e-6, abs=1e-8)

    def test_in_span_identity(self, rng):
        # ||f_a - f_b||^2 on a fine grid equals the Gram quadratic form
        D = gaussian_dictionary(rng.uniform(-2, 2, size=(4, 1)), 0.8)
        a, b = rng.normal(size=4), rng.normal(size=4)
        x = np.linspace(-10, 10, 200001)
        F = D.feature_matrix(x)
        diff = F @ (a - b)
        integral = np.trapezoid(diff**2, x) if hasattr(np, "trapezoid") else np.trapz(diff**2, x)
        assert l2_error_in_span(a, b, D.gram) == pytest.approx(integral, rel=1e-8)

    @given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite), st.floats(0, 1))
    @settings(max_examples=60, deadline=None)
    def test_convex_along_segments(self, a, b, t):
        G = np.array([[1, .3, 0, 0], [.3, 1, .2, 0], [0, .2, 1, .1], [0, 0, .1, 1.0]])
        c = np.array([0.5, -0.2, 0.1, 0.3])
        w = np.full(4, 0.1)
        lhs = penalized_objective(t * a + (1 - t) * b, c, G, w)
        rhs = t * penalized_objective(a, c, G, w) + (1 - t) * penalized_objective(b, c, G, w)
        assert lhs <= rhs + 1e-9 * (1 + abs(rhs))

    @given(arrays(float, 3, elements=finite), st.floats(0.01, 10))
    @settings(max_examples=60, deadline=None)
    def test_penalty_homogeneous(self, lam, s):
        w = [0.2, 0.5, 1.0]
        assert penalty(s * lam, w) == pytest.approx(s * penalty(lam, w), rel=1e-12, abs=1e-12)


class TestHelpers:
    def test_soft_threshold(self):
        np.testing.assert_array_equal(soft_threshold(np.array([3.0, -3.0, 0.5]), 1.0), [2.0, -2.0, 0.0])

    def test_support(self):
        np.testing.assert_array_equal(support([0.0, 1e-12, -2.0], tol=1e-10), [2])
