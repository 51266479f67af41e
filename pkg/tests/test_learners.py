import json

import numpy as np
import pytest

from upliftkit import learners as L
from upliftkit.errors import ConfigError, FitError, InvariantError
from upliftkit.learners import LearnerSpec


def _ridge_grad(X, y, coef, b, lam):
    r = y - X @ coef - b
    return np.concatenate([[-2 * r.sum()], -2 * X.T @ r + 2 * lam * coef])


class TestRidge:
    def test_exact_line(self):
        m = L.fit_ridge([[1], [2], [3]], [2, 4, 6], 0.0)
        np.testing.assert_allclose(m.params["coef"], [2.0], atol=1e-12)
        assert m.params["intercept"] == pytest.approx(0.0, abs=1e-12)

    def test_constant_target(self):
        X = np.random.default_rng(0).normal(size=(20, 3))
        m = L.fit_ridge(X, np.full(20, 4.25), 0.0)
        np.testing.assert_allclose(m.params["coef"], 0.0, atol=1e-12)
        assert m.params["intercept"] == pytest.approx(4.25, abs=1e-12)

    def test_full_shrinkage(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
        m = L.fit_ridge(X, y, 1e12)
        np.testing.assert_allclose(m.params["coef"], 0.0, atol=1e-9)
        assert m.params["intercept"] == pytest.approx(y.mean(), abs=1e-9)

    def test_singular_min_norm(self):
        X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        m = L.fit_ridge(X, [1.0, 2.0, 3.0], 0.0)
        # duplicated column: minimum-norm solution splits the slope evenly
        np.testing.assert_allclose(m.params["coef"], [0.5, 0.5], atol=1e-12)

    @pytest.mark.parametrize("lam", [0.0, 1e-3, 2.5])
    def test_gradient_vanishes(self, lam):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(100, 4))
        y = X @ [1.0, -2.0, 0.5, 0.0] + rng.normal(size=100)
        m = L.fit_ridge(X, y, lam)
        g = _ridge_grad(X, y, m.params["coef"], m.params["intercept"], lam)
        assert np.max(np.abs(g)) < 1e-8

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        X, y = rng.normal(size=(15, 2)), rng.normal(size=15)
        theta = np.array([0.3, -0.7, 1.1])  # b, coef...

        def loss(th):
            return np.sum((y - X @ th[1:] - th[0]) ** 2) + 0.4 * th[1:] @ th[1:]

        h = 1e-6
        fd = np.array([(loss(theta + h * e) - loss(theta - h * e)) / (2 * h)
                       for e in np.eye(3)])
        np.testing.assert_allclose(_ridge_grad(X, y, theta[1:], theta[0], 0.4), fd,
                                   atol=1e-5)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(50, 3)), rng.normal(size=50)
        p = rng.permutation(50)
        a, b = L.fit_ridge(X, y, 0.1), L.fit_ridge(X[p], y[p], 0.1)
        np.testing.assert_allclose(a.params["coef"], b.params["coef"], atol=1e-10)
        assert a.params["intercept"] == pytest.approx(b.params["intercept"], abs=1e-10)

    def test_weighted_matches_row_duplication(self):
        X = np.array([[0.0], [1.0], [2.0], [4.0]])
        y = np.array([1.0, 0.0, 3.0, 2.0])
        a = L.fit_ridge(X, y, 0.5, sample_weight=[1, 2, 1, 3])
        b = L.fit_ridge(X[[0, 1, 1, 2, 3, 3, 3]], y[[0, 1, 1, 2, 3, 3, 3]], 0.5)
        np.testing.assert_allclose(a.params["coef"], b.params["coef"], atol=1e-12)


class TestLogistic:
    def test_intercept_only_symmetry(self):
        m = L.fit_logistic(np.zeros((6, 2)), [0, 1, 0, 1, 1, 0])
        np.testing.assert_allclose(L.predict(m, np.zeros((3, 2))), 0.5, atol=1e-12)

    def test_separable_monotone(self):
        x = np.linspace(-2, 2, 12)[:, None]
        m = L.fit_logistic(x, (x[:, 0] > 0).astype(float))
        p = L.predict(m, np.linspace(-3, 3, 50)[:, None])
        assert np.all(np.diff(p) >= 0) and p[-1] > p[0]
        assert np.all((p > 0) & (p < 1))

    def test_two_point_grid_oracle(self):
        X, y = np.array([[-1.0], [1.0]]), np.array([0.0, 1.0])
        m = L.fit_logistic(X, y)
        assert L.predict(m, [[0.0]])[0] == pytest.approx(0.5, abs=1e-9)
        ws = np.arange(0.0, 40.0, 0.01)
        bs = np.arange(-2.0, 2.0001, 0.01)
        W, B = np.meshgrid(ws, bs, indexing="ij")
        z0, z1 = -W + B, W + B
        obj = (-np.logaddexp(0, z0)) + (z1 - np.logaddexp(0, z1)) - 0.5e-6 * W ** 2
        i, j = np.unravel_index(np.argmax(obj), obj.shape)
        assert abs(bs[j]) < 0.011
        assert m.params["coef"][0] == pytest.approx(ws[i], abs=0.02)
        assert m.params["intercept"] == pytest.approx(0.0, abs=1e-9)

    def test_first_order_conditions(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(300, 3))
        y = (rng.random(300) < 1 / (1 + np.exp(-(X @ [1.0, -1.0, 0.5])))).astype(float)
        spec = LearnerSpec(kind=L.LOGISTIC)
        m = L.fit_logistic(X, y, spec)
        c, b = m.params["coef"], m.params["intercept"]
        assert m.info["converged"]
        assert np.max(np.abs(L.logistic_gradient(c, b, X, y))) < spec.tol
        assert L.logistic_objective(c, b, X, y) >= L.logistic_objective(np.zeros(3), 0.0, X, y)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(80, 2))
        y = (X[:, 0] + rng.normal(size=80) > 0).astype(float)
        p = rng.permutation(80)
        a, b = L.fit_logistic(X, y), L.fit_logistic(X[p], y[p])
        np.testing.assert_allclose(a.params["coef"], b.params["coef"], atol=1e-10)

    def test_single_class(self):
        with pytest.raises(FitError, match="degenerate arm"):
            L.fit_logistic([[0.0], [1.0]], [1, 1])


class TestRegressionForest:
    def spec(self, **kw):
        return LearnerSpec(kind=L.FOREST, **kw)

    def test_constant_target(self):
        X = np.random.default_rng(0).normal(size=(40, 2))
        m = L.fit_regression_forest(X, np.full(40, 0.1), self.spec(n_trees=10), seed=3)
        np.testing.assert_allclose(L.predict(m, X), 0.1, rtol=1e-14)

    def test_interpolates_single_full_tree(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(30, 2)), rng.normal(size=30)
        spec = self.spec(n_trees=1, max_depth=None, min_leaf=1, bootstrap=False)
        m = L.fit_regression_forest(X, y, spec, seed=0)
        np.testing.assert_array_equal(L.predict(m, X), y)

    def test_step_function(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, size=(200, 1))
        y = (X[:, 0] > 0).astype(float)
        m = L.fit_regression_forest(X, y, self.spec(n_trees=20), seed=4)
        mse = np.mean((L.predict(m, X) - y) ** 2)
        assert mse < 0.05 * y.var()

    def test_deterministic_across_workers(self):
        rng = np.random.default_rng(3)
        X, y = rng.normal(size=(120, 3)), rng.normal(size=120)
        spec = self.spec(n_trees=12, feature_subsample=0.67)
        a = L.fit_regression_forest(X, y, spec, seed=9, n_jobs=1)
        b = L.fit_regression_forest(X, y, spec, seed=9, n_jobs=4)
        c = L.fit_regression_forest(X, y, spec, seed=9, n_jobs=1)
        ja, jb, jc = (json.dumps(m.to_dict(), sort_keys=True) for m in (a, b, c))
        assert ja == jb == jc
        assert json.dumps(L.fit_regression_forest(X, y, spec, seed=10).to_dict()) != ja

    def test_leaves_respect_min_leaf(self):
        rng = np.random.default_rng(4)
        X, y = rng.normal(size=(100, 2)), rng.normal(size=100)
        m = L.fit_regression_forest(X, y, self.spec(n_trees=5, min_leaf=7), seed=0)
        for t in m.params["trees"]:
            assert all(t.payload[i].n >= 7 for i in t.leaves())

    def test_weighted_leaf_means(self):
        X = np.array([[0.0], [0.0], [1.0], [1.0]])
        y = np.array([1.0, 3.0, 10.0, 20.0])
        spec = self.spec(n_trees=1, bootstrap=False, min_leaf=1)
        m = L.fit_regression_forest(X, y, spec, sample_weight=[3, 1, 1, 1])
        np.testing.assert_allclose(L.predict(m, [[0.0], [1.0]]), [1.5, 15.0])

    def test_too_small(self):
        with pytest.raises(FitError):
            L.fit_regression_forest(np.zeros((5, 1)), np.zeros(5), self.spec(min_leaf=5))

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(5)
        X, y = rng.normal(size=(60, 2)), rng.normal(size=60)
        m = L.fit_regression_forest(X, y, self.spec(n_trees=3), seed=1)
        back = L.LearnerModel.from_dict(json.loads(json.dumps(m.to_dict())))
        np.testing.assert_array_equal(L.predict(back, X), L.predict(m, X))
        assert json.dumps(back.to_dict()) == json.dumps(m.to_dict())


class TestPredictContract:
    def test_affine(self):
        assert L.predict(L.linear_model([2.0], 1.0), [[3.0]])[0] == 7.0

    def test_dimension_mismatch(self):
        m = L.fit_ridge(np.zeros((3, 2)), [1, 2, 3])
        with pytest.raises(InvariantError):
            L.predict(m, np.zeros((2, 3)))

    def test_logistic_range(self):
        m = L.linear_model([50.0], 0.0, kind=L.LOGISTIC)
        p = L.predict(m, [[-100.0], [0.0], [100.0]])
        assert np.all((p > 0) & (p < 1))

    @pytest.mark.parametrize("kw", [dict(kind="svm"), dict(ridge_lambda=-1),
                                    dict(n_trees=0), dict(max_depth=0),
                                    dict(min_leaf=0), dict(feature_subsample=0)])
    def test_spec_validation(self, kw):
        with pytest.raises(ConfigError):
            LearnerSpec(**kw)
