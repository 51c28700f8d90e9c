"""SVR solver, standardization, and codebook clustering."""

import numpy as np
import pytest

from crowdcount import learn
from crowdcount.errors import ConfigError, DataError

cvxopt = pytest.importorskip("cvxopt")
cvxopt.solvers.options["show_progress"] = False


def qp_reference_objective(x, y, kernel, c, epsilon, gamma):
    """Dense quadratic-program solution of the same dual, via cvxopt.

    Returns (maximized dual objective, beta). The tiny ridge keeps the
    KKT system full rank when the kernel matrix is singular.
    """
    n = x.shape[0]
    k = learn.kernel_matrix(kernel, x, x, gamma)
    q = np.block([[k, -k], [-k, k]]) + 1e-9 * np.eye(2 * n)
    p = np.concatenate([epsilon - y, epsilon + y])
    g = np.vstack([-np.eye(2 * n), np.eye(2 * n)])
    h = np.concatenate([np.zeros(2 * n), np.full(2 * n, c)])
    a_eq = np.concatenate([np.ones(n), -np.ones(n)]).reshape(1, -1)
    sol = cvxopt.solvers.qp(
        cvxopt.matrix(q), cvxopt.matrix(p), cvxopt.matrix(g), cvxopt.matrix(h),
        cvxopt.matrix(a_eq), cvxopt.matrix(np.zeros(1)),
    )
    assert sol["status"] == "optimal"
    a = np.array(sol["x"]).ravel()
    beta = a[:n] - a[n:]
    value = 0.5 * beta @ k @ beta + epsilon * np.sum(a) - y @ beta
    return -value, beta


def primal_objective(model, x, y, c, epsilon):
    k_sv = learn.kernel_matrix(model.kernel, model.support_vectors, model.support_vectors, model.gamma)
    quad = 0.5 * model.coef @ k_sv @ model.coef
    resid = y - learn.svr_predict(model, x)
    return quad + c * np.sum(np.maximum(0.0, np.abs(resid) - epsilon))


class TestKernelMatrix:
    def test_matches_double_loop(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(7, 3))
        z = rng.normal(size=(5, 3))
        for kind, gamma in [("linear", 1.0), ("rbf", 0.4)]:
            fast = learn.kernel_matrix(kind, x, z, gamma)
            for i in range(7):
                for j in range(5):
                    if kind == "linear":
                        want = x[i] @ z[j]
                    else:
                        want = np.exp(-gamma * np.sum((x[i] - z[j]) ** 2))
                    assert abs(fast[i, j] - want) < 1e-12

    def test_unknown_kernel_rejected(self):
        with pytest.raises(ConfigError):
            learn.kernel_matrix("poly", np.eye(2), np.eye(2), 1.0)


class TestSvrFit:
    def test_three_point_line(self):
        x = np.array([[0.0], [1.0], [2.0]])
        y = np.array([0.0, 2.0, 4.0])
        m = learn.svr_fit(x, y, kernel="linear", c=100.0, epsilon=0.01, tol=1e-4)
        assert m.converged
        pred = learn.svr_predict(m, np.array([[1.5]]))[0]
        assert 2.9 <= pred <= 3.1

    def test_three_point_dual_matches_qp_reference(self):
        x = np.array([[0.0], [1.0], [2.0]])
        y = np.array([0.0, 2.0, 4.0])
        m = learn.svr_fit(x, y, kernel="linear", c=100.0, epsilon=0.01, tol=1e-6)
        ref, _ = qp_reference_objective(x, y, "linear", 100.0, 0.01, gamma=1.0)
        assert abs(m.dual_objective - ref) <= 1e-4 * max(1.0, abs(ref))

    def test_rbf_solution_matches_qp_reference(self):
        rng = np.random.default_rng(1)
        for trial in range(3):
            x = rng.normal(size=(12, 2))
            y = np.sin(x[:, 0]) + 0.3 * x[:, 1]
            m = learn.svr_fit(x, y, kernel="rbf", c=5.0, epsilon=0.1, tol=1e-8)
            ref, beta_ref = qp_reference_objective(x, y, "rbf", 5.0, 0.1, m.gamma)
            assert abs(m.dual_objective - ref) <= 1e-5 * max(1.0, abs(ref))
            beta = np.zeros(12)
            for sv, b in zip(m.support_vectors, m.coef):
                beta[int(np.argmin(np.sum((x - sv) ** 2, axis=1)))] = b
            assert np.allclose(beta, beta_ref, atol=5e-4 * 5.0)

    def test_flat_targets_stay_inside_tube(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(12, 3))
        m = learn.svr_fit(x, np.full(12, 5.0), kernel="rbf", c=10.0, epsilon=0.5, tol=1e-4)
        pred = learn.svr_predict(m, rng.normal(size=(8, 3)))
        assert np.all(np.abs(pred - 5.0) <= 0.5 + 1e-9)

    def test_duality_gap_and_tube_on_random_problems(self):
        rng = np.random.default_rng(42)
        for trial in range(6):
            kernel = "rbf" if trial % 2 else "linear"
            x = rng.normal(size=(20, 3))
            y = rng.normal(scale=2.0, size=20) + x @ rng.normal(size=3)
            m = learn.svr_fit(x, y, kernel=kernel, c=5.0, epsilon=0.2, tol=1e-6)
            assert m.converged
            primal = primal_objective(m, x, y, 5.0, 0.2)
            gap = primal - m.dual_objective
            assert -1e-9 <= gap <= 1e-3 * max(abs(primal), 1e-12)
            # strictly interior coefficients must sit on the tube boundary
            free = (np.abs(m.coef) > 1e-8) & (np.abs(m.coef) < 5.0 - 1e-8)
            sv_pred = learn.svr_predict(m, m.support_vectors)
            idx = [int(np.argmin(np.sum((x - sv) ** 2, axis=1))) for sv in m.support_vectors]
            resid = y[np.array(idx)] - sv_pred
            dev = np.abs(resid - np.sign(m.coef) * 0.2)
            if free.any():
                assert dev[free].max() <= 1e-4

    def test_iteration_cap_reports_nonconvergence(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(20, 2))
        y = rng.normal(size=20)
        m = learn.svr_fit(x, y, kernel="rbf", c=10.0, epsilon=0.01, tol=1e-12, max_iter=3)
        assert not m.converged
        assert m.iterations == 3
        assert np.all(np.isfinite(learn.svr_predict(m, x)))

    def test_nonfinite_input_rejected(self):
        with pytest.raises(DataError):
            learn.svr_fit(np.array([[np.nan], [1.0]]), np.array([0.0, 1.0]))

    def test_seed_is_cosmetic(self):
        x = np.arange(10.0).reshape(-1, 1)
        y = np.arange(10.0)
        a = learn.svr_fit(x, y, seed=1)
        b = learn.svr_fit(x, y, seed=99)
        assert a.bias == b.bias
        assert np.array_equal(a.coef, b.coef)


class TestStandardizer:
    def test_roundtrip(self):
        rng = np.random.default_rng(6)
        x = rng.normal(loc=3.0, scale=7.0, size=(30, 4))
        s = learn.Standardizer.fit(x)
        z = s.transform(x)
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(z.std(axis=0), 1.0, atol=1e-12)
        assert np.allclose(s.inverse(z), x, atol=1e-9)

    def test_constant_column_maps_to_zero(self):
        x = np.column_stack([np.arange(5.0), np.full(5, 2.0)])
        z = learn.Standardizer.fit(x).transform(x)
        assert np.all(z[:, 1] == 0.0)


class TestKmeans:
    def test_fixed_seed_reproduces_codebook(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(60, 5))
        a = learn.kmeans_fit(x, 4, seed=3)
        b = learn.kmeans_fit(x, 4, seed=3)
        assert np.array_equal(a.centroids, b.centroids)

    def test_k_equals_n_zero_inertia(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(6, 2))
        cb = learn.kmeans_fit(x, 6, seed=0)
        assert cb.inertia == 0.0
        assert cb.size == 6

    def test_separated_clusters_recovered(self):
        rng = np.random.default_rng(9)
        x = np.vstack([rng.normal(loc=c, scale=0.05, size=(20, 2)) for c in (0.0, 10.0, 20.0)])
        cb = learn.kmeans_fit(x, 3, seed=1)
        found = sorted(cb.centroids[:, 0])
        assert np.allclose(found, [0.0, 10.0, 20.0], atol=0.5)

    def test_assignment_tie_takes_lowest_index(self):
        centroids = np.array([[1.0], [1.0]])
        labels = learn.assign_clusters(np.array([[0.0], [2.0]]), centroids)
        assert np.all(labels == 0)

    def test_more_clusters_than_points_rejected(self):
        with pytest.raises(DataError):
            learn.kmeans_fit(np.zeros((2, 2)), 3, seed=0)


class TestSourceRegressor:
    def test_predictions_clamped_nonnegative(self):
        rng = np.random.default_rng(10)
        x = rng.normal(size=(25, 3))
        y = np.maximum(x[:, 0] * 2.0, 0.0)
        reg = learn.SourceRegressor.fit(x, y, c=10.0, epsilon=0.1)
        pred = reg.predict(rng.normal(size=(40, 3)) * 3.0)
        assert np.all(pred >= 0.0)

    def test_learns_linear_count_relation(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0, 10, size=(40, 1))
        y = 3.0 * x[:, 0] + 5.0
        reg = learn.SourceRegressor.fit(x, y, kernel="linear", c=50.0, epsilon=0.1)
        probe = np.array([[2.0], [6.0]])
        assert np.allclose(reg.predict(probe), [11.0, 23.0], atol=0.5)

    def test_constant_targets_handled(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(15, 2))
        reg = learn.SourceRegressor.fit(x, np.full(15, 4.0), epsilon=0.5)
        assert np.allclose(reg.predict(x), 4.0, atol=0.5 + 1e-9)
