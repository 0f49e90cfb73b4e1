import numpy as np
import pytest
from scipy.optimize import minimize

from spinkernel.errors import DegenerateDataError
from spinkernel.train import (
    classify,
    fit,
    fit_centered,
    margin_loss,
    metrics,
    noise_regularization_check,
    ovr_fit,
    ovr_predict,
    ovr_scores,
    predict,
)


def ridge_loss(w, f, y, reg):
    n = f.shape[0]
    r = y - f @ w
    return float(r @ r / (2 * n) + reg / 2 * w @ w)


def iterative_ridge(f, y, reg):
    """Independent oracle: minimise the regularized loss iteratively."""
    n = f.shape[0]

    def grad(w, f, y, reg):
        return -(f.T @ (y - f @ w)) / n + reg * w

    res = minimize(
        ridge_loss, np.zeros(f.shape[1]), args=(f, y, reg), jac=grad,
        method="L-BFGS-B", tol=1e-15, options={"maxiter": 50_000},
    )
    return res.x


def intercept_ridge(f, y, reg):
    """Second oracle: closed form with the intercept left unregularised.

    Solves the joint (w, b) problem by zeroing the (0, 0) entry of the
    regulariser on features prefixed with a constant column.
    """
    n = f.shape[0]
    phi = np.hstack([np.ones((n, 1)), f])
    reg_mat = n * reg * np.eye(phi.shape[1])
    reg_mat[0, 0] = 0.0
    w_full = np.linalg.solve(phi.T @ phi + reg_mat, phi.T @ y)
    return w_full[0], w_full[1:]


class TestFit:
    def test_diagonal_solve(self):
        model = fit(np.eye(2), np.array([1.0, -1.0]), reg=0.5)
        np.testing.assert_allclose(model.weights, [0.5, -0.5], atol=1e-12)

    def test_large_reg_shrinks_to_zero(self):
        rng = np.random.default_rng(0)
        f = rng.normal(size=(10, 3))
        y = rng.choice([-1.0, 1.0], size=10)
        w = fit(f, y, reg=1e9).weights
        np.testing.assert_allclose(w, 0.0, atol=1e-7)

    def test_matches_iterative_minimizer(self):
        rng = np.random.default_rng(1)
        f = rng.normal(size=(20, 6))
        y = rng.choice([-1.0, 1.0], size=20)
        for reg in (1e-3, 0.1, 2.0):
            w_closed = fit(f, y, reg).weights
            w_iter = iterative_ridge(f, y, reg)
            np.testing.assert_allclose(w_closed, w_iter, atol=1e-6)

    def test_primal_dual_agree(self):
        rng = np.random.default_rng(2)
        y = rng.choice([-1.0, 1.0], size=12)
        wide = rng.normal(size=(12, 30))  # P > n: dual path
        tall = wide[:, :5]  # P < n: primal path
        for f in (wide, tall):
            w = fit(f, y, reg=0.01).weights
            n = f.shape[0]
            direct = np.linalg.solve(f.T @ f + n * 0.01 * np.eye(f.shape[1]), f.T @ y)
            np.testing.assert_allclose(w, direct, atol=1e-8)

    def test_singular_at_zero_reg(self):
        f = np.ones((4, 3))  # rank 1
        with pytest.raises(DegenerateDataError, match="reg > 0"):
            fit(f, np.array([1.0, -1, 1, -1]), reg=0.0)

    def test_first_order_optimality(self):
        rng = np.random.default_rng(3)
        f = rng.normal(size=(15, 4))
        y = rng.choice([-1.0, 1.0], size=15)
        reg = 0.05
        w = fit(f, y, reg).weights
        base = ridge_loss(w, f, y, reg)
        for _ in range(20):
            d = rng.normal(size=4)
            d /= np.linalg.norm(d)
            assert ridge_loss(w + 1e-4 * d, f, y, reg) >= base

    def test_continuity_in_reg(self):
        rng = np.random.default_rng(4)
        f = rng.normal(size=(12, 4))
        y = rng.choice([-1.0, 1.0], size=12)
        deltas = []
        for d_reg in (1e-2, 1e-4, 1e-6):
            w0 = fit(f, y, 0.1).weights
            w1 = fit(f, y, 0.1 + d_reg).weights
            deltas.append(np.linalg.norm(w1 - w0))
        assert deltas[0] > deltas[1] > deltas[2]
        assert deltas[2] < 1e-5

    def test_negative_reg_rejected(self):
        with pytest.raises(ValueError):
            fit(np.eye(2), np.array([1.0, -1.0]), reg=-0.1)


class TestFitCentered:
    def test_equals_unregularised_intercept_oracle(self):
        rng = np.random.default_rng(5)
        f = rng.normal(size=(30, 5)) + 2.0
        y = rng.permutation(np.repeat([1.0, -1.0], 15))  # balanced
        for reg in (1e-4, 0.3):
            model = fit_centered(f, y, reg)
            b_ref, w_ref = intercept_ridge(f, y, reg)
            np.testing.assert_allclose(model.weights, w_ref, atol=1e-9)
            scores = predict(model, f)
            ref_scores = f @ w_ref + b_ref
            np.testing.assert_allclose(scores, ref_scores, atol=1e-9)

    def test_unbalanced_labels_also_equal(self):
        rng = np.random.default_rng(6)
        f = rng.normal(size=(20, 4))
        y = np.where(rng.uniform(size=20) < 0.3, 1.0, -1.0)
        model = fit_centered(f, y, 0.1)
        b_ref, w_ref = intercept_ridge(f, y, 0.1)
        np.testing.assert_allclose(model.weights, w_ref, atol=1e-9)
        np.testing.assert_allclose(predict(model, f), f @ w_ref + b_ref, atol=1e-9)

    def test_constant_features(self):
        f = np.full((6, 3), 2.5)
        y = np.array([1.0, 1, -1, 1, -1, 1])
        model = fit_centered(f, y, reg=0.1)
        np.testing.assert_allclose(model.weights, 0.0, atol=1e-12)
        assert model.intercept == pytest.approx(y.mean())

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        f = rng.normal(size=(15, 4))
        y = rng.choice([-1.0, 1.0], size=15)
        shift = rng.normal(size=4) * 10
        m0 = fit_centered(f, y, 0.05)
        m1 = fit_centered(f + shift, y, 0.05)
        np.testing.assert_allclose(
            predict(m0, f), predict(m1, f + shift), atol=1e-9
        )


class TestPredict:
    def test_intercept_only(self):
        model = fit_centered(np.full((4, 2), 1.0), np.full(4, 0.3), reg=1.0)
        scores = predict(model, np.full((3, 2), 1.0))
        np.testing.assert_allclose(scores, 0.3, atol=1e-12)
        np.testing.assert_array_equal(classify(scores), [1, 1, 1])

    def test_interpolation_on_full_rank(self):
        rng = np.random.default_rng(8)
        f = rng.normal(size=(6, 6)) + np.eye(6) * 3
        y = rng.choice([-1.0, 1.0], size=6)
        model = fit(f, y, reg=1e-12)
        np.testing.assert_array_equal(classify(predict(model, f)), y.astype(int))

    def test_zero_score_is_plus_one(self):
        assert classify(np.array([0.0, -0.0, -1e-9]))[0] == 1
        assert classify(np.array([0.0]))[0] == 1
        assert classify(np.array([-1e-9]))[0] == -1

    def test_layout_mismatch(self):
        model = fit(np.eye(3), np.array([1.0, -1, 1]), 0.1)
        with pytest.raises(ValueError, match="layout mismatch"):
            predict(model, np.ones((2, 4)))


class TestOvR:
    def test_argmax_is_highest_output(self):
        # scores (-0.3, -0.2, 0.9) over classes (3, 6, 8) -> 8
        scores = np.array([[-0.3, -0.2, 0.9]])
        classes = np.array([3, 6, 8])
        assert classes[np.argmax(scores, axis=1)][0] == 8

    def test_end_to_end_separable(self):
        rng = np.random.default_rng(9)
        centers = {3: [4, 0], 6: [0, 4], 8: [-4, -4]}
        f = np.vstack([centers[c] + rng.normal(scale=0.2, size=(30, 2)) for c in (3, 6, 8)])
        labels = np.repeat([3, 6, 8], 30)
        model = ovr_fit(f, labels, reg=1e-6)
        assert np.mean(ovr_predict(model, f) == labels) == 1.0

    def test_one_point_per_class_interpolates(self):
        f = np.eye(3) * 2.0
        labels = np.array([3, 6, 8])
        model = ovr_fit(f, labels, reg=1e-10, centered=False)
        np.testing.assert_array_equal(ovr_predict(model, f), labels)

    def test_rescaling_scores_keeps_argmax(self):
        rng = np.random.default_rng(10)
        f = rng.normal(size=(20, 4))
        labels = rng.choice([3, 6, 8], size=20)
        model = ovr_fit(f, labels, reg=0.1)
        scores = ovr_scores(model, f)
        pred = model.classes[np.argmax(scores, axis=1)]
        pred_scaled = model.classes[np.argmax(3.7 * scores, axis=1)]
        np.testing.assert_array_equal(pred, pred_scaled)

    def test_two_class_reduction(self):
        rng = np.random.default_rng(11)
        f = rng.normal(size=(40, 5))
        labels = rng.choice([0, 1], size=40)
        ovr = ovr_fit(f, labels, reg=0.2)
        binary = fit_centered(f, np.where(labels == 1, 1.0, -1.0), reg=0.2)
        pred_ovr = ovr_predict(ovr, f)
        pred_bin = (classify(predict(binary, f)) == 1).astype(int)
        np.testing.assert_array_equal(pred_ovr, pred_bin)

    def test_missing_class_rejected(self):
        with pytest.raises(DegenerateDataError, match="classes"):
            ovr_fit(np.eye(3), np.array([3, 3, 3]), reg=0.1)


class TestMetrics:
    def test_all_above_margin(self):
        m = metrics(np.array([2.0, 3.0]), np.array([1.0, 1.0]), margin=1.0)
        assert m.accuracy == 1.0 and m.risk == 0.0 and m.margin_risk == 0.0

    def test_all_wrong(self):
        m = metrics(np.array([-1.0, 0.0]), np.array([1.0, 1.0]), margin=1.0)
        # score 0 counts accurate under >= 0 but carries full margin loss
        assert m.accuracy == 0.5
        assert m.margin_risk == 1.0

    def test_linear_branch(self):
        m = metrics(np.array([0.5]), np.array([1.0]), margin=1.0)
        assert m.margin_risk == pytest.approx(0.5)

    def test_risk_sandwich(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            scores = rng.normal(size=50)
            y = rng.choice([-1.0, 1.0], size=50)
            eta = rng.uniform(0.1, 2.0)
            m = metrics(scores, y, margin=eta)
            upper = np.mean(y * scores <= eta)
            assert m.risk <= m.margin_risk + 1e-12
            assert m.margin_risk <= upper + 1e-12

    def test_margin_loss_piecewise(self):
        eta = 0.8
        np.testing.assert_allclose(
            margin_loss(np.array([-0.5, 0.0, 0.4, 0.8, 2.0]), eta),
            [1.0, 1.0, 0.5, 0.0, 0.0],
        )

    def test_margin_validation(self):
        with pytest.raises(ValueError):
            metrics(np.array([1.0]), np.array([1.0]), margin=0.0)


class TestNoiseRegularization:
    def test_zero_noise_exact(self):
        rng = np.random.default_rng(13)
        f = rng.normal(size=(20, 4))
        y = rng.choice([-1.0, 1.0], size=20)
        report = noise_regularization_check(f, y, reg=0.1, sigma_meas=0.0, n_draws=100)
        assert report.max_abs_deviation == 0.0

    def test_monte_carlo_equivalence(self):
        rng = np.random.default_rng(14)
        f = rng.normal(size=(40, 6))
        y = rng.choice([-1.0, 1.0], size=40)
        report = noise_regularization_check(
            f, y, reg=0.01, sigma_meas=0.05, n_draws=500, seed=15
        )
        assert report.max_deviation_over_se <= 3.0

    def test_deviation_shrinks_with_draws(self):
        rng = np.random.default_rng(16)
        f = rng.normal(size=(25, 4))
        y = rng.choice([-1.0, 1.0], size=25)
        devs = {}
        for n_draws in (200, 3200):
            report = noise_regularization_check(
                f, y, reg=0.02, sigma_meas=0.05, n_draws=n_draws, seed=17
            )
            devs[n_draws] = report.max_abs_deviation
        # 16x draws -> ~4x smaller MC error, allow a factor-2 slack
        assert devs[3200] < devs[200] / 2

    def test_min_draws_enforced(self):
        with pytest.raises(ValueError, match="n_draws"):
            noise_regularization_check(np.eye(3), np.ones(3), 0.1, 0.1, n_draws=10)
