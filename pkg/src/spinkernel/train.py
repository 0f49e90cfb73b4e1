"""Closed-form least-squares classifiers and risk metrics.

The primal solve works on (F^T F + n lambda I) when the feature count is
at most the sample count and switches to the dual Gram form otherwise
(full tomography gives P = 4^N which can exceed n).  Both paths are
Cholesky solves, never explicit inversion, and agree to high precision.
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import DegenerateDataError


@dataclass
class TrainedModel:
    """Affine scorer f(x) = w . (phi(x) - feature_means) + intercept."""

    weights: np.ndarray
    intercept: float
    reg: float
    feature_means: np.ndarray
    layout: str = "raw"

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.feature_means = np.asarray(self.feature_means, dtype=float)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise ValueError("model parameters must be finite")

    def to_json(self):
        return json.dumps(
            {
                "weights": self.weights.tolist(),
                "intercept": self.intercept,
                "reg": self.reg,
                "feature_means": self.feature_means.tolist(),
                "layout": self.layout,
            }
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            weights=np.array(d["weights"]),
            intercept=float(d["intercept"]),
            reg=float(d["reg"]),
            feature_means=np.array(d["feature_means"]),
            layout=d["layout"],
        )


@dataclass
class Metrics:
    """Classification metrics at a margin eta."""

    accuracy: float
    risk: float
    margin_risk: float


def _ridge_solve(f, y, reg):
    """w = (F^T F + n reg I)^-1 F^T y via primal or dual Cholesky."""
    n, p = f.shape
    shift = n * reg
    try:
        if p <= n:
            a = f.T @ f
            a[np.diag_indices_from(a)] += shift
            return cho_solve(cho_factor(a), f.T @ y)
        a = f @ f.T
        a[np.diag_indices_from(a)] += shift
        return f.T @ cho_solve(cho_factor(a), y)
    except LinAlgError as exc:
        raise DegenerateDataError(
            "singular normal equations (rank-deficient features at reg = "
            f"{reg!r}); use reg > 0"
        ) from exc


def fit(features, labels, reg):
    """Ridge solution with the bias inside the weight vector.

    Minimises (1/2n) sum (y_i - w.phi_i)^2 + (reg/2) |w|^2; any constant
    feature column is regularised like every other coordinate.
    """
    f = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if reg < 0:
        raise ValueError("reg must be >= 0")
    if f.ndim != 2 or f.shape[0] != y.shape[0] or f.shape[0] < 1:
        raise ValueError("features must be (n, P) matching labels")
    w = _ridge_solve(f, y, reg)
    return TrainedModel(
        weights=w,
        intercept=0.0,
        reg=float(reg),
        feature_means=np.zeros(f.shape[1]),
    )


def fit_centered(features, labels, reg):
    """Centered ridge with an unregularised intercept.

    Centers labels and features on their training means, solves the
    centered problem, and reconstructs the intercept as
    b = mean(y) - w . mean(phi).  Equivalent to jointly minimising over
    (w, b) with b outside the penalty.
    """
    f = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if reg < 0:
        raise ValueError("reg must be >= 0")
    if f.ndim != 2 or f.shape[0] != y.shape[0] or f.shape[0] < 1:
        raise ValueError("features must be (n, P) matching labels")
    means = f.mean(axis=0)
    y_mean = float(y.mean())
    w = _ridge_solve(f - means, y - y_mean, reg)
    return TrainedModel(
        weights=w,
        intercept=y_mean,
        reg=float(reg),
        feature_means=means,
    )


def predict(model, features):
    """Affine scores for a feature matrix (or a single vector)."""
    f = np.asarray(features, dtype=float)
    single = f.ndim == 1
    if single:
        f = f[None]
    if f.shape[1] != model.weights.shape[0]:
        raise ValueError(
            f"layout mismatch: model expects {model.weights.shape[0]} features, "
            f"got {f.shape[1]}"
        )
    scores = (f - model.feature_means) @ model.weights + model.intercept
    return float(scores[0]) if single else scores


def classify(scores):
    """Sign decision; a score of exactly 0 is classified as +1."""
    return np.where(np.asarray(scores) >= 0.0, 1, -1)


@dataclass
class OvRModel:
    """One-vs-rest bundle: one binary model per class, ascending labels."""

    classes: np.ndarray
    models: list = field(default_factory=list)


def ovr_fit(features, labels, reg, centered=True):
    """One binary +/-1 ridge classifier per class."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise DegenerateDataError(
            f"one-vs-rest needs >= 2 classes in training data, got {classes.tolist()}"
        )
    fitter = fit_centered if centered else fit
    models = [
        fitter(features, np.where(labels == c, 1.0, -1.0), reg) for c in classes
    ]
    return OvRModel(classes=classes, models=models)


def ovr_scores(model, features):
    """(n, n_classes) score matrix, columns in ascending class order."""
    return np.stack([predict(m, features) for m in model.models], axis=1)


def ovr_predict(model, features):
    """Argmax class; ties resolve to the smallest class label."""
    scores = ovr_scores(model, features)
    return model.classes[np.argmax(scores, axis=1)]


def margin_loss(margins, eta):
    """Piecewise margin loss: 1 below 0, linear ramp on [0, eta], 0 above."""
    m = np.asarray(margins, dtype=float)
    return np.clip(1.0 - m / eta, 0.0, 1.0)


def metrics(scores, labels, margin=1.0):
    """Accuracy, risk and margin risk of binary scores vs +/-1 labels.

    A margin of exactly 0 counts as accurate (y f >= 0) but carries full
    margin loss (Phi(0) = 1); both conventions are fixed here.
    """
    if margin <= 0:
        raise ValueError("margin must be > 0")
    y = np.asarray(labels, dtype=float)
    m = y * np.asarray(scores, dtype=float)
    accuracy = float(np.mean(m >= 0.0))
    margin_risk = float(np.mean(margin_loss(m, margin)))
    return Metrics(accuracy=accuracy, risk=1.0 - accuracy, margin_risk=margin_risk)


@dataclass
class NoiseRegReport:
    """Monte Carlo check of the lambda <-> lambda + sigma^2 equivalence."""

    mean_weights: np.ndarray
    reference_weights: np.ndarray
    standard_errors: np.ndarray
    max_abs_deviation: float
    max_deviation_over_se: float
    n_draws: int


def noise_regularization_check(features, labels, reg, sigma_meas, n_draws, seed=0):
    """Compare noisy-feature fits against the lambda + sigma^2 clean fit.

    Averages fit() weights over ``n_draws`` datasets with i.i.d.
    N(0, sigma^2) added to every feature entry, and reports the deviation
    from the clean fit at reg + sigma^2 together with its Monte Carlo
    standard error.
    """
    if n_draws < 100:
        raise ValueError("n_draws must be >= 100 for a meaningful check")
    f = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    if sigma_meas == 0.0:
        w = fit(f, y, reg).weights
        zeros = np.zeros_like(w)
        return NoiseRegReport(w.copy(), w, zeros, 0.0, 0.0, n_draws)
    rng = np.random.default_rng(seed)
    draws = np.empty((n_draws, f.shape[1]))
    for d in range(n_draws):
        noisy = f + rng.normal(0.0, sigma_meas, size=f.shape)
        draws[d] = fit(noisy, y, reg).weights
    mean_w = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / np.sqrt(n_draws)
    ref = fit(f, y, reg + sigma_meas**2).weights
    dev = np.abs(mean_w - ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    return NoiseRegReport(
        mean_weights=mean_w,
        reference_weights=ref,
        standard_errors=se,
        max_abs_deviation=float(dev.max()),
        max_deviation_over_se=float(ratio.max()),
        n_draws=n_draws,
    )
