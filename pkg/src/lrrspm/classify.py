"""One-vs-rest linear SVM (L2-regularized, L1 hinge) and macro accuracy."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class SvmParams:
    c_reg: float = 1.0
    max_epochs: int = 50
    tol: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not self.c_reg > 0:
            raise InvalidInputError("c_reg must be positive")
        if self.max_epochs < 1:
            raise InvalidInputError("max_epochs must be >= 1")


@dataclass(frozen=True, eq=False)
class LinearModel:
    weights: np.ndarray  # (s, d)
    bias: np.ndarray  # (s,)
    class_names: tuple[str, ...]

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        if not (W.shape[0] == b.shape[0] == len(self.class_names)):
            raise InvalidInputError("weights, bias and class names disagree in count")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise InvalidInputError("model parameters must be finite")

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]


@dataclass
class SvmFit:
    model: LinearModel
    dual: np.ndarray  # (n, s) dual variables per binary problem
    epochs: np.ndarray  # epochs used per class


def as_matrix(features) -> np.ndarray:
    """Stack PyramidFeatures (or rows) into an ``(n, d)`` array."""
    if isinstance(features, np.ndarray):
        F = features
    else:
        F = [getattr(f, "values", f) for f in features]
        if len({np.shape(f) for f in F}) > 1:
            raise InvalidInputError("features differ in dimension")
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[None, :]
    return F


def svm_fit(features, labels, params: SvmParams = SvmParams(), class_names=None) -> SvmFit:
    """Dual coordinate descent for every one-vs-rest problem.

    The binary problems share one seeded permutation per epoch, so running
    them together is the same as running each alone with that seed. A
    class stops updating once its projected-gradient spread over an epoch
    drops below ``tol``. The bias is the weight of an appended constant 1.
    """
    X = as_matrix(features)
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise InvalidInputError("feature and label counts differ")
    if class_names is None:
        class_names = [str(c) for c in range(int(y.max()) + 1)]
    s = len(class_names)
    if y.min() < 0 or y.max() >= s:
        raise InvalidInputError("label outside the class list")
    if np.unique(y).size < 2:
        raise InvalidInputError("training needs at least two classes")
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    Y = np.where(y[:, None] == np.arange(s)[None, :], 1.0, -1.0)
    Q = np.einsum("ij,ij->i", Xa, Xa)
    C = params.c_reg
    alpha = np.zeros((n, s))
    W = np.zeros((s, d + 1))
    active = np.ones(s, dtype=bool)
    epochs = np.zeros(s, dtype=np.int64)
    rng = np.random.default_rng(params.seed)
    for _ in range(params.max_epochs):
        if not active.any():
            break
        epochs[active] += 1
        pg_max = np.full(s, -np.inf)
        pg_min = np.full(s, np.inf)
        for i in rng.permutation(n):
            xi = Xa[i]
            yi = Y[i]
            ai = alpha[i]
            g = yi * (W @ xi) - 1.0
            pg = np.where(ai <= 0.0, np.minimum(g, 0.0), np.where(ai >= C, np.maximum(g, 0.0), g))
            pg_max = np.maximum(pg_max, np.where(active, pg, -np.inf))
            pg_min = np.minimum(pg_min, np.where(active, pg, np.inf))
            step = active & (pg != 0.0)
            if not step.any():
                continue
            new = np.clip(ai - g / Q[i], 0.0, C)
            delta = np.where(step, new - ai, 0.0)
            alpha[i] = ai + delta
            W += np.outer(delta * yi, xi)
        active &= (pg_max - pg_min) >= params.tol
    model = LinearModel(W[:, :d].copy(), W[:, d].copy(), tuple(class_names))
    return SvmFit(model, alpha, epochs)


def svm_train(features, labels, params: SvmParams = SvmParams(), class_names=None) -> LinearModel:
    return svm_fit(features, labels, params, class_names).model


def primal_objective(w_aug: np.ndarray, X: np.ndarray, y_pm: np.ndarray, c_reg: float) -> float:
    """``1/2 ||w||^2 + C sum max(0, 1 - y w.x)`` with the bias inside ``w``."""
    Xa = np.hstack([X, np.ones((X.shape[0], 1))])
    margins = 1.0 - y_pm * (Xa @ w_aug)
    return float(0.5 * w_aug @ w_aug + c_reg * np.maximum(margins, 0.0).sum())


def decision_scores(model: LinearModel, features) -> np.ndarray:
    X = as_matrix(features)
    if X.shape[1] != model.feature_dim:
        raise InvalidInputError(f"feature dim {X.shape[1]} != model dim {model.feature_dim}")
    return X @ model.weights.T + model.bias


def svm_predict(model: LinearModel, feature) -> tuple[int, np.ndarray]:
    """Best class (lowest index on ties) and the score vector."""
    scores = decision_scores(model, feature)[0]
    return int(np.argmax(scores)), scores


def predict_many(model: LinearModel, features) -> np.ndarray:
    return np.argmax(decision_scores(model, features), axis=1)


@dataclass
class EvalReport:
    per_class_accuracy: list[float | None]
    mean_accuracy: float
    overall_accuracy: float
    confusion: np.ndarray  # rows: true class, cols: predicted
    absent_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class_accuracy": self.per_class_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "overall_accuracy": self.overall_accuracy,
            "confusion": self.confusion.tolist(),
            "absent_classes": self.absent_classes,
        }


def evaluate_predictions(pred, truth, n_classes: int) -> EvalReport:
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if truth.size == 0:
        raise InvalidInputError("empty test set")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, pred), 1)
    support = confusion.sum(axis=1)
    per_class: list[float | None] = []
    absent = []
    for c in range(n_classes):
        if support[c] == 0:
            per_class.append(None)
            absent.append(c)
        else:
            per_class.append(float(confusion[c, c] / support[c]))
    rates = [r for r in per_class if r is not None]
    return EvalReport(
        per_class_accuracy=per_class,
        mean_accuracy=float(np.mean(rates)),
        overall_accuracy=float(np.trace(confusion) / truth.size),
        confusion=confusion,
        absent_classes=absent,
    )


def evaluate(model: LinearModel, features, labels) -> EvalReport:
    """Per-class rates and their unweighted mean (the headline metric)."""
    return evaluate_predictions(predict_many(model, features), labels, model.n_classes)
