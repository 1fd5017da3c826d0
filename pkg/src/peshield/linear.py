"""Logistic regression on standardized features.

Plain batch gradient descent with Armijo backtracking, so the training loss
is non-increasing by construction. Runs for up to 10000 iterations by default
or until the gradient norm drops below tol. No penalty by default; ``l2``
adds 0.5 * l2 * ||w||^2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingleClass
from .features import Standardizer, fit_standardizer
from .gbdt import log_loss, sigmoid


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    standardizer: Standardizer
    train_loss: list[float]

    @property
    def n_features(self) -> int:
        return len(self.weights)

    def margin(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"input has {X.shape[1]} features, model expects {self.n_features}"
            )
        return self.standardizer.transform(X) @ self.weights + self.bias

    def score(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.margin(X))


def loss_and_gradient(
    w: np.ndarray, b: float, Xs: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, np.ndarray, float]:
    """Mean log-loss (plus optional ridge term) and its gradient in (w, b)."""
    p = sigmoid(Xs @ w + b)
    loss = log_loss(y, p) + 0.5 * l2 * float(w @ w)
    residual = (p - y) / len(y)
    grad_w = Xs.T @ residual + l2 * w
    grad_b = float(residual.sum())
    return loss, grad_w, grad_b


def train_logistic(
    X: np.ndarray,
    y: np.ndarray,
    max_iterations: int = 10000,
    tol: float = 1e-6,
    l2: float = 0.0,
) -> LogisticModel:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise DimensionMismatch(f"X has {len(X)} rows but y has {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise SingleClass("training labels contain a single class")

    standardizer = fit_standardizer(X)
    Xs = standardizer.transform(X)
    w = np.zeros(X.shape[1])
    b = 0.0
    step = 1.0
    loss, grad_w, grad_b = loss_and_gradient(w, b, Xs, y, l2)
    history = [loss]
    for _ in range(max_iterations):
        grad_sq = float(grad_w @ grad_w) + grad_b * grad_b
        if grad_sq**0.5 <= tol:
            break
        # Armijo backtracking keeps the loss monotone non-increasing.
        step = min(step * 2.0, 1e6)
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, gw_new, gb_new = loss_and_gradient(w_new, b_new, Xs, y, l2)
            if loss_new <= loss - 1e-4 * step * grad_sq or step < 1e-12:
                break
            step *= 0.5
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, gw_new, gb_new
        history.append(loss)
    return LogisticModel(weights=w, bias=b, standardizer=standardizer, train_loss=history)
