"""Desk-scale trainable tasks.

A task supplies ``init``, ``step`` and ``eval``. ``step`` follows the
differentiable surrogate objective while ``eval`` reports the metric the
population is ranked by, and the two need not agree. Scores are always
maximised, so loss-like metrics are negated.
"""

from __future__ import annotations

from typing import Optional, Protocol, Sequence

import numpy as np

from .core import HyperparamSpec, Prior, as_param_vector


class TaskFailure(RuntimeError):
    """A step or eval produced a non-finite value; the member is dead."""


class Task(Protocol):
    name: str
    dim: int
    hyperparam_specs: Sequence[HyperparamSpec]

    def init(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, theta: np.ndarray, h: dict, rng: np.random.Generator) -> np.ndarray: ...

    def eval(self, theta: np.ndarray, rng: np.random.Generator) -> float: ...


def _checked(theta: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(theta)):
        raise TaskFailure(f"{what} produced non-finite parameters")
    theta.setflags(write=False)
    return theta


# -- toy quadratic -----------------------------------------------------------


def quadratic_step(theta: np.ndarray, h: dict, lr: float) -> np.ndarray:
    """One gradient-ascent step on 1.2 - (h0*th0^2 + h1*th1^2)."""
    if lr <= 0:
        raise ValueError("lr must be positive")
    coef = np.array([h["h0"], h["h1"]], dtype=np.float64)
    return theta * (1.0 - 2.0 * lr * coef)


def quadratic_surrogate(theta: np.ndarray, h: dict) -> float:
    return 1.2 - (h["h0"] * theta[0] ** 2 + h["h1"] * theta[1] ** 2)


def quadratic_surrogate_grad(theta: np.ndarray, h: dict) -> np.ndarray:
    return -2.0 * np.array([h["h0"], h["h1"]]) * theta


def quadratic_eval(theta: np.ndarray) -> float:
    return float(1.2 - (theta[0] ** 2 + theta[1] ** 2))


def quadratic_explore_direction(h: dict, rng: np.random.Generator, sigma: float) -> dict:
    """Nudge each coefficient by Gaussian noise and clamp into [0, 1]."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    out = dict(h)
    for key in ("h0", "h1"):
        noise = float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0
        out[key] = min(max(float(h[key]) + noise, 0.0), 1.0)
    return out


class QuadraticToy:
    """The two-coefficient toy: train on the weighted surrogate, score on the
    true quadratic whose optimum is 1.2 at theta = 0."""

    name = "quadratic"
    dim = 2

    def __init__(self, lr: float = 0.01, theta0: Sequence[float] = (0.9, 0.9)):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.lr = float(lr)
        self.theta0 = as_param_vector(theta0)
        self.hyperparam_specs = (
            HyperparamSpec("h0", Prior("uniform", 0.0, 1.0)),
            HyperparamSpec("h1", Prior("uniform", 0.0, 1.0)),
        )

    def init(self, rng):
        return self.theta0.copy()

    def step(self, theta, h, rng):
        return _checked(quadratic_step(theta, h, self.lr), "quadratic step")

    def eval(self, theta, rng):
        return quadratic_eval(theta)


# -- noisy quadratic bowl ----------------------------------------------------


class NoisyQuadratic:
    """Gradient descent on 0.5 * theta' A theta with diagonal curvature ``A``.

    The learning rate is the only hyperparameter; it is stable below
    2 / max(curvature). Eval is the negated objective plus Gaussian noise, so
    windowed means and the t-test have something to average out.
    """

    name = "noisy_quadratic"

    def __init__(
        self,
        curvatures: Sequence[float] = (0.5, 1.0, 2.0, 3.0, 4.0),
        noise: float = 0.1,
        lr_range: tuple = (1e-3, 1.0),
        init_scale: float = 1.0,
    ):
        self.curvatures = np.asarray(curvatures, dtype=np.float64)
        if np.any(self.curvatures <= 0):
            raise ValueError("curvatures must be positive")
        if noise < 0:
            raise ValueError("noise must be non-negative")
        self.noise = float(noise)
        self.init_scale = float(init_scale)
        self.dim = len(self.curvatures)
        self.hyperparam_specs = (HyperparamSpec("lr", Prior("log-uniform", *lr_range)),)

    @property
    def stable_lr_bound(self) -> float:
        return 2.0 / float(self.curvatures.max())

    def objective(self, theta) -> float:
        with np.errstate(over="ignore"):
            return float(0.5 * np.sum(self.curvatures * theta * theta))

    def gradient(self, theta) -> np.ndarray:
        return self.curvatures * theta

    def init(self, rng):
        return _checked(rng.normal(0.0, self.init_scale, self.dim), "init")

    def step(self, theta, h, rng):
        with np.errstate(over="ignore", invalid="ignore"):
            new = theta - h["lr"] * self.gradient(theta)
        return _checked(new, "noisy quadratic step")

    def eval(self, theta, rng):
        score = -self.objective(theta)
        if self.noise > 0:
            score += float(rng.normal(0.0, self.noise))
        if not np.isfinite(score):
            raise TaskFailure("noisy quadratic eval is non-finite")
        return score


# -- logistic regression -----------------------------------------------------


def make_blobs(
    seed: int,
    n: int,
    dim: int,
    separation: float,
    label_noise: float = 0.0,
):
    """Two Gaussian class blobs with labels in {-1, +1}."""
    rng = np.random.default_rng(seed)
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    X = rng.normal(size=(n, dim)) + 0.5 * separation * y[:, None] * direction
    # Anisotropic feature scales make the learning rate matter.
    X *= np.geomspace(0.2, 5.0, dim)
    if label_noise > 0:
        flip = rng.random(n) < label_noise
        y = np.where(flip, -y, y)
    return X, y


def logistic_loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean log-loss plus 0.5 * l2 * |w|^2; the bias (last entry) is unregularized."""
    w, b = theta[:-1], theta[-1]
    margins = y * (X @ w + b)
    with np.errstate(over="ignore", invalid="ignore"):
        data = float(np.mean(np.logaddexp(0.0, -margins)))
        return data + 0.5 * l2 * float(w @ w)


def logistic_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    w, b = theta[:-1], theta[-1]
    margins = y * (X @ w + b)
    # d/dm log(1 + e^-m) = -sigmoid(-m)
    coef = -y * _sigmoid(-margins) / len(y)
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ coef + l2 * w
    grad[-1] = coef.sum()
    return grad


def _sigmoid(z):
    with np.errstate(over="ignore"):
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-z)), np.exp(z) / (1.0 + np.exp(z)))


class LogisticRegression:
    """Minibatch SGD on L2-regularised log-loss; scored by validation accuracy."""

    name = "logistic_regression"

    def __init__(
        self,
        data_seed: int = 0,
        dim: int = 10,
        n_train: int = 400,
        n_val: int = 400,
        separation: float = 2.0,
        label_noise: float = 0.05,
        batch_size: int = 32,
        lr_range: tuple = (1e-4, 1.0),
        l2_range: tuple = (1e-5, 1e-1),
    ):
        X, y = make_blobs(data_seed, n_train + n_val, dim, separation, label_noise)
        self.X_train, self.y_train = X[:n_train], y[:n_train]
        self.X_val, self.y_val = X[n_train:], y[n_train:]
        self.dim = dim + 1
        self.batch_size = batch_size
        self.hyperparam_specs = (
            HyperparamSpec("lr", Prior("log-uniform", *lr_range)),
            HyperparamSpec("l2", Prior("log-uniform", *l2_range)),
        )

    def init(self, rng):
        return _checked(rng.normal(0.0, 0.01, self.dim), "init")

    def step(self, theta, h, rng, batch: Optional[np.ndarray] = None):
        if batch is None:
            batch = rng.integers(0, len(self.y_train), self.batch_size)
        X, y = self.X_train[batch], self.y_train[batch]
        loss = logistic_loss(theta, X, y, h["l2"])
        if not np.isfinite(loss):
            raise TaskFailure(f"non-finite training loss {loss}")
        with np.errstate(over="ignore", invalid="ignore"):
            new = theta - h["lr"] * logistic_grad(theta, X, y, h["l2"])
        return _checked(new, "logistic regression step")

    def accuracy(self, theta, X, y) -> float:
        pred = np.where(X @ theta[:-1] + theta[-1] >= 0, 1.0, -1.0)
        return float(np.mean(pred == y))

    def eval(self, theta, rng):
        return self.accuracy(theta, self.X_val, self.y_val)


TASKS = {
    "quadratic": QuadraticToy,
    "noisy_quadratic": NoisyQuadratic,
    "logistic_regression": LogisticRegression,
}


def make_task(name: str, **constants) -> Task:
    try:
        cls = TASKS[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; choose from {sorted(TASKS)}") from None
    return cls(**constants)
