"""Federated gradient descent for a ridge-regularised linear model.

Partial gradients are unnormalised (``X^T X Theta - X^T Y``); the server
divides their sum by the global sample count m.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from mdpcfl.errors import DimensionMismatch, NonFiniteGradient

DEFAULT_MU = 6.0
DEFAULT_LAMBDA = 9e-6
DEFAULT_SCHEDULE = ((200, 0.8), (350, 0.8))


@dataclass
class LocalData:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.Y.ndim != 2 or self.X.shape[0] != self.Y.shape[0]:
            raise DimensionMismatch(f"X {self.X.shape} and Y {self.Y.shape} disagree")

    @property
    def n_i(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def c(self) -> int:
        return self.Y.shape[1]


@dataclass
class ModelState:
    Theta: np.ndarray
    Theta1: np.ndarray
    epoch: int = 1
    mu: float = DEFAULT_MU
    lam: float = DEFAULT_LAMBDA
    schedule: tuple = field(default=DEFAULT_SCHEDULE)

    @classmethod
    def zeros(cls, d, c, **kw) -> ModelState:
        return cls(np.zeros((d, c)), np.zeros((d, c)), **kw)

    def mu_at(self, epoch: int | None = None) -> float:
        """Learning rate for the step taken at ``epoch``; a schedule entry applies from its epoch on."""
        e = self.epoch if epoch is None else epoch
        mu = self.mu
        for at, factor in self.schedule:
            if e >= at:
                mu *= factor
        return mu

    @property
    def vartheta(self) -> np.ndarray:
        return self.Theta - self.Theta1


def compute_gram(data: LocalData) -> np.ndarray:
    return data.X.T @ data.X


def first_gradient(data: LocalData, theta1=None) -> np.ndarray:
    """Partial gradient at the initial model; -X^T Y for Theta1 = 0."""
    if theta1 is None or not np.any(theta1):
        return -(data.X.T @ data.Y)
    return local_gradient(data, theta1)


def local_gradient(data: LocalData, theta) -> np.ndarray:
    return data.X.T @ (data.X @ theta) - data.X.T @ data.Y


def aggregate_and_update(partials, model: ModelState, m: int) -> ModelState:
    partials = list(partials)
    if not partials:
        raise ValueError("need at least one partial gradient")
    total = np.sum(partials, axis=0)
    if not np.all(np.isfinite(total)):
        raise NonFiniteGradient(f"non-finite aggregate at epoch {model.epoch}")
    return update_from_aggregate(total / m, model)


def update_from_aggregate(grad_mean, model: ModelState) -> ModelState:
    """Step with an already normalised data gradient (sum of partials / m)."""
    step = model.mu_at() * (grad_mean + model.lam * model.Theta)
    return replace(model, Theta=model.Theta - step, epoch=model.epoch + 1)


def loss(theta, data: LocalData, lam: float) -> float:
    resid = data.X @ theta - data.Y
    return float(0.5 * np.sum(resid * resid) / data.n_i + 0.5 * lam * np.sum(theta * theta))


def accuracy(theta, data: LocalData) -> float:
    pred = np.argmax(data.X @ theta, axis=1)
    return float(np.mean(pred == np.argmax(data.Y, axis=1)))


def evaluate(model: ModelState, test: LocalData) -> tuple[float, float]:
    return loss(model.Theta, test, model.lam), accuracy(model.Theta, test)


def minibatch_baseline_step(data: LocalData, theta, batch_fraction: float, seed) -> np.ndarray:
    """Batch gradient rescaled by n_i / b so its mean is the full partial gradient."""
    if not 0 < batch_fraction <= 1:
        raise ValueError("batch_fraction must be in (0, 1]")
    b = math.ceil(batch_fraction * data.n_i)
    if b == data.n_i:
        return local_gradient(data, theta)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = np.sort(rng.choice(data.n_i, b, replace=False))
    xb, yb = data.X[idx], data.Y[idx]
    return (data.n_i / b) * (xb.T @ (xb @ theta) - xb.T @ yb)


def centralized_trajectory(parts, model: ModelState, epochs: int) -> list:
    """Plain full-batch gradient descent; returns Theta at epochs 1..epochs+1."""
    m = sum(p.n_i for p in parts)
    out = [model.Theta.copy()]
    for _ in range(epochs):
        model = aggregate_and_update([local_gradient(p, model.Theta) for p in parts], model, m)
        out.append(model.Theta.copy())
    return out
