"""Finite-sum problem definition: scalar losses, feature maps, objective pieces.

The objective over a probability measure ``mu`` on ``R^d`` is

    L(mu) = (1/n) sum_i loss_i(E_mu[h_i]) + lam' E_mu[|theta|^2] + lam Ent(mu)

Losses and feature maps are stored as vectorized families: one object holds
all ``n`` terms so a single call evaluates every index for a batch of
particles.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy

from .errors import ConfigError, DomainError

__all__ = [
    "ScalarLoss",
    "SquaredLoss",
    "LogisticLoss",
    "NegLogLoss",
    "FeatureMap",
    "TanhNeurons",
    "LinearFeatures",
    "GaussianKernels",
    "Problem",
    "loss_eval",
    "loss_conjugate",
    "f0_value",
    "predictor_value",
    "check_ensemble",
]


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


class ScalarLoss:
    """A family of ``n`` convex scalar losses evaluated elementwise.

    Subclasses implement ``value``, ``deriv``, ``second_deriv`` and
    ``conjugate``. Inputs broadcast against the per-term parameters, so a
    scalar loss (``n == 1``) can be evaluated at a scalar ``z``.
    """

    n: int

    def value(self, z):
        raise NotImplementedError

    def deriv(self, z):
        raise NotImplementedError

    def second_deriv(self, z):
        raise NotImplementedError

    def conjugate(self, g):
        raise NotImplementedError

    def in_domain(self, z) -> np.ndarray:
        return np.isfinite(np.asarray(z, dtype=float))


class SquaredLoss(ScalarLoss):
    """``0.5 * weight * (z - target)^2``.

    ``weight=2`` gives the plain squared error ``(z - target)^2``.
    """

    def __init__(self, targets, weight: float = 1.0):
        self.targets = np.atleast_1d(np.asarray(targets, dtype=float))
        if weight <= 0:
            raise ConfigError("squared loss weight must be positive")
        self.weight = float(weight)
        self.n = self.targets.size

    def value(self, z):
        return 0.5 * self.weight * (np.asarray(z, dtype=float) - self.targets) ** 2

    def deriv(self, z):
        return self.weight * (np.asarray(z, dtype=float) - self.targets)

    def second_deriv(self, z):
        return np.broadcast_to(self.weight, np.broadcast(np.asarray(z), self.targets).shape).astype(float)

    def conjugate(self, g):
        g = np.asarray(g, dtype=float)
        return 0.5 * g**2 / self.weight + self.targets * g


class LogisticLoss(ScalarLoss):
    """``log(1 + exp(-label * z))`` with labels in {-1, +1}."""

    def __init__(self, labels):
        self.labels = np.atleast_1d(np.asarray(labels, dtype=float))
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ConfigError("logistic labels must be -1 or +1")
        self.n = self.labels.size

    def value(self, z):
        return np.logaddexp(0.0, -self.labels * np.asarray(z, dtype=float))

    def deriv(self, z):
        return -self.labels * expit(-self.labels * np.asarray(z, dtype=float))

    def second_deriv(self, z):
        yz = self.labels * np.asarray(z, dtype=float)
        return self.labels**2 * expit(yz) * expit(-yz)

    def conjugate(self, g):
        # u = -g*y in [0, 1]; conjugate is the negative binary entropy of u.
        u = -np.asarray(g, dtype=float) * self.labels
        if np.any((u < 0.0) | (u > 1.0)):
            raise DomainError("logistic conjugate needs g*label in [-1, 0]")
        return xlogy(u, u) + xlogy(1.0 - u, 1.0 - u)


class NegLogLoss(ScalarLoss):
    """``-log z`` on ``z > 0`` (negative log-likelihood of a mixture density).

    ``floor`` clips ``z`` from below in ``deriv`` only, since ``-1/z`` is unbounded
    near zero; values and conjugates stay strict.
    """

    def __init__(self, n: int = 1, floor: float | None = None):
        self.n = int(n)
        self.floor = floor

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0.0):
            raise DomainError("negative log loss is only defined for z > 0")
        return z

    def in_domain(self, z):
        return np.asarray(z, dtype=float) > 0.0

    def value(self, z):
        return -np.log(self._check(z)) * np.ones(self.n)

    def deriv(self, z):
        if self.floor is not None:
            z = np.maximum(np.asarray(z, dtype=float), self.floor)
        return -1.0 / self._check(z) * np.ones(self.n)

    def second_deriv(self, z):
        return 1.0 / self._check(z) ** 2 * np.ones(self.n)

    def conjugate(self, g):
        g = np.asarray(g, dtype=float)
        if np.any(g >= 0.0):
            raise DomainError("negative log conjugate needs g < 0")
        return (-1.0 - np.log(-g)) * np.ones(self.n)


def loss_eval(loss: ScalarLoss, z):
    """Return ``(value, first derivative, second derivative)`` at ``z``."""
    return loss.value(z), loss.deriv(z), loss.second_deriv(z)


def loss_conjugate(loss: ScalarLoss, g):
    return loss.conjugate(g)


# ---------------------------------------------------------------------------
# Feature maps
# ---------------------------------------------------------------------------


class FeatureMap:
    """A family ``h_1..h_n : R^d -> R``.

    ``values(X)`` maps particles ``(m, d)`` to ``(m, n)``.
    ``weighted_grad(X, w)`` returns ``sum_i w_i grad h_i(theta_r)`` per row,
    shape ``(m, d)``; this is the only gradient the samplers need, and it
    avoids materializing an ``(m, n, d)`` Jacobian.
    """

    n: int
    d: int
    sup_bound: float | None = None

    def values(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def weighted_grad(self, X: np.ndarray, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        """Gradients of every ``h_i`` at a single point, shape ``(n, d)``."""
        theta = np.asarray(theta, dtype=float).reshape(1, -1)
        eye = np.eye(self.n)
        return np.stack([self.weighted_grad(theta, eye[i])[0] for i in range(self.n)])


class TanhNeurons(FeatureMap):
    """Mean-field neurons ``h_i(theta) = tanh(theta . x_i)``."""

    sup_bound = 1.0

    def __init__(self, inputs):
        self.inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
        self.n, self.d = self.inputs.shape

    def values(self, X):
        return np.tanh(np.asarray(X, dtype=float) @ self.inputs.T)

    def weighted_grad(self, X, w):
        t = self.values(X)
        return ((1.0 - t * t) * np.asarray(w, dtype=float)) @ self.inputs

    def jacobian(self, theta):
        t = self.values(np.reshape(theta, (1, -1)))[0]
        return (1.0 - t * t)[:, None] * self.inputs


class LinearFeatures(FeatureMap):
    """``h_i(theta) = a_i . theta``; ``LinearFeatures([[1.0]])`` is ``h(theta) = theta_1``."""

    def __init__(self, coeffs):
        self.coeffs = np.atleast_2d(np.asarray(coeffs, dtype=float))
        self.n, self.d = self.coeffs.shape

    def values(self, X):
        return np.asarray(X, dtype=float) @ self.coeffs.T

    def weighted_grad(self, X, w):
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(np.asarray(w, dtype=float) @ self.coeffs, X.shape).copy()

    def jacobian(self, theta):
        return self.coeffs.copy()


class GaussianKernels(FeatureMap):
    """Normalized Gaussian bumps ``h_i(theta) = N(theta; center_i, sigma^2 I)``."""

    def __init__(self, centers, sigma: float):
        if sigma <= 0:
            raise ConfigError("kernel bandwidth must be positive")
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.n, self.d = self.centers.shape
        self.sigma = float(sigma)
        self.sup_bound = (2.0 * np.pi * self.sigma**2) ** (-self.d / 2)

    def _sqdist(self, X):
        X = np.asarray(X, dtype=float)
        return (
            np.sum(X * X, axis=1)[:, None]
            - 2.0 * X @ self.centers.T
            + np.sum(self.centers**2, axis=1)[None, :]
        ).clip(min=0.0)

    def values(self, X):
        return self.sup_bound * np.exp(-0.5 * self._sqdist(X) / self.sigma**2)

    def weighted_grad(self, X, w):
        X = np.asarray(X, dtype=float)
        hw = self.values(X) * np.asarray(w, dtype=float)
        # sum_i w_i h_i (center_i - theta) / sigma^2
        return (hw @ self.centers - hw.sum(axis=1)[:, None] * X) / self.sigma**2


# ---------------------------------------------------------------------------
# Problem
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Problem:
    """``(1/n) sum_i loss_i(E[h_i]) + lam_prime E|theta|^2 + lam Ent``."""

    loss: ScalarLoss
    features: FeatureMap
    lam: float
    lam_prime: float

    def __post_init__(self):
        if self.loss.n != self.features.n:
            raise ConfigError(
                f"loss has {self.loss.n} terms but features have {self.features.n}"
            )
        if self.features.n < 1 or self.features.d < 1:
            raise ConfigError("need n >= 1 and d >= 1")
        if not self.lam > 0:
            raise ConfigError("entropy weight lam must be > 0")
        if self.lam_prime < 0:
            raise ConfigError("l2 weight lam_prime must be >= 0")

    @property
    def n(self) -> int:
        return self.features.n

    @property
    def d(self) -> int:
        return self.features.d

    def coefficients(self, H) -> np.ndarray:
        """``g_i = loss_i'(H_i)``, the coefficients of the proximal Gibbs potential."""
        return np.asarray(self.loss.deriv(np.asarray(H, dtype=float)), dtype=float)


def f0_value(problem: Problem, H) -> float:
    """Data term ``(1/n) sum_i loss_i(H_i)``."""
    H = np.asarray(H, dtype=float)
    if H.shape != (problem.n,):
        raise ConfigError(f"expected {problem.n} averages, got shape {H.shape}")
    return float(np.mean(problem.loss.value(H)))


def predictor_value(particles, features: FeatureMap) -> np.ndarray:
    """Particle-averaged prediction ``(1/m) sum_r h_i(theta_r)`` for every ``i``."""
    X = check_ensemble(particles)
    return features.values(X).mean(axis=0)


def check_ensemble(particles) -> np.ndarray:
    X = np.asarray(particles, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise ConfigError("an ensemble is a non-empty (m, d) array")
    if not np.all(np.isfinite(X)):
        raise ConfigError("ensemble contains non-finite coordinates")
    return X
