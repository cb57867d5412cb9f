"""Problem builders for the bundled experiments."""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError
from .model import GaussianKernels, LinearFeatures, NegLogLoss, Problem, SquaredLoss, TanhNeurons

__all__ = [
    "make_student_teacher",
    "make_density_problem",
    "make_toy1d",
    "toy1d_fixed_point",
    "sphere_inputs",
]


def sphere_inputs(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def make_student_teacher(
    n: int,
    d: int,
    teacher_width: int = 10,
    seed: int = 0,
    lam: float = 0.01,
    lam_prime: float = 0.01,
) -> Problem:
    """Squared-loss regression of a random cosine teacher by tanh neurons.

    Inputs are uniform on the unit sphere of ``R^d``. The teacher is
    ``y(x) = (1/W) sum_j cos(w_j . x + b_j)`` with ``w_j ~ N(0, I)`` and phases
    ``b_j ~ U[0, 2 pi)``; the phase gives the labels an odd part, which the odd
    tanh student can represent. ``teacher_width=0`` yields all-zero labels.
    """
    if n < 1 or d < 1:
        raise ConfigError("need n >= 1 and d >= 1")
    rng = np.random.default_rng(seed)
    x = sphere_inputs(n, d, rng)
    if teacher_width > 0:
        w = rng.standard_normal((teacher_width, d))
        b = rng.uniform(0.0, 2.0 * np.pi, teacher_width)
        y = np.cos(x @ w.T + b).mean(axis=1)
    else:
        y = np.zeros(n)
    return Problem(SquaredLoss(y), TanhNeurons(x), lam, lam_prime)


def make_density_problem(observations, sigma: float, lam: float = 0.01, lam_prime: float = 0.01) -> Problem:
    """Gaussian-mixture maximum likelihood: ``-log`` losses on kernel features."""
    zeta = np.asarray(observations, dtype=float)
    if zeta.ndim == 1:
        zeta = zeta[:, None]
    return Problem(
        NegLogLoss(len(zeta), floor=1e-12), GaussianKernels(zeta, sigma), lam, lam_prime
    )


def make_toy1d(target: float = 0.0, lam: float = 0.1, lam_prime: float = 0.1) -> Problem:
    """``n = 1``, ``h(theta) = theta``, squared loss to ``target``."""
    return Problem(SquaredLoss([target]), LinearFeatures([[1.0]]), lam, lam_prime)


def toy1d_fixed_point(target: float, lam_prime: float) -> float:
    """Self-consistent mean of the 1-D toy, found by scalar root bracketing.

    Given ``H``, the Gibbs measure is Gaussian with mean ``-(H - target) / (2 lam')``;
    the fixed point solves ``H = mean(H)``.
    """
    def residual(H):
        return H - gibbs_gaussian_moments(H, target, 1.0, lam_prime)[0]

    bound = abs(target) + 1.0
    return float(brentq(residual, -bound, bound, xtol=1e-15, rtol=4 * np.finfo(float).eps))


def gibbs_gaussian_moments(H: float, target: float, lam: float, lam_prime: float) -> tuple[float, float]:
    """Mean and variance of the 1-D toy's Gibbs measure for averages ``H``."""
    return -(H - target) / (2.0 * lam_prime), lam / (2.0 * lam_prime)


def radial_target(width: int, height: int) -> np.ndarray:
    """Synthetic grayscale target: bright centre fading linearly to the corners."""
    yy, xx = np.mgrid[0:height, 0:width]
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    r = np.hypot((xx - cx) / max(cx, 1.0), (yy - cy) / max(cy, 1.0)) / math.sqrt(2.0)
    return np.clip(1.0 - r, 0.0, 1.0)
