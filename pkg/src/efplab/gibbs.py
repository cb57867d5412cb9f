"""Proximal Gibbs measures and the Langevin Monte Carlo sampler.

For coefficients ``g`` the Gibbs measure has unnormalized density
``q_g(theta) = exp(-V_g(theta) / lam)`` with potential

    V_g(theta) = (1/n) sum_i g_i h_i(theta) + lam' |theta|^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .model import Problem, check_ensemble

__all__ = [
    "GibbsSpec",
    "LmcConfig",
    "potential_value",
    "potential_grad",
    "lmc_step",
    "sample_gibbs",
    "log_density_ratio",
    "particle_noise",
    "gaussian_init",
]

# Spawn-key tags keep the independent random streams of the package apart.
STREAM_LMC = 0
STREAM_INIT = 1
STREAM_MC = 2
STREAM_JITTER = 3


@dataclass(frozen=True)
class GibbsSpec:
    problem: Problem
    coeffs: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.coeffs, dtype=float).reshape(-1)
        if g.size != self.problem.n:
            raise ConfigError(f"need {self.problem.n} coefficients, got {g.size}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("Gibbs coefficients must be finite")
        object.__setattr__(self, "coeffs", g)

    @classmethod
    def from_averages(cls, problem: Problem, H) -> "GibbsSpec":
        """The proximal Gibbs spec of a measure with feature averages ``H``."""
        return cls(problem, problem.coefficients(H))

    @property
    def lam(self) -> float:
        return self.problem.lam

    @property
    def lam_prime(self) -> float:
        return self.problem.lam_prime

    def data_potential(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.problem.features.values(X) @ self.coeffs / self.problem.n

    def data_grad(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.problem.features.weighted_grad(X, self.coeffs) / self.problem.n


@dataclass(frozen=True)
class LmcConfig:
    """Unadjusted Langevin settings.

    ``schedule="cosine"`` anneals the step from ``step`` to ``step_end`` across
    outer iterations; the inner ``steps`` of one call share a step size.
    """

    step: float = 0.01
    steps: int = 10
    schedule: str = "constant"
    step_end: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ConfigError("LMC steps must be >= 0")
        if not self.step > 0:
            raise ConfigError("LMC step must be > 0")
        if self.schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown LMC schedule {self.schedule!r}")
        if self.schedule == "cosine":
            if self.step_end is None or not (self.step >= self.step_end > 0):
                raise ConfigError("cosine schedule needs step >= step_end > 0")

    def step_size(self, outer: int = 0, total: int = 1) -> float:
        if self.schedule == "constant" or total <= 1:
            return self.step
        frac = min(max(outer / (total - 1), 0.0), 1.0)
        return self.step_end + 0.5 * (self.step - self.step_end) * (1.0 + math.cos(math.pi * frac))

    def check_contraction(self, lam_prime: float) -> None:
        if 2.0 * self.step * lam_prime >= 1.0:
            raise ConfigError(
                f"2 * step * lam_prime = {2 * self.step * lam_prime:g} must be < 1"
            )


def potential_value(spec: GibbsSpec, theta) -> np.ndarray | float:
    """``V_g(theta)``; accepts one point ``(d,)`` or a batch ``(m, d)``."""
    theta = np.asarray(theta, dtype=float)
    X = np.atleast_2d(theta)
    v = spec.data_potential(X) + spec.lam_prime * np.sum(X * X, axis=1)
    return float(v[0]) if theta.ndim == 1 else v


def potential_grad(spec: GibbsSpec, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    X = np.atleast_2d(theta)
    grad = spec.data_grad(X) + 2.0 * spec.lam_prime * X
    return grad[0] if theta.ndim == 1 else grad


def lmc_step(theta, spec: GibbsSpec, step: float, noise, data_grad=None) -> np.ndarray:
    """One Langevin update with the l2 term applied as an explicit contraction.

    ``(1 - 2 step lam') theta - step * dataGrad(theta) + sqrt(2 step lam) noise``
    """
    theta = np.asarray(theta, dtype=float)
    if data_grad is None:
        data_grad = spec.data_grad(np.atleast_2d(theta)).reshape(theta.shape)
    return (
        (1.0 - 2.0 * step * spec.lam_prime) * theta
        - step * data_grad
        + math.sqrt(2.0 * step * spec.lam) * np.asarray(noise, dtype=float)
    )


def _stream(seed: int, tag: int, outer: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, int(outer), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def particle_noise(seed: int, outer: int, m: int, d: int, steps: int, chunk: int = 128):
    """Yield standard normal noise ``(m, d)`` for each of ``steps`` LMC steps.

    Particle ``r`` draws from its own stream keyed by ``(seed, outer, r)``, so the
    values do not depend on chunking or on the order particles are processed.
    """
    gens = [_stream(seed, STREAM_LMC, outer, r) for r in range(m)]
    done = 0
    while done < steps:
        k = min(chunk, steps - done)
        block = np.stack([g.standard_normal((k, d)) for g in gens], axis=1)
        for s in range(k):
            yield block[s]
        done += k


def gaussian_init(m: int, d: int, scale: float = 1.0, seed: int = 0) -> np.ndarray:
    """``m`` draws from ``N(0, scale^2 I_d)``, one stream per particle."""
    if m < 1 or d < 1:
        raise ConfigError("need m >= 1 and d >= 1")
    return scale * np.stack(
        [_stream(seed, STREAM_INIT, 0, r).standard_normal(d) for r in range(m)]
    )


def sample_gibbs(
    spec: GibbsSpec,
    init,
    cfg: LmcConfig,
    outer: int = 0,
    total: int = 1,
) -> np.ndarray:
    """Run ``cfg.steps`` LMC steps from ``init`` (warm start) and return the chains.

    ``outer`` keys the noise streams and, with ``total``, the annealed step size.
    """
    X = check_ensemble(init).copy()
    if X.shape[1] != spec.problem.d:
        raise ConfigError(f"particles have dim {X.shape[1]}, problem has {spec.problem.d}")
    if cfg.steps == 0:
        return X
    eta = cfg.step_size(outer, total)
    LmcConfig(step=eta).check_contraction(spec.lam_prime)
    m, d = X.shape
    for xi in particle_noise(cfg.seed, outer, m, d, cfg.steps):
        with np.errstate(over="ignore", invalid="ignore"):
            X = lmc_step(X, spec, eta, xi, data_grad=spec.data_grad(X))
        if not np.isfinite(X).all():
            raise NumericalError("LMC produced non-finite particles; reduce the step size")
    return X


def log_density_ratio(spec_a: GibbsSpec, spec_b: GibbsSpec, theta, logz_a: float, logz_b: float):
    """``log(p_a(theta) / p_b(theta))`` for the normalized Gibbs densities."""
    va = potential_value(spec_a, theta)
    vb = potential_value(spec_b, theta)
    return (vb - va) / spec_a.lam + logz_b - logz_a
