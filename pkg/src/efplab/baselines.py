"""Comparison dynamics: mean-field Langevin (MFLD) and simplified particle dual averaging."""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError, NumericalError
from .gibbs import GibbsSpec, LmcConfig, gaussian_init, lmc_step, particle_noise, sample_gibbs
from .model import Problem

__all__ = ["BaselineConfig", "BaselineResult", "mfld_train", "pda_simplified_train", "run_baseline"]


@dataclass(frozen=True)
class BaselineConfig:
    """``kind="mfld"`` uses ``step``/``iters``; ``kind="pda"`` uses ``iters`` outer
    iterations of ``lmc`` sampling."""

    kind: str = "mfld"
    step: float = 0.01
    iters: int = 1000
    lmc: LmcConfig = field(default_factory=LmcConfig)
    particles: int = 1000
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mfld", "pda"):
            raise ConfigError(f"unknown baseline {self.kind!r}")
        if not self.step > 0 or self.iters < 1 or self.particles < 1:
            raise ConfigError("baseline step, iterations and particles must be positive")


@dataclass
class BaselineResult:
    ensemble: np.ndarray
    H: np.ndarray
    rows: list = field(default_factory=list)


def _emit(problem, H, X, diagnostics, t, rows, sink, tic):
    from .duality import diagnostics_row

    # the baselines' particles are the measure itself; there is no mixture to track
    row = diagnostics_row(problem, H, X, replace(diagnostics, measure="gibbs"), iteration=t)
    row.wall_ms = 1e3 * (time.perf_counter() - tic)
    rows.append(row)
    if sink is not None:
        sink(row)


def mfld_train(problem: Problem, cfg: BaselineConfig, diagnostics=None, sink: Callable | None = None) -> BaselineResult:
    """Noisy gradient descent: every step refreshes ``g = loss'(H)`` from the current particles.

    Uses the same per-particle noise streams as :func:`sample_gibbs` with
    ``outer=0``, so with zero data coefficients the two coincide.
    """
    X = gaussian_init(cfg.particles, problem.d, cfg.init_scale, cfg.seed)
    LmcConfig(step=cfg.step).check_contraction(problem.lam_prime)
    rows: list = []
    cadence = diagnostics.cadence_for(cfg.iters) if diagnostics is not None else 0
    tic = time.perf_counter()
    for k, xi in enumerate(particle_noise(cfg.seed, 0, len(X), problem.d, cfg.iters)):
        H = problem.features.values(X).mean(axis=0)
        spec = GibbsSpec.from_averages(problem, H)
        if diagnostics is not None and k % cadence == 0:
            _emit(problem, H, X, diagnostics, k, rows, sink, tic)
            tic = time.perf_counter()
        X = lmc_step(X, spec, cfg.step, xi)
        if not np.isfinite(X).all():
            raise NumericalError("MFLD produced non-finite particles; reduce the step size")
    H = problem.features.values(X).mean(axis=0)
    if diagnostics is not None:
        _emit(problem, H, X, diagnostics, cfg.iters, rows, sink, tic)
    return BaselineResult(X, H, rows)


def pda_simplified_train(problem: Problem, cfg: BaselineConfig, diagnostics=None, sink: Callable | None = None) -> BaselineResult:
    """Dual averaging with uniform weights.

    ``g_bar`` is the plain mean of ``loss'(H)`` over all ensembles so far; each
    outer iteration samples the Gibbs measure of ``g_bar`` by warm-started LMC.
    Noise is keyed like EFP's, so iteration 0 matches EFP's first sampling step.
    """
    X = gaussian_init(cfg.particles, problem.d, cfg.init_scale, cfg.seed)
    lmc = replace(cfg.lmc, seed=cfg.seed)
    H = problem.features.values(X).mean(axis=0)
    g_bar = problem.coefficients(H)
    rows: list = []
    T = cfg.iters
    cadence = diagnostics.cadence_for(T) if diagnostics is not None else 0
    for t in range(T):
        tic = time.perf_counter()
        X = sample_gibbs(GibbsSpec(problem, g_bar), X, lmc, outer=t, total=T)
        H = problem.features.values(X).mean(axis=0)
        if diagnostics is not None and (t % cadence == 0 or t == T - 1):
            _emit(problem, H, X, diagnostics, t, rows, sink, tic)
        g_bar = g_bar + (problem.coefficients(H) - g_bar) / (t + 2)
    return BaselineResult(X, H, rows)


def run_baseline(problem: Problem, cfg: BaselineConfig, diagnostics=None, sink=None) -> BaselineResult:
    fn = mfld_train if cfg.kind == "mfld" else pda_simplified_train
    return fn(problem, cfg, diagnostics=diagnostics, sink=sink)
