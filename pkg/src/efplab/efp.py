"""Entropic fictitious play: memory-efficient and naive particle updates."""
from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import ConfigError
from .gibbs import GibbsSpec, LmcConfig, gaussian_init, sample_gibbs
from .model import FeatureMap, Problem, check_ensemble

log = logging.getLogger(__name__)

__all__ = [
    "RunningAverages",
    "MixtureHistory",
    "EfpConfig",
    "EfpState",
    "ParticleCounter",
    "running_average_update",
    "naive_efp_step",
    "mixture_expectation",
    "efp_train",
]


@dataclass(frozen=True)
class RunningAverages:
    """Tracked feature averages ``H_i = E_mu[h_i]`` of the current mixture."""

    H: np.ndarray
    iteration: int = 0


def running_average_update(
    avg: RunningAverages, gibbs, outer_step: float, problem: Problem
) -> RunningAverages:
    """``H <- (1 - step) H + step * mean_r h(theta_r)`` for the fresh Gibbs particles."""
    if not 0.0 <= outer_step <= 1.0:
        raise ConfigError("outer step must lie in [0, 1]")
    fresh = problem.features.values(check_ensemble(gibbs)).mean(axis=0)
    return RunningAverages((1.0 - outer_step) * avg.H + outer_step * fresh, avg.iteration + 1)


@dataclass
class MixtureHistory:
    """Explicit weighted mixture of every particle ensemble seen so far.

    This is the naive representation whose size grows by ``m`` per step; it is
    kept as a reference for the running-average recursion.
    """

    components: list = field(default_factory=list)

    @classmethod
    def start(cls, ensemble) -> "MixtureHistory":
        return cls([(1.0, check_ensemble(ensemble))])

    @property
    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.components])

    @property
    def particle_count(self) -> int:
        return sum(len(e) for _, e in self.components)


def naive_efp_step(history: MixtureHistory, gibbs, outer_step: float) -> MixtureHistory:
    """Scale existing weights by ``1 - step`` and append the new ensemble with weight ``step``."""
    if history.components:
        total = history.weights.sum()
        if abs(total - 1.0) > 1e-12:
            raise ConfigError(f"mixture weights sum to {total}, not 1")
    comps = [((1.0 - outer_step) * w, e) for w, e in history.components]
    if not comps:
        # From an empty start the new ensemble carries all the mass.
        outer_step = 1.0
    comps.append((outer_step, check_ensemble(gibbs)))
    return MixtureHistory(comps)


def mixture_expectation(history: MixtureHistory, features: FeatureMap) -> np.ndarray:
    """``sum_c w_c * (1/m) sum_r h_i(theta_r^c)`` for every feature index."""
    total = np.zeros(features.n)
    for w, ens in history.components:
        total = total + w * features.values(ens).mean(axis=0)
    return total


@dataclass(frozen=True)
class EfpConfig:
    outer_step: float = 0.01
    outer_iters: int = 100
    particles: int = 1000
    lmc: LmcConfig = field(default_factory=LmcConfig)
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.outer_step <= 1.0:
            raise ConfigError("outer step must lie in (0, 1]")
        if self.outer_iters < 1:
            raise ConfigError("need at least one outer iteration")
        if self.particles < 1:
            raise ConfigError("need at least one particle")
        if self.outer_step > 0.125:
            warnings.warn(
                f"outer step {self.outer_step} exceeds 1/8; discrete-time guarantees do not apply",
                stacklevel=3,
            )

    @property
    def t0(self) -> int:
        return math.ceil(1.0 / self.outer_step)


@dataclass
class EfpState:
    averages: RunningAverages
    ensemble: np.ndarray
    iteration: int
    history: MixtureHistory | None = None


class ParticleCounter:
    """Tracks how many particles a training loop keeps alive between steps."""

    def __init__(self):
        self.current = 0
        self.peak = 0

    def set(self, count: int) -> None:
        self.current = int(count)
        self.peak = max(self.peak, self.current)


def efp_train(
    problem: Problem,
    cfg: EfpConfig,
    sink: Callable | None = None,
    diagnostics=None,
    track_history: bool = False,
    counter: ParticleCounter | None = None,
    observer: Callable | None = None,
) -> EfpState:
    """Memory-efficient EFP.

    Each outer iteration builds the Gibbs spec from ``g = loss'(H)``, warm-starts
    LMC from the previous particles, and folds the fresh particles into ``H``.
    Only ``m`` particles are stored at any time; ``track_history=True`` also keeps
    the naive mixture for comparison.

    ``diagnostics`` (a :class:`~efplab.duality.DiagnosticsConfig`) enables one
    :class:`~efplab.duality.DiagnosticsRow` per cadence tick, passed to ``sink``.
    ``observer(t, H, particles)`` is called after every outer iteration with the
    averages before the update and the fresh Gibbs particles.
    """
    from .duality import diagnostics_row  # local: duality imports this module's types

    particles = gaussian_init(cfg.particles, problem.d, cfg.init_scale, cfg.seed)
    avg = RunningAverages(problem.features.values(particles).mean(axis=0), 0)
    if diagnostics is not None and diagnostics.measure == "mixture":
        track_history = True
    history = MixtureHistory.start(particles) if track_history else None
    counter = counter if counter is not None else ParticleCounter()
    counter.set(len(particles))
    lmc = replace(cfg.lmc, seed=cfg.seed)
    T = cfg.outer_iters
    cadence = diagnostics.cadence_for(T) if diagnostics is not None else 0
    for t in range(T):
        tic = time.perf_counter()
        spec = GibbsSpec.from_averages(problem, avg.H)
        particles = sample_gibbs(spec, particles, lmc, outer=t, total=T)
        counter.set(len(particles))
        if observer is not None:
            observer(t, avg.H, particles)
        if diagnostics is not None and sink is not None and (t % cadence == 0 or t == T - 1):
            row = diagnostics_row(
                problem, avg.H, particles, diagnostics, iteration=t, history=history
            )
            row.wall_ms = 1e3 * (time.perf_counter() - tic)
            sink(row)
        avg = running_average_update(avg, particles, cfg.outer_step, problem)
        if history is not None:
            history = naive_efp_step(history, particles, cfg.outer_step)
        if t % max(1, T // 10) == 0:
            log.debug("efp iter %d/%d", t, T)
    return EfpState(avg, particles, T, history)
