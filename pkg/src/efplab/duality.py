"""Primal/dual objectives, their estimators, and the duality-gap diagnostic.

The dual of the finite-sum problem is

    D(g) = -(1/n) sum_i loss_i*(g_i) - lam * log int q_g(theta) dtheta

and for ``g = loss'(E_mu[h])`` the gap ``L(mu) - D(g)`` equals
``lam * KL(mu || mu_hat)``. Both sides are estimated: the log-partition by
importance sampling, the entropy by Kozachenko-Leonenko nearest neighbours.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma, gammaln

from .errors import ConfigError, DegenerateError
from .gibbs import STREAM_JITTER, STREAM_MC, GibbsSpec, _stream
from .model import Problem, check_ensemble, f0_value

log = logging.getLogger(__name__)

__all__ = [
    "LogPartitionEstimate",
    "DiagnosticsRow",
    "DiagnosticsConfig",
    "TheoryConstants",
    "log_partition",
    "dual_value",
    "entropy_knn",
    "entropy_knn_stderr",
    "primal_value",
    "duality_gap",
    "diagnostics_row",
    "mixture_subsample",
    "gaussian_kl",
    "linearized_value_gibbs",
    "linearized_value_gaussian",
]

CSV_COLUMNS = ("iter", "primal", "dual", "gap", "kl_est", "f0", "logZ_stderr", "wall_ms")


@dataclass(frozen=True)
class LogPartitionEstimate:
    value: float
    std_err: float
    samples: int
    ess: float = float("nan")


@dataclass
class DiagnosticsRow:
    iter: int
    primal: float
    dual: float
    gap: float
    kl_est: float
    f0: float
    logZ_stderr: float
    wall_ms: float = 0.0
    entropy_stderr: float = 0.0
    lam: float = 1.0

    @property
    def sigma(self) -> float:
        """Combined standard error of ``gap`` from both estimators."""
        return self.lam * math.hypot(self.logZ_stderr, self.entropy_stderr)

    def csv_values(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass(frozen=True)
class DiagnosticsConfig:
    mc_samples: int = 20000
    knn_k: int = 5
    cadence: int = 0
    seed: int = 0
    chunk: int = 4096
    # "gibbs": the fresh Gibbs particles stand in for the measure (cheap, default).
    # "mixture": a stratified subsample of the explicit EFP mixture (test mode).
    measure: str = "gibbs"
    mixture_points: int = 4000

    def __post_init__(self):
        if self.measure not in ("gibbs", "mixture"):
            raise ConfigError(f"unknown primal measure {self.measure!r}")
        if self.mc_samples < 1 or self.knn_k < 1 or self.mixture_points < 2:
            raise ConfigError("diagnostics sample sizes must be positive")

    def cadence_for(self, T: int) -> int:
        if self.cadence > 0:
            return self.cadence
        return 1 if T <= 500 else math.ceil(T / 500)


@dataclass(frozen=True)
class TheoryConstants:
    """Constants from the discrete-time analysis, for reporting only."""

    C_lambda: float
    t0: int
    floor: float

    @classmethod
    def compute(cls, lam: float, outer_step: float) -> "TheoryConstants":
        c = math.exp(min(4.0 / lam, 700.0))
        return cls(c, math.ceil(1.0 / outer_step), 7.0 * outer_step * (1.0 + c) / lam)


# ---------------------------------------------------------------------------
# Log partition
# ---------------------------------------------------------------------------


def _reference_scale(problem: Problem) -> float:
    """Std of the Gaussian ``nu ~ exp(-lam' |theta|^2 / lam)``."""
    return math.sqrt(problem.lam / (2.0 * problem.lam_prime))


def log_partition(spec: GibbsSpec, mc_samples: int = 20000, seed: int = 0, chunk: int = 4096) -> LogPartitionEstimate:
    """Estimate ``log int q_g`` by importance sampling from the reference Gaussian.

    ``int q_g = Z_nu * E_nu[exp(-(1/(lam n)) sum_i g_i h_i)]`` with
    ``Z_nu = (pi lam / lam')^(d/2)``. The standard error is the jackknife error
    of the log-mean-exp.
    """
    problem = spec.problem
    if problem.lam_prime <= 0:
        raise ConfigError("log partition needs lam_prime > 0 for a proper reference Gaussian")
    if mc_samples < 1:
        raise ConfigError("need at least one Monte Carlo sample")
    d = problem.d
    log_z_nu = 0.5 * d * math.log(math.pi * problem.lam / problem.lam_prime)
    if not np.any(spec.coeffs):
        return LogPartitionEstimate(log_z_nu, 0.0, mc_samples, float(mc_samples))
    rng = _stream(seed, STREAM_MC, 0, 0)
    scale = _reference_scale(problem)
    logw = np.empty(mc_samples)
    for start in range(0, mc_samples, chunk):
        stop = min(start + chunk, mc_samples)
        theta = scale * rng.standard_normal((stop - start, d))
        logw[start:stop] = -spec.data_potential(theta) / problem.lam
    value, se, ess = _log_mean_exp_jackknife(logw)
    return LogPartitionEstimate(log_z_nu + value, se, mc_samples, ess)


def _log_mean_exp_jackknife(logw: np.ndarray) -> tuple[float, float, float]:
    N = logw.size
    top = logw.max()
    w = np.exp(logw - top)
    total = w.sum()
    value = top + math.log(total / N)
    ess = total**2 / np.sum(w * w)
    if N < 2:
        return value, float("inf"), ess
    rest = total - w
    if np.any(rest <= 0.0):
        # One sample carries all the weight: the estimate is unreliable.
        return value, float("inf"), ess
    loo = np.log(rest / (N - 1))
    se = math.sqrt((N - 1) / N * np.sum((loo - loo.mean()) ** 2))
    return value, se, ess


def dual_value(problem: Problem, g, logz: LogPartitionEstimate) -> float:
    g = np.asarray(g, dtype=float)
    return float(-np.mean(problem.loss.conjugate(g)) - problem.lam * logz.value)


# ---------------------------------------------------------------------------
# Entropy
# ---------------------------------------------------------------------------


def _log_unit_ball_volume(d: int) -> float:
    return 0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)


def _knn_log_distances(X: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    m, d = X.shape
    if not 1 <= k < m:
        raise ConfigError(f"need 1 <= k < m, got k={k}, m={m}")
    n_distinct = len(np.unique(X, axis=0))
    if n_distinct < k + 1:
        raise DegenerateError(f"only {n_distinct} distinct points for k={k}")
    if n_distinct < m:
        scale = max(float(np.std(X)), 1.0)
        log.warning("%d duplicate particles; adding 1e-12 jitter before k-NN", m - n_distinct)
        X = X + 1e-12 * scale * _stream(seed, STREAM_JITTER, 0, 0).standard_normal(X.shape)
    dist, _ = cKDTree(X).query(X, k=k + 1)
    rk = dist[:, k]
    return np.log(rk)


def entropy_knn_stderr(particles, k: int = 5, seed: int = 0) -> tuple[float, float]:
    """Negative differential entropy ``Ent`` and a standard error for it."""
    X = check_ensemble(particles)
    m, d = X.shape
    logr = _knn_log_distances(X, k, seed)
    h = digamma(m) - digamma(k) + _log_unit_ball_volume(d) + d * logr.mean()
    se = d * logr.std(ddof=1) / math.sqrt(m) if m > 1 else float("inf")
    return float(-h), float(se)


def entropy_knn(particles, k: int = 5) -> float:
    """Kozachenko-Leonenko estimate of ``Ent(mu) = int mu log mu`` (negative entropy)."""
    return entropy_knn_stderr(particles, k)[0]


# ---------------------------------------------------------------------------
# Primal, gap
# ---------------------------------------------------------------------------


def primal_value(problem: Problem, state, k: int = 5) -> float:
    """``F_0(H) + lam' E|theta|^2 + lam Ent`` with the Gibbs particles as measure proxy."""
    X = check_ensemble(state.ensemble)
    return _primal_parts(problem, state.averages.H, X, k)[0]


def _primal_parts(problem: Problem, H, X, k):
    f0 = f0_value(problem, H)
    sq = float(np.mean(np.sum(X * X, axis=1)))
    ent, ent_se = entropy_knn_stderr(X, k) if problem.lam > 0 else (0.0, 0.0)
    return f0 + problem.lam_prime * sq + problem.lam * ent, f0, ent_se


def mixture_subsample(history, max_points: int, seed: int = 0) -> np.ndarray:
    """Draw a duplicate-free sample of a weighted mixture of ensembles.

    Component ``c`` contributes ``round(w_c M)`` distinct particles (systematic
    allocation), with ``M`` capped so no component is asked for more particles
    than it holds.
    """
    weights = history.weights
    comps = [e for _, e in history.components]
    cap = min(len(e) / w for w, e in zip(weights, comps) if w > 0)
    M = int(min(max_points, cap))
    edges = np.floor(np.cumsum(weights) * M + 0.5).astype(int)
    counts = np.diff(np.concatenate([[0], edges]))
    rng = _stream(seed, STREAM_MC, 0, 2)
    parts = [
        e[rng.choice(len(e), min(c, len(e)), replace=False)]
        for c, e in zip(counts, comps)
        if c > 0
    ]
    return np.concatenate(parts)


def _mixture_primal_parts(problem: Problem, H, history, cfg: DiagnosticsConfig, iteration: int):
    f0 = f0_value(problem, H)
    sq = sum(w * float(np.mean(np.sum(e * e, axis=1))) for w, e in history.components)
    sub = mixture_subsample(history, cfg.mixture_points, seed=cfg.seed + iteration)
    ent, ent_se = entropy_knn_stderr(sub, cfg.knn_k)
    return f0 + problem.lam_prime * sq + problem.lam * ent, f0, ent_se


def diagnostics_row(
    problem: Problem, H, particles, cfg: DiagnosticsConfig, iteration: int = 0, history=None
) -> DiagnosticsRow:
    """Primal, dual and gap for averages ``H``.

    The measure in the primal is represented by ``particles`` or, when
    ``cfg.measure == "mixture"``, by ``history`` (a mixture whose feature
    averages are ``H``).
    """
    tic = time.perf_counter()
    H = np.asarray(H, dtype=float)
    if cfg.measure == "mixture":
        if history is None:
            raise ConfigError("mixture diagnostics need the explicit mixture history")
        primal, f0, ent_se = _mixture_primal_parts(problem, H, history, cfg, iteration)
    else:
        X = check_ensemble(particles)
        primal, f0, ent_se = _primal_parts(problem, H, X, cfg.knn_k)
    spec = GibbsSpec.from_averages(problem, H)
    logz = log_partition(spec, cfg.mc_samples, seed=cfg.seed + iteration, chunk=cfg.chunk)
    dual = dual_value(problem, spec.coeffs, logz)
    gap = primal - dual
    return DiagnosticsRow(
        iter=iteration,
        primal=primal,
        dual=dual,
        gap=gap,
        kl_est=gap / problem.lam,
        f0=f0,
        logZ_stderr=logz.std_err,
        wall_ms=1e3 * (time.perf_counter() - tic),
        entropy_stderr=ent_se,
        lam=problem.lam,
    )


def duality_gap(problem: Problem, state, mc_samples: int = 20000, k: int = 5, seed: int = 0) -> DiagnosticsRow:
    cfg = DiagnosticsConfig(mc_samples=mc_samples, knn_k=k, seed=seed)
    return diagnostics_row(problem, state.averages.H, state.ensemble, cfg, iteration=state.iteration)


# ---------------------------------------------------------------------------
# Linearized objective: J(xi) = int (dF_0/dmu) dxi + lam KL(xi || nu)
# ---------------------------------------------------------------------------


def gaussian_kl(mean, std, ref_std: float) -> float:
    """``KL(N(mean, std^2 I) || N(0, ref_std^2 I))``."""
    mean = np.asarray(mean, dtype=float)
    d = mean.size
    r = (std / ref_std) ** 2
    return 0.5 * (d * r + float(mean @ mean) / ref_std**2 - d - d * math.log(r))


def linearized_value_gaussian(spec: GibbsSpec, mean, std: float, mc_samples: int = 20000, seed: int = 0):
    """``J`` at ``N(mean, std^2 I)``: MC first-variation term plus exact KL. Returns (value, stderr)."""
    problem = spec.problem
    mean = np.asarray(mean, dtype=float)
    rng = _stream(seed, STREAM_MC, 1, 0)
    theta = mean + std * rng.standard_normal((mc_samples, problem.d))
    f = spec.data_potential(theta)
    kl = gaussian_kl(mean, std, _reference_scale(problem))
    return float(f.mean() + problem.lam * kl), float(f.std(ddof=1) / math.sqrt(mc_samples))


def linearized_value_gibbs(spec: GibbsSpec, particles, k: int = 5):
    """``J`` at the Gibbs measure from samples of it. Returns (value, stderr).

    ``KL(xi || nu) = Ent(xi) + lam'/lam E|theta|^2 + log Z_nu``, with ``Ent`` from
    k-NN.
    """
    problem = spec.problem
    X = check_ensemble(particles)
    f = spec.data_potential(X)
    ent, ent_se = entropy_knn_stderr(X, k)
    log_z_nu = 0.5 * problem.d * math.log(math.pi * problem.lam / problem.lam_prime)
    sq = np.sum(X * X, axis=1)
    kl = ent + problem.lam_prime / problem.lam * sq.mean() + log_z_nu
    se_terms = f + problem.lam_prime * sq
    se = math.hypot(se_terms.std(ddof=1) / math.sqrt(len(X)), problem.lam * ent_se)
    return float(f.mean() + problem.lam * kl), float(se)
