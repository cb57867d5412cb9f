"""Quick property suite behind the ``verify`` subcommand.

Every check returns ``(name, passed, detail)``. The checks are scaled down so
the whole suite runs in well under a minute.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .duality import DiagnosticsConfig, dual_value, entropy_knn_stderr, log_partition
from .efp import EfpConfig, ParticleCounter, efp_train, mixture_expectation
from .experiments import make_toy1d, toy1d_fixed_point
from .gibbs import GibbsSpec, LmcConfig, gaussian_init, potential_grad, potential_value, sample_gibbs
from .model import LinearFeatures, LogisticLoss, Problem, SquaredLoss, TanhNeurons, f0_value
from .raster import RenderConfig, render_jacobian, render_triangle


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


def _random_logistic_problem(rng, n=None, d=None, lam=0.1, lam_prime=0.1) -> Problem:
    n = n or int(rng.integers(1, 6))
    d = d or int(rng.integers(1, 4))
    x = rng.standard_normal((n, d))
    y = rng.choice([-1.0, 1.0], size=n)
    return Problem(LogisticLoss(y), TanhNeurons(x), lam, lam_prime)


def check_potential_grad(rng, points=100) -> CheckResult:
    worst = 0.0
    for _ in range(points):
        p = _random_logistic_problem(rng)
        spec = GibbsSpec(p, rng.uniform(-1, 1, p.n))
        theta = rng.standard_normal(p.d)
        eps = 1e-6
        fd = np.array([
            (potential_value(spec, theta + eps * e) - potential_value(spec, theta - eps * e)) / (2 * eps)
            for e in np.eye(p.d)
        ])
        an = potential_grad(spec, theta)
        worst = max(worst, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-8))
    return CheckResult("potential gradient", worst <= 1e-5, f"max rel err {worst:.2e}")


def random_triangle(rng) -> np.ndarray:
    while True:
        v = rng.uniform(0.05, 0.95, 6)
        area = 0.5 * ((v[2] - v[0]) * (v[5] - v[1]) - (v[4] - v[0]) * (v[3] - v[1]))
        if abs(area) > 1e-3:
            return np.concatenate([v, rng.normal(0.0, 1.0, 2)])


def check_render_grad(rng, points=100) -> CheckResult:
    cfg = RenderConfig(16, 16, 50.0)
    worst = 0.0
    for _ in range(points):
        theta = random_triangle(rng)
        pix = int(rng.integers(cfg.n_pixels))
        an = render_jacobian(theta, cfg)[pix]
        eps = 1e-6
        fd = np.array([
            (render_triangle(theta + eps * e, cfg)[pix] - render_triangle(theta - eps * e, cfg)[pix]) / (2 * eps)
            for e in np.eye(8)
        ])
        worst = max(worst, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-8))
    return CheckResult("render gradient", worst <= 1e-3, f"max rel err {worst:.2e}")


def check_recursion(rng) -> CheckResult:
    p = _random_logistic_problem(rng, n=4, d=2)
    cfg = EfpConfig(outer_step=0.1, outer_iters=20, particles=50, lmc=LmcConfig(step=0.05, steps=5),
                    seed=int(rng.integers(1 << 30)))
    state = efp_train(p, cfg, track_history=True)
    err = float(np.max(np.abs(mixture_expectation(state.history, p.features) - state.averages.H)))
    return CheckResult("running average vs explicit mixture", err <= 1e-12, f"max abs err {err:.1e}")


def check_memory(rng) -> CheckResult:
    p = _random_logistic_problem(rng, n=3, d=2)
    T, m = 30, 20
    cfg = EfpConfig(outer_step=0.1, outer_iters=T, particles=m, lmc=LmcConfig(step=0.05, steps=2))
    counter = ParticleCounter()
    state = efp_train(p, cfg, track_history=True, counter=counter)
    ok = counter.peak == m and state.history.particle_count == m * (T + 1)
    return CheckResult("particle memory", ok, f"peak {counter.peak}, naive {state.history.particle_count}")


def check_weak_duality(rng, instances=3, mc=20000, m=2000) -> CheckResult:
    worst = -math.inf
    for _ in range(instances):
        p = _random_logistic_problem(rng)
        X = rng.standard_normal((m, p.d)) * rng.uniform(0.2, 1.0)
        H = p.features.values(X).mean(axis=0)
        # logistic coefficients live in g * label in [-1, 0]
        spec = GibbsSpec(p, -p.loss.labels * rng.uniform(0, 1, p.n))
        logz = log_partition(spec, mc, seed=int(rng.integers(1 << 30)))
        ent, ent_se = entropy_knn_stderr(X)
        primal = f0_value(p, H) + p.lam_prime * np.mean(np.sum(X * X, axis=1)) + p.lam * ent
        dual = dual_value(p, spec.coeffs, logz)
        sigma = p.lam * math.hypot(logz.std_err, ent_se)
        worst = max(worst, (dual - primal) / max(sigma, 1e-300))
    return CheckResult("weak duality", worst <= 3.0, f"max (D - L)/sigma {worst:.2f}")


def check_stationarity(rng, m=2000, steps=1000) -> CheckResult:
    lam, lam_prime = 0.1, 0.5
    p = Problem(SquaredLoss([0.0]), LinearFeatures([[0.0, 0.0]]), lam, lam_prime)
    spec = GibbsSpec(p, np.zeros(1))
    X = sample_gibbs(spec, np.zeros((m, 2)), LmcConfig(step=0.01, steps=steps, seed=int(rng.integers(1 << 30))))
    target = lam / (2 * lam_prime)
    rel = float(np.max(np.abs(X.var(axis=0) / target - 1.0)))
    return CheckResult("LMC stationary variance", rel <= 0.1, f"max rel deviation {rel:.3f}")


def check_toy_fixed_point(rng) -> CheckResult:
    p = make_toy1d(0.5)
    cfg = EfpConfig(outer_step=0.1, outer_iters=60, particles=1000, lmc=LmcConfig(step=0.1, steps=60),
                    seed=int(rng.integers(1 << 30)))
    state = efp_train(p, cfg)
    err = abs(float(state.averages.H[0]) - toy1d_fixed_point(0.5, 0.1))
    return CheckResult("1-D fixed point", err <= 0.02, f"|H - H*| {err:.4f}")


def check_gap_nonnegative(rng) -> CheckResult:
    p = make_toy1d(0.0)
    cfg = EfpConfig(outer_step=0.1, outer_iters=15, particles=1000, lmc=LmcConfig(step=0.1, steps=50),
                    seed=int(rng.integers(1 << 30)))
    rows = []
    efp_train(p, cfg, sink=rows.append, diagnostics=DiagnosticsConfig(measure="mixture", mc_samples=5000))
    worst = min(r.gap / max(r.sigma, 1e-300) for r in rows)
    return CheckResult("gap >= -3 sigma", worst >= -3.0, f"min gap/sigma {worst:.2f}")


CHECKS = (
    check_potential_grad,
    check_render_grad,
    check_recursion,
    check_memory,
    check_weak_duality,
    check_stationarity,
    check_toy_fixed_point,
    check_gap_nonnegative,
)


def run_suite(seed: int = 0, echo=print) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for check in CHECKS:
        res = check(rng)
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
