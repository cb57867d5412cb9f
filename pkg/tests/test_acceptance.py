"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the image criterion alone
takes roughly ten minutes on one core.
"""
import math

import numpy as np
import pytest

from efplab.baselines import run_baseline
from efplab.config import RunConfig
from efplab.duality import (
    DiagnosticsConfig,
    dual_value,
    entropy_knn_stderr,
    linearized_value_gaussian,
    linearized_value_gibbs,
    log_partition,
)
from efplab.efp import (
    EfpConfig,
    MixtureHistory,
    ParticleCounter,
    efp_train,
    mixture_expectation,
    naive_efp_step,
)
from efplab.experiments import make_student_teacher, radial_target, toy1d_fixed_point
from efplab.gibbs import GibbsSpec, LmcConfig, gaussian_init, log_density_ratio, potential_grad, potential_value, sample_gibbs
from efplab.model import LinearFeatures, LogisticLoss, Problem, SquaredLoss, TanhNeurons, f0_value
from efplab.raster import RenderConfig, TrianglePixels, image_expectation, render_jacobian, render_triangle
from efplab.verify import random_triangle


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail

    return emit


def logistic_problem(rng, n, d, lam, lam_prime):
    return Problem(LogisticLoss(rng.choice([-1.0, 1.0], n)), TanhNeurons(rng.standard_normal((n, d))), lam, lam_prime)


# -- 1, 2: duality gap on a small student-teacher run -------------------------


@pytest.fixture(scope="module")
def teacher_rows():
    p = make_student_teacher(50, 2, teacher_width=5, seed=0, lam=0.01, lam_prime=0.01)
    cfg = EfpConfig(outer_step=0.05, outer_iters=200, particles=500, lmc=LmcConfig(step=0.01, steps=50), seed=0)
    rows = []
    efp_train(p, cfg, sink=rows.append, diagnostics=DiagnosticsConfig(measure="mixture"))
    return rows


T0 = math.ceil(1 / 0.05)


def test_criterion_01_gap_convergence(teacher_rows, report):
    gap = {r.iter: r.gap for r in teacher_rows}
    ratio = gap[max(gap)] / gap[T0]
    below = [r.iter for r in teacher_rows if r.gap < -3 * r.sigma]
    ok = ratio <= 0.1 and not below
    report(1, "duality gap convergence", ok,
           f"gap({T0})={gap[T0]:.3e} gap(T)={gap[max(gap)]:.3e} ratio={ratio:.3f} (<= 0.1); "
           f"rows below -3 sigma: {len(below)}")


def test_criterion_02_geometric_rate(teacher_rows, report):
    rows = [r for r in teacher_rows if T0 <= r.iter <= T0 + 100]
    t = np.array([r.iter for r in rows], dtype=float)
    gap = np.array([r.gap for r in rows])
    if np.any(gap <= 0):
        report(2, "geometric rate", False, f"{np.sum(gap <= 0)} non-positive gaps in the fit window")
    slope = np.polyfit(t, np.log(gap), 1)[0]
    rate = 0.05
    ok = slope < 0 and rate / 3 <= -slope <= 3 * rate
    report(2, "geometric rate", ok, f"slope={slope:.4f}, allowed magnitude [{rate / 3:.4f}, {3 * rate:.4f}]")


# -- 3, 12: one-dimensional toy ------------------------------------------------


@pytest.fixture(scope="module")
def toy_runs():
    cfg = RunConfig.build("toy1d", overrides=["baseline.kind=all"])
    p = Problem(SquaredLoss([0.0]), LinearFeatures([[1.0]]), 0.1, 0.1)
    rows = []
    state = efp_train(p, cfg.efp_config(), sink=rows.append, diagnostics=cfg.diagnostics_config())
    baselines = {b.kind: run_baseline(p, b) for b in cfg.baseline_configs()}
    return state, rows, baselines


def test_criterion_03_fixed_point(toy_runs, report):
    state, rows, _ = toy_runs
    oracle = toy1d_fixed_point(0.0, 0.1)
    err = abs(state.averages.H[0] - oracle)
    kl = rows[-1].kl_est
    report(3, "self-consistent fixed point", err <= 0.02 and kl <= 0.05,
           f"|H - H*|={err:.2e} (<= 0.02), terminal kl_est={kl:.4f} (<= 0.05)")


def test_criterion_12_baseline_agreement(toy_runs, report):
    state, _, baselines = toy_runs
    means = {"efp": state.averages.H[0], **{k: r.H[0] for k, r in baselines.items()}}
    names = sorted(means)
    worst = max(abs(means[a] - means[b]) for a in names for b in names)
    report(12, "baseline agreement", worst <= 0.05,
           ", ".join(f"{k}={v:+.4f}" for k, v in means.items()) + f"; max pairwise {worst:.4f} (<= 0.05)")


# -- 4, 5: bookkeeping ----------------------------------------------------------


def test_criterion_04_memory(report):
    p = Problem(SquaredLoss([0.3]), LinearFeatures([[1.0]]), 0.1, 0.1)
    m, T = 50, 100
    counter = ParticleCounter()
    state = efp_train(p, EfpConfig(outer_step=0.05, outer_iters=T, particles=m, lmc=LmcConfig(step=0.1, steps=2)),
                      track_history=True, counter=counter)
    naive = state.history.particle_count
    report(4, "memory invariant", counter.peak == m and naive == m * (T + 1),
           f"running-average peak={counter.peak} (== {m}), naive mixture={naive} (== {m * (T + 1)})")


def test_criterion_05_recursion_oracle(report):
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p = logistic_problem(rng, 4, 2, 0.05, 0.05)
        cfg = EfpConfig(outer_step=0.1, outer_iters=50, particles=30, lmc=LmcConfig(step=0.05, steps=3), seed=seed)
        hist = [MixtureHistory.start(gaussian_init(30, 2, 1.0, seed))]
        errs = []

        def observer(t, H, particles):
            errs.append(np.max(np.abs(mixture_expectation(hist[0], p.features) - H)))
            hist[0] = naive_efp_step(hist[0], particles, cfg.outer_step)

        state = efp_train(p, cfg, observer=observer)
        errs.append(np.max(np.abs(mixture_expectation(hist[0], p.features) - state.averages.H)))
        worst = max(worst, max(errs))
    report(5, "recursion oracle", worst <= 1e-12, f"max |H - brute force| = {worst:.2e} (<= 1e-12) over 5 seeds")


# -- 6, 7, 8: duality and Gibbs-measure properties ----------------------------


def test_criterion_06_weak_duality(report):
    rng = np.random.default_rng(6)
    violations, worst = 0, -np.inf
    for k in range(20):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        lam, lam_prime = rng.uniform(0.05, 0.5), rng.uniform(0.05, 0.5)
        p = logistic_problem(rng, n, d, lam, lam_prime)
        X = rng.normal(rng.normal(0, 0.5, d), rng.uniform(0.3, 1.5), (5000, d))
        H = p.features.values(X).mean(axis=0)
        # alternate between the primal's own coefficients and arbitrary feasible ones
        g = p.coefficients(H) if k % 2 == 0 else -p.loss.labels * rng.uniform(0, 1, n)
        ent, ent_se = entropy_knn_stderr(X)
        primal = f0_value(p, H) + lam_prime * np.mean(np.sum(X * X, axis=1)) + lam * ent
        logz = log_partition(GibbsSpec(p, g), 100000, seed=k)
        dual = dual_value(p, g, logz)
        sigma = lam * math.hypot(logz.std_err, ent_se)
        worst = max(worst, (dual - primal) / sigma)
        violations += dual > primal + 3 * sigma
    report(6, "weak duality", violations == 0,
           f"{violations} violations in 20 instances; max (D - L) / sigma = {worst:.2f}")


def test_criterion_07_density_ratio_bound(report):
    rng = np.random.default_rng(7)
    p = logistic_problem(rng, 4, 2, 1.0, 0.5)
    # coefficients at opposite ends of the feasible range stress the bound hardest
    specs = [GibbsSpec(p, -p.loss.labels * rng.uniform(lo, lo + 0.1, 4)) for lo in (0.9, 0.0)]
    logz = [log_partition(s, 100000, seed=i) for i, s in enumerate(specs)]
    theta = rng.normal(0, 2.0, (1000, 2))
    ratio = np.exp(log_density_ratio(specs[0], specs[1], theta, logz[0].value, logz[1].value))
    tol = 3 * math.hypot(logz[0].std_err, logz[1].std_err)
    lo, hi = math.exp(-4) - tol, math.exp(4) + tol
    ok = bool(np.all((ratio >= lo) & (ratio <= hi)))
    report(7, "density-ratio bound", ok,
           f"ratios in [{ratio.min():.3f}, {ratio.max():.3f}], bound [{lo:.4f}, {hi:.3f}]")


def test_criterion_08_linearization_optimality(report):
    rng = np.random.default_rng(8)
    violations, margins = 0, []
    for k in range(3):
        d = int(rng.integers(1, 3))
        p = logistic_problem(rng, 3, d, 0.1, 0.1)
        spec = GibbsSpec(p, -p.loss.labels * rng.uniform(0, 1, 3))
        X = sample_gibbs(spec, gaussian_init(5000, d, 1.0, k), LmcConfig(step=0.01, steps=1000, seed=k))
        best, best_se = linearized_value_gibbs(spec, X)
        for j in range(20):
            val, se = linearized_value_gaussian(spec, rng.normal(0, 0.7, d), rng.uniform(0.3, 1.5), 20000, seed=j)
            sigma = math.hypot(best_se, se)
            margins.append((val - best) / sigma)
            violations += best > val + 3 * sigma
    report(8, "linearization optimality", violations == 0,
           f"{violations} violations over 60 candidates; min (J(xi) - J(mu_hat)) / sigma = {min(margins):.2f}")


# -- 9, 10: numerics --------------------------------------------------------------


def test_criterion_09_gradients(report):
    rng = np.random.default_rng(9)
    eps = 1e-6
    worst_pot = 0.0
    for _ in range(100):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        spec = GibbsSpec(logistic_problem(rng, n, d, 0.1, 0.2), rng.uniform(-1, 1, n))
        theta = rng.standard_normal(d)
        fd = np.array([(potential_value(spec, theta + eps * e) - potential_value(spec, theta - eps * e)) / (2 * eps)
                       for e in np.eye(d)])
        an = potential_grad(spec, theta)
        worst_pot = max(worst_pot, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-8))
    cfg = RenderConfig(16, 16)
    worst_img = 0.0
    for _ in range(100):
        theta = random_triangle(rng)
        pix = int(rng.integers(cfg.n_pixels))
        an = render_jacobian(theta, cfg)[pix]
        fd = np.array([(render_triangle(theta + eps * e, cfg)[pix] - render_triangle(theta - eps * e, cfg)[pix])
                       / (2 * eps) for e in np.eye(8)])
        worst_img = max(worst_img, np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-8))
    report(9, "gradient suites", worst_pot <= 1e-5 and worst_img <= 1e-3,
           f"potential max rel err {worst_pot:.2e} (<= 1e-5), render max rel err {worst_img:.2e} (<= 1e-3)")


def test_criterion_10_stationarity(report):
    lam, lam_prime = 0.5, 0.5
    p = Problem(SquaredLoss([0.0]), LinearFeatures([[0.0, 0.0]]), lam, lam_prime)
    X = sample_gibbs(GibbsSpec(p, [0.0]), np.zeros((5000, 2)), LmcConfig(step=0.01, steps=2000, seed=0))
    var = X.var(axis=0)
    target = lam / (2 * lam_prime)
    rel = np.max(np.abs(var / target - 1))
    report(10, "sampler stationarity", rel <= 0.1,
           f"variances {np.round(var, 4).tolist()} vs {target}, max rel dev {rel:.3f} (<= 0.1)")


# -- 11: image synthesis ----------------------------------------------------------


def image_run(m):
    rc = RenderConfig(64, 64, 50.0)
    target = radial_target(64, 64).ravel()
    p = Problem(SquaredLoss(target, weight=2.0), TrianglePixels(rc), 1e-5, 1e-4)
    lmc = LmcConfig(step=0.1, step_end=0.01, schedule="cosine", steps=10)
    initial = {}

    def observer(t, H, particles):
        if t == 0:
            initial["h"] = float(np.mean((H - target) ** 2))

    state = efp_train(p, EfpConfig(outer_step=0.01, outer_iters=300, particles=m, lmc=lmc, seed=0), observer=observer)
    h_err = float(np.mean((state.averages.H - target) ** 2))
    g_err = float(np.mean((image_expectation(state.ensemble, rc).ravel() - target) ** 2))
    return initial["h"], h_err, g_err


@pytest.mark.slow
def test_criterion_11_image_synthesis(report):
    init200, h200, g200 = image_run(200)
    init1000, h1000, g1000 = image_run(1000)
    gap200, gap1000 = abs(g200 - h200), abs(g1000 - h1000)
    ok_err = h200 <= 0.2 * init200
    ok_gap = gap1000 < gap200
    report(11, "image synthesis", ok_err and ok_gap,
           f"m=200 err {init200:.4f} -> {h200:.5f} (ratio {h200 / init200:.3f} <= 0.2); "
           f"|err(gibbs) - err(H)|: m=200 {gap200:.5f}, m=1000 {gap1000:.5f} (must shrink); "
           f"m=1000 errors gibbs {g1000:.5f} vs H {h1000:.5f}")
