"""Command-line entry point: ``efplab <experiment> [--config FILE] [key=value ...]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import run_baseline
from .duality import CSV_COLUMNS, TheoryConstants
from .efp import efp_train
from .errors import ConfigError, DegenerateError, DomainError, NumericalError
from .experiments import (
    make_density_problem,
    make_student_teacher,
    make_toy1d,
    radial_target,
    toy1d_fixed_point,
)
from .config import EXPERIMENTS, RunConfig
from .model import Problem, SquaredLoss
from .raster import RenderConfig, TrianglePixels, image_expectation

log = logging.getLogger("efplab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def write_pgm(path, image) -> None:
    """Plain (P2) 8-bit graymap of an image with values in [0, 1]."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ConfigError("graymap needs a 2-D image")
    levels = np.rint(np.clip(img, 0.0, 1.0) * 255).astype(int)
    h, w = levels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(map(str, row)) for row in levels]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 graymap into floats in [0, 1]."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ConfigError(f"{path}: not a portable graymap")
    # header: magic, width, height, maxval, with optional # comments
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(int(data[start:pos]))
    w, h, maxval = tokens
    if magic == b"P2":
        vals = np.array(data[pos:].split(), dtype=float)
    else:
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        vals = np.frombuffer(data[pos + 1:], dtype=dtype).astype(float)
    if vals.size < w * h:
        raise ConfigError(f"{path}: truncated pixel data")
    return vals[: w * h].reshape(h, w) / maxval


class CsvSink:
    """Appends one diagnostics row per call and flushes immediately."""

    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh)
        self.writer.writerow(CSV_COLUMNS)
        self.rows = []

    def __call__(self, row) -> None:
        self.writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row.csv_values()])
        self.fh.flush()
        self.rows.append(row)

    def close(self) -> None:
        self.fh.close()


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------


def _density_observations(cfg: RunConfig) -> np.ndarray:
    raw = cfg["problem.observations"].strip()
    if raw:
        obs = np.array([float(t) for t in raw.replace(";", ",").split(",") if t.strip()])
        return obs.reshape(-1, cfg["problem.d"])
    # two-component mixture at +-1.5 with spread 0.5
    rng = np.random.default_rng(cfg["problem.data_seed"])
    n, d = cfg["problem.n"], cfg["problem.d"]
    sign = rng.choice([-1.0, 1.0], size=(n, 1))
    return 1.5 * sign + 0.5 * rng.standard_normal((n, d))


def build_problem(cfg: RunConfig):
    """The problem for ``cfg`` plus experiment-specific metadata."""
    v = cfg.values
    if cfg.experiment == "train-nn":
        p = make_student_teacher(v["problem.n"], v["problem.d"], v["problem.teacher_width"],
                                 v["problem.data_seed"], v["problem.lam"], v["problem.lam_prime"])
        return p, {"inputs": "uniform on unit sphere", "teacher": "mean of cos(w.x + b)"}
    if cfg.experiment == "density":
        obs = _density_observations(cfg)
        p = make_density_problem(obs, v["problem.sigma"], v["problem.lam"], v["problem.lam_prime"])
        return p, {"observations": obs.tolist()}
    if cfg.experiment == "toy1d":
        p = make_toy1d(v["problem.target"], v["problem.lam"], v["problem.lam_prime"])
        # without the L2 term the Gibbs measure is improper and there is no fixed point
        fixed = toy1d_fixed_point(v["problem.target"], v["problem.lam_prime"]) if p.lam_prime > 0 else None
        return p, {"fixed_point": fixed}
    if cfg.experiment == "synth-image":
        rc = RenderConfig(v["image.width"], v["image.height"], v["image.kappa"])
        if v["image.target"]:
            target = read_pgm(v["image.target"])
            if target.shape != (rc.height, rc.width):
                raise ConfigError(f"target is {target.shape[1]}x{target.shape[0]}, "
                                  f"config says {rc.width}x{rc.height}")
        else:
            target = radial_target(rc.width, rc.height)
        p = Problem(SquaredLoss(target.ravel(), weight=2.0), TrianglePixels(rc),
                    v["problem.lam"], v["problem.lam_prime"])
        return p, {"render": rc, "target": target}
    raise ConfigError(f"no problem for experiment {cfg.experiment!r}")


def _image_observer(cfg: RunConfig, render: RenderConfig, target, out: Path, errors: list):
    every = max(1, cfg["image.checkpoint_every"])
    T = cfg["efp.outer_iters"]
    shape = (render.height, render.width)

    def observe(t, H, particles):
        if t % every and t != T - 1:
            return
        h_img = np.asarray(H).reshape(shape)
        g_img = image_expectation(particles, render)
        write_pgm(out / f"h_image_{t:05d}.pgm", h_img)
        write_pgm(out / f"gibbs_image_{t:05d}.pgm", g_img)
        errors.append({"iter": t, "h_error": float(np.mean((h_img - target) ** 2)),
                       "gibbs_error": float(np.mean((g_img - target) ** 2))})

    return observe


def run(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "experiment": cfg.experiment,
        "config": cfg.values,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "seed": cfg["seed"],
    }
    tic = time.perf_counter()
    if cfg.experiment == "verify":
        from .verify import run_suite

        results = run_suite(cfg["seed"])
        meta["checks"] = [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]
        _write_meta(out, meta, tic)
        return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY

    problem, extra = build_problem(cfg)
    efp_cfg = cfg.efp_config()
    diag = cfg.diagnostics_config() if cfg["diag.enabled"] else None
    theory = TheoryConstants.compute(problem.lam, efp_cfg.outer_step)
    if diag is not None:
        meta["primal_measure"] = (
            "explicit EFP mixture, stratified subsample" if diag.measure == "mixture"
            else "latest Gibbs ensemble"
        )
    meta["theory"] = {"C_lambda": theory.C_lambda, "t0": theory.t0, "floor": theory.floor}

    observer = None
    image_errors: list = []
    if cfg.experiment == "synth-image":
        meta["render"] = asdict(extra["render"])
        write_pgm(out / "target.pgm", extra["target"])
        observer = _image_observer(cfg, extra["render"], extra["target"], out, image_errors)
    else:
        meta.update(extra)

    sink = CsvSink(out / "diagnostics.csv")
    try:
        state = efp_train(problem, efp_cfg, sink=sink, diagnostics=diag, observer=observer)
    finally:
        sink.close()
    H = state.averages.H
    meta["final"] = {"H_head": H[:10].tolist(), "f0": float(np.mean(problem.loss.value(H)))}
    if cfg.experiment == "synth-image":
        rc = extra["render"]
        h_img = H.reshape(rc.height, rc.width)
        g_img = image_expectation(state.ensemble, rc)
        write_pgm(out / "h_image_final.pgm", h_img)
        write_pgm(out / "gibbs_image_final.pgm", g_img)
        image_errors.append({"iter": efp_cfg.outer_iters, "h_error": float(np.mean((h_img - extra["target"]) ** 2)),
                             "gibbs_error": float(np.mean((g_img - extra["target"]) ** 2))})
        meta["image_errors"] = image_errors
    if sink.rows:
        meta["final"]["gap"] = sink.rows[-1].gap

    for bcfg in cfg.baseline_configs():
        bsink = CsvSink(out / f"diagnostics_{bcfg.kind}.csv")
        try:
            res = run_baseline(problem, bcfg, diagnostics=diag, sink=bsink)
        finally:
            bsink.close()
        meta.setdefault("baselines", {})[bcfg.kind] = {"H_head": res.H[:10].tolist()}

    _write_meta(out, meta, tic)
    return EXIT_OK


def _write_meta(out: Path, meta: dict, tic: float) -> None:
    meta["wall_seconds"] = time.perf_counter() - tic
    (out / "meta.json").write_text(json.dumps(meta, indent=2, default=str) + "\n")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efplab", description="Entropic fictitious play experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name)
        sp.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
        sp.add_argument("--config", type=Path, help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--mc-samples", type=int, help="Monte Carlo samples for the log partition")
        sp.add_argument("--knn-k", type=int, help="neighbour index for the entropy estimate")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.mc_samples is not None:
        overrides.append(f"diag.mc_samples={args.mc_samples}")
    if args.knn_k is not None:
        overrides.append(f"diag.knn_k={args.knn_k}")
    try:
        cfg = RunConfig.build(args.experiment, args.config, overrides, args.out)
        return run(cfg)
    except (ConfigError, DomainError) as exc:
        print(f"efplab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DegenerateError, FloatingPointError) as exc:
        print(f"efplab: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
