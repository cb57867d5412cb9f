"""Flat ``section.key = value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BaselineConfig
from .duality import DiagnosticsConfig
from .efp import EfpConfig
from .errors import ConfigError
from .gibbs import LmcConfig

EXPERIMENTS = ("train-nn", "density", "synth-image", "toy1d", "verify")

_COMMON = {
    "seed": 0,
    "efp.outer_step": 0.05,
    "efp.outer_iters": 200,
    "efp.particles": 1000,
    "efp.init_scale": 1.0,
    "lmc.step": 0.01,
    "lmc.steps": 50,
    "lmc.schedule": "constant",
    "lmc.step_end": 0.0,
    "diag.enabled": True,
    "diag.mc_samples": 20000,
    "diag.knn_k": 5,
    "diag.cadence": 0,
    "diag.measure": "gibbs",
    "diag.mixture_points": 4000,
    "baseline.kind": "none",
    "baseline.step": 0.01,
    "baseline.iters": 2000,
}

_DEFAULTS = {
    "train-nn": {
        "problem.n": 500,
        "problem.d": 5,
        "problem.lam": 0.01,
        "problem.lam_prime": 0.01,
        "problem.teacher_width": 10,
        "problem.data_seed": 0,
    },
    "density": {
        "problem.n": 200,
        "problem.d": 1,
        "problem.lam": 0.01,
        "problem.lam_prime": 0.01,
        "problem.sigma": 0.5,
        "problem.observations": "",
        "problem.data_seed": 0,
        "efp.particles": 1000,
        "efp.outer_iters": 100,
        "lmc.step": 0.005,
    },
    "synth-image": {
        "problem.lam": 1e-5,
        "problem.lam_prime": 1e-4,
        "image.width": 64,
        "image.height": 64,
        "image.kappa": 50.0,
        "image.target": "",
        "image.checkpoint_every": 50,
        "efp.outer_step": 0.01,
        "efp.outer_iters": 300,
        "efp.particles": 200,
        "lmc.step": 0.1,
        "lmc.step_end": 0.01,
        "lmc.schedule": "cosine",
        "lmc.steps": 10,
        "diag.enabled": False,
        "diag.cadence": 50,
    },
    "toy1d": {
        "problem.target": 0.0,
        "problem.lam": 0.1,
        "problem.lam_prime": 0.1,
        "efp.outer_step": 0.1,
        "efp.outer_iters": 100,
        "efp.particles": 2000,
        "efp.init_scale": 3.0,
        "lmc.step": 0.1,
        "lmc.steps": 100,
        "diag.measure": "mixture",
        "baseline.step": 0.1,
        "baseline.iters": 1000,
    },
    "verify": {
        "verify.quick": True,
    },
}


def defaults_for(experiment: str) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    return {**_COMMON, **_DEFAULTS[experiment]}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def parse_assignments(lines, defaults: dict, source: str = "<overrides>") -> dict:
    """Parse ``key = value`` lines (``#`` comments, blank lines allowed)."""
    out = {}
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{no}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigError(f"{source}:{no}: unknown key {key!r}")
        out[key] = _coerce(key, raw, defaults[key])
    return out


@dataclass
class RunConfig:
    experiment: str
    values: dict = field(default_factory=dict)
    out: Path = Path("runs/latest")

    @classmethod
    def build(cls, experiment: str, path=None, overrides=(), out=None) -> "RunConfig":
        values = defaults_for(experiment)
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            values.update(parse_assignments(text.splitlines(), values, str(path)))
        values.update(parse_assignments(overrides, values))
        cfg = cls(experiment, values, Path(out) if out else Path("runs") / experiment)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.values[key]

    def validate(self) -> None:
        # constructing the typed configs runs their own checks
        self.efp_config()
        self.diagnostics_config()
        if self.values["baseline.kind"] not in ("none", "mfld", "pda", "all"):
            raise ConfigError("baseline.kind must be none, mfld, pda or all")
        if self.experiment == "synth-image":
            if self["image.width"] < 1 or self["image.height"] < 1:
                raise ConfigError("image size must be positive")

    def lmc_config(self) -> LmcConfig:
        v = self.values
        return LmcConfig(
            step=v["lmc.step"],
            steps=v["lmc.steps"],
            schedule=v["lmc.schedule"],
            step_end=v["lmc.step_end"] if v["lmc.schedule"] == "cosine" else None,
            seed=v["seed"],
        )

    def efp_config(self) -> EfpConfig:
        v = self.values
        return EfpConfig(
            outer_step=v["efp.outer_step"],
            outer_iters=v["efp.outer_iters"],
            particles=v["efp.particles"],
            lmc=self.lmc_config(),
            init_scale=v["efp.init_scale"],
            seed=v["seed"],
        )

    def diagnostics_config(self) -> DiagnosticsConfig:
        v = self.values
        return DiagnosticsConfig(
            mc_samples=v["diag.mc_samples"],
            knn_k=v["diag.knn_k"],
            cadence=v["diag.cadence"],
            seed=v["seed"],
            measure=v["diag.measure"],
            mixture_points=v["diag.mixture_points"],
        )

    def baseline_configs(self) -> list[BaselineConfig]:
        v = self.values
        kinds = {"none": [], "mfld": ["mfld"], "pda": ["pda"], "all": ["mfld", "pda"]}[v["baseline.kind"]]
        out = []
        for kind in kinds:
            iters = v["baseline.iters"] if kind == "mfld" else v["efp.outer_iters"]
            out.append(
                BaselineConfig(
                    kind=kind,
                    step=v["baseline.step"],
                    iters=iters,
                    lmc=self.lmc_config(),
                    particles=v["efp.particles"],
                    init_scale=v["efp.init_scale"],
                    seed=v["seed"],
                )
            )
        return out
