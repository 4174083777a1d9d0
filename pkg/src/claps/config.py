"""Experiment configuration: one JSON file fully specifies a run.

Every CLI command echoes its effective configuration; re-running the echo
reproduces all metric outputs byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

from .dynamics import JETBOT_INERTIA
from .estimate import NoiseConfig
from .methods import METHOD_NAMES
from .simulate import GridSpec, WorldParams

import numpy as np

CONFIG_SCHEMA = "claps-config-v1"

PAPER_RANGES = dict(vx0=(0.1, 0.5), wz0=(0.0, 0.5), ax=(0.0, 0.5), alpha=(0.0, 2.0))


def _grid(counts, reps) -> GridSpec:
    return GridSpec(
        vx0=PAPER_RANGES["vx0"] + (counts[0],),
        wz0=PAPER_RANGES["wz0"] + (counts[1],),
        ax=PAPER_RANGES["ax"] + (counts[2],),
        alpha=PAPER_RANGES["alpha"] + (counts[3],),
        reps=reps,
    )


@dataclass(frozen=True)
class WorldConfig:
    """Serializable description of the ground-truth environment and the
    nominal model the predictors are allowed to know."""

    model_inertia: tuple[float, float, float] = JETBOT_INERTIA
    mass_scale: float = 1.15
    inertia_scale: float = 1.3
    c_lin: float = 0.3
    c_ang: float = 0.005
    wrench_noise: tuple[float, float] = (0.005, 0.001)
    substep_hz: int = 60
    dt_plan: float = 0.5
    per_substep_noise: bool = False

    def world(self, seed: int) -> WorldParams:
        return WorldParams.with_mismatch(
            model_inertia_diag=self.model_inertia,
            mass_scale=self.mass_scale, inertia_scale=self.inertia_scale,
            c_lin=self.c_lin, c_ang=self.c_ang,
            wrench_noise_diag=self.wrench_noise,
            substep_hz=self.substep_hz, dt_plan=self.dt_plan,
            per_substep_noise=self.per_substep_noise, seed=seed,
        )


@dataclass(frozen=True)
class ExperimentConfig:
    schema: str = CONFIG_SCHEMA
    world: WorldConfig = field(default_factory=WorldConfig)
    cal_grid: GridSpec = field(default_factory=lambda: _grid((2, 2, 2, 2), 10))
    val_grid: GridSpec = field(default_factory=lambda: _grid((2, 2, 2, 2), 1))
    bench_grid: GridSpec = field(default_factory=lambda: _grid((2, 2, 2, 2), 1))
    bench_dts: tuple[float, ...] = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)
    alpha: float = 0.1
    methods: tuple[str, ...] = tuple(METHOD_NAMES)
    predictor_q_scale: float = 0.25
    n_particles: int = 1000
    n_mesh_samples: int = 500
    n_test_transitions: int = 2000
    iou_resolution: float = 0.005
    master_seed: int = 20240801
    jobs: int = 1

    def __post_init__(self):
        if self.schema != CONFIG_SCHEMA:
            raise ValueError(f"unsupported config schema {self.schema!r}")
        unknown = set(self.methods) - set(METHOD_NAMES)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")

    def noise_config(self) -> NoiseConfig:
        q = self.predictor_q_scale * np.diag(self.world.wrench_noise)
        return NoiseConfig(q, per_substep=True)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        raw = json.loads(text)
        for key in ("cal_grid", "val_grid", "bench_grid"):
            g = raw[key]
            raw[key] = GridSpec(vx0=tuple(g["vx0"]), wz0=tuple(g["wz0"]),
                                ax=tuple(g["ax"]), alpha=tuple(g["alpha"]), reps=g["reps"])
        w = raw["world"]
        raw["world"] = WorldConfig(
            model_inertia=tuple(w["model_inertia"]), mass_scale=w["mass_scale"],
            inertia_scale=w["inertia_scale"], c_lin=w["c_lin"], c_ang=w["c_ang"],
            wrench_noise=tuple(w["wrench_noise"]), substep_hz=w["substep_hz"],
            dt_plan=w["dt_plan"], per_substep_noise=w["per_substep_noise"])
        raw["methods"] = tuple(raw["methods"])
        raw["bench_dts"] = tuple(raw["bench_dts"])
        return cls(**raw)

    def override(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def desk_config() -> ExperimentConfig:
    """Small everything: end-to-end in well under a minute."""
    return ExperimentConfig()


def paper_config() -> ExperimentConfig:
    """Grid sizes of the original study; hours, not seconds."""
    return ExperimentConfig(
        cal_grid=_grid((3, 3, 3, 3), 500),
        val_grid=_grid((5, 5, 5, 5), 1),
        bench_grid=_grid((5, 5, 5, 5), 1),
        n_particles=100_000,
        n_mesh_samples=5000,
        n_test_transitions=10_000,
    )


PRESETS = {"desk": desk_config, "paper": paper_config}
