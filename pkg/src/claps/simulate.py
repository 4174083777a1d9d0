"""Seeded ground-truth simulator and dataset generation.

The "world" integrates the body-frame dynamics with forward Euler at a
fixed substep rate, perturbing each commanded wrench with Gaussian noise
drawn once per planning step (optionally per substep). Epistemic error is
injected by giving the world its own inertia and viscous drag that the
nominal model does not know about.

Every record owns a counter-based RNG stream derived from
(master seed, record index), so datasets are bit-reproducible and
independent of generation order. The stream algorithm (philox4x64) is
recorded in dataset headers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from . import dynamics, se2
from .dynamics import JETBOT_INERTIA, ControlInput, LieModel, LieState
from .se2 import Pose, Twist

DATASET_SCHEMA = "claps-dataset-v1"
RNG_ALGORITHM = "philox4x64"

# Named randomness streams: every consumer derives its generator from
# (master seed, stream name, item index), so datasets, particle sets and
# meshes never share draws and results are independent of work order.
STREAMS = {"dataset": 0, "test": 1, "particles": 2, "mesh": 3, "cases": 4}


def stream_rng(master_seed: int, stream: str, index: int = 0) -> np.random.Generator:
    """Counter-based generator for one item of one named stream."""
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                spawn_key=(STREAMS[stream], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def record_rng(master_seed: int, index: int) -> np.random.Generator:
    """Per-record stream of the dataset randomness."""
    return stream_rng(master_seed, "dataset", index)


@dataclass(frozen=True)
class WorldParams:
    """Ground-truth environment parameters.

    ``true_inertia_diag`` is what the world integrates with; predictors use
    their own estimate. ``wrench_noise_diag`` is the diagonal of the wrench
    covariance (N^2, (N*m)^2). Drag coefficients model viscous friction.
    """

    true_inertia_diag: tuple[float, float, float]
    wrench_noise_diag: tuple[float, float] = (0.005, 0.001)
    c_lin: float = 0.0
    c_ang: float = 0.0
    substep_hz: int = 60
    dt_plan: float = 0.5
    seed: int = 0
    per_substep_noise: bool = False

    def __post_init__(self):
        n = self.substep_hz * self.dt_plan
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError("substep_hz * dt_plan must be a positive integer")

    @property
    def n_substeps(self) -> int:
        return round(self.substep_hz * self.dt_plan)

    @property
    def dt_substep(self) -> float:
        return self.dt_plan / self.n_substeps

    @property
    def drag_diag(self) -> np.ndarray:
        return np.array([self.c_lin, self.c_lin, self.c_ang])

    def lie_model(self) -> LieModel:
        return dynamics.unicycle_lie_model(self.true_inertia_diag)

    @classmethod
    def with_mismatch(cls, model_inertia_diag=JETBOT_INERTIA, mass_scale=1.15,
                      inertia_scale=1.3, c_lin=0.3, c_ang=0.005, **kw) -> "WorldParams":
        """World that differs from the nominal model by configurable knobs."""
        m = (model_inertia_diag[0] * mass_scale,
             model_inertia_diag[1] * mass_scale,
             model_inertia_diag[2] * inertia_scale)
        return cls(true_inertia_diag=m, c_lin=c_lin, c_ang=c_ang, **kw)


@dataclass(frozen=True)
class TransitionRecord:
    """One (state, commanded wrench, next state) calibration datum."""

    s0: LieState
    u_des: ControlInput
    s1: LieState
    seed: int  # record index within its dataset's master stream


@dataclass(frozen=True)
class GridSpec:
    """Linear ranges (lo, hi, count) for start twists and commanded
    accelerations (vx0, wz0, ax, alpha), plus repetitions per point."""

    vx0: tuple[float, float, int] = (0.1, 0.5, 3)
    wz0: tuple[float, float, int] = (0.0, 0.5, 3)
    ax: tuple[float, float, int] = (0.0, 0.5, 3)
    alpha: tuple[float, float, int] = (0.0, 2.0, 3)
    reps: int = 500

    def __post_init__(self):
        for rng_ in (self.vx0, self.wz0, self.ax, self.alpha):
            lo, hi, n = rng_
            if n < 1 or not np.isfinite([lo, hi]).all():
                raise ValueError("grid ranges must be finite with count >= 1")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")

    def points(self) -> np.ndarray:
        """Cartesian grid, shape (prod(counts), 4)."""
        axes = [np.linspace(lo, hi, n) for lo, hi, n in (self.vx0, self.wz0, self.ax, self.alpha)]
        return np.array(list(product(*axes)))

    @property
    def n_points(self) -> int:
        return int(np.prod([r[2] for r in (self.vx0, self.wz0, self.ax, self.alpha)]))

    @property
    def n_records(self) -> int:
        return self.n_points * self.reps

    def sample_box(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n iid uniform draws over the grid's bounding box, shape (n, 4)."""
        lows = np.array([r[0] for r in (self.vx0, self.wz0, self.ax, self.alpha)])
        highs = np.array([r[1] for r in (self.vx0, self.wz0, self.ax, self.alpha)])
        return lows + (highs - lows) * rng.random((n, 4))


def accel_to_wrench(cases, command_inertia_diag=JETBOT_INERTIA) -> np.ndarray:
    """Commanded accelerations (ax, alpha) -> body wrenches via the nominal
    inertia (the commander plans with the estimate, not the true values)."""
    cases = np.asarray(cases, dtype=float)
    return np.stack([command_inertia_diag[0] * cases[..., 2],
                     command_inertia_diag[2] * cases[..., 3]], axis=-1)


def _rollout_batch(pose, xi, u_cmd, world: WorldParams, model: LieModel) -> tuple[np.ndarray, np.ndarray]:
    """Forward-Euler substeps of the true dynamics.

    ``u_cmd`` has shape (N, 2) for one wrench per planning step, or
    (N, n_substeps, 2) for per-substep wrenches.
    """
    h = world.dt_substep
    drag = world.drag_diag
    per_substep = u_cmd.ndim == 3
    for k in range(world.n_substeps):
        u_k = u_cmd[:, k, :] if per_substep else u_cmd
        pose, xi = dynamics.lie_step_batch(pose, xi, u_k, h, "fe", model, drag=drag)
    return pose, xi


def _noise_scale(world: WorldParams) -> np.ndarray:
    return np.sqrt(np.asarray(world.wrench_noise_diag, dtype=float))


def true_step(s0: LieState, u_des: ControlInput, world: WorldParams,
              rng: np.random.Generator) -> LieState:
    """One noisy planning step of the ground-truth dynamics."""
    pose, xi = s0.as_arrays()
    scale = _noise_scale(world)
    if world.per_substep_noise:
        noise = rng.standard_normal((1, world.n_substeps, 2)) * scale
        u_cmd = u_des.as_array() + noise
    else:
        u_cmd = (u_des.as_array() + rng.standard_normal(2) * scale)[None]
    p, x = _rollout_batch(pose[None], xi[None], u_cmd, world, world.lie_model())
    return LieState.from_arrays(p[0], x[0])


def _records_from_cases(cases, world: WorldParams, command_inertia_diag,
                        start_index=0, stream="dataset") -> list[TransitionRecord]:
    """Roll one noisy transition per case row (vx0, wz0, ax, alpha)."""
    cases = np.asarray(cases, dtype=float)
    n = len(cases)
    scale = _noise_scale(world)
    if world.per_substep_noise:
        noise = np.empty((n, world.n_substeps, 2))
        for i in range(n):
            noise[i] = stream_rng(world.seed, stream, start_index + i).standard_normal((world.n_substeps, 2)) * scale
    else:
        noise = np.empty((n, 2))
        for i in range(n):
            noise[i] = stream_rng(world.seed, stream, start_index + i).standard_normal(2) * scale

    u_des = accel_to_wrench(cases, command_inertia_diag)
    u_cmd = u_des + noise if not world.per_substep_noise else u_des[:, None, :] + noise
    pose0 = np.zeros((n, 3))
    xi0 = np.zeros((n, 3))
    xi0[:, 0] = cases[:, 0]
    xi0[:, 2] = cases[:, 1]
    pose1, xi1 = _rollout_batch(pose0, xi0.copy(), u_cmd, world, world.lie_model())
    return [
        TransitionRecord(
            LieState.from_arrays(pose0[i], xi0[i]),
            ControlInput.from_array(u_des[i]),
            LieState.from_arrays(pose1[i], xi1[i]),
            start_index + i,
        )
        for i in range(n)
    ]


def gen_grid_dataset(grid: GridSpec, world: WorldParams,
                     command_inertia_diag=JETBOT_INERTIA,
                     start_index=0) -> list[TransitionRecord]:
    """All grid points x repetitions, independent noise per record.

    ``start_index`` offsets the per-record streams so several datasets can
    share one world without reusing noise draws.
    """
    cases = np.repeat(grid.points(), grid.reps, axis=0)
    return _records_from_cases(cases, world, command_inertia_diag, start_index=start_index)


def gen_iid_dataset(grid: GridSpec, world: WorldParams, n: int,
                    command_inertia_diag=JETBOT_INERTIA, start_index=0,
                    stream="dataset") -> list[TransitionRecord]:
    """n transitions with start conditions drawn iid uniform over the grid
    box; iid draws make calibration/test splits exchangeable by
    construction."""
    rng = stream_rng(world.seed, "cases", start_index)
    cases = grid.sample_box(rng, n)
    return _records_from_cases(cases, world, command_inertia_diag,
                               start_index=start_index, stream=stream)


def mc_particles(s0: LieState, u_des: ControlInput, world: WorldParams, n: int,
                 seed: int, stream_index: int = 0) -> np.ndarray:
    """n independent rollouts of the true dynamics; returns (n, 3) poses.

    ``stream_index`` separates particle sets sharing one master seed
    (e.g. one per validation trial)."""
    if n < 1:
        raise ValueError("need at least one particle")
    rng = stream_rng(seed, "particles", stream_index)
    pose, xi = s0.as_arrays()
    scale = _noise_scale(world)
    if world.per_substep_noise:
        u_cmd = u_des.as_array() + rng.standard_normal((n, world.n_substeps, 2)) * scale
    else:
        u_cmd = u_des.as_array() + rng.standard_normal((n, 2)) * scale
    p, _ = _rollout_batch(np.tile(pose, (n, 1)), np.tile(xi, (n, 1)), u_cmd, world,
                          world.lie_model())
    return p


def estimate_inertia(records: list[TransitionRecord], dt_plan: float = 0.5) -> np.ndarray:
    """Fit diag(m, m, I) from constant-wrench rollouts by regressing the
    wrench against the finite-difference acceleration over each record's
    planning step (duration ``dt_plan``)."""
    if not records:
        raise ValueError("no records")
    fx = np.array([r.u_des.fx for r in records])
    tz = np.array([r.u_des.tz for r in records])
    ax = np.array([r.s1.twist.vx - r.s0.twist.vx for r in records]) / dt_plan
    alpha = np.array([r.s1.twist.wz - r.s0.twist.wz for r in records]) / dt_plan
    if np.sum(ax * ax) < 1e-12 or np.sum(alpha * alpha) < 1e-12:
        raise ValueError("degenerate regression: records do not excite both mass and inertia")
    m = np.sum(fx * ax) / np.sum(ax * ax)
    izz = np.sum(tz * alpha) / np.sum(alpha * alpha)
    return np.diag([m, m, izz])


# ---------------------------------------------------------------------------
# dataset serialization (JSON lines)


def dataset_header(world: WorldParams, n_records: int, command_inertia_diag=JETBOT_INERTIA,
                   kind="transitions") -> dict:
    return {
        "schema": DATASET_SCHEMA,
        "kind": kind,
        "rng": RNG_ALGORITHM,
        "master_seed": world.seed,
        "n_records": n_records,
        "command_inertia": list(command_inertia_diag),
        "world": {
            "true_inertia_diag": list(world.true_inertia_diag),
            "wrench_noise_diag": list(world.wrench_noise_diag),
            "c_lin": world.c_lin,
            "c_ang": world.c_ang,
            "substep_hz": world.substep_hz,
            "dt_plan": world.dt_plan,
            "per_substep_noise": world.per_substep_noise,
        },
    }


def _fmt(values) -> list[float]:
    return [float(v) for v in values]


def write_dataset(path, records: list[TransitionRecord], header: dict) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for r in records:
            q0, dq0 = r.s0.as_arrays()
            q1, dq1 = r.s1.as_arrays()
            row = {
                "q0": _fmt(q0), "dq0": _fmt(dq0),
                "u": _fmt(r.u_des.as_array()),
                "q1": _fmt(q1), "dq1": _fmt(dq1),
                "seed": r.seed,
            }
            fh.write(json.dumps(row) + "\n")


def read_dataset(path) -> tuple[dict, list[TransitionRecord]]:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != DATASET_SCHEMA:
            raise ValueError(f"unsupported dataset schema {header.get('schema')!r}")
        records = []
        for line in fh:
            row = json.loads(line)
            records.append(TransitionRecord(
                LieState.from_arrays(row["q0"], row["dq0"]),
                ControlInput.from_array(row["u"]),
                LieState.from_arrays(row["q1"], row["dq1"]),
                int(row["seed"]),
            ))
    return header, records


def world_from_header(header: dict) -> WorldParams:
    w = header["world"]
    return WorldParams(
        true_inertia_diag=tuple(w["true_inertia_diag"]),
        wrench_noise_diag=tuple(w["wrench_noise_diag"]),
        c_lin=w["c_lin"], c_ang=w["c_ang"],
        substep_hz=w["substep_hz"], dt_plan=w["dt_plan"],
        seed=header["master_seed"],
        per_substep_noise=w["per_substep_noise"],
    )
