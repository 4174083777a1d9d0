"""Experiment pipeline behind the CLI subcommands.

Everything is a pure function of (config, out_dir): datasets derive from
named streams of the master seed, trials own their particle streams, and
reductions are sorted by trial index, so results are byte-identical
across runs and across --jobs settings. Wall-clock timings go to a
separate log file, never into metric CSVs.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics, regions, se2, simulate
from .config import ExperimentConfig
from .conformal import CalibrationResult, scores_pairwise
from .methods import METHODS, MethodBank, dataset_fingerprint, method_slug
from .regions import footprint_from_mesh, footprint_from_points, iou, reconstruct_mesh
from .simulate import accel_to_wrench, read_dataset, stream_rng, write_dataset

CALIBRATION_SCHEMA = "claps-calibration-v1"


def _fmt(x) -> str:
    """Shortest round-trip decimal; deterministic across runs."""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(path: Path, headers, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(headers)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _log_timing(out_dir: Path, label: str, seconds: float) -> None:
    with open(out_dir / "timings.log", "a") as fh:
        fh.write(f"{label}: {seconds:.3f} s\n")


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(cfg: ExperimentConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    world = cfg.world.world(cfg.master_seed)

    cal_records = simulate.gen_grid_dataset(cfg.cal_grid, world,
                                            command_inertia_diag=cfg.world.model_inertia)
    write_dataset(out_dir / "cal.jsonl", cal_records,
                  simulate.dataset_header(world, len(cal_records),
                                          command_inertia_diag=cfg.world.model_inertia,
                                          kind="calibration"))

    test_records = simulate.gen_iid_dataset(cfg.cal_grid, world, cfg.n_test_transitions,
                                            command_inertia_diag=cfg.world.model_inertia,
                                            stream="test")
    write_dataset(out_dir / "test.jsonl", test_records,
                  simulate.dataset_header(world, len(test_records),
                                          command_inertia_diag=cfg.world.model_inertia,
                                          kind="test"))

    cases = cfg.val_grid.points()
    with open(out_dir / "val_cases.json", "w") as fh:
        json.dump({"schema": "claps-valcases-v1",
                   "cases": [[float(v) for v in row] for row in cases]}, fh, indent=1)

    (out_dir / "config_echo.json").write_text(cfg.to_json())
    _log_timing(out_dir, "gen-data", time.perf_counter() - t0)
    return {"n_cal": len(cal_records), "n_test": len(test_records), "n_val_cases": len(cases)}


# ---------------------------------------------------------------------------
# calibrate


def _bank_for(cfg: ExperimentConfig) -> MethodBank:
    return MethodBank(cfg.noise_config(), model_inertia_diag=cfg.world.model_inertia,
                      substep_hz=cfg.world.substep_hz, dt_plan=cfg.world.dt_plan)


def cmd_calibrate(cfg: ExperimentConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    t0 = time.perf_counter()
    _, cal_records = read_dataset(out_dir / "cal.jsonl")
    bank = _bank_for(cfg)
    bank.fit_data_covariances(cal_records)
    base = bank.base_for_records(cal_records)
    ds_print = dataset_fingerprint(cal_records)

    summary = {}
    for name in cfg.methods:
        fingerprints = {
            "predictor": f"{METHODS[name].cov_source}/qscale={cfg.predictor_q_scale}",
            "dataset": ds_print,
        }
        cal = bank.calibrate_method(name, cal_records, cfg.alpha, base,
                                    fingerprints=fingerprints)
        artifact = {
            "schema": CALIBRATION_SCHEMA,
            "method": name,
            "result": json.loads(cal.to_json()),
        }
        if METHODS[name].cov_source == "2m":
            artifact["data_fit"] = {"q_2m": bank.q_2m.tolist()}
        elif METHODS[name].cov_source == "mle":
            artifact["data_fit"] = {"mle_bias": bank.mle_bias.tolist(),
                                    "q_mle": bank.q_mle.tolist()}
        path = out_dir / f"calibration_{method_slug(name)}.json"
        path.write_text(json.dumps(artifact, sort_keys=True, indent=1))
        summary[name] = {"q_hat": cal.q_hat, "vacuous": cal.vacuous}
    _log_timing(out_dir, "calibrate", time.perf_counter() - t0)
    return summary


def load_calibrations(cfg: ExperimentConfig, out_dir, bank: MethodBank) -> dict:
    """Per-method CalibrationResult; installs data-fit matrices on the bank."""
    out_dir = Path(out_dir)
    cals = {}
    q_2m = mle_bias = q_mle = None
    for name in cfg.methods:
        path = out_dir / f"calibration_{method_slug(name)}.json"
        if not path.exists():
            raise FileNotFoundError(f"missing calibration for method {name!r}: {path}")
        artifact = json.loads(path.read_text())
        if artifact.get("schema") != CALIBRATION_SCHEMA:
            raise ValueError(f"unsupported calibration schema in {path}")
        cals[name] = CalibrationResult.from_json(json.dumps(artifact["result"]))
        fit = artifact.get("data_fit") or {}
        if "q_2m" in fit:
            q_2m = np.array(fit["q_2m"])
        if "q_mle" in fit:
            mle_bias = np.array(fit["mle_bias"])
            q_mle = np.array(fit["q_mle"])
    if any(METHODS[n].cov_source in ("2m", "mle") for n in cfg.methods):
        if q_2m is None:
            q_2m = np.zeros((3, 3))
        if q_mle is None:
            mle_bias, q_mle = np.zeros(3), np.zeros((3, 3))
        bank.set_data_covariances(q_2m, mle_bias, q_mle)
    return cals


# ---------------------------------------------------------------------------
# evaluate


@dataclass
class TrialResult:
    index: int
    case: np.ndarray
    coverage: dict
    volume: dict
    iou: dict


@dataclass
class MetricsReport:
    """Per-method aggregates over one evaluation run."""

    methods: list
    per_trial_coverage: dict
    per_transition_coverage: dict
    mean_volume: dict
    volume_ratio_vs_claps: dict
    mean_iou: dict
    volume_wins_vs_claps: dict
    iou_wins_vs_claps: dict
    n_trials: int
    vacuous: dict


def _per_transition_coverage(cfg, bank, cals, records) -> dict:
    base = bank.base_for_records(records)
    truths = np.array([r.s1.pose.as_array() for r in records])
    out = {}
    for name in cfg.methods:
        cal = cals[name]
        if cal.vacuous:
            out[name] = 1.0
            continue
        means, covs, _ = bank.method_arrays(name, base)
        scores = scores_pairwise(METHODS[name].score_kind, truths, means, covs)
        out[name] = float(np.mean(scores <= cal.q_hat))
    return out


def _run_trial(i, case, cfg, world, bank, cals, base) -> TrialResult:
    u = control_from_case(case, cfg)
    s0 = simulate.LieState.from_arrays(np.zeros(3), [case[0], 0.0, case[1]])
    particles = simulate.mc_particles(s0, u, world, cfg.n_particles,
                                      seed=cfg.master_seed, stream_index=i)
    particle_fp = footprint_from_points(particles[:, :2], cfg.iou_resolution)
    coverage, volume, iou_by = {}, {}, {}
    for name in cfg.methods:
        cal = cals[name]
        pred = bank.prediction(name, base, i)
        coverage[name] = regions.empirical_coverage(particles, pred, cal)
        if cal.vacuous:
            volume[name] = math.inf
            iou_by[name] = 0.0
            continue
        try:
            mesh = reconstruct_mesh(pred, cal, cfg.n_mesh_samples)
        except ValueError:  # degenerate (zero-size) region
            volume[name] = 0.0
            iou_by[name] = 0.0
            continue
        volume[name] = mesh.volume
        mesh_fp = footprint_from_mesh(mesh, cfg.iou_resolution)
        iou_by[name] = iou(mesh_fp, particle_fp)
    return TrialResult(i, case, coverage, volume, iou_by)


def control_from_case(case, cfg) -> dynamics.ControlInput:
    u = accel_to_wrench(np.asarray(case)[None], cfg.world.model_inertia)[0]
    return dynamics.ControlInput.from_array(u)


def cmd_evaluate(cfg: ExperimentConfig, out_dir) -> MetricsReport:
    out_dir = Path(out_dir)
    t0 = time.perf_counter()
    world = cfg.world.world(cfg.master_seed)
    bank = _bank_for(cfg)
    cals = load_calibrations(cfg, out_dir, bank)

    _, test_records = read_dataset(out_dir / "test.jsonl")
    per_transition = _per_transition_coverage(cfg, bank, cals, test_records)

    cases = np.array(json.loads((out_dir / "val_cases.json").read_text())["cases"])
    pose0 = np.zeros((len(cases), 3))
    xi0 = np.zeros((len(cases), 3))
    xi0[:, 0] = cases[:, 0]
    xi0[:, 2] = cases[:, 1]
    u_all = accel_to_wrench(cases, cfg.world.model_inertia)
    base = bank.base_predictions(pose0, xi0, u_all)

    def work(i):
        return _run_trial(i, cases[i], cfg, world, bank, cals, base)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            trials = sorted(pool.map(work, range(len(cases))), key=lambda t: t.index)
    else:
        trials = [work(i) for i in range(len(cases))]

    report = _aggregate(cfg, trials, per_transition)
    _write_trials_csv(out_dir, cfg, trials)
    _write_metrics_csv(out_dir, cfg, report)
    (out_dir / "report.txt").write_text(render_report(report))
    _log_timing(out_dir, "evaluate", time.perf_counter() - t0)
    return report


def _aggregate(cfg, trials, per_transition) -> MetricsReport:
    methods = list(cfg.methods)
    cov = {m: float(np.mean([t.coverage[m] for t in trials])) for m in methods}
    vol = {m: float(np.mean([t.volume[m] for t in trials])) for m in methods}
    mean_iou = {m: float(np.mean([t.iou[m] for t in trials])) for m in methods}
    ratio, vol_wins, iou_wins = {}, {}, {}
    if "CLAPS" in methods:
        claps_vol = vol["CLAPS"]
        for m in methods:
            ratio[m] = vol[m] / claps_vol if claps_vol > 0 else math.inf
            vol_wins[m] = int(sum(t.volume[m] < t.volume["CLAPS"] for t in trials))
            iou_wins[m] = int(sum(t.iou[m] > t.iou["CLAPS"] for t in trials))
    vacuous = {m: bool(math.isinf(vol[m])) for m in methods}
    return MetricsReport(methods=methods, per_trial_coverage=cov,
                         per_transition_coverage=per_transition, mean_volume=vol,
                         volume_ratio_vs_claps=ratio, mean_iou=mean_iou,
                         volume_wins_vs_claps=vol_wins, iou_wins_vs_claps=iou_wins,
                         n_trials=len(trials), vacuous=vacuous)


def _write_trials_csv(out_dir, cfg, trials) -> None:
    rows = []
    for t in trials:
        for m in cfg.methods:
            rows.append([t.index, *t.case, m, t.coverage[m], t.volume[m], t.iou[m]])
    _write_csv(out_dir / "trials.csv",
               ["trial", "vx0", "wz0", "ax", "alpha_cmd", "method",
                "coverage", "volume", "iou"], rows)


def _write_metrics_csv(out_dir, cfg, report: MetricsReport) -> None:
    rows = []
    for m in report.methods:
        rows.append([
            m,
            report.per_trial_coverage[m],
            report.per_transition_coverage[m],
            report.mean_volume[m],
            report.volume_ratio_vs_claps.get(m, math.nan),
            report.mean_iou[m],
            report.volume_wins_vs_claps.get(m, ""),
            report.iou_wins_vs_claps.get(m, ""),
            report.vacuous[m],
        ])
    _write_csv(out_dir / "metrics.csv",
               ["method", "coverage_trial_mean", "coverage_per_transition",
                "volume_mean", "volume_ratio_vs_claps", "iou_mean",
                "volume_wins_vs_claps", "iou_wins_vs_claps", "vacuous"], rows)


def render_report(report: MetricsReport) -> str:
    lines = [
        f"{'method':<12} {'cov(trial)':>10} {'cov(trans)':>10} {'volume':>12} "
        f"{'vol/CLAPS':>10} {'IoU':>8}",
    ]
    for m in report.methods:
        ratio = report.volume_ratio_vs_claps.get(m, math.nan)
        lines.append(
            f"{m:<12} {report.per_trial_coverage[m]:>10.4f} "
            f"{report.per_transition_coverage[m]:>10.4f} "
            f"{report.mean_volume[m]:>12.6g} {ratio:>10.3f} "
            f"{report.mean_iou[m]:>8.4f}"
            + ("  [vacuous]" if report.vacuous[m] else "")
        )
    lines.append(f"trials: {report.n_trials}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# boundary (online prediction + mesh export)


def cmd_boundary(cfg: ExperimentConfig, out_dir, case) -> dict:
    out_dir = Path(out_dir)
    t0 = time.perf_counter()
    bank = _bank_for(cfg)
    cals = load_calibrations(cfg, out_dir, bank)
    case = np.asarray(case, dtype=float)
    pose0 = np.zeros((1, 3))
    xi0 = np.array([[case[0], 0.0, case[1]]])
    u = accel_to_wrench(case[None], cfg.world.model_inertia)
    base = bank.base_predictions(pose0, xi0, u)
    written = {}
    for name in cfg.methods:
        cal = cals[name]
        slug = method_slug(name)
        if cal.vacuous:
            written[name] = "vacuous"
            continue
        pred = bank.prediction(name, base, 0)
        mesh = reconstruct_mesh(pred, cal, cfg.n_mesh_samples)
        _write_csv(out_dir / f"mesh_vertices_{slug}.csv", ["x", "y", "theta"],
                   mesh.vertices.tolist())
        _write_csv(out_dir / f"mesh_triangles_{slug}.csv", ["i", "j", "k"],
                   mesh.triangles.tolist())
        fp = footprint_from_mesh(mesh, cfg.iou_resolution)
        _write_csv(out_dir / f"footprint_{slug}.csv", ["cx", "cy"],
                   fp.cell_centers().tolist())
        written[name] = f"{len(mesh.vertices)} vertices, volume {mesh.volume:.6g}"
    _log_timing(out_dir, "boundary", time.perf_counter() - t0)
    return written


# ---------------------------------------------------------------------------
# integrator benchmark


BENCH_PAIRS = [("ss", m) for m in dynamics.SS_METHODS] + \
              [("lie", m) for m in dynamics.LIE_METHODS]


def integrator_benchmark(cases, dts, model_inertia_diag, horizon=1.0):
    """RMSE (vs the fine reference) and per-step timing for every
    (space, integrator, dt). ``cases`` are (vx0, wz0, ax, alpha) rows."""
    cases = np.asarray(cases, dtype=float)
    lie_model = dynamics.unicycle_lie_model(model_inertia_diag)
    ss_model = dynamics.unicycle_ss_model(model_inertia_diag)
    u = accel_to_wrench(cases, model_inertia_diag)
    xi0 = np.zeros((len(cases), 3))
    xi0[:, 0] = cases[:, 0]
    xi0[:, 2] = cases[:, 1]
    pose0 = np.zeros((len(cases), 3))
    ref_pose, _ = dynamics.reference_terminal_batch(pose0, xi0, u, horizon, lie_model,
                                                    richardson=True)
    rmse_rows, timing_rows = [], []
    for space, method in BENCH_PAIRS:
        for dt in dts:
            n = max(1, round(horizon / dt))
            h = horizon / n
            t0 = time.perf_counter()
            if space == "lie":
                pose, xi = pose0.copy(), xi0.copy()
                for _ in range(n):
                    pose, xi = dynamics.lie_step_batch(pose, xi, u, h, method, lie_model)
            else:
                q, dq = _ss_start(pose0, xi0)
                for _ in range(n):
                    q, dq = dynamics.ss_step_batch(q, dq, u, h, method, ss_model)
                pose = se2.kinematics_map(q)
            elapsed = time.perf_counter() - t0
            err = se2.group_error(ref_pose, pose)
            rmse = float(np.sqrt(np.mean(np.sum(err * err, axis=1))))
            rmse_rows.append([method, space, dt, rmse])
            timing_rows.append([method, space, dt, 1e9 * elapsed / (n * len(cases))])
    return rmse_rows, timing_rows


def _ss_start(pose0, xi0):
    jp = np.swapaxes(dynamics.body_jacobian(pose0), -1, -2)
    return pose0.copy(), (jp @ xi0[..., None])[..., 0]


def measured_orders(rmse_rows, floor=1e-12) -> dict:
    """Log-log slope of RMSE vs dt per (integrator, space), using only
    points above the float64 roundoff floor."""
    groups = {}
    for method, space, dt, rmse in rmse_rows:
        groups.setdefault((method, space), []).append((dt, rmse))
    slopes = {}
    for key, pts in groups.items():
        pts = sorted(pts)
        dts = np.array([p[0] for p in pts])
        errs = np.array([p[1] for p in pts])
        keep = errs > floor
        if keep.sum() >= 2:
            slope = np.polyfit(np.log(dts[keep]), np.log(errs[keep]), 1)[0]
        else:
            slope = math.nan
        slopes[key] = float(slope)
    return slopes


def cmd_integrate_bench(cfg: ExperimentConfig, out_dir) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    cases = cfg.bench_grid.points()
    rmse_rows, timing_rows = integrator_benchmark(cases, cfg.bench_dts,
                                                  cfg.world.model_inertia)
    # determinism contract: the accuracy table is byte-reproducible; the
    # hardware-dependent timings live in their own artifact
    _write_csv(out_dir / "integrators.csv",
               ["integrator", "space", "dt", "rmse"], rmse_rows)
    _write_csv(out_dir / "integrators_timing.csv",
               ["integrator", "space", "dt", "ns_per_step"], timing_rows)
    (out_dir / "config_echo.json").write_text(cfg.to_json())
    _log_timing(out_dir, "integrate-bench", time.perf_counter() - t0)
    return measured_orders(rmse_rows)
