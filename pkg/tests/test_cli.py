import json
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from claps import cli, pipeline
from claps.config import ExperimentConfig, GridSpec, WorldConfig, desk_config, paper_config


def tiny_config(**kw):
    """Much smaller than the desk preset; keeps the CLI suite quick."""
    small = GridSpec(vx0=(0.1, 0.5, 2), wz0=(0.0, 0.5, 2), ax=(0.0, 0.5, 2),
                     alpha=(0.0, 2.0, 2), reps=4)
    val = GridSpec(vx0=(0.1, 0.5, 2), wz0=(0.0, 0.5, 2), ax=(0.0, 0.5, 1),
                   alpha=(0.0, 2.0, 2), reps=1)
    defaults = dict(cal_grid=small, val_grid=val, n_particles=200,
                    n_mesh_samples=120, n_test_transitions=150, master_seed=99)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = tiny_config()
    (out / "config.json").write_text(cfg.to_json())
    assert cli.main(["gen-data", "--config", str(out / "config.json"), "--out", str(out)]) == 0
    assert cli.main(["calibrate", "--config", str(out / "config.json"), "--out", str(out)]) == 0
    assert cli.main(["evaluate", "--config", str(out / "config.json"), "--out", str(out)]) == 0
    return out, cfg


def metric_bytes(out: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_config_json_roundtrip():
    cfg = paper_config()
    back = ExperimentConfig.from_json(cfg.to_json())
    assert back == cfg
    assert back.cal_grid.n_records == 40_500
    assert back.val_grid.n_points == 625


def test_config_rejects_unknown_method():
    with pytest.raises(ValueError):
        ExperimentConfig(methods=("CLAPS", "Oracle"))


def test_config_echo_written(run_dir):
    out, cfg = run_dir
    echoed = ExperimentConfig.from_json((out / "config_echo.json").read_text())
    assert echoed == cfg


def test_outputs_exist(run_dir):
    out, cfg = run_dir
    for name in ("cal.jsonl", "test.jsonl", "val_cases.json", "metrics.csv",
                 "trials.csv", "report.txt", "timings.log"):
        assert (out / name).exists(), name
    for m in cfg.methods:
        assert (out / f"calibration_{pipeline.method_slug(m)}.json").exists()


def test_rerun_is_byte_identical(run_dir, tmp_path):
    out, cfg = run_dir
    again = tmp_path / "again"
    again.mkdir()
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.to_json())
    for cmd in ("gen-data", "calibrate", "evaluate"):
        assert cli.main([cmd, "--config", str(cfgfile), "--out", str(again)]) == 0
    assert metric_bytes(out) == metric_bytes(again)
    assert (out / "cal.jsonl").read_bytes() == (again / "cal.jsonl").read_bytes()


def test_jobs_do_not_change_outputs(run_dir, tmp_path):
    out, cfg = run_dir
    par = tmp_path / "par"
    par.mkdir()
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.override(jobs=3).to_json())
    for cmd in ("gen-data", "calibrate", "evaluate"):
        assert cli.main([cmd, "--config", str(cfgfile), "--out", str(par)]) == 0
    assert metric_bytes(out)["metrics.csv"] == metric_bytes(par)["metrics.csv"]
    assert metric_bytes(out)["trials.csv"] == metric_bytes(par)["trials.csv"]


def test_method_isolation(run_dir, tmp_path):
    # dropping methods must not change any remaining method's numbers
    out, cfg = run_dir
    sub = tmp_path / "sub"
    sub.mkdir()
    keep = ("SS-EKF", "SS-EKF+CP", "CLAPS")
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.override(methods=keep).to_json())
    for cmd in ("gen-data", "calibrate", "evaluate"):
        assert cli.main([cmd, "--config", str(cfgfile), "--out", str(sub)]) == 0

    def rows_by_key(path):
        import csv

        with open(path) as fh:
            reader = csv.DictReader(fh)
            return {(r["method"], r.get("trial", "")): r for r in reader}

    full = rows_by_key(out / "trials.csv")
    subset = rows_by_key(sub / "trials.csv")
    for key, row in subset.items():
        assert full[key] == row


def test_missing_calibration_is_an_error(tmp_path):
    cfg = tiny_config()
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.to_json())
    assert cli.main(["gen-data", "--config", str(cfgfile), "--out", str(tmp_path)]) == 0
    rc = cli.main(["evaluate", "--config", str(cfgfile), "--out", str(tmp_path)])
    assert rc == 1


def test_dataset_schema_mismatch_is_an_error(tmp_path):
    cfg = tiny_config()
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.to_json())
    assert cli.main(["gen-data", "--config", str(cfgfile), "--out", str(tmp_path)]) == 0
    assert cli.main(["calibrate", "--config", str(cfgfile), "--out", str(tmp_path)]) == 0
    (tmp_path / "test.jsonl").write_text('{"schema": "other"}\n')
    rc = cli.main(["evaluate", "--config", str(cfgfile), "--out", str(tmp_path)])
    assert rc == 1


def test_degenerate_world_full_cp_coverage(tmp_path):
    # zero noise, no mismatch: every conformal method covers everything
    cfg = tiny_config(world=WorldConfig(mass_scale=1.0, inertia_scale=1.0, c_lin=0.0,
                                        c_ang=0.0, wrench_noise=(0.0, 0.0)),
                      n_particles=50, n_test_transitions=64)
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.to_json())
    for cmd in ("gen-data", "calibrate"):
        assert cli.main([cmd, "--config", str(cfgfile), "--out", str(tmp_path)]) == 0
    report = pipeline.cmd_evaluate(cfg, tmp_path)
    for name in ("SS-PP+CP", "Lie-PP+CP", "SS-EKF+CP", "CLAPS"):
        assert report.per_transition_coverage[name] == 1.0, name
        assert report.per_trial_coverage[name] == 1.0, name
        assert report.mean_volume[name] < 1e-9, name


def test_vacuous_calibration_reported_not_fatal(tmp_path):
    # 4 calibration records at alpha=0.1 overflow the quantile rank
    cfg = tiny_config(cal_grid=GridSpec(vx0=(0.1, 0.5, 1), wz0=(0, 0.5, 1),
                                        ax=(0, 0.5, 2), alpha=(0, 2, 2), reps=1),
                      n_particles=50, n_test_transitions=32)
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.to_json())
    for cmd in ("gen-data", "calibrate"):
        assert cli.main([cmd, "--config", str(cfgfile), "--out", str(tmp_path)]) == 0
    report = pipeline.cmd_evaluate(cfg, tmp_path)
    assert report.vacuous["CLAPS"]
    assert report.per_transition_coverage["CLAPS"] == 1.0
    assert np.isinf(report.mean_volume["CLAPS"])


def test_boundary_exports(run_dir):
    out, cfg = run_dir
    cfgfile = out / "config.json"
    rc = cli.main(["boundary", "--config", str(cfgfile), "--out", str(out),
                   "--case", "0.3,0.2,0.25,1.0"])
    assert rc == 0
    for m in cfg.methods:
        slug = pipeline.method_slug(m)
        verts = np.loadtxt(out / f"mesh_vertices_{slug}.csv", delimiter=",", skiprows=1)
        tris = np.loadtxt(out / f"mesh_triangles_{slug}.csv", delimiter=",", skiprows=1, dtype=int)
        assert verts.shape[1] == 3 and tris.shape[1] == 3
        assert tris.max() < len(verts)
        assert (out / f"footprint_{slug}.csv").exists()


def test_integrate_bench_structure(tmp_path):
    cfg = tiny_config(bench_grid=GridSpec(vx0=(0.1, 0.5, 2), wz0=(0, 0.5, 1),
                                          ax=(0, 0.5, 1), alpha=(0, 2, 2), reps=1),
                      bench_dts=(1e-2, 3e-2, 1e-1))
    cfgfile = tmp_path / "config.json"
    cfgfile.write_text(cfg.to_json())
    assert cli.main(["integrate-bench", "--config", str(cfgfile), "--out", str(tmp_path)]) == 0
    import csv

    with open(tmp_path / "integrators.csv") as fh:
        rows = list(csv.DictReader(fh))
    pairs = {(r["integrator"], r["space"]) for r in rows}
    assert ("rk4", "ss") in pairs and ("cf4", "lie") in pairs
    assert ("rk4", "lie") not in pairs and ("cf4", "ss") not in pairs
    assert len(rows) == 10 * 3  # (5 ss + 5 lie) integrators x 3 dts
    assert (tmp_path / "integrators_timing.csv").exists()


def test_cli_flag_overrides(run_dir, tmp_path):
    out, cfg = run_dir
    cfgfile = out / "config.json"
    dest = tmp_path / "o"
    dest.mkdir()
    rc = cli.main(["gen-data", "--config", str(cfgfile), "--out", str(dest),
                   "--seed", "123", "--alpha", "0.2", "--methods", "CLAPS,SS-EKF+CP"])
    assert rc == 0
    echoed = ExperimentConfig.from_json((dest / "config_echo.json").read_text())
    assert echoed.master_seed == 123
    assert echoed.alpha == 0.2
    assert echoed.methods == ("CLAPS", "SS-EKF+CP")


def test_desk_preset_end_to_end_under_budget(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "desk"
    out.mkdir()
    for cmd in ("gen-data", "calibrate", "evaluate"):
        assert cli.main([cmd, "--desk", "--out", str(out)]) == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, elapsed