"""Command-line benchmark harness.

Subcommands:

* ``gen-data``        simulate calibration/test datasets and validation cases
* ``calibrate``       fit per-method calibration artifacts from cal.jsonl
* ``evaluate``        coverage / volume / IoU metrics over validation trials
* ``boundary``        export region meshes and footprints for one case
* ``integrate-bench`` integrator accuracy/timing table

Every command reads one JSON config (or a ``--desk``/``--paper`` preset),
echoes the effective config next to its outputs, and produces
byte-identical metric files when re-run with the same config.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import PRESETS, ExperimentConfig
from . import pipeline


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--desk", action="store_true", help="small preset (default)")
    parser.add_argument("--paper", action="store_true", help="full-scale preset")
    parser.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument("--alpha", type=float, help="override failure probability")
    parser.add_argument("--methods", type=str, help="comma-separated method subset")
    parser.add_argument("--jobs", type=int, help="trial-level worker threads")


def load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config.read_text())
    else:
        preset = "paper" if args.paper else "desk"
        cfg = PRESETS[preset]()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.methods:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.jobs is not None:
        overrides["jobs"] = args.jobs
    return cfg.override(**overrides) if overrides else cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="claps", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("gen-data", "calibrate", "evaluate", "integrate-bench"):
        p = sub.add_parser(name)
        _add_common(p)

    p = sub.add_parser("boundary")
    _add_common(p)
    p.add_argument("--case", type=str,
                   help="vx0,wz0,ax,alpha of the queried start state and action")
    p.add_argument("--index", type=int, default=0,
                   help="validation-case index when --case is not given")

    args = parser.parse_args(argv)
    cfg = load_config(args)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)

    try:
        if args.command == "gen-data":
            info = pipeline.cmd_gen_data(cfg, out)
            print(f"wrote {info['n_cal']} calibration, {info['n_test']} test records, "
                  f"{info['n_val_cases']} validation cases -> {out}")
        elif args.command == "calibrate":
            summary = pipeline.cmd_calibrate(cfg, out)
            for name, s in summary.items():
                flag = "  [vacuous]" if s["vacuous"] else ""
                print(f"{name:<12} q_hat={s['q_hat']:.6g}{flag}")
        elif args.command == "evaluate":
            report = pipeline.cmd_evaluate(cfg, out)
            print(pipeline.render_report(report), end="")
        elif args.command == "boundary":
            if args.case:
                case = [float(v) for v in args.case.split(",")]
                if len(case) != 4:
                    parser.error("--case needs vx0,wz0,ax,alpha")
            else:
                import json

                cases = json.loads((out / "val_cases.json").read_text())["cases"]
                case = cases[args.index]
            written = pipeline.cmd_boundary(cfg, out, case)
            for name, what in written.items():
                print(f"{name:<12} {what}")
        elif args.command == "integrate-bench":
            slopes = pipeline.cmd_integrate_bench(cfg, out)
            for (method, space), slope in sorted(slopes.items()):
                print(f"{space:>3} {method:<5} measured order {slope:.2f}")
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
