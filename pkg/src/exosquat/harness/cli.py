"""Command line entry point: ``exosquat {train,eval,sweep,check}``."""

import argparse
from dataclasses import replace
import json
from pathlib import Path
import sys
import traceback

from exosquat.harness.config import PRESET_NAMES, apply_overrides, load_config
from exosquat.harness.export import export_plots
from exosquat.harness.runner import (SWEEP_FIELDS, make_controller, evaluate, run_train, sweep,
                                     write_json, write_rows)
from exosquat.harness.selfcheck import run_checks


def build_parser():
    p = argparse.ArgumentParser(prog="exosquat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("train", "train a policy with PPO"),
                       ("eval", "play a checkpoint and write telemetry + report"),
                       ("sweep", "evaluate a checkpoint across randomized test environments"),
                       ("check", "run the analytic self-test suites")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", help=f"YAML config file or preset name {PRESET_NAMES}")
        s.add_argument("--seed", type=int)
        s.add_argument("--checkpoint", help="policy checkpoint (.npz); eval/sweep without one "
                                            "play the reference motion")
        s.add_argument("--mode", choices=("clean", "perturbed", "human"))
        s.add_argument("--cycles", type=int, help="squat cycles per evaluation episode")
        s.add_argument("--envs", type=int, help="environments in a sweep")
        s.add_argument("--out", help="output directory (all artifacts go here)")
        s.add_argument("--workers", type=int, help="parallel worker processes")
        s.add_argument("--quiet", action="store_true")
    return p


def _config(args):
    path, preset = args.config, None
    if path is not None and path in PRESET_NAMES and not Path(path).is_file():
        path, preset = None, args.config
    cfg = load_config(path, preset=preset)
    cfg = apply_overrides(cfg, seed=args.seed, mode=args.mode, cycles=args.cycles, envs=args.envs,
                          out=args.out)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    return cfg


def cmd_train(cfg, args, out):
    res = run_train(cfg, out, verbose=not args.quiet)
    last = res.log[-1] if res.log else {}
    return {"samples": last.get("samples", 0), "iterations": len(res.log),
            "final_mean_step_reward": last.get("mean_step_reward"),
            "checkpoint": res.checkpoints[-1] if res.checkpoints else None}


def cmd_eval(cfg, args, out):
    controller = make_controller(cfg, args.checkpoint)
    levels = cfg.stress_levels if cfg.mode == "perturbed" else (1.0,)
    summary = {}
    for level in levels:
        sub = out / "eval" if level == 1.0 else out / f"eval_stress_{level:g}"
        tel, report = evaluate(cfg, controller, stress=level)
        tel.to_csv(sub / "telemetry.csv")
        data = report.to_dict()
        data.update(telemetry_sha256=tel.digest(), stress=level, mode=cfg.mode,
                    checkpoint=args.checkpoint, reason=tel.meta.get("reason", ""))
        write_json(sub / "report.json", data)
        export_plots(tel, report, sub / "plots")
        summary[f"stress_{level:g}"] = {k: data[k] for k in
                                        ("in_region", "in_region_both", "mean_reward", "falls",
                                         "cycles_completed", "telemetry_sha256")}
    return summary


def cmd_sweep(cfg, args, out):
    controller = make_controller(cfg, args.checkpoint)
    rows = sweep(cfg, controller)
    write_rows(out / "sweep.csv", rows, SWEEP_FIELDS)
    export_plots(None, None, out / "plots", sweep_rows=rows)
    rewards = [r["mean_cycle_reward"] for r in rows]
    data = {"envs": len(rows), "mean_cycle_reward": sum(rewards) / len(rewards),
            "min_cycle_reward": min(rewards), "falls": sum(r["fell"] for r in rows)}
    write_json(out / "sweep_summary.json", data)
    return data


def cmd_check(cfg, args, out):
    results = run_checks()
    data = {"passed": all(r.passed for r in results),
            "suites": [dict(name=r.name, passed=r.passed, detail=r.detail, seconds=r.seconds)
                       for r in results]}
    write_json(out / "check.json", data)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return data


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "check": cmd_check}


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        cfg = _config(args)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        result = COMMANDS[args.command](cfg, args, out)
    except Exception as exc:
        record = {"status": "error", "command": args.command, "error": type(exc).__name__,
                  "message": str(exc), "traceback": traceback.format_exc()}
        if out is not None:
            try:
                write_json(out / "error.json", record)
            except OSError:
                pass
        print(json.dumps({k: record[k] for k in ("status", "command", "error", "message")}),
              file=sys.stderr)
        return 2
    if args.command == "check" and not result["passed"]:
        print(json.dumps({"status": "failed", "command": "check"}), file=sys.stderr)
        return 1
    if not args.quiet or args.command != "check":
        print(json.dumps({"status": "ok", "command": args.command, "result": result},
                         default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
