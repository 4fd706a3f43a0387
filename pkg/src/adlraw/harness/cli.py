"""Command-line interface.

Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.
"""

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .. import sensorsim
from ..adl import pretrain_target
from ..errors import ConfigError, ContractViolation, DatasetFormatError
from ..metrics import eval_model
from ..modnet import ModulatedDenoiser, load_model, save_model
from .config import ExperimentConfig, load_config
from .experiments import (
    build_fleet_data,
    draw_tadp,
    plot_size_sweep,
    run_cross_validation,
    run_harmful,
    run_single,
    run_size_sweep,
)
from .results import emit_results, read_results_json


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser():
    p = _Parser(prog="adlraw", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="generate synthetic fleet datasets")
    sp.add_argument("--fleet", default="default5")
    sp.add_argument("--seed", type=int, default=7)
    sp.add_argument("--count", type=int, default=32)
    sp.add_argument("--patch", type=int, default=32)
    sp.add_argument("--split", default="pool", choices=["pool", "test", "source"])
    sp.add_argument("--misaligned-fraction", type=float, default=0.0)
    sp.add_argument("--out", required=True)

    for name in ("pretrain", "adl-train", "finetune"):
        sp = sub.add_parser(name, help=f"run the {name} pipeline from a config")
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None, help="override [run] out directory")

    sp = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset file")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)

    sp = sub.add_parser("ablate", help="train with mechanisms disabled")
    sp.add_argument("--config", required=True)
    sp.add_argument("--flags", default="", help="comma list, e.g. no-pretrain,no-iso-mod")
    sp.add_argument("--out", default=None)

    for name in ("harmful", "sweep-size", "cross-validate"):
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True)
        sp.add_argument("--out", default=None)

    sp = sub.add_parser("plot", help="re-render the size-sweep plot from results.json")
    sp.add_argument("--results", required=True)
    sp.add_argument("--out", required=True)
    return p


def _outdir(config, override):
    out = override or config.run.out
    os.makedirs(out, exist_ok=True)
    return out


def _cmd_simulate(args):
    profiles = sensorsim.default_fleet(args.fleet)
    lfs = sensorsim.FLEET_LIGHT_FACTORS[args.fleet]
    os.makedirs(args.out, exist_ok=True)
    names = []
    for p in profiles:
        seed = {"pool": args.seed, "source": args.seed + 1, "test": args.seed + 1000}[args.split]
        ds = sensorsim.build_domain(
            p, args.count, args.patch, light_factors=lfs, seed=seed,
            split="test" if args.split == "test" else "adaptation",
            misaligned_fraction=args.misaligned_fraction if args.split == "source" else 0.0)
        path = os.path.join(args.out, f"{p.name}_{args.split}.adlraw")
        sensorsim.write_dataset(path, ds, profile=p)
        names.append(path)
    meta = {"fleet": args.fleet, "seed": args.seed, "split": args.split,
            "files": [os.path.basename(n) for n in names],
            "profiles": [p.to_dict() for p in profiles]}
    with open(os.path.join(args.out, "fleet.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    print(f"wrote {len(names)} dataset files + fleet.json under {args.out}")
    return 0


def _single_stage(args, stage):
    config = load_config(args.config)
    out = _outdir(config, args.out)
    fleet_data = build_fleet_data(config.fleet)
    target = config.run.target

    if stage == "pretrain":
        tadp = draw_tadp(fleet_data.pools[target], config.run.tadp_size, config.run.seeds[0])
        cfg = replace(config.adl, seed=config.run.seeds[0], target_sensor_id=target)
        model = ModulatedDenoiser(n_sensors=fleet_data.encoder.n_sensors,
                                  widths=tuple(config.run.widths), seed=cfg.seed)
        pretrain_target(model, tadp, cfg, fleet_data.encoder)
        ckpt = os.path.join(out, f"pretrain_{fleet_data.pmap[target].name}.mdl")
        save_model(ckpt, model, encoder=fleet_data.encoder)
        report = eval_model(model, fleet_data.tests[target], fleet_data.encoder)
        print(f"checkpoint {ckpt}  test_psnr {report.mean_psnr:.4f}  test_ssim {report.mean_ssim:.4f}")
        return 0

    # full runs (adl-train / finetune baseline) over the configured seeds
    method = "adl" if stage == "adl" else "finetune"
    records = []
    for seed in config.run.seeds:
        rec, model, log = run_single(config, fleet_data, method, target, seed,
                                     config.run.tadp_size)
        records.append(rec)
        tag = f"{method}_{fleet_data.pmap[target].name}_s{seed}"
        save_model(os.path.join(out, f"{tag}.mdl"), model, encoder=fleet_data.encoder)
        if log is not None:
            log.to_jsonl(os.path.join(out, f"{tag}.jsonl"))
    emit_results(records, out)
    for r in records:
        print(f"{r.method} target={r.target} seed={r.seed} psnr={r.psnr_db:.4f} ssim={r.ssim:.4f}")
    return 0


def _cmd_evaluate(args):
    model, encoder = load_model(args.model)
    if encoder is None:
        raise ConfigError(f"checkpoint {args.model} carries no sensor map; cannot evaluate")
    ds = sensorsim.read_dataset(args.data)
    report = eval_model(model, ds, encoder)
    print(f"count {report.count}  mean_psnr_db {report.mean_psnr:.4f}  mean_ssim {report.mean_ssim:.4f}")
    return 0


def _cmd_ablate(args):
    config = load_config(args.config)
    out = _outdir(config, args.out)
    flags = tuple(f for f in args.flags.split(",") if f)
    fleet_data = build_fleet_data(config.fleet)
    method = "ablation:" + ",".join(flags) if flags else "adl"
    records = []
    for seed in config.run.seeds:
        rec, _, _ = run_single(config, fleet_data, method, config.run.target, seed,
                               config.run.tadp_size)
        records.append(rec)
        print(f"{rec.method} seed={rec.seed} psnr={rec.psnr_db:.4f}")
    emit_results(records, out)
    return 0


def _cmd_experiment(args, which):
    config = load_config(args.config)
    out = _outdir(config, args.out)
    fleet_data = build_fleet_data(config.fleet)
    if which == "harmful":
        records = run_harmful(config, fleet_data)
    elif which == "sweep-size":
        records = run_size_sweep(config, fleet_data,
                                 plot_path=os.path.join(out, "size_sweep.svg"))
    else:
        records = run_cross_validation(config, fleet_data)
    emit_results(records, out)
    print(f"{len(records)} records -> {out}")
    return 0


def _cmd_plot(args):
    records = read_results_json(args.results)
    plot_size_sweep(records, args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "pretrain":
            return _single_stage(args, "pretrain")
        if args.command == "adl-train":
            return _single_stage(args, "adl")
        if args.command == "finetune":
            return _single_stage(args, "finetune")
        if args.command == "evaluate":
            return _cmd_evaluate(args)
        if args.command == "ablate":
            return _cmd_ablate(args)
        if args.command in ("harmful", "sweep-size", "cross-validate"):
            return _cmd_experiment(args, args.command)
        if args.command == "plot":
            return _cmd_plot(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (ContractViolation, DatasetFormatError, OSError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
