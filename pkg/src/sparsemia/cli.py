"""sparsemia command line: training, pruning, attacks and experiment reports.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from .butterfly import count_model_params
from .errors import ConfigurationError
from .experiment import (PRESETS, ROLE_SHADOW, ROLE_TARGET, STREAM_PARTITION, ExperimentConfig,
                         LevelConfig, _train_role, derive_seed, load_config, load_dataset,
                         load_preset, run_experiment)
from .mia import attack_from_sets, attack_splits, build_attack_dataset, partition_dataset
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .report import aggregate, emit_report, load_report, report_table

log = logging.getLogger("sparsemia")


class UsageFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageFailure(f"{self.prog}: {message}")


def _parse_value(text: str):
    return yaml.safe_load(text)


def _apply_overrides(d: dict, assignments) -> dict:
    for item in assignments or []:
        if "=" not in item:
            raise UsageFailure(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageFailure(f"--set {key}: {p} is not a mapping")
        node[parts[-1]] = _parse_value(value)
    return d


def _config_from_args(args) -> ExperimentConfig:
    if args.config and args.preset:
        raise UsageFailure("give either --config or --preset, not both")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = load_preset(args.preset or "desk-scale")
    d = cfg.to_dict()
    flags = {
        ("train", "epochs"): args.epochs,
        ("train", "batch_size"): args.batch_size,
        ("train", "initial_lr"): args.lr,
        ("train", "weight_decay"): args.weight_decay,
        ("train", "momentum"): args.momentum,
    }
    for (section, key), value in flags.items():
        if value is not None:
            d[section][key] = value
            if key == "epochs":
                d["train"]["lr_drop_epochs"] = [e for e in d["train"]["lr_drop_epochs"] if e < value]
    if args.trials is not None:
        d["trials"] = args.trials
    if args.master_seed is not None:
        d["master_seed"] = args.master_seed
    if args.data is not None:
        d["dataset"]["path"] = args.data
    _apply_overrides(d, args.set)
    return ExperimentConfig.from_dict(d)


def _add_config_flags(p):
    p.add_argument("--config", help="experiment file (YAML or JSON)")
    p.add_argument("--preset", choices=PRESETS, help="built-in configuration (default desk-scale)")
    p.add_argument("--data", help="dataset directory (overrides dataset.path)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="initial learning rate")
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field, e.g. --set attack.n_noise=3")


def _add_model_flags(p):
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--role", choices=["target", "shadow"], default="target")


def _train_single(cfg: ExperimentConfig, level: LevelConfig, args):
    data = load_dataset(cfg)
    part = partition_dataset(len(data), cfg.subset_size, cfg.val_size,
                             derive_seed(cfg.master_seed, STREAM_PARTITION))
    role = ROLE_TARGET if args.role == "target" else ROLE_SHADOW
    return _train_role(cfg, data, part, args.trial, level, role)


def cmd_train(args):
    cfg = _config_from_args(args)
    model, [(state, pct, acc, _)] = _train_single(cfg, LevelConfig("dense"), args)
    save_checkpoint(args.out, model, epoch=cfg.train.epochs,
                    extra={"role": args.role, "trial": args.trial, "test_accuracy": acc})
    print(json.dumps({"checkpoint": str(args.out), "test_accuracy": acc, "nonzero_pct": pct}))


def cmd_butterfly_train(args):
    cfg = _config_from_args(args)
    level = LevelConfig("butterfly", segments=args.segments, factors=args.factors)
    model, [(state, pct, acc, _)] = _train_single(cfg, level, args)
    save_checkpoint(args.out, model, epoch=cfg.train.epochs,
                    extra={"role": args.role, "trial": args.trial, "test_accuracy": acc})
    print(json.dumps({"checkpoint": str(args.out), "test_accuracy": acc, "nonzero_pct": pct}))


def cmd_imp(args):
    cfg = _config_from_args(args)
    level = LevelConfig("imp", rounds=args.rounds, prune_fraction=args.fraction)
    model, rounds = _train_single(cfg, level, args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = []
    params = dict(model.named_parameters())
    for k, (state, pct, acc, masks) in enumerate(rounds):
        model.load_state_dict(state)
        for name, mask in masks.items():
            params[name].set_mask(mask)
        path = out / f"round{k:02d}_nz{pct:.2f}.npz"
        save_checkpoint(path, model, epoch=cfg.train.epochs,
                        extra={"round": k, "nonzero_pct": pct, "test_accuracy": acc})
        manifest.append({"round": k, "nonzero_pct": pct, "test_accuracy": acc, "checkpoint": path.name})
    (out / "manifest.json").write_text(json.dumps({"rounds": manifest}, indent=2) + "\n")
    print(json.dumps({"out_dir": str(out), "rounds": len(manifest)}))


def cmd_attack(args):
    cfg = _config_from_args(args)
    target, _ = load_checkpoint(args.target)
    shadow, _ = load_checkpoint(args.shadow)
    data = load_dataset(cfg)
    part = partition_dataset(len(data), cfg.subset_size, cfg.val_size,
                             derive_seed(cfg.master_seed, STREAM_PARTITION))
    seeds = [int(s) for s in np.random.SeedSequence(args.seed).generate_state(3)]
    shadow_set = build_attack_dataset(shadow, data, *attack_splits(part, "shadow"), cfg.attack, seeds[0])
    target_set = build_attack_dataset(target, data, *attack_splits(part, "target"), cfg.attack, seeds[1])
    if args.export_dir:
        out = Path(args.export_dir)
        out.mkdir(parents=True, exist_ok=True)
        shadow_set.save_columns(out / "shadow_attack.txt")
        target_set.save_columns(out / "target_attack.txt")
    result = attack_from_sets(shadow_set, target_set, cfg.attack, seeds[2])
    result_d = result.to_dict()
    result_d["target_nonzero_pct"] = count_model_params(target).percentage
    text = json.dumps(result_d, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_experiment(args):
    cfg = _config_from_args(args)
    report = run_experiment(cfg)
    written = emit_report(report, args.out)
    sys.stdout.write(report_table(report))
    log.info("wrote %s", ", ".join(map(str, written)))


def cmd_report(args):
    src = load_report(args.input)
    report = aggregate(src.trials, name=src.name, master_seed=src.master_seed, config=src.config,
                       baseline=args.baseline or src.baseline)
    if args.out:
        emit_report(report, args.out)
    sys.stdout.write(report_table(report))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sparsemia", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one dense network and save a checkpoint")
    _add_config_flags(p)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("imp", help="iterative magnitude pruning; one checkpoint per round")
    _add_config_flags(p)
    _add_model_flags(p)
    p.add_argument("--rounds", type=int, default=6)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_imp)

    p = sub.add_parser("butterfly-train", help="substitute butterfly convolutions and train")
    _add_config_flags(p)
    _add_model_flags(p)
    p.add_argument("--segments", type=int, required=True, help="number of last segments (S)")
    p.add_argument("--factors", type=int, required=True, help="factors per chain (L)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_butterfly_train)

    p = sub.add_parser("attack", help="shadow-model attack of a target checkpoint")
    _add_config_flags(p)
    p.add_argument("--target", required=True)
    p.add_argument("--shadow", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--export-dir", help="write attack sets as columnar text here")
    p.add_argument("--out", help="write the attack result JSON here")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("experiment", help="full pipeline over levels and trials")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="report path prefix (.json and .csv)")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="re-aggregate a report JSON and emit tables")
    p.add_argument("--input", required=True)
    p.add_argument("--baseline")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageFailure as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageFailure, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - map everything else to a runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
