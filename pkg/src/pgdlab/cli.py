"""Command line entry point: ``pgdlab <command> [--config FILE] [overrides]``.

Commands::

    gen-data          write the configured dataset (images + manifest)
    train             train and save model.ckpt
    attack            attack the validation set at attack.epsilon, write a trace file
    sweep-epsilon     success rate vs epsilon
    study-iterations  success rate vs iteration
    study-confidence  success rate per original-confidence bin
    study-size        success rate vs training-set fraction
    report            summarise the CSV tables of an output directory
    config            print the resolved configuration

Exit status is 0 only when the command completed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .analytics import read_bins_csv, read_curve_csv, success_rate
from .classifier import checkpoint_digest
from .datagen import save_dataset

_STUDY_COMMANDS = {
    "sweep-epsilon": "epsilon-sweep",
    "study-iterations": "iteration-study",
    "study-confidence": "confidence-study",
    "study-size": "dataset-size-study",
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    common.add_argument("--output-dir", help="same as --set output_dir=...")
    common.add_argument("--seed", type=int, help="same as --set master_seed=...")
    common.add_argument("--epsilon", type=float, help="same as --set attack.epsilon=...")
    common.add_argument("--epsilons", help="same as --set study.epsilons=...")
    common.add_argument("--lr", type=float, help="same as --set attack.lr=...")
    common.add_argument("--max-iter", type=int, help="same as --set attack.max_iter=...")
    common.add_argument("--checkpoint", help="same as --set model.checkpoint=...")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pgdlab", description="PGD adversarial-attack laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in [
        ("gen-data", "generate the configured dataset"),
        ("train", "train the classifier"),
        ("attack", "attack the validation set once"),
        ("sweep-epsilon", "success rate vs epsilon"),
        ("study-iterations", "success rate vs iteration"),
        ("study-confidence", "success rate per confidence bin"),
        ("study-size", "success rate vs training-set size"),
        ("report", "summarise an output directory"),
        ("config", "print the resolved configuration"),
    ]:
        sub.add_parser(name, parents=[common], help=text)
    return p


def _resolve(args) -> harness.ExperimentConfig:
    overrides = list(args.overrides)
    for flag, key in [("output_dir", "output_dir"), ("seed", "master_seed"), ("epsilon", "attack.epsilon"),
                      ("epsilons", "study.epsilons"), ("lr", "attack.lr"), ("max_iter", "attack.max_iter"),
                      ("checkpoint", "model.checkpoint")]:
        value = getattr(args, flag)
        if value is not None:
            overrides.append(f"{key}={value}")
    if args.command in _STUDY_COMMANDS:
        overrides.append(f"study={_STUDY_COMMANDS[args.command]}")
    return harness.load_config(args.config, overrides)


def _report(out: Path) -> int:
    found = False
    for name in ("epsilon_sweep", "iteration_study", "dataset_size_study"):
        path = out / f"{name}.csv"
        if path.exists():
            found = True
            curve = read_curve_csv(path)
            print(f"{name} ({curve.parameter}):")
            for p in curve.points:
                print(f"  {p.value:>8.4g}  {p.rate:.4f}  ({p.successful}/{p.eligible})")
            harness.emit_chart(curve, out / f"{name}.svg")
    path = out / "confidence_study.csv"
    if path.exists():
        found = True
        report = read_bins_csv(path)
        print("confidence_study:")
        for b in list(report.bins) + ([report.overflow] if report.overflow.eligible else []):
            rate = "   -  " if not b.eligible else f"{b.rate:.4f}"
            print(f"  [{b.low:.2f}, {b.high:.2f}]  {rate}  ({b.successful}/{b.eligible})")
        harness.emit_chart(report, out / "confidence_study.svg")
    if (out / harness.INCOMPLETE).exists():
        print("INCOMPLETE: " + (out / harness.INCOMPLETE).read_text().strip())
        return 1
    if not found:
        print(f"no study tables in {out}", file=sys.stderr)
        return 1
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = _resolve(args)
    except (harness.ConfigError, OSError) as exc:
        print(f"pgdlab: configuration error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.output_dir)
    try:
        if args.command == "config":
            print(harness.format_config(cfg), end="")
        elif args.command == "gen-data":
            out.mkdir(parents=True, exist_ok=True)
            manifest = save_dataset(harness.build_dataset(cfg), out / "dataset")
            print(manifest)
        elif args.command == "train":
            out.mkdir(parents=True, exist_ok=True)
            (out / "resolved_config.txt").write_text(harness.format_config(cfg))
            prep = harness.prepare(cfg)
            harness._write_training(out, prep, cfg)
            acc = prep.train_report.validation_accuracy if prep.train_report else float("nan")
            print(f"{out / 'model.ckpt'}  validation accuracy {acc:.4f}")
        elif args.command == "attack":
            out.mkdir(parents=True, exist_ok=True)
            (out / "resolved_config.txt").write_text(harness.format_config(cfg))
            prep = harness.prepare(cfg)
            attack = cfg.attack_config()
            path = out / "traces" / f"attack_epsilon_{attack.epsilon:.6g}.csv"
            traces = harness.run_attack(cfg, prep, attack, path)
            r = success_rate(traces, mode=cfg.report_mode)
            print(f"{path}  success {r.rate:.4f} ({r.successful}/{r.eligible})  model {checkpoint_digest(prep.model)[:12]}")
        elif args.command == "report":
            return _report(out)
        else:
            res = harness.run_study(cfg)
            print(f"{res.csv_path}\n{res.chart_path}")
    except Exception as exc:  # every failure must map to a non-zero exit
        print(f"pgdlab {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
