"""Command line entry point: ``run``, ``check`` and ``gen-data``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, evalharness, tpm
from .distribution import (ExperimentConfig, InvalidConfigError, sample_dataset,
                           sample_test_dataset, write_dataset_csv)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _none_or(kind):
    def parse(text):
        return None if text.lower() == "none" else kind(text)
    return parse


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("config overrides")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "seed":
            continue
        kind = {"int": int, "float": float, "str": str}.get(str(f.type).split(" ")[0], float)
        if "None" in str(f.type):
            kind = _none_or(float)
        group.add_argument(f"--{f.name}", type=kind, default=argparse.SUPPRESS)


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="flat JSON file with config values")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--out-dir", type=Path, default=Path("out"))
    _add_config_flags(parser)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="patchmomentum", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="train GD and/or GD+M and write traces plus summary.json")
    _common(run)
    run.add_argument("--optimizer", choices=("gd", "gdm", "both"), default="both")

    check = sub.add_parser("check", help="exact identity and tensor-power-method suites")
    check.add_argument("--suite", choices=("identities", "tpm", "all"), default="all")
    check.add_argument("--instances", type=int, default=50)
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--specs", type=Path, help="JSON list of sequence specs to check")
    check.add_argument("--report", type=Path, help="write the JSON report here")

    gen = sub.add_parser("gen-data", help="export train and test sets as CSV")
    _common(gen)
    return parser


def _config(args: argparse.Namespace) -> ExperimentConfig:
    values = {}
    if args.config is not None:
        with open(args.config) as fh:
            values = json.load(fh)
        if not isinstance(values, dict):
            raise InvalidConfigError("config file must hold a flat JSON object")
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    values.update({k: v for k, v in vars(args).items() if k in names})
    return ExperimentConfig.from_dict(values)


def _emit(payload: dict, report: Path | None = None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if report is not None:
        report.write_text(text + "\n")


def _cmd_run(args) -> int:
    cfg = _config(args)
    optimizers = ("gd", "gdm") if args.optimizer == "both" else (args.optimizer,)
    summary = evalharness.run_experiment(cfg, args.out_dir, optimizers=optimizers)
    brief = {name: {k: getattr(arm, k) for k in ("status", "final_train_loss", "test_error",
                                                   "test_error_z1", "test_error_z2", "c_max_final")}
             for name, arm in summary.arms.items()}
    _emit({"out_dir": str(args.out_dir), "files": summary.files, "arms": brief})
    return EXIT_DIVERGED if summary.diverged else EXIT_OK


def _cmd_check(args) -> int:
    payload, ok = {}, True
    if args.specs is not None:
        reports = [tpm.check_spec(tpm.QuadraticSequenceSpec(**item))
                   for item in json.loads(args.specs.read_text())]
        payload["specs"] = reports
        ok = all(r["passed"] or r.get("flagged", False) for r in reports)
    else:
        if args.suite in ("identities", "all"):
            ident = diagnostics.identity_suite(args.instances, args.seed)
            lo, hi = diagnostics.sigmoid_loss_sandwich(np.linspace(30.0 / 10_000, 30.0, 10_000))
            ident.update(sandwich_min_ratio=lo, sandwich_max_ratio=hi)
            tol = diagnostics.IdentityTolerance().rel_tol
            ident["passed"] = (ident["signal_gradient_max_rel_err"] <= tol
                               and ident["noise_gradient_max_rel_err"] <= tol and lo >= 0.1 and hi <= 10)
            payload["identities"] = ident
            ok &= ident["passed"]
        if args.suite in ("tpm", "all"):
            suite = tpm.tpm_suite(args.instances * 2, args.seed)
            suite["passed"] = suite["total_failures"] == 0
            payload["tpm"] = suite
            ok &= suite["passed"]
    payload["passed"] = bool(ok)
    _emit(payload, args.report)
    return EXIT_OK if ok else EXIT_FAILED


def _cmd_gen_data(args) -> int:
    cfg = _config(args)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_dataset_csv(sample_dataset(cfg), args.out_dir / "train.csv")
    write_dataset_csv(sample_test_dataset(cfg), args.out_dir / "test.csv")
    _emit({"out_dir": str(args.out_dir), "files": ["train.csv", "test.csv"]})
    return EXIT_OK


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error("usage", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    commands = {"run": _cmd_run, "check": _cmd_check, "gen-data": _cmd_gen_data}
    try:
        return commands[args.command](args)
    except (InvalidConfigError, TypeError) as exc:
        return _error("invalid-config", str(exc), EXIT_USAGE)
    except (OSError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), EXIT_FAILED)


if __name__ == "__main__":
    sys.exit(main())
