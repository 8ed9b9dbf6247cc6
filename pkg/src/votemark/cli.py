"""Command line interface.

Each pipeline stage is a subcommand operating on a persisted output
directory; `run-all` chains them. `verify` additionally works standalone
against any fingerprint file and ensemble manifest.

Exit codes: 0 success (or intact verdict), 2 tampered verdict, 1 error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, default_config, load_config
from .ensemble import load_ensemble
from .pipeline import STAGES, PipelineResult, StageError, run_pipeline
from .verify import ensemble_oracle, load_fingerprint, verify_integrity

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_TAMPERED = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="config file (defaults to built-in profile)")
    parser.add_argument("--out", type=Path, required=True, help="output directory for artifacts")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="votemark", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    runall = sub.add_parser("run-all", help="run the full pipeline")
    _add_common(runall)
    runall.add_argument("--stage", choices=STAGES, default=None, help="stop after this stage")

    for stage in STAGES:
        if stage == "verify":
            continue
        p = sub.add_parser(stage, help=f"run only the {stage} stage")
        _add_common(p)

    verify = sub.add_parser("verify", help="verify a fingerprint (pipeline self-check or standalone)")
    verify.add_argument("--config", type=Path, default=None)
    verify.add_argument("--out", type=Path, default=None, help="pipeline directory to self-verify")
    verify.add_argument("--seed", type=int, default=None)
    verify.add_argument("--fingerprint", type=Path, default=None, help="standalone: fingerprint file")
    verify.add_argument("--manifest", type=Path, default=None, help="standalone: target ensemble manifest")
    return parser


def _load_cfg(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg = cfg.with_overrides(**{"seed": str(args.seed)})
    return cfg


def _print_result(result: PipelineResult) -> None:
    if result.ran:
        print(f"ran stages   : {', '.join(result.ran)}")
    if result.skipped:
        print(f"up to date   : {', '.join(result.skipped)}")
    if result.selection is not None:
        sel = result.selection
        print(
            f"selection    : {sel['selected']} of {sel['candidates']} candidates "
            f"({sel['excluded_for_tie']} tie-excluded)"
        )
    if result.verify_verdict is not None:
        print(f"self-verify  : {result.verify_verdict}")
    for msg in result.messages:
        print(msg)


def _cmd_standalone_verify(args) -> int:
    fp = load_fingerprint(args.fingerprint)
    target = load_ensemble(args.manifest)
    report = verify_integrity(ensemble_oracle(target), fp)
    print(report.to_text(), end="")
    return EXIT_OK if report.verdict == "intact" else EXIT_TAMPERED


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "verify" and args.fingerprint is not None:
            if args.manifest is None:
                print("verify: --fingerprint requires --manifest", file=sys.stderr)
                return EXIT_ERROR
            return _cmd_standalone_verify(args)

        cfg = _load_cfg(args)
        if args.command == "run-all":
            result = run_pipeline(cfg, args.out, upto=args.stage)
        else:
            if args.out is None:
                print(f"{args.command}: --out is required", file=sys.stderr)
                return EXIT_ERROR
            result = run_pipeline(cfg, args.out, only=args.command)
        _print_result(result)
        if args.command in ("run-all", "verify") and result.verify_verdict == "tampered":
            return EXIT_TAMPERED
        return EXIT_OK
    except (ConfigError, StageError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
