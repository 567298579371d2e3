"""Command-line entry point: ``audit run``, ``audit validate`` and ``audit synth``."""

from __future__ import annotations

import argparse
import sys

from . import RECORD_FORMAT, REPORT_FORMAT, __version__
from .domain import ValidationError
from .ingest import AuditConfig, IngestError, load_config
from .report import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, InfeasibleAudit, run_audit, validate_inputs
from .synth import load_synth_spec, write_synthetic


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="audit", description="Audit generated questionnaire responses.")
    p.add_argument("--version", action="version",
                   version=f"audit {__version__} (record format {RECORD_FORMAT}, report format {REPORT_FORMAT})")
    sub = p.add_subparsers(dest="command", required=True)

    def inputs(sp):
        sp.add_argument("--records", help="JSONL record file")
        sp.add_argument("--baselines", help="baseline CSV")
        sp.add_argument("--config", help="TOML-style key = value config file")
        sp.add_argument("--strict", action="store_true", default=None, help="reject unknown record fields")

    run = sub.add_parser("run", help="run the audit battery and write reports")
    inputs(run)
    run.add_argument("--out", help="output directory")
    run.add_argument("--seed", type=int, help="override rng_seed")
    run.add_argument("--workers", type=int, help="worker threads")

    val = sub.add_parser("validate", help="check inputs without auditing")
    inputs(val)

    syn = sub.add_parser("synth", help="generate a synthetic record file from a spec")
    syn.add_argument("--spec", required=True, help="synthetic cohort spec (TOML)")
    syn.add_argument("--out", required=True, help="JSONL file to write")
    syn.add_argument("--baselines", help="also write matching population baselines here")
    return p


def _config(args) -> AuditConfig:
    cfg = load_config(args.config)
    return cfg.replace(records=args.records, baselines=args.baselines, strict=args.strict,
                       out=getattr(args, "out", None), rng_seed=getattr(args, "seed", None),
                       workers=getattr(args, "workers", None))


def _error(msg: str) -> None:
    print(f"audit: error: {msg}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "synth":
            ds = write_synthetic(load_synth_spec(args.spec), args.out, args.baselines)
            print(f"wrote {len(ds)} records to {args.out}")
            return EXIT_OK
        cfg = _config(args)
        if args.command == "validate":
            summary = validate_inputs(cfg)
            print(summary.describe())
            return EXIT_OK if summary.ok else EXIT_INVALID
        result = run_audit(cfg)
        print(f"wrote {len(result.files)} files to {result.out_dir}")
        for w in result.report["warnings"]:
            print(f"warning: {w}", file=sys.stderr)
        return EXIT_OK
    except InfeasibleAudit as exc:
        _error(str(exc))
        return EXIT_INFEASIBLE
    except IngestError as exc:
        _error(str(exc))
        for d in exc.diagnostics[1:]:
            print(f"  {d}", file=sys.stderr)
        return EXIT_INVALID
    except (ValidationError, OSError) as exc:
        _error(str(exc))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
