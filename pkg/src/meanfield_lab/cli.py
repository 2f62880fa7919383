"""Command line entry point: ``meanfield-lab run --config cfg.json --out results/``."""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .experiments import EXPERIMENTS, ConfigError, run_experiment


def _error_record(out_dir, kind: str, err: BaseException) -> None:
    record = {"status": "error", "kind": kind, "type": type(err).__name__, "message": str(err)}
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(json.dumps(record, indent=2) + "\n")
    except OSError:
        pass
    print(json.dumps(record), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanfield-lab", description="Mean-field limit experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment from a JSON config")
    run.add_argument("--config", required=True, help="JSON file with 'experiment', 'seeds' and 'params'")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed-offset", type=int, default=0, help="added to every configured seed")
    run.add_argument("--threads", type=int, default=1, help="seeds run concurrently")
    sub.add_parser("list", help="list experiment names")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        print("\n".join(sorted(EXPERIMENTS)))
        return 0
    if args.threads < 1:
        _error_record(args.out, "config", ConfigError("--threads must be >= 1"))
        return 2
    try:
        cfg = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        _error_record(args.out, "config", err)
        return 2
    try:
        report = run_experiment(cfg, args.out, seed_offset=args.seed_offset, threads=args.threads)
    except (ConfigError, TypeError) as err:
        _error_record(args.out, "config", err)
        return 2
    except Exception as err:  # module precondition or numerical failure
        traceback.print_exc()
        _error_record(args.out, "runtime", err)
        return 1
    print(f"wrote {len(report.rows)} rows to {Path(args.out) / 'results.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
