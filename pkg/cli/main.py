"""
msmeq command line.

    msmeq gen-data --spec default.json --seed 7
    msmeq train-seg --variant combined --p 0.2 --T 50
    msmeq build-quality-set
    msmeq train-quality && msmeq evaluate
    msmeq report --fig quality-scatter
    msmeq crossval --config configs/case6.json
    msmeq selfcheck

Exit codes: 0 ok, 1 invalid config, 2 missing input artifact, 3 numerical failure.
"""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import structlog
from pydantic import ValidationError

from common.artifact_store import ArtifactStore
from common.errors import MSMEQualityError
from common.logging_config import configure_logging

from .config import FIGURES, CrossvalConfig, RunConfig, build_config, env_threads, load_env, read_json_file
from .stages import STAGES


logger = structlog.get_logger()

EXIT_OK = 0
EXIT_CONFIG = 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msmeq", description="Segmentation quality from uncertainty maps")
    parser.add_argument("--run", default="default", help="Run directory name under the output root")
    parser.add_argument("--output-root", default=None, help="Output root (overrides MSMEQ_OUTPUT_ROOT)")
    parser.add_argument("--log-level", default=None, help="Log level (overrides MSMEQ_LOG_LEVEL)")
    parser.add_argument("--json-logs", action="store_true", help="Render logs as JSON lines")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in STAGES:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", default=None, help="Run config JSON")
        cmd.add_argument("--seed", type=int, default=None, help="Master seed")
        cmd.add_argument("--threads", type=int, default=None, help="Worker cap (results do not depend on it)")
        if name == "crossval":
            cmd.add_argument("--folds", type=int, nargs="+", default=None, help="Run only these folds")
            continue
        cmd.add_argument("--spec", default=None, help="Dataset spec JSON")
        cmd.add_argument("--scenario", default=None, help="Built-in scenario name or scenario JSON")
        cmd.add_argument("--fold", type=int, default=None, help="Rotate the validation sample for this fold")
        cmd.add_argument("--variant", default=None, help="plain | epistemic | aleatoric | combined | conventional")
        cmd.add_argument("--p", type=float, default=None, help="Dropout probability for the variant")
        cmd.add_argument("--T", type=int, default=None, help="MC samples")
        cmd.add_argument("--regressor", action="append", default=None, help="Quality regressor (repeatable)")
        cmd.add_argument("--combination", action="append", default=None, help="Marker combination, e.g. 135 (repeatable)")
        if name == "report":
            cmd.add_argument("--fig", choices=FIGURES, default=None)
            cmd.add_argument("--source", choices=("quality", "crossval"), default=None)
            cmd.add_argument("--patch-id", type=int, default=None)
    return parser


def run_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    variant = args.variant
    if args.p is not None:
        kind = (variant or "combined").split("(")[0].strip()
        variant = f"{kind}(p={args.p})"
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "scenario": args.scenario,
        "fold": args.fold,
        "variant": variant,
        "T": args.T,
        "regressors": args.regressor,
        "combinations": args.combination,
    }
    if args.spec is not None:
        overrides["dataset"] = read_json_file(args.spec)
    if args.command == "gen-data" and args.seed is not None:
        overrides["dataset"] = {**overrides.get("dataset", {}), "seed": args.seed}
    if args.command == "report":
        report = {
            "fig": args.fig,
            "source": args.source,
            "patch_id": args.patch_id,
            "combination": args.combination[0] if args.combination else None,
        }
        overrides["report"] = {k: v for k, v in report.items() if v is not None}
        overrides["combinations"] = None
    return overrides


def main(argv: Optional[List[str]] = None) -> int:
    load_env()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, args.json_logs)

    try:
        threads = args.threads if args.threads is not None else env_threads()
        if args.command == "crossval":
            config = build_config(CrossvalConfig, args.config, {"seed": args.seed, "folds": args.folds})
        else:
            config = build_config(RunConfig, args.config, run_overrides(args))
        store = ArtifactStore(Path(args.output_root) / args.run) if args.output_root else ArtifactStore.from_env(args.run)
        stage = STAGES[args.command](config, store, threads=max(1, threads))
        stage.run()
    except ValidationError as e:
        logger.error("Invalid configuration", command=args.command, errors=e.error_count(), detail=str(e))
        return EXIT_CONFIG
    except MSMEQualityError as e:
        logger.error("Stage failed", command=args.command, error=str(e), exit_code=e.exit_code)
        return e.exit_code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
