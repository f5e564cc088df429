"""``tact`` command-line entry point: python -m src.harness.main <command> ..."""
import argparse
import json
import logging
import sys
from typing import List, Optional

from src.harness.commands import cmd_ablate, cmd_collect, cmd_eval, cmd_ledger, cmd_report, cmd_train
from src.harness.config import load_config
from src.utils.errors import TactError
from src.utils.logging_setup import setup_logging


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tact", description="Tactile loco-manipulation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config (.env format)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION__FIELD=VALUE",
                       help="override one config entry; repeatable")
        p.add_argument("--out", help="output directory")
        return p

    p = experiment("collect", "collect expert demonstrations")
    p.add_argument("--seed", type=int)

    p = experiment("train", "train a policy on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--fraction", type=float)

    p = experiment("eval", "evaluate a checkpoint or the Replay baseline")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--seed", type=int)

    experiment("ablate", "train and evaluate every ablation variant")

    p = sub.add_parser("report", help="tables and plots from evaluation reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--loss", action="append", default=[], help="loss curve CSV; repeatable")
    p.add_argument("--out", required=True)

    p = sub.add_parser("ledger", help="list recorded runs")
    p.add_argument("--limit", type=int, default=20)
    return parser


def run(args: argparse.Namespace) -> None:
    if args.command == "report":
        print(cmd_report(args.reports, args.out, args.loss))
        return
    if args.command == "ledger":
        for line in cmd_ledger(args.limit):
            print(line)
        return

    config = load_config(args.config, args.set)
    if args.command == "collect":
        print(cmd_collect(config, seed=args.seed, out=args.out))
    elif args.command == "train":
        print(cmd_train(config, args.dataset, seed=args.seed, fraction=args.fraction, out=args.out))
    elif args.command == "eval":
        print(cmd_eval(config, checkpoint=args.checkpoint, dataset=args.dataset, seed=args.seed, out=args.out))
    elif args.command == "ablate":
        print(cmd_ablate(config, out=args.out))


def main(argv: Optional[List[str]] = None) -> int:
    """Run one command; returns the process exit code.

    Workbench errors exit with 1 and any other failure with 2, each after
    printing one JSON error line to stderr.
    """
    args = build_parser().parse_args(argv)
    setup_logging("tact")
    try:
        run(args)
    except TactError as e:
        logging.error(f"{args.command} failed: {e.code}: {e.message}")
        print(json.dumps({"error": e.code, "message": e.message}), file=sys.stderr)
        return 1
    except Exception as e:
        logging.error(f"{args.command} crashed: {e}")
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
