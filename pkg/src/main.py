"""
etrl — Command-line entrypoint.

Run with:
    etrl train --config configs/integrator.conf --seed 0 --out runs/int
    python -m src.main eval --checkpoint runs/int/checkpoint.etrl --episodes 100

Commands
────────
train          → checkpoint.etrl + metrics.csv
eval           → eval_summary.csv + eval_trace_NNN.csv + eval_triggers_NNN.csv (+ eval_trajectory_NNN.csv)
baseline-png   → png_summary.csv + png_trace_NNN.csv + png_triggers_NNN.csv + png_trajectory_NNN.csv
compare        → compare.csv (+ per-algorithm summaries)

Exit codes: 0 success, 1 configuration / I/O error, 2 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import List, Optional

from src.cli.commands import HANDLERS
from src.core.config import get_settings
from src.core.errors import ConfigurationError, EtrlError, NumericError, ParseError
from src.models.schemas import Command, EnvName

logger = logging.getLogger("etrl")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors become ParseError so they share the configuration exit code."""

    def error(self, message: str):  # type: ignore[override]
        raise ParseError(message, "<cli>")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = _ArgumentParser(
        prog=settings.app_name,
        description="Event-triggered PPO: joint control and communication policies",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.app_version}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="Override the configured seed")
        p.add_argument("--out", default=None, help="Output directory (default: $ETRL_OUT or ./runs)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="Override one config key (repeatable), e.g. --set env.d_max=0.05")

    p_train = sub.add_parser(Command.TRAIN.value, help="Train an ATPPO or PPO agent")
    p_train.add_argument("--config", required=True, help="key = value run configuration")
    common(p_train)

    p_eval = sub.add_parser(Command.EVAL.value, help="Deterministic evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, default=None)
    p_eval.add_argument("--env", default=None, choices=[e.value for e in EnvName],
                        help="Require the checkpoint to match this environment")
    common(p_eval)

    p_png = sub.add_parser(Command.BASELINE_PNG.value, help="Proportional-navigation baseline on the pursuit env")
    p_png.add_argument("--config", default=None)
    p_png.add_argument("--episodes", type=int, default=None)
    common(p_png)

    p_cmp = sub.add_parser(Command.COMPARE.value, help="Compare two checkpoints (ATPPO vs PPO)")
    p_cmp.add_argument("--a", default=None, help="Checkpoint under test")
    p_cmp.add_argument("--b", default=None, help="Second checkpoint (savings are relative to the PPO run, else to this one)")
    p_cmp.add_argument("--train-both", action="store_true", help="Train ATPPO and PPO from --config first")
    p_cmp.add_argument("--config", default=None)
    p_cmp.add_argument("--episodes", type=int, default=None)
    common(p_cmp)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    settings = get_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        format="%(levelname)s | %(name)s | %(message)s",
    )
    try:
        args = build_parser().parse_args(argv)
        return HANDLERS[Command(args.command)](args, settings)
    except NumericError as exc:
        logger.error("Numeric abort: %s", exc)
        return EXIT_NUMERIC
    except ConfigurationError as exc:
        logger.error("Configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_CONFIG
    except EtrlError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
