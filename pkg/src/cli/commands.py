"""
etrl — CLI command handlers.

    train          --config F [--seed N] [--out DIR] [--set k=v …]
    eval           --checkpoint C [--episodes N] [--env NAME]
    baseline-png   [--config F] [--episodes N]
    compare        --a C1 --b C2 | --train-both --config F

Each handler returns the process exit code on success and lets toolkit
errors propagate to ``src.main`` for exit-code mapping.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError

from src.core.config import Settings
from src.core.errors import DimensionError, ParseError
from src.models.schemas import Algorithm, Command, EnvName, RunConfig, build_env_config
from src.services.atppo import EvalReport, algorithm_label, evaluate, evaluate_png, train
from src.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from src.services.config_parser import ENV_PREFIX, parse_config, parse_set_flags
from src.services.reporting import compare_rows, emit_compare_csv, emit_eval_report, emit_run_csv, select_comparator
from src.utils.helpers import ensure_dir, make_env

logger = logging.getLogger(__name__)


# ═══════════════════════════════════════════════════════════════════════════
# Helpers
# ═══════════════════════════════════════════════════════════════════════════

def _flag_overrides(args: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = dict(parse_set_flags(getattr(args, "set", None) or []))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out"] = args.out
    if getattr(args, "episodes", None) is not None:
        overrides["eval_episodes"] = args.episodes
    return overrides


def _out_dir(args: argparse.Namespace, config: Optional[RunConfig], settings: Settings) -> Path:
    out = getattr(args, "out", None) or (config.out if config is not None else None) or settings.out
    return ensure_dir(out)


def _env_for_checkpoint(ckpt: Checkpoint, overrides: Dict[str, object]):
    merged = {**ckpt.env_config, **{k[len(ENV_PREFIX):]: v for k, v in overrides.items() if k.startswith(ENV_PREFIX)}}
    try:
        config = build_env_config(ckpt.env_name, merged)
    except ValidationError as exc:
        raise ParseError(str(exc.errors()[0]["msg"]), "<flag --set>") from exc
    return make_env(ckpt.env_name, config)


# ═══════════════════════════════════════════════════════════════════════════
# Handlers
# ═══════════════════════════════════════════════════════════════════════════

def run_train(args: argparse.Namespace, settings: Settings) -> int:
    config = parse_config(args.config, _flag_overrides(args), Command.TRAIN)
    out = _out_dir(args, config, settings)
    ckpt, log = train(config, diagnostic_path=out / settings.diagnostic_name)
    save_checkpoint(ckpt, out / settings.checkpoint_name)
    emit_run_csv(log, out / "metrics.csv")
    return 0


def run_eval(args: argparse.Namespace, settings: Settings) -> int:
    overrides = _flag_overrides(args)
    env_filter = EnvName(args.env) if getattr(args, "env", None) else None
    ckpt = load_checkpoint(args.checkpoint, env=env_filter)
    env = _env_for_checkpoint(ckpt, overrides)
    episodes = args.episodes if args.episodes is not None else 100
    report = evaluate(ckpt, env, episodes, seed=args.seed or 0, label=algorithm_label(ckpt.algorithm))
    emit_eval_report(report, _out_dir(args, None, settings), prefix="eval")
    return 0


def run_baseline_png(args: argparse.Namespace, settings: Settings) -> int:
    overrides = _flag_overrides(args)
    overrides.setdefault("env", EnvName.PURSUIT.value)
    config = parse_config(args.config, overrides, Command.BASELINE_PNG)
    env = make_env(config.env, config.env_config())
    report = evaluate_png(env, config.eval_episodes, seed=config.seed)
    emit_eval_report(report, _out_dir(args, config, settings), prefix="png")
    return 0


def run_compare(args: argparse.Namespace, settings: Settings) -> int:
    overrides = _flag_overrides(args)
    if args.train_both:
        base = parse_config(args.config, overrides, Command.COMPARE)
        out = _out_dir(args, base, settings)
        ckpts: List[Checkpoint] = []
        for algorithm in (Algorithm.ATPPO, Algorithm.PPO):
            cfg = parse_config(args.config, {**overrides, "algorithm": algorithm.value}, Command.COMPARE)
            ckpt, log = train(cfg, diagnostic_path=out / f"{algorithm.value}_{settings.diagnostic_name}")
            save_checkpoint(ckpt, out / f"{algorithm.value}.etrl")
            emit_run_csv(log, out / f"{algorithm.value}_metrics.csv")
            ckpts.append(ckpt)
        ckpt_a, ckpt_b = ckpts
        episodes, seed = base.eval_episodes, base.seed
    else:
        if not args.a or not args.b:
            raise ParseError("compare needs --a and --b checkpoints (or --train-both --config F)", "<cli>")
        ckpt_a, ckpt_b = load_checkpoint(args.a), load_checkpoint(args.b)
        out = _out_dir(args, None, settings)
        episodes = args.episodes if args.episodes is not None else 100
        seed = args.seed or 0

    if ckpt_a.env_name != ckpt_b.env_name:
        raise DimensionError(
            f"checkpoints trained on different envs: '{ckpt_a.env_name.value}' vs '{ckpt_b.env_name.value}'"
        )

    label_a, label_b = algorithm_label(ckpt_a.algorithm), algorithm_label(ckpt_b.algorithm)
    if label_a == label_b:
        label_a, label_b = f"{label_a}-a", f"{label_b}-b"

    reports: List[EvalReport] = []
    for ckpt, label in ((ckpt_a, label_a), (ckpt_b, label_b)):
        env = _env_for_checkpoint(ckpt_a, overrides)
        report = evaluate(ckpt, env, episodes, seed=seed, label=label)
        emit_run_csv(report, out / f"{label.lower()}_summary.csv")
        reports.append(report)
    comparator = select_comparator(reports)

    if ckpt_a.env_name == EnvName.PURSUIT:
        png = evaluate_png(_env_for_checkpoint(ckpt_a, overrides), episodes, seed=seed)
        emit_run_csv(png, out / "png_summary.csv")
        reports.append(png)

    rows = compare_rows(reports, comparator=comparator)
    emit_compare_csv(rows, out / "compare.csv")
    for row in rows:
        logger.info(
            "%-8s return %.3f | comm %.3f | saving %.3f | min Δ %.3fs%s",
            row.label, row.mean_return, row.comm_fraction, row.resource_saving, row.min_inter_event,
            "" if row.capture_rate is None else f" | capture {row.capture_rate:.2f}",
        )
    return 0


HANDLERS = {
    Command.TRAIN: run_train,
    Command.EVAL: run_eval,
    Command.BASELINE_PNG: run_baseline_png,
    Command.COMPARE: run_compare,
}
