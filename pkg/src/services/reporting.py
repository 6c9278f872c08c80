"""
etrl — CSV emission.

Schemas
───────
training curve   step,mean_raw_return,comm_fraction,mean_inter_event,policy_loss,value_loss,clip_fraction
eval trace       t,<state labels>,<control labels>,triggered,lyapunov,inter_event
eval summary     episode,raw_return,comm_fraction,min_inter_event,mean_inter_event,outcome,terminal_norm
trajectory       t,x_p,y_p,x_t,y_t                       (pursuit only)
triggers         t,triggered,moving_avg
comparison       label,algorithm,mean_return,comm_fraction,resource_saving,min_inter_event,capture_rate

Floats are written with ``repr`` so files are byte-stable for identical runs.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from src.models.schemas import COMPARE_COLUMNS, METRIC_COLUMNS, CompareRow
from src.services.atppo import EpisodeTrace, EvalReport, MetricLog

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS: List[str] = [
    "episode", "raw_return", "comm_fraction", "min_inter_event",
    "mean_inter_event", "outcome", "terminal_norm",
]
TRAJECTORY_COLUMNS: List[str] = ["t", "x_p", "y_p", "x_t", "y_t"]
TRIGGER_COLUMNS: List[str] = ["t", "triggered", "moving_avg"]


def trace_columns(state_labels: Sequence[str], control_labels: Sequence[str]) -> List[str]:
    return ["t", *state_labels, *control_labels, "triggered", "lyapunov", "inter_event"]


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(getattr(v, "value", v))


def _write(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])
    logger.info("CSV written: %s", path)
    return path


# ═══════════════════════════════════════════════════════════════════════════
# Row builders
# ═══════════════════════════════════════════════════════════════════════════

def trace_rows(trace: EpisodeTrace) -> List[list]:
    rows = []
    lyap = trace.lyapunov
    for i, t in enumerate(trace.times):
        rows.append([
            float(t),
            *(float(v) for v in trace.states[i]),
            *(float(v) for v in trace.controls[i]),
            int(trace.triggered[i]),
            float(lyap[i]),
            float(trace.inter_event[i]),
        ])
    return rows


def trigger_rows(trace: EpisodeTrace) -> List[list]:
    """Per-step trigger indicator next to its trailing moving average."""
    moving = trace.summary.moving_average if trace.summary is not None else np.zeros(0)
    rows = []
    for i, t in enumerate(trace.times):
        rows.append([float(t), int(trace.triggered[i]), float(moving[i]) if i < moving.size else None])
    return rows


def summary_rows(report: EvalReport) -> List[list]:
    rows = []
    for i, ep in enumerate(report.episodes):
        rows.append([
            i, float(ep.raw_return), float(ep.comm_fraction), float(ep.min_delta),
            float(ep.mean_delta), ep.outcome, float(np.linalg.norm(ep.terminal_state)),
        ])
    return rows


# ═══════════════════════════════════════════════════════════════════════════
# Writers
# ═══════════════════════════════════════════════════════════════════════════

def emit_run_csv(obj: Union[MetricLog, EpisodeTrace, EvalReport], path: Union[str, Path]) -> Path:
    """
    Write one CSV for a training log, an episode trace, or an eval summary.

    Empty inputs produce a header-only file.
    """
    if isinstance(obj, MetricLog):
        rows = ([getattr(r, c) for c in METRIC_COLUMNS] for r in obj.rows)
        return _write(path, METRIC_COLUMNS, rows)
    if isinstance(obj, EpisodeTrace):
        return _write(path, trace_columns(obj.state_labels, obj.control_labels), trace_rows(obj))
    if isinstance(obj, EvalReport):
        return _write(path, SUMMARY_COLUMNS, summary_rows(obj))
    raise TypeError(f"cannot emit CSV for {type(obj).__name__}")


def emit_trajectory_csv(trace: EpisodeTrace, path: Union[str, Path]) -> Path:
    rows = ([t, *pos] for t, pos in zip(trace.times, trace.positions))
    return _write(path, TRAJECTORY_COLUMNS, rows)


def emit_trigger_csv(trace: EpisodeTrace, path: Union[str, Path]) -> Path:
    return _write(path, TRIGGER_COLUMNS, trigger_rows(trace))


def emit_eval_report(report: EvalReport, out_dir: Union[str, Path], prefix: str = "eval") -> List[Path]:
    """Summary plus one trace and one trigger file per episode (and, for pursuit, one trajectory file)."""
    out_dir = Path(out_dir)
    written = [emit_run_csv(report, out_dir / f"{prefix}_summary.csv")]
    for i, trace in enumerate(report.traces):
        written.append(emit_run_csv(trace, out_dir / f"{prefix}_trace_{i:03d}.csv"))
        written.append(emit_trigger_csv(trace, out_dir / f"{prefix}_triggers_{i:03d}.csv"))
        if trace.positions:
            written.append(emit_trajectory_csv(trace, out_dir / f"{prefix}_trajectory_{i:03d}.csv"))
    return written


# ═══════════════════════════════════════════════════════════════════════════
# Comparison table
# ═══════════════════════════════════════════════════════════════════════════

def resource_saving(comm_fraction: float, comparator_comm_fraction: float) -> float:
    """1 − comm / comm_comparator (0 when the comparator never communicates)."""
    if comparator_comm_fraction <= 0:
        return 0.0
    return 1.0 - comm_fraction / comparator_comm_fraction


def select_comparator(reports: Sequence[EvalReport]) -> Optional[EvalReport]:
    """The single PPO report if exactly one is present, otherwise the last report."""
    if not reports:
        return None
    ppo = [r for r in reports if r.algorithm == "ppo"]
    return ppo[0] if len(ppo) == 1 else reports[-1]


def compare_rows(reports: Sequence[EvalReport], comparator: Optional[EvalReport] = None) -> List[CompareRow]:
    """One CompareRow per report; savings are relative to ``comparator`` (default: select_comparator)."""
    if not reports:
        return []
    base = comparator if comparator is not None else select_comparator(reports)
    return [
        CompareRow(
            label=r.label,
            algorithm=r.algorithm,
            mean_return=r.mean_return,
            comm_fraction=r.comm_fraction,
            resource_saving=resource_saving(r.comm_fraction, base.comm_fraction),
            min_inter_event=r.min_inter_event,
            capture_rate=r.capture_rate,
        )
        for r in reports
    ]


def emit_compare_csv(rows: Sequence[CompareRow], path: Union[str, Path]) -> Path:
    return _write(path, COMPARE_COLUMNS, ([getattr(r, c) for c in COMPARE_COLUMNS] for r in rows))
