# src/reporting.py
"""
Report files: `key: value` text, a JSON summary, and tidy CSVs.

Wall-clock times are the only nondeterministic values and live in the
`meta` block of each summary.
"""
from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd
from rich.console import Console
from rich.table import Table

from src.training import TrainReport
from src.verifier import ClassResult, VerificationReport

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

TRAJECTORY_COLUMNS = ["k", "traj_id", "node", "dim", "value"]
LYAPUNOV_COLUMNS = ["k", "pair_id", "V"]


def _finite(value: float) -> Optional[float]:
    return float(value) if math.isfinite(value) else None


# ---------------------------------- Training ----------------------------------
def train_summary(report: TrainReport) -> Dict[str, Any]:
    return {
        "stop_reason": report.stop_reason,
        "margin_success": report.margin_success,
        "epochs_evaluated": len(report.history),
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "violations": list(report.violations),
        "n_samples": report.n_samples,
        "n_nodes": report.n_nodes,
        "optimizer": report.optimizer,
        "closure": report.closure,
        "margin_checks": [
            {
                "class_id": m.class_id,
                "worst_lhs": m.worst_lhs,
                "margin": m.margin,
                "lipschitz": m.lipschitz,
                "slack": m.slack,
                "passed": m.passed,
            }
            for m in report.margin_checks
        ],
        "meta": {"wall_time": report.wall_time},
    }


# -------------------------------- Verification --------------------------------
def _class_summary(result: ClassResult) -> Dict[str, Any]:
    return {
        "class_id": result.class_id,
        "representative": result.representative,
        "members": result.members,
        "passed": result.passed,
        "failing_condition": result.failing_condition,
        "eta": [_finite(e) for e in result.eta],
        "lipschitz": list(result.lipschitz.as_tuple()),
        "epsilon": result.epsilon,
        "factors": list(result.factors),
        "margins": [_finite(c.margin) for c in result.checks],
        "collapsed": {"passed": result.collapsed.passed, "margin": _finite(result.collapsed.margin)},
        "evaluations": list(result.evaluations),
        "excluded": list(result.excluded),
        "grid_sizes": dict(result.grid_sizes),
        "witnesses": [None if w is None else w.to_dict() for w in result.witnesses],
    }


def verification_summary(report: VerificationReport) -> Dict[str, Any]:
    summary: Dict[str, Any] = {
        "verdict": "PASS" if report.passed else "FAIL",
        "mode": report.cover.mode,
        "closure": report.cover.closure,
        "epsilon_x": report.cover.epsilon_x,
        "epsilon_u": report.cover.epsilon_u,
        "diagonal_exclusion": report.cover.diagonal_exclusion,
        "certified_region": report.certified_region,
        "receptive_depth": report.receptive_depth,
        "n_nodes": report.n_nodes,
        "n_classes": len(report.classes),
        "total_evaluations": report.total_evaluations,
        "log10_distributed": report.log10_distributed,
        "log10_centralized": report.log10_centralized,
        "classes": [_class_summary(c) for c in report.classes],
        "notes": list(report.notes),
        "composition": None,
        "meta": {"wall_time": report.wall_time},
    }
    if report.composition is not None:
        c = report.composition
        summary["composition"] = {
            "alpha": c.alpha,
            "alpha_bar": c.alpha_bar,
            "alpha_tilde": c.alpha_tilde,
            "sigma": c.sigma,
            "multiplicity": c.multiplicity,
            "local_size": c.local_size,
            "spread": c.spread,
            "c_low": c.c_low,
            "c_up": c.c_up,
            "contraction_rate": c.contraction_rate,
            "tightness": c.tightness,
            "violations": c.violations,
        }
    return summary


# ----------------------------------- Files ------------------------------------
def _flatten(prefix: str, value: Any, out: Dict[str, Any]) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, list) and value and isinstance(value[0], dict):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out[prefix] = value


def to_key_value(summary: Dict[str, Any]) -> str:
    flat: Dict[str, Any] = {}
    _flatten("", {k: v for k, v in summary.items() if k != "meta"}, flat)
    lines = [f"{k}: {json.dumps(v)}" for k, v in flat.items() if "witnesses" not in k]
    lines += [f"meta.{k}: {v}" for k, v in summary.get("meta", {}).items()]
    return "\n".join(lines) + "\n"


def write_summary(summary: Dict[str, Any], out_dir: Union[str, Path], stem: str) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / f"{stem}.json"
    json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / f"{stem}.txt").write_text(to_key_value(summary), encoding="utf-8")
    logging.info(f"Report written to {json_path}.")
    return json_path


def write_frame(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logging.info(f"Wrote {len(frame)} row(s) to {path}.")
    return path


def load_summary(path: Union[str, Path]) -> Dict[str, Any]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# --------------------------------- Pretty print --------------------------------
def show_summary(summary: Dict[str, Any], console: Optional[Console] = None) -> None:
    console = console or Console()
    table = Table(title=summary.get("verdict") or summary.get("stop_reason") or "report", show_lines=False)
    table.add_column("key")
    table.add_column("value")
    flat: Dict[str, Any] = {}
    _flatten("", summary, flat)
    for key, value in flat.items():
        if "witnesses" in key:
            continue
        table.add_row(key, str(value))
    console.print(table)
