# src/checkpoint.py
"""
Candidate checkpoints as deterministic JSON.

Container: {format, version, config, hyper, params, checksum}. Matrices are
row-major float lists written with the shortest round-trip repr; the checksum
is SHA-256 over the canonical (sorted, compact) dump of every other field.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from src.candidate import AnalyticCandidate, CertificateHyper, GnnCandidate, LyapunovCandidate
from src.exceptions import CheckpointError, ShapeError, NumericError
from src.gnn import GnnConfig, GnnParams

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

CHECKPOINT_FORMAT = "local-lyapunov-candidate"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    candidate: LyapunovCandidate
    topology: Optional[Dict[str, Any]]
    system: Optional[str]


def _canonical(payload: Dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _matrix(values: np.ndarray) -> List:
    return np.asarray(values, dtype=float).tolist()


def params_to_dict(params: GnnParams) -> Dict[str, List]:
    return {
        "filters": [[_matrix(h0), _matrix(h1)] for h0, h1 in params.filter_coeffs],
        "mlp": [[_matrix(w), _matrix(b)] for w, b in params.mlp_weights],
    }


def params_from_dict(data: Dict[str, List]) -> GnnParams:
    filters = [(np.array(h0, dtype=float), np.array(h1, dtype=float)) for h0, h1 in data["filters"]]
    mlp = [(np.array(w, dtype=float), np.array(b, dtype=float)) for w, b in data["mlp"]]
    return GnnParams(filters, mlp)


def checkpoint_payload(
    cand: LyapunovCandidate, topology: Optional[Dict[str, Any]] = None, system: Optional[str] = None
) -> Dict[str, Any]:
    if isinstance(cand, GnnCandidate):
        if not cand.params.is_finite():
            raise CheckpointError("Refusing to checkpoint non-finite parameters.")
        config = {"kind": "gnn", "state_dim": cand.state_dim, "gnn": cand.config.to_dict()}
        params = params_to_dict(cand.params)
    elif isinstance(cand, AnalyticCandidate):
        config = {"kind": "analytic", "state_dim": cand.state_dim}
        params = None
    else:
        raise CheckpointError(f"Unsupported candidate type {type(cand).__name__}.")
    config["topology"] = topology
    config["system"] = system
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config,
        "hyper": cand.hyper.to_dict(),
        "params": params,
    }
    payload["checksum"] = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    return payload


def save_checkpoint(
    path: Union[str, Path],
    cand: LyapunovCandidate,
    topology: Optional[Dict[str, Any]] = None,
    system: Optional[str] = None,
) -> Path:
    path = Path(path)
    payload = checkpoint_payload(cand, topology, system)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(_canonical(payload) + "\n", encoding="utf-8")
    logging.info(f"Checkpoint written to {path}.")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        logging.error(f"Could not read checkpoint {path}: {exc}")
        raise CheckpointError(f"Checkpoint {path} is unreadable: {exc}") from exc

    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a candidate checkpoint.")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {payload.get('version')} (expected {CHECKPOINT_VERSION}).")
    stored = payload.pop("checksum", None)
    actual = hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()
    if stored != actual:
        logging.error(f"Checksum mismatch in {path}.")
        raise CheckpointError(f"Checkpoint {path} failed its integrity check.")

    config = payload["config"]
    try:
        hyper = CertificateHyper.from_dict(payload["hyper"])
        if config["kind"] == "gnn":
            gnn_config = GnnConfig.from_dict(config["gnn"])
            params = params_from_dict(payload["params"])
            params.validate(gnn_config)
            cand: LyapunovCandidate = GnnCandidate(params, gnn_config, hyper)
        elif config["kind"] == "analytic":
            cand = AnalyticCandidate(hyper, int(config["state_dim"]))
        else:
            raise CheckpointError(f"Unknown candidate kind '{config['kind']}'.")
    except (KeyError, TypeError, ValueError, ShapeError, NumericError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"Checkpoint {path} is malformed: {exc}") from exc
    logging.info(f"Loaded {config['kind']} candidate from {path}.")
    return Checkpoint(candidate=cand, topology=config.get("topology"), system=config.get("system"))
