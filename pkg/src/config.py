# src/config.py
"""
Run configuration: YAML sections validated against dataclasses.

Unknown sections or keys are rejected with `line N: message` diagnostics taken
from the composed YAML node marks, so a typo in a hyperparameter never
silently changes a certificate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from src.candidate import AnalyticCandidate, CertificateHyper, GnnCandidate, LyapunovCandidate, auto_upper_bound
from src.exceptions import CertificateError, ConfigError
from src.gnn import GnnConfig, init_params
from src.system import SystemFactory, SystemOracle
from src.topology import InterconnectionGraph, TopologyFactory
from src.training import TrainingConfig
from src.verifier import CoverConfig

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(levelname)s - %(message)s")

SEED_STREAMS = ("dataset", "init", "shuffle", "probes", "simulation")


# --------------------------------- Sections ----------------------------------
@dataclass(frozen=True)
class TopologySection:
    kind: str = "ring_bidirectional"
    n_nodes: int = 10
    edges: Optional[List[List[int]]] = None


@dataclass(frozen=True)
class SystemSection:
    kind: str = "temperature"
    phi: Optional[float] = None
    theta: Optional[float] = None
    t_ext: Optional[float] = None
    a: Optional[float] = None
    input_gain: Optional[float] = None
    state_low: Optional[float] = None
    state_high: Optional[float] = None
    input_low: Optional[float] = None
    input_high: Optional[float] = None
    dyn_lipschitz: Optional[float] = None
    step_fn: Optional[str] = None
    state_dim: Optional[int] = None
    input_dim: Optional[int] = None
    reference: Optional[List[float]] = None

    def options(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "kind"}


@dataclass(frozen=True)
class CandidateSection:
    kind: str = "gnn"
    degree: int = 1


@dataclass(frozen=True)
class GnnSection:
    graph_widths: Tuple[int, ...] = (20,)
    mlp_widths: Tuple[int, ...] = (20, 20)
    output_dim: Optional[int] = None


@dataclass(frozen=True)
class HyperSection:
    """Scalars broadcast to every node class; lists give one entry per class."""

    lower: Union[float, List[float]] = 0.01
    upper: Union[float, str, List[float]] = 1.0
    decay: Union[float, List[float]] = 0.005
    input_gain: Union[float, List[float]] = 0.0
    margin: Union[float, List[float]] = -0.0003
    loss_weights: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def auto_upper(self) -> bool:
        return isinstance(self.upper, str)


@dataclass(frozen=True)
class SimulationSection:
    pairs: int = 2
    horizon: int = 50


@dataclass(frozen=True)
class RunConfig:
    topology: TopologySection
    system: SystemSection
    candidate: CandidateSection = field(default_factory=CandidateSection)
    gnn: GnnSection = field(default_factory=GnnSection)
    hyper: HyperSection = field(default_factory=HyperSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    samples: int = 10_000
    verification: CoverConfig = field(default_factory=CoverConfig)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    seed: int = 0
    output_dir: str = "outputs"
    source: Optional[str] = None

    def with_overrides(
        self, output_dir: Optional[str] = None, seed: Optional[int] = None, threads: Optional[int] = None
    ) -> "RunConfig":
        cfg = self
        if output_dir is not None:
            cfg = replace(cfg, output_dir=str(output_dir))
        if seed is not None:
            cfg = replace(cfg, seed=int(seed))
        if threads is not None:
            cfg = replace(cfg, verification=replace(cfg.verification, n_jobs=int(threads)))
        return cfg

    def with_n_nodes(self, n_nodes: Optional[int]) -> "RunConfig":
        if n_nodes is None:
            return self
        return replace(self, topology=replace(self.topology, n_nodes=int(n_nodes)))


_SECTIONS = {
    "topology": TopologySection,
    "system": SystemSection,
    "candidate": CandidateSection,
    "gnn": GnnSection,
    "hyper": HyperSection,
    "training": TrainingConfig,
    "verification": CoverConfig,
    "simulation": SimulationSection,
}
_SCALARS = ("seed", "output_dir")
_EXTRA_KEYS = {"training": ("samples",)}


# ------------------------------ YAML handling ---------------------------------
def _line_marks(text: str) -> Dict[Tuple[str, ...], int]:
    """1-based line of every top-level key and of every key inside a section."""
    root = yaml.compose(text)
    marks: Dict[Tuple[str, ...], int] = {}
    if not isinstance(root, yaml.MappingNode):
        return marks
    for key_node, value_node in root.value:
        marks[(key_node.value,)] = key_node.start_mark.line + 1
        if isinstance(value_node, yaml.MappingNode):
            for sub_key, _ in value_node.value:
                marks[(key_node.value, sub_key.value)] = sub_key.start_mark.line + 1
    return marks


def _diag(marks: Dict[Tuple[str, ...], int], path: Tuple[str, ...], message: str) -> str:
    line = marks.get(path) or marks.get(path[:1])
    return f"line {line}: {message}" if line else message


def _build_section(name: str, raw: Any, marks: Dict[Tuple[str, ...], int]):
    cls = _SECTIONS[name]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"Section '{name}' must be a mapping.", [_diag(marks, (name,), f"'{name}' is not a mapping")])
    allowed = {f.name for f in fields(cls)} | set(_EXTRA_KEYS.get(name, ()))
    unknown = [k for k in raw if k not in allowed]
    if unknown:
        raise ConfigError(
            f"Unknown key(s) in section '{name}': {unknown}.",
            [_diag(marks, (name, str(k)), f"unknown key '{k}' in section '{name}'") for k in unknown],
        )
    values = {k: (tuple(v) if isinstance(v, list) and k.endswith(("widths", "weights")) else v) for k, v in raw.items()}
    extras = {k: values.pop(k) for k in _EXTRA_KEYS.get(name, ()) if k in values}
    try:
        return cls(**values), extras
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"Invalid section '{name}': {exc}", [_diag(marks, (name,), str(exc))]) from exc


def parse_config(text: str, source: Optional[str] = None) -> RunConfig:
    try:
        data = yaml.safe_load(text)
        marks = _line_marks(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}: " if mark is not None else ""
        logging.error(f"Could not parse configuration {source or ''}: {exc}")
        raise ConfigError("Configuration is not valid YAML.", [f"{where}{getattr(exc, 'problem', exc)}"]) from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a mapping of sections.", ["line 1: expected a mapping"])

    unknown = [k for k in data if k not in _SECTIONS and k not in _SCALARS]
    if unknown:
        raise ConfigError(
            f"Unknown section(s): {unknown}.",
            [_diag(marks, (str(k),), f"unknown section '{k}'") for k in unknown],
        )
    missing = [k for k in ("topology", "system") if k not in data]
    if missing:
        raise ConfigError(f"Missing required section(s): {missing}.", [f"missing section '{k}'" for k in missing])

    kwargs: Dict[str, Any] = {}
    for name in _SECTIONS:
        if name in data:
            section, extras = _build_section(name, data[name], marks)
            kwargs[name] = section
            kwargs.update(extras)
    for name in _SCALARS:
        if name in data:
            kwargs[name] = data[name]
    if not isinstance(kwargs.get("seed", 0), int):
        raise ConfigError("seed must be an integer.", [_diag(marks, ("seed",), "seed must be an integer")])
    return RunConfig(source=source, **kwargs)


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        logging.error(f"Could not read configuration {path}: {exc}")
        raise ConfigError(f"Configuration file {path} is not readable.", [str(exc)]) from exc
    config = parse_config(text, source=str(path))
    logging.info(f"Loaded configuration from {path}.")
    return config


# ------------------------------- Seed streams ---------------------------------
def stream_sequence(seed: int, name: str) -> np.random.SeedSequence:
    """Independent child sequence of `seed` keyed by the stream name."""
    if name not in SEED_STREAMS:
        raise ValueError(f"Unknown random stream '{name}'. Use one of {SEED_STREAMS}.")
    return np.random.SeedSequence(seed, spawn_key=(SEED_STREAMS.index(name),))


def stream_seed(seed: int, name: str) -> int:
    return int(stream_sequence(seed, name).generate_state(1)[0])


def stream_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(stream_sequence(seed, name))


# --------------------------------- Builders -----------------------------------
def _as_config_error(what: str, exc: Exception) -> ConfigError:
    logging.error(f"Could not build the {what}: {exc}")
    return ConfigError(f"Invalid {what} configuration: {exc}", [str(exc)])


def build_graph(cfg: RunConfig, n_nodes: Optional[int] = None) -> InterconnectionGraph:
    topo = cfg.topology
    try:
        return TopologyFactory.get_topology(topo.kind, n_nodes or topo.n_nodes, topo.edges)
    except (CertificateError, ValueError) as exc:
        raise _as_config_error("topology", exc) from exc


def build_oracle(cfg: RunConfig, graph: Optional[InterconnectionGraph] = None) -> SystemOracle:
    graph = graph if graph is not None else build_graph(cfg)
    try:
        return SystemFactory.get_system(cfg.system.kind, graph, **cfg.system.options())
    except (CertificateError, ValueError, ImportError, AttributeError) as exc:
        raise _as_config_error("system", exc) from exc


def build_hyper(cfg: RunConfig, upper: Optional[Union[float, Sequence[float]]] = None) -> CertificateHyper:
    h = cfg.hyper
    if upper is None:
        upper = h.lower if h.auto_upper else h.upper
    try:
        return CertificateHyper(
            degree=cfg.candidate.degree,
            lower=h.lower,
            upper=upper,
            decay=h.decay,
            input_gain=h.input_gain,
            margin=h.margin,
            loss_weights=h.loss_weights,
        )
    except (TypeError, ValueError) as exc:
        raise _as_config_error("hyper", exc) from exc


def build_gnn_config(cfg: RunConfig, state_dim: int) -> GnnConfig:
    try:
        return GnnConfig(
            state_dim=state_dim,
            graph_widths=cfg.gnn.graph_widths,
            mlp_widths=cfg.gnn.mlp_widths,
            output_dim=cfg.gnn.output_dim,
            degree=cfg.candidate.degree,
        )
    except (TypeError, ValueError) as exc:
        raise _as_config_error("gnn", exc) from exc


def build_candidate(cfg: RunConfig, graph: InterconnectionGraph, oracle: SystemOracle) -> LyapunovCandidate:
    """
    Fresh candidate from the config. An `upper: auto` coefficient is resolved
    from the embedding Lipschitz bound (cap-derived when a spectral cap is set).
    """
    kind = cfg.candidate.kind
    hyper = build_hyper(cfg)
    if kind == "analytic":
        cand: LyapunovCandidate = AnalyticCandidate(hyper, oracle.state_dim)
    elif kind == "gnn":
        gnn_config = build_gnn_config(cfg, oracle.state_dim)
        params = init_params(gnn_config, stream_rng(cfg.seed, "init"))
        cand = GnnCandidate(params, gnn_config, hyper)
    else:
        raise ConfigError(f"Unsupported candidate kind '{kind}'. Use 'gnn' or 'analytic'.")
    if cfg.hyper.auto_upper:
        cand = resolve_auto_upper(cfg, cand, graph)
    return cand


def resolve_auto_upper(cfg: RunConfig, cand: LyapunovCandidate, graph: InterconnectionGraph) -> LyapunovCandidate:
    if cfg.hyper.upper != "auto":
        raise ConfigError(f"hyper.upper must be a number, a list or 'auto', got '{cfg.hyper.upper}'.")
    value = auto_upper_bound(cand, graph, cfg.training.spectral_cap)
    lower = cfg.hyper.lower if isinstance(cfg.hyper.lower, (int, float)) else max(cfg.hyper.lower)
    hyper = build_hyper(cfg, upper=max(value, float(lower)))
    if isinstance(cand, GnnCandidate):
        return cand.with_hyper(hyper)
    return AnalyticCandidate(hyper, cand.state_dim)
