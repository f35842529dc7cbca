"""Pipeline configuration (one JSON file) and per-stage config digests."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from ._io import digest
from .corpus import ChunkingConfig
from .gateway import GatewayConfig
from .kgraph import MergePolicy
from .qagen import DEFAULT_ASPECTS
from .summarizers import METHODS, SummarizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class QAGenConfig:
    min_importance: int = 10
    max_edges: int = 100
    top_k: int = 5
    keyword_mode: str = "joined"


@dataclass(frozen=True)
class MetricsConfig:
    stemmer: str = "porter"  # "porter" | "none"
    synonyms_path: Optional[str] = None
    semantic: str = "auto"  # "auto" | "hash" | "transformer" | "none"
    semantic_model: str = "roberta-large"
    semantic_layer: Optional[int] = 17


@dataclass
class PipelineConfig:
    corpus_manifest: str
    output_dir: str = "out"
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    merge: MergePolicy = field(default_factory=MergePolicy)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    qagen: QAGenConfig = field(default_factory=QAGenConfig)
    summarizer: SummarizerConfig = field(default_factory=SummarizerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    aspects: List[str] = field(default_factory=lambda: list(DEFAULT_ASPECTS))
    methods: List[str] = field(default_factory=lambda: list(METHODS))
    checkpoint_every: int = 50
    references_dir: Optional[str] = None

    def validate(self) -> None:
        if not Path(self.corpus_manifest).exists():
            raise ConfigError(f"corpus manifest not found: {self.corpus_manifest}")
        if self.references_dir and not Path(self.references_dir).is_dir():
            raise ConfigError(f"references_dir not found: {self.references_dir}")
        if self.gateway.mock_script and not Path(self.gateway.mock_script).exists():
            raise ConfigError(f"mock script not found: {self.gateway.mock_script}")
        q = self.qagen
        for name in ("min_importance", "max_edges", "top_k"):
            if getattr(q, name) <= 0:
                raise ConfigError(f"qagen.{name} must be positive")
        if self.checkpoint_every <= 0:
            raise ConfigError("checkpoint_every must be positive")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; expected a subset of {list(METHODS)}")
        if len(set(self.aspects)) != len(self.aspects) or not self.aspects:
            raise ConfigError("aspects must be a non-empty list of unique names")

    # -- digests ------------------------------------------------------------

    def _model(self) -> dict:
        return self.gateway.model_identity()

    def stage_inputs(self, stage: str) -> dict:
        """Config sections whose change invalidates ``stage``'s artifacts."""
        if stage == "graph":
            return {"chunking": asdict(self.chunking), "merge": asdict(self.merge), "model": self._model()}
        if stage == "qa":
            return {"graph": self.stage_digest("graph"), "qagen": asdict(self.qagen), "aspects": self.aspects}
        if stage == "summaries":
            return {"summarizer": asdict(self.summarizer), "model": self._model()}
        if stage == "eval":
            return {
                "qa": self.stage_digest("qa"), "summaries": self.stage_digest("summaries"),
                "metrics": asdict(self.metrics), "model": self._model(),
            }
        raise KeyError(stage)

    def stage_digest(self, stage: str) -> str:
        return f"{stage}-{digest(self.stage_inputs(stage), 12)}"

    def digest(self) -> str:
        """Whole-config digest, prefixed with the headline parameters."""
        c, q, s = self.chunking, self.qagen, self.summarizer
        head = f"c{c.chunk_size}-o{c.overlap}-i{q.min_importance}-e{q.max_edges}-k{q.top_k}-b{s.summary_budget}-t{s.token_chunk_size}"
        body = {st: self.stage_inputs(st) for st in ("graph", "qa", "summaries", "eval")}
        return f"{head}-{digest(body, 10)}"

    def to_dict(self) -> dict:
        return asdict(self)


def _build(cls, data: Optional[dict]):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {cls.__name__}: {exc}") from exc


def _resolve(base: Path, p: Optional[str]) -> Optional[str]:
    if p is None:
        return None
    q = Path(os.path.expanduser(p))
    return str(q if q.is_absolute() else (base / q))


def config_from_dict(data: dict, base_dir: str | os.PathLike = ".") -> PipelineConfig:
    base = Path(base_dir)
    data = dict(data)
    if "corpus_manifest" not in data:
        raise ConfigError("config needs 'corpus_manifest'")
    sections = {
        "chunking": ChunkingConfig, "merge": MergePolicy, "gateway": GatewayConfig,
        "qagen": QAGenConfig, "summarizer": SummarizerConfig, "metrics": MetricsConfig,
    }
    kwargs = {}
    for key, value in data.items():
        if key in sections:
            kwargs[key] = _build(sections[key], value)
        elif key in {f.name for f in fields(PipelineConfig)}:
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    cfg = PipelineConfig(**kwargs)
    cfg.corpus_manifest = _resolve(base, cfg.corpus_manifest)
    cfg.output_dir = _resolve(base, cfg.output_dir)
    cfg.references_dir = _resolve(base, cfg.references_dir)
    if cfg.gateway.mock_script:
        cfg.gateway.mock_script = _resolve(base, cfg.gateway.mock_script)
    if cfg.metrics.synonyms_path:
        object.__setattr__(cfg.metrics, "synonyms_path", _resolve(base, cfg.metrics.synonyms_path))
    return cfg


def load_config(path: str | os.PathLike) -> PipelineConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    cfg = config_from_dict(data, Path(path).resolve().parent)
    cfg.validate()
    return cfg
