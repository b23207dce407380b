"""Pipeline orchestration: configuration, the describe -> verify -> build
stages over a corpus manifest, desk-scale evaluation, and graph stats.

Configuration is a YAML file; string values may interpolate environment
variables with ``${VAR}`` (used for API keys). The config hash recorded in
the graph manifest is the sha256 of the raw config mapping.
"""
from __future__ import annotations

import hashlib
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import yaml

from .augment import answer
from .backends import BackendSpec, Description
from .chain import ExpertChainSpec, run_chain
from .corpus import CorpusManifest, ImageRecord, ingest
from .errors import FormatError, InvalidInput, MmkgError
from .graph import KnowledgeGraph, build_graph, load_graph, save_graph
from .retrieve import RetrievalRequest
from .verify import PruneResult, VerifierConfig, prune

REPORT_SCHEMA = "mmkg/run-report"
SCORES_SCHEMA = "mmkg/window-scores"
SCHEMA_VERSION = 1

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class PipelineConfig:
    chain: ExpertChainSpec
    verifier: VerifierConfig
    backends: dict[str, BackendSpec]
    kg_mode: str = "image-only"  # image-only | text-image
    retrieval: RetrievalRequest = field(
        default_factory=lambda: RetrievalRequest(query="-")
    )
    deterministic: bool = True
    workers: int = 1
    on_error: str = "abort"
    question_template: str = "{label}"
    raw: dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        if self.kg_mode not in ("image-only", "text-image"):
            raise InvalidInput(f"unknown kg_mode {self.kg_mode!r}")
        if self.workers < 1:
            raise InvalidInput("workers must be >= 1")
        if self.on_error not in ("skip", "abort"):
            raise InvalidInput(f"on_error must be skip or abort, got {self.on_error!r}")
        for name in ("embedder", "extractor"):
            if name not in self.backends:
                raise InvalidInput(f"config must name a {name!r} backend")
        for name, spec in self.backends.items():
            try:
                spec.validate()
            except InvalidInput as exc:
                raise InvalidInput(f"backend {name!r}: {exc}") from exc

    def backend(self, name: str) -> BackendSpec:
        if name not in self.backends:
            raise InvalidInput(f"no backend named {name!r} in config")
        return self.backends[name]

    def answerer(self) -> BackendSpec:
        return self.backends.get("answerer", self.backends["extractor"])

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):
        return _ENV_RE.sub(lambda m: os.environ.get(m.group(1), ""), value)
    if isinstance(value, dict):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def _backend_from_dict(name: str, data: dict[str, Any], deterministic: bool) -> BackendSpec:
    if not isinstance(data, dict):
        raise FormatError(f"backend {name!r} must be a mapping")
    known = {
        "kind", "transport", "model_name", "endpoint_url", "timeout_ms",
        "max_retries", "stub_seed", "dimension", "api_key_env", "stub_replies",
    }
    unknown = set(data) - known
    if unknown:
        raise FormatError(f"backend {name!r}: unknown keys {sorted(unknown)}")
    return BackendSpec(
        kind=data.get("kind", ""),
        transport=data.get("transport", "stub"),
        model_name=data.get("model_name", "stub"),
        endpoint_url=data.get("endpoint_url", ""),
        timeout_ms=int(data.get("timeout_ms", 30000)),
        max_retries=int(data.get("max_retries", 3)),
        stub_seed=int(data.get("stub_seed", 0)),
        dimension=int(data.get("dimension", 64)),
        api_key_env=data.get("api_key_env", ""),
        stub_replies=dict(data.get("stub_replies", {})),
        deterministic=deterministic,
    )


def load_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise FormatError(f"config not found: {config_path}")
    try:
        raw = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise FormatError(f"{config_path}: invalid YAML ({exc})") from exc
    if not isinstance(raw, dict):
        raise FormatError(f"{config_path}: config must be a mapping")
    data = _interpolate(raw)

    deterministic = bool(data.get("deterministic", True))
    backends: dict[str, BackendSpec] = {}
    for name, spec in (data.get("backends") or {}).items():
        backends[name] = _backend_from_dict(name, spec, deterministic)

    chain_data = data.get("chain") or {}
    stage_names = chain_data.get("stages") or []
    stages = []
    for stage_name in stage_names:
        if stage_name not in backends:
            raise FormatError(f"chain stage {stage_name!r} is not a configured backend")
        stages.append(backends[stage_name])
    chain = ExpertChainSpec(
        stages=stages,
        steps=int(chain_data.get("steps", 1)),
        prompt_templates=list(chain_data.get("prompt_templates", [])),
    )

    verifier_data = data.get("verifier") or {}
    verifier = VerifierConfig(
        tau=float(verifier_data.get("tau", 0.25)),
        segmentation=verifier_data.get("segmentation", "sentence"),
        fixed_m=int(verifier_data.get("fixed_m", 8)),
        max_window_tokens=int(verifier_data.get("max_window_tokens", 64)),
    )

    retrieval_data = data.get("retrieval") or {}
    retrieval = RetrievalRequest(
        query="-",
        mode=retrieval_data.get("mode", "hybrid"),
        top_k_triplets=int(retrieval_data.get("top_k_triplets", 10)),
        top_k_chunks=int(retrieval_data.get("top_k_chunks", 5)),
    )

    config = PipelineConfig(
        chain=chain,
        verifier=verifier,
        backends=backends,
        kg_mode=data.get("kg_mode", "image-only"),
        retrieval=retrieval,
        deterministic=deterministic,
        workers=int(data.get("workers", 1)),
        on_error=data.get("on_error", "abort"),
        question_template=(data.get("eval") or {}).get("question_template", "{label}"),
        raw=raw,
    )
    config.validate()
    return config


@dataclass
class RunReport:
    dataset: str
    items_total: int = 0
    items_processed: int = 0
    items_skipped: int = 0
    windows_kept: int = 0
    windows_pruned: int = 0
    entities: int = 0
    relations: int = 0
    chunks: int = 0
    errors: list[str] = field(default_factory=list)

    def to_records(self) -> list[dict[str, Any]]:
        counts = {
            "record": "counts",
            "items_total": self.items_total,
            "items_processed": self.items_processed,
            "items_skipped": self.items_skipped,
            "windows_kept": self.windows_kept,
            "windows_pruned": self.windows_pruned,
            "entities": self.entities,
            "relations": self.relations,
            "chunks": self.chunks,
        }
        records = [counts]
        records.extend({"record": "error", "message": msg} for msg in self.errors)
        return records


def describe_corpus(manifest: CorpusManifest,
                    config: PipelineConfig) -> list[tuple[ImageRecord, Description]]:
    """Stage 1: run the expert chain over every item."""
    def one(item: ImageRecord) -> tuple[ImageRecord, Description]:
        return item, run_chain(item, config.chain)

    return _map_items(manifest.items, one, config)


def verify_corpus(
    pairs: list[tuple[ImageRecord, Description]], config: PipelineConfig
) -> list[tuple[ImageRecord, PruneResult]]:
    """Stage 2: cross-modal pruning of every description."""
    embedder = config.backend("embedder")

    def one(pair: tuple[ImageRecord, Description]) -> tuple[ImageRecord, PruneResult]:
        item, description = pair
        return item, prune(item, description, config.verifier, embedder)

    return _map_items(pairs, one, config)


def _map_items(items, fn, config: PipelineConfig) -> list:
    if config.deterministic or config.workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(fn, items))


def run_pipeline(
    manifest: CorpusManifest,
    config: PipelineConfig,
    graph_dir: str | Path,
    emit_scores: bool = False,
) -> RunReport:
    """Full describe -> verify -> build run; writes the graph directory,
    optional per-item score reports, and the run report."""
    config.validate()
    report = RunReport(dataset=manifest.dataset_name,
                       items_total=len(manifest.items))
    out_dir = Path(graph_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def process(item: ImageRecord) -> tuple[ImageRecord, PruneResult | MmkgError]:
        try:
            description = run_chain(item, config.chain)
            return item, prune(item, description, config.verifier,
                               config.backend("embedder"))
        except MmkgError as exc:
            return item, exc

    corpus: list[tuple[Description, str | None]] = []
    score_files: dict[str, list[dict[str, Any]]] = {}
    for item, result in _map_items(manifest.items, process, config):
        if isinstance(result, MmkgError):
            if config.on_error == "abort":
                raise result
            report.items_skipped += 1
            report.errors.append(f"{item.id}: {type(result).__name__}: {result}")
            continue
        report.windows_kept += sum(1 for w in result.report if w.kept)
        report.windows_pruned += sum(1 for w in result.report if not w.kept)
        if emit_scores:
            score_files[item.id] = [
                {"window_index": w.window_index, "text": w.text,
                 "score": w.score, "kept": w.kept}
                for w in result.report
            ]
        external = item.text if config.kg_mode == "text-image" else None
        corpus.append((result.description, external))
        report.items_processed += 1

    manifest_meta: dict[str, Any] = {
        "config_hash": config.config_hash(),
        "backends": sorted(
            {spec.model_name for spec in config.backends.values()}
        ),
        "dataset": manifest.dataset_name,
        "kg_mode": config.kg_mode,
        "created_at": None if config.deterministic
        else datetime.now(timezone.utc).isoformat(),
    }
    graph, build_errors = build_graph(
        corpus,
        extractor=config.backend("extractor"),
        embedder=config.backend("embedder"),
        on_error=config.on_error,
        manifest=manifest_meta,
    )
    report.errors.extend(build_errors)
    report.entities = len(graph.entities)
    report.relations = len(graph.relations)
    report.chunks = len(graph.chunks)

    save_graph(graph, out_dir)
    if emit_scores:
        scores_dir = out_dir / "scores"
        scores_dir.mkdir(exist_ok=True)
        for item_id, records in score_files.items():
            _write_report_file(scores_dir / item_id, SCORES_SCHEMA, records)
    _write_report_file(out_dir / "run_report", REPORT_SCHEMA, report.to_records())
    return report


def _write_report_file(path: Path, schema: str, records: list[dict[str, Any]]) -> None:
    lines = [json.dumps({"schema": schema, "version": SCHEMA_VERSION}, sort_keys=True)]
    lines.extend(json.dumps(rec, sort_keys=True) for rec in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class EvalReport:
    accuracy: float
    items: int
    correct: int
    confusion: dict[str, dict[str, int]]
    answers: list[dict[str, str]] = field(default_factory=list)


def evaluate(manifest: CorpusManifest, graph: KnowledgeGraph,
             config: PipelineConfig) -> EvalReport:
    """Answer the configured question for every labeled item and score by
    exact match after case-folding and trimming."""
    config.validate()
    missing = [item.id for item in manifest.items if item.label is None]
    if missing:
        raise InvalidInput(f"items missing labels: {missing}")

    answerer = config.answerer()
    embedder = config.backend("embedder")
    correct = 0
    confusion: dict[str, dict[str, int]] = {}
    answers = []
    for item in manifest.items:
        query = config.question_template.format(
            id=item.id, label=item.label, text=item.text or "",
            image_path=item.image_path,
        )
        request = RetrievalRequest(
            query=query,
            mode=config.retrieval.mode,
            top_k_triplets=config.retrieval.top_k_triplets,
            top_k_chunks=config.retrieval.top_k_chunks,
        )
        reply, _prompt = answer(query, graph, request=request, answerer=answerer,
                                embedder=embedder)
        gold = (item.label or "").strip().casefold()
        pred = reply.strip().casefold()
        if gold == pred:
            correct += 1
        confusion.setdefault(gold, {})
        confusion[gold][pred] = confusion[gold].get(pred, 0) + 1
        answers.append({"id": item.id, "gold": gold, "predicted": pred})
    total = len(manifest.items)
    accuracy = correct / total if total else 0.0
    return EvalReport(accuracy=accuracy, items=total, correct=correct,
                      confusion=confusion, answers=answers)


@dataclass
class GraphStats:
    entities: int
    relations: int
    chunks: int
    disk_bytes: int


def stats(graph_dir: str | Path) -> GraphStats:
    """Counters plus the summed on-disk size of the graph files."""
    directory = Path(graph_dir)
    graph = load_graph(directory)
    disk = sum(
        (directory / name).stat().st_size
        for name in ("entities", "relations", "chunks", "manifest")
        if (directory / name).is_file()
    )
    return GraphStats(entities=len(graph.entities), relations=len(graph.relations),
                      chunks=len(graph.chunks), disk_bytes=disk)


def load_manifest(path: str | Path) -> CorpusManifest:
    return ingest(path)
