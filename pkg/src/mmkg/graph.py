"""Knowledge graph structure, merge semantics, and on-disk persistence.

Entity identity is the normalized surface name (case-folded, whitespace
collapsed). Relations always satisfy referential integrity: endpoints
missing from a merge batch get a placeholder entity of type "unknown".

On disk a graph is a directory of four files -- ``entities``,
``relations``, ``chunks`` (line-delimited JSON records, each file headed
by a schema-version line) and ``manifest`` (a single JSON object).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .backends import BackendSpec, Description, EmbeddingVector, complete, embed_text
from .errors import CorruptGraph, FormatError, InvalidInput, MmkgError
from .extract import RawEntity, RawRelation, build_extraction_prompt, parse_extraction_output

GRAPH_SCHEMA_VERSION = 1
DESCRIPTION_SEPARATOR = "; "


def normalize_key(name: str) -> str:
    """Case-folded, whitespace-collapsed entity key."""
    return " ".join(name.split()).casefold()


@dataclass
class Entity:
    key: str
    display_name: str
    type_label: str = ""
    description: str = ""
    image_links: set[str] = field(default_factory=set)
    source_chunk_ids: set[str] = field(default_factory=set)


@dataclass
class Relation:
    head_key: str
    tail_key: str
    label: str
    description: str = ""
    keywords: list[str] = field(default_factory=list)
    weight: float = 1.0
    source_chunk_ids: set[str] = field(default_factory=set)

    def identity(self) -> tuple[str, str, str]:
        return (self.head_key, self.label, self.tail_key)


@dataclass
class Chunk:
    chunk_id: str
    text: str
    embedding: EmbeddingVector | None = None
    source_image: str | None = None


@dataclass
class KnowledgeGraph:
    entities: dict[str, Entity] = field(default_factory=dict)
    relations: list[Relation] = field(default_factory=list)
    chunks: dict[str, Chunk] = field(default_factory=dict)
    manifest: dict[str, Any] = field(default_factory=dict)

    def check_integrity(self) -> None:
        for rel in self.relations:
            if rel.head_key not in self.entities:
                raise CorruptGraph(f"relation head {rel.head_key!r} not in entity set")
            if rel.tail_key not in self.entities:
                raise CorruptGraph(f"relation tail {rel.tail_key!r} not in entity set")

    def canonical(self) -> dict[str, Any]:
        """Order-independent plain form used for equality and persistence."""
        return {
            "entities": [
                _entity_record(self.entities[k]) for k in sorted(self.entities)
            ],
            "relations": [
                _relation_record(r)
                for r in sorted(
                    self.relations,
                    key=lambda r: (r.head_key, r.label, r.tail_key,
                                   tuple(sorted(r.source_chunk_ids))),
                )
            ],
            "chunks": [_chunk_record(self.chunks[c]) for c in sorted(self.chunks)],
        }


def merge_into_graph(graph: KnowledgeGraph, entities: list[RawEntity],
                     relations: list[RawRelation], chunk: Chunk) -> KnowledgeGraph:
    """Fold one chunk's parsed batch into the graph, in place.

    Colliding entities merge: descriptions are concatenated with "; ",
    image links and chunk ids are unioned. Relations sharing
    (head, label, tail) merge likewise, keeping the maximum weight.
    """
    if chunk.chunk_id not in graph.chunks:
        graph.chunks[chunk.chunk_id] = chunk

    def touch_entity(name: str, type_label: str = "unknown",
                     description: str = "") -> Entity:
        key = normalize_key(name)
        if not key:
            raise InvalidInput("entity name normalizes to empty")
        entity = graph.entities.get(key)
        if entity is None:
            entity = Entity(key=key, display_name=" ".join(name.split()),
                            type_label=type_label, description=description)
            graph.entities[key] = entity
        else:
            if description:
                if entity.description:
                    entity.description += DESCRIPTION_SEPARATOR + description
                else:
                    entity.description = description
            if entity.type_label in ("", "unknown") and type_label != "unknown":
                entity.type_label = type_label
        entity.source_chunk_ids.add(chunk.chunk_id)
        if chunk.source_image:
            entity.image_links.add(chunk.source_image)
        return entity

    for raw in entities:
        touch_entity(raw.name, raw.type_label or "unknown", raw.description)

    by_identity = {rel.identity(): rel for rel in graph.relations}
    for raw in relations:
        head = touch_entity(raw.source)
        tail = touch_entity(raw.target)
        identity = (head.key, raw.description, tail.key)
        existing = by_identity.get(identity)
        if existing is None:
            rel = Relation(
                head_key=head.key,
                tail_key=tail.key,
                label=raw.description,
                description=raw.description,
                keywords=list(raw.keywords),
                weight=raw.weight,
                source_chunk_ids={chunk.chunk_id},
            )
            graph.relations.append(rel)
            by_identity[identity] = rel
        else:
            existing.weight = max(existing.weight, raw.weight)
            for kw in raw.keywords:
                if kw not in existing.keywords:
                    existing.keywords.append(kw)
            existing.source_chunk_ids.add(chunk.chunk_id)
    return graph


def build_graph(
    corpus: list[tuple[Description, str | None]],
    extractor: BackendSpec,
    embedder: BackendSpec,
    on_error: str = "abort",
    manifest: dict[str, Any] | None = None,
) -> tuple[KnowledgeGraph, list[str]]:
    """Build a graph from verified descriptions plus optional external text.

    Per item: form the chunk text (description alone, or description and
    external text joined by a newline), embed it, prompt the extractor,
    parse, merge. Returns the graph and per-item error diagnostics
    (non-empty only with on_error="skip").
    """
    if on_error not in ("skip", "abort"):
        raise InvalidInput(f"on_error must be 'skip' or 'abort', got {on_error!r}")
    graph = KnowledgeGraph(manifest=dict(manifest or {}))
    errors: list[str] = []
    for index, (description, external_text) in enumerate(corpus):
        source = description.source_image
        chunk_id = source.id if source else f"chunk-{index:05d}"
        text = description.text
        if external_text:
            text = f"{text}\n{external_text}" if text else external_text
        if not text.strip():
            errors.append(f"{chunk_id}: empty chunk text, skipped")
            continue
        try:
            embedding = embed_text(text, embedder)
            raw_reply = complete(build_extraction_prompt(text), extractor)
        except MmkgError as exc:
            if on_error == "abort":
                raise type(exc)(f"chunk {chunk_id}: {exc}") from exc
            errors.append(f"{chunk_id}: {type(exc).__name__}: {exc}")
            continue
        entities, relations, _diags = parse_extraction_output(raw_reply)
        chunk = Chunk(chunk_id=chunk_id, text=text, embedding=embedding,
                      source_image=source.image_path if source else None)
        merge_into_graph(graph, entities, relations, chunk)
    graph.check_integrity()
    return graph, errors


# ---------------------------------------------------------------------------
# Persistence


def _entity_record(e: Entity) -> dict[str, Any]:
    return {
        "key": e.key,
        "display_name": e.display_name,
        "type_label": e.type_label,
        "description": e.description,
        "image_links": sorted(e.image_links),
        "source_chunk_ids": sorted(e.source_chunk_ids),
    }


def _relation_record(r: Relation) -> dict[str, Any]:
    return {
        "head_key": r.head_key,
        "tail_key": r.tail_key,
        "label": r.label,
        "description": r.description,
        "keywords": r.keywords,
        "weight": r.weight,
        "source_chunk_ids": sorted(r.source_chunk_ids),
    }


def _chunk_record(c: Chunk) -> dict[str, Any]:
    return {
        "chunk_id": c.chunk_id,
        "text": c.text,
        "embedding": list(c.embedding.values) if c.embedding else None,
        "source_image": c.source_image,
    }


def _write_jsonl(path: Path, schema: str, records: list[dict[str, Any]]) -> None:
    lines = [json.dumps({"schema": schema, "version": GRAPH_SCHEMA_VERSION},
                        sort_keys=True)]
    lines.extend(json.dumps(rec, sort_keys=True) for rec in records)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_jsonl(path: Path, schema: str) -> list[dict[str, Any]]:
    if not path.is_file():
        raise FormatError(f"missing graph file: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: missing schema header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:1: invalid header") from exc
    if not isinstance(header, dict) or header.get("schema") != schema:
        raise FormatError(f"{path}:1: expected schema {schema!r}")
    if header.get("version") != GRAPH_SCHEMA_VERSION:
        raise FormatError(
            f"{path}:1: schema version {header.get('version')!r} "
            f"!= {GRAPH_SCHEMA_VERSION}"
        )
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{lineno}: invalid JSON record") from exc
        if not isinstance(rec, dict):
            raise FormatError(f"{path}:{lineno}: expected a JSON object")
        records.append(rec)
    return records


def save_graph(graph: KnowledgeGraph, path: str | Path) -> None:
    """Write the graph directory in canonical order (deterministic)."""
    graph.check_integrity()
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    canonical = graph.canonical()
    _write_jsonl(directory / "entities", "mmkg/entities", canonical["entities"])
    _write_jsonl(directory / "relations", "mmkg/relations", canonical["relations"])
    _write_jsonl(directory / "chunks", "mmkg/chunks", canonical["chunks"])
    manifest = {"schema": "mmkg/graph-manifest", "version": GRAPH_SCHEMA_VERSION}
    manifest.update(graph.manifest)
    (directory / "manifest").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_graph(path: str | Path) -> KnowledgeGraph:
    directory = Path(path)
    if not directory.is_dir():
        raise FormatError(f"graph directory not found: {directory}")

    graph = KnowledgeGraph()
    for rec in _read_jsonl(directory / "entities", "mmkg/entities"):
        key = rec.get("key", "")
        if key in graph.entities:
            raise CorruptGraph(f"duplicate entity key {key!r}")
        graph.entities[key] = Entity(
            key=key,
            display_name=rec.get("display_name", key),
            type_label=rec.get("type_label", ""),
            description=rec.get("description", ""),
            image_links=set(rec.get("image_links", [])),
            source_chunk_ids=set(rec.get("source_chunk_ids", [])),
        )
    for rec in _read_jsonl(directory / "relations", "mmkg/relations"):
        graph.relations.append(
            Relation(
                head_key=rec.get("head_key", ""),
                tail_key=rec.get("tail_key", ""),
                label=rec.get("label", ""),
                description=rec.get("description", ""),
                keywords=list(rec.get("keywords", [])),
                weight=float(rec.get("weight", 1.0)),
                source_chunk_ids=set(rec.get("source_chunk_ids", [])),
            )
        )
    for rec in _read_jsonl(directory / "chunks", "mmkg/chunks"):
        values = rec.get("embedding")
        graph.chunks[rec.get("chunk_id", "")] = Chunk(
            chunk_id=rec.get("chunk_id", ""),
            text=rec.get("text", ""),
            embedding=EmbeddingVector(tuple(values)) if values else None,
            source_image=rec.get("source_image"),
        )

    manifest_path = directory / "manifest"
    if manifest_path.is_file():
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise FormatError(f"{manifest_path}: invalid manifest JSON") from exc
        if manifest.get("version") != GRAPH_SCHEMA_VERSION:
            raise FormatError(f"{manifest_path}: unsupported manifest version")
        graph.manifest = {k: v for k, v in manifest.items()
                          if k not in ("schema", "version")}
    graph.check_integrity()
    return graph


def graphs_equal(a: KnowledgeGraph, b: KnowledgeGraph) -> bool:
    return a.canonical() == b.canonical()
