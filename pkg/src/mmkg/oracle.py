"""Exhaustive reference retrieval, kept deliberately independent of
``retrieve``'s code path. Used by the test suite to cross-check every
retrieval mode; not wired into the service or CLI.

The contract mirrors ``retrieve`` exactly: same modes, same scoring
rules, same tie-breaks.
"""
from __future__ import annotations

import re

from .backends import BackendSpec, embed_text
from .errors import DegenerateEmbedding, InvalidInput
from .graph import KnowledgeGraph, Relation
from .retrieve import STOPWORDS, RetrievalRequest, RetrievedSubgraph

_WORDS = re.compile(r"[a-z0-9]+")


def _oracle_keywords(query: str) -> list[str]:
    out: list[str] = []
    for word in _WORDS.findall(query.casefold()):
        if word in STOPWORDS:
            continue
        if word in out:
            continue
        out.append(word)
    return out


def _oracle_cosine(a, b) -> float:
    if len(a) != len(b):
        raise InvalidInput("dimension mismatch")
    dot = 0.0
    norm_a = 0.0
    norm_b = 0.0
    for x, y in zip(a, b):
        dot += x * y
        norm_a += x * x
        norm_b += y * y
    if norm_a == 0.0 or norm_b == 0.0:
        raise DegenerateEmbedding("zero vector")
    value = dot / (norm_a ** 0.5 * norm_b ** 0.5)
    if value < 0.0:
        return 0.0
    if value > 1.0:
        return 1.0
    return value


def _entity_hit(graph: KnowledgeGraph, entity_key: str, keyword: str) -> bool:
    entity = graph.entities[entity_key]
    return keyword in entity.key or keyword in entity.description.casefold()


def _relation_entity_overlap(graph: KnowledgeGraph, rel: Relation,
                             keywords: list[str]) -> int:
    count = 0
    for kw in keywords:
        if _entity_hit(graph, rel.head_key, kw) or _entity_hit(graph, rel.tail_key, kw):
            count += 1
    return count


def _relation_label_overlap(rel: Relation, keywords: list[str]) -> int:
    count = 0
    label = rel.label.casefold()
    rel_kws = [k.casefold() for k in rel.keywords]
    for kw in keywords:
        if kw in label:
            count += 1
            continue
        for rk in rel_kws:
            if kw in rk:
                count += 1
                break
    return count


def _sorted_scored(items: list[tuple[Relation, tuple[int, float]]]):
    return sorted(
        items,
        key=lambda it: (-it[1][0], -it[1][1], it[0].head_key, it[0].label,
                        it[0].tail_key),
    )


def _local_scan(graph: KnowledgeGraph, keywords: list[str]):
    hits = []
    for rel in graph.relations:
        endpoint_matched = False
        for kw in keywords:
            if _entity_hit(graph, rel.head_key, kw) or _entity_hit(graph, rel.tail_key, kw):
                endpoint_matched = True
                break
        if not endpoint_matched:
            continue
        overlap = _relation_entity_overlap(graph, rel, keywords)
        hits.append((rel, (overlap, rel.weight)))
    return _sorted_scored(hits)


def _global_scan(graph: KnowledgeGraph, keywords: list[str]):
    hits = []
    for rel in graph.relations:
        overlap = _relation_label_overlap(rel, keywords)
        if overlap > 0:
            hits.append((rel, (overlap, rel.weight)))
    return _sorted_scored(hits)


def brute_force_retrieve(
    request: RetrievalRequest,
    graph: KnowledgeGraph,
    embedder: BackendSpec | None = None,
    extractor: BackendSpec | None = None,
) -> RetrievedSubgraph:
    request.validate()
    if extractor is not None:
        # The oracle only covers the deterministic keyword path.
        raise InvalidInput("brute_force_retrieve supports fallback keywords only")
    keywords = _oracle_keywords(request.query)
    result = RetrievedSubgraph(
        low_level_keywords=list(keywords), high_level_keywords=list(keywords)
    )

    if request.mode in ("naive", "mix") and request.top_k_chunks > 0 and graph.chunks:
        if embedder is None:
            raise InvalidInput("chunk vector search needs an embedder backend")
        q_emb = list(embed_text(request.query, embedder).values)
        scored = []
        for chunk_id in sorted(graph.chunks):
            chunk = graph.chunks[chunk_id]
            if chunk.embedding is None:
                continue
            scored.append((chunk, _oracle_cosine(q_emb, list(chunk.embedding.values))))
        scored.sort(key=lambda pair: (-pair[1], pair[0].chunk_id))
        result.chunks = scored[: request.top_k_chunks]

    k = request.top_k_triplets
    if request.mode == "local":
        result.triplets = _local_scan(graph, keywords)[:k]
    elif request.mode == "global":
        result.triplets = _global_scan(graph, keywords)[:k]
    elif request.mode in ("hybrid", "mix"):
        local_take = _local_scan(graph, keywords)[: (k + 1) // 2]
        global_take = _global_scan(graph, keywords)[: k // 2]
        chosen: dict[tuple[str, str, str], tuple[Relation, tuple[int, float]]] = {}
        for rel, score in local_take:
            ident = (rel.head_key, rel.label, rel.tail_key)
            chosen[ident] = (rel, score)
        for rel, score in global_take:
            ident = (rel.head_key, rel.label, rel.tail_key)
            if ident not in chosen or score > chosen[ident][1]:
                chosen[ident] = (rel, score)
        result.triplets = _sorted_scored(list(chosen.values()))
    return result
