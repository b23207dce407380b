"""Subgraph retrieval over the knowledge graph and its chunk embeddings.

Five modes:

* ``naive``  -- chunk-level vector search only, no triplets
* ``local``  -- low-level keywords matched against entity keys and
  descriptions; returns the 1-hop relations of matched entities
* ``global`` -- high-level keywords matched against relation labels and
  keywords
* ``hybrid`` -- union of local and global under a split budget
  (ceil(k/2) local, floor(k/2) global), deduplicated by relation identity
* ``mix``    -- hybrid's triplets plus naive's chunk list

Keyword match is case-folded substring containment. Keyword-matched
relations are scored by (distinct-keyword overlap, relation weight),
compared lexicographically; ties break on the canonical relation key
ascending. Vector search is an exact exhaustive cosine scan.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .backends import BackendSpec, EmbeddingVector, complete, embed_text
from .errors import InvalidInput, MmkgError
from .extract import COMPLETION_DELIMITER, FIELD_DELIMITER, RECORD_DELIMITER
from .graph import Chunk, KnowledgeGraph, Relation
from .verify import clamped_cosine

MODES = ("naive", "local", "global", "hybrid", "mix")

# Fixed 50-word English stopword list used by the deterministic keyword
# fallback. Do not reorder or extend without updating the tests.
STOPWORDS = frozenset({
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but",
    "by", "can", "did", "do", "does", "for", "from", "had", "has", "have",
    "how", "i", "if", "in", "is", "it", "its", "of", "on", "or",
    "that", "the", "their", "there", "these", "they", "this", "to", "was", "we",
    "were", "what", "when", "where", "which", "who", "why", "will", "with", "you",
})

_WORD_RE = re.compile(r"[a-z0-9]+")

_KEYWORD_PROMPT = f"""Extract retrieval keywords from the question below.

Output exactly two records:
("low_level_keywords"{FIELD_DELIMITER}<keyword>{FIELD_DELIMITER}<keyword>...) for concrete entities and details,
("high_level_keywords"{FIELD_DELIMITER}<keyword>{FIELD_DELIMITER}<keyword>...) for themes and relation types.
Separate the records with {RECORD_DELIMITER} and end with {COMPLETION_DELIMITER}.

Question: {{query}}
"""


@dataclass
class RetrievalRequest:
    query: str
    mode: str = "hybrid"
    top_k_triplets: int = 10
    top_k_chunks: int = 5

    def validate(self) -> None:
        if not self.query.strip():
            raise InvalidInput("query must be non-empty")
        if self.mode not in MODES:
            raise InvalidInput(f"unknown retrieval mode {self.mode!r}")
        if self.top_k_triplets < 0 or self.top_k_chunks < 0:
            raise InvalidInput("top-k counts must be >= 0")


@dataclass
class RetrievedSubgraph:
    triplets: list[tuple[Relation, tuple[int, float]]] = field(default_factory=list)
    chunks: list[tuple[Chunk, float]] = field(default_factory=list)
    low_level_keywords: list[str] = field(default_factory=list)
    high_level_keywords: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def fallback_keywords(query: str) -> list[str]:
    """Stopword-filtered distinct word tokens, in order of appearance."""
    seen: list[str] = []
    for tok in _WORD_RE.findall(query.casefold()):
        if tok not in STOPWORDS and tok not in seen:
            seen.append(tok)
    return seen


def extract_keywords(
    query: str, extractor: BackendSpec | None = None
) -> tuple[list[str], list[str], list[str]]:
    """(low-level, high-level, diagnostics). Without an extractor backend
    the deterministic fallback is used and both lists coincide."""
    if not query.strip():
        raise InvalidInput("query must be non-empty")
    if extractor is None:
        words = fallback_keywords(query)
        return words, list(words), []
    try:
        reply = complete(_KEYWORD_PROMPT.format(query=query), extractor)
        low, high = _parse_keyword_reply(reply)
        if low or high:
            return low, high, []
        diagnostics = ["keyword extractor returned no keyword records; using fallback"]
    except MmkgError as exc:
        diagnostics = [f"keyword extractor failed ({exc}); using fallback"]
    words = fallback_keywords(query)
    return words, list(words), diagnostics


def _parse_keyword_reply(reply: str) -> tuple[list[str], list[str]]:
    low: list[str] = []
    high: list[str] = []
    stream = reply.split(COMPLETION_DELIMITER, 1)[0]
    for segment in stream.split(RECORD_DELIMITER):
        segment = segment.strip()
        if not (segment.startswith("(") and segment.endswith(")")):
            continue
        fields = [f.strip() for f in segment[1:-1].split(FIELD_DELIMITER)]
        name = fields[0].strip("\"'").casefold()
        words = [w.casefold() for w in fields[1:] if w]
        if name == "low_level_keywords":
            low.extend(w for w in words if w not in low)
        elif name == "high_level_keywords":
            high.extend(w for w in words if w not in high)
    return low, high


def vector_topk(
    query_embedding: EmbeddingVector,
    graph: KnowledgeGraph,
    index_target: str = "chunks",
    k: int = 5,
    embedder: BackendSpec | None = None,
) -> list[tuple[Chunk, float]] | list[tuple[str, float]]:
    """Exact cosine top-k by exhaustive scan; ties break on id ascending.

    ``chunks`` scans stored chunk embeddings; ``entities`` embeds each
    entity's display name and description on the fly (needs an embedder).
    """
    if k == 0:
        return []
    if index_target == "chunks":
        scored_chunks: list[tuple[Chunk, float]] = []
        for chunk_id in sorted(graph.chunks):
            chunk = graph.chunks[chunk_id]
            if chunk.embedding is None:
                continue
            scored_chunks.append((chunk, clamped_cosine(query_embedding, chunk.embedding)))
        scored_chunks.sort(key=lambda pair: (-pair[1], pair[0].chunk_id))
        return scored_chunks[:k]
    if index_target == "entities":
        if embedder is None:
            raise InvalidInput("entity vector search needs an embedder backend")
        scored_keys: list[tuple[str, float]] = []
        for key in sorted(graph.entities):
            entity = graph.entities[key]
            text = f"{entity.display_name} {entity.description}".strip()
            emb = embed_text(text, embedder)
            scored_keys.append((key, clamped_cosine(query_embedding, emb)))
        scored_keys.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored_keys[:k]
    raise InvalidInput(f"unknown index target {index_target!r}")


def relation_sort_key(item: tuple[Relation, tuple[int, float]]):
    relation, (overlap, weight) = item
    return (-overlap, -weight, relation.head_key, relation.label, relation.tail_key)


def _entity_matches(graph: KnowledgeGraph, keyword: str) -> set[str]:
    return {
        key
        for key, entity in graph.entities.items()
        if keyword in entity.key or keyword in entity.description.casefold()
    }


def _local_candidates(
    graph: KnowledgeGraph, keywords: list[str]
) -> list[tuple[Relation, tuple[int, float]]]:
    matches = {kw: _entity_matches(graph, kw) for kw in keywords}
    matched_entities = set().union(*matches.values()) if matches else set()
    out = []
    for rel in graph.relations:
        if rel.head_key not in matched_entities and rel.tail_key not in matched_entities:
            continue
        overlap = sum(
            1 for kw in keywords
            if rel.head_key in matches[kw] or rel.tail_key in matches[kw]
        )
        out.append((rel, (overlap, rel.weight)))
    out.sort(key=relation_sort_key)
    return out


def _global_candidates(
    graph: KnowledgeGraph, keywords: list[str]
) -> list[tuple[Relation, tuple[int, float]]]:
    out = []
    for rel in graph.relations:
        label = rel.label.casefold()
        rel_keywords = [k.casefold() for k in rel.keywords]
        overlap = sum(
            1 for kw in keywords
            if kw in label or any(kw in rk for rk in rel_keywords)
        )
        if overlap > 0:
            out.append((rel, (overlap, rel.weight)))
    out.sort(key=relation_sort_key)
    return out


def _hybrid_triplets(
    graph: KnowledgeGraph, low: list[str], high: list[str], k: int
) -> list[tuple[Relation, tuple[int, float]]]:
    local_budget = (k + 1) // 2  # odd k: extra slot goes to local
    global_budget = k // 2
    picked: dict[tuple[str, str, str], tuple[Relation, tuple[int, float]]] = {}
    for rel, score in _local_candidates(graph, low)[:local_budget]:
        picked[rel.identity()] = (rel, score)
    for rel, score in _global_candidates(graph, high)[:global_budget]:
        existing = picked.get(rel.identity())
        if existing is None or score > existing[1]:
            picked[rel.identity()] = (rel, score)
    merged = sorted(picked.values(), key=relation_sort_key)
    return merged


def retrieve(
    request: RetrievalRequest,
    graph: KnowledgeGraph,
    embedder: BackendSpec | None = None,
    extractor: BackendSpec | None = None,
) -> RetrievedSubgraph:
    """Retrieve the subgraph relevant to the query under the requested mode."""
    request.validate()
    low, high, diagnostics = extract_keywords(request.query, extractor)
    result = RetrievedSubgraph(
        low_level_keywords=low, high_level_keywords=high, diagnostics=diagnostics
    )

    needs_chunks = request.mode in ("naive", "mix")
    if needs_chunks and request.top_k_chunks > 0 and graph.chunks:
        if embedder is None:
            raise InvalidInput("chunk vector search needs an embedder backend")
        q_emb = embed_text(request.query, embedder)
        result.chunks = vector_topk(q_emb, graph, "chunks", request.top_k_chunks)

    k = request.top_k_triplets
    if request.mode == "local":
        result.triplets = _local_candidates(graph, low)[:k]
    elif request.mode == "global":
        result.triplets = _global_candidates(graph, high)[:k]
    elif request.mode in ("hybrid", "mix"):
        result.triplets = _hybrid_triplets(graph, low, high, k)
    return result
