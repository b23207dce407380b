"""Prompt augmentation: render retrieved triplets as evidence lines and
obtain an answer from the answerer backend.

Triplet rendering uses the ASCII form ``[head]->label->[tail]`` with
backslash-escaped brackets in entity names.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .backends import BackendSpec, complete
from .errors import CorruptGraph, InvalidInput
from .graph import KnowledgeGraph, Relation
from .retrieve import RetrievalRequest, RetrievedSubgraph, retrieve

EVIDENCE_HEADER = "Evidence:"
IMAGE_HEADER = "Image sources:"


@dataclass
class AugmentedPrompt:
    query: str
    rendered_evidence: list[str] = field(default_factory=list)
    image_links: list[str] = field(default_factory=list)
    full_text: str = ""


def _escape(name: str) -> str:
    return name.replace("\\", "\\\\").replace("[", "\\[").replace("]", "\\]")


def _unescape(name: str) -> str:
    out = []
    i = 0
    while i < len(name):
        if name[i] == "\\" and i + 1 < len(name):
            out.append(name[i + 1])
            i += 2
        else:
            out.append(name[i])
            i += 1
    return "".join(out)


def render_triplet(relation: Relation, graph: KnowledgeGraph) -> str:
    """Exact evidence-line form ``[head]->label->[tail]``."""
    head = graph.entities.get(relation.head_key)
    tail = graph.entities.get(relation.tail_key)
    if head is None:
        raise CorruptGraph(f"dangling head {relation.head_key!r}")
    if tail is None:
        raise CorruptGraph(f"dangling tail {relation.tail_key!r}")
    return (
        f"[{_escape(head.display_name)}]->{relation.label}"
        f"->[{_escape(tail.display_name)}]"
    )


def parse_triplet_line(line: str) -> tuple[str, str, str]:
    """Inverse of render_triplet for bracket-escaped names."""
    if not line.startswith("[") or not line.endswith("]"):
        raise InvalidInput(f"not a triplet line: {line!r}")
    # Scan for the unescaped closing bracket of the head.
    i = 1
    while i < len(line):
        if line[i] == "\\":
            i += 2
            continue
        if line[i] == "]":
            break
        i += 1
    else:
        raise InvalidInput(f"unterminated head in {line!r}")
    head = _unescape(line[1:i])
    rest = line[i + 1:]
    if not rest.startswith("->"):
        raise InvalidInput(f"missing arrow after head in {line!r}")
    rest = rest[2:-1]  # strip leading arrow and trailing ']'
    cut = rest.rfind("->[")
    if cut < 0:
        raise InvalidInput(f"missing tail in {line!r}")
    label = rest[:cut]
    tail = _unescape(rest[cut + 3:])
    return head, label, tail


def augment_prompt(query: str, subgraph: RetrievedSubgraph,
                   graph: KnowledgeGraph) -> AugmentedPrompt:
    """Compose the full prompt: the query, the ranked evidence lines, and
    the deduplicated image links of all involved entities.

    An empty subgraph yields exactly the bare query.
    """
    if not query.strip():
        raise InvalidInput("query must be non-empty")
    evidence = [render_triplet(rel, graph) for rel, _score in subgraph.triplets]

    image_links: list[str] = []
    for rel, _score in subgraph.triplets:
        for key in (rel.head_key, rel.tail_key):
            for link in sorted(graph.entities[key].image_links):
                if link not in image_links:
                    image_links.append(link)

    lines = [query]
    if evidence:
        lines.append(EVIDENCE_HEADER)
        lines.extend(evidence)
        if image_links:
            lines.append(IMAGE_HEADER)
            lines.extend(image_links)
    return AugmentedPrompt(
        query=query,
        rendered_evidence=evidence,
        image_links=image_links if evidence else [],
        full_text="\n".join(lines),
    )


def answer(
    query: str,
    graph: KnowledgeGraph,
    request: RetrievalRequest | None = None,
    answerer: BackendSpec | None = None,
    embedder: BackendSpec | None = None,
    keyword_extractor: BackendSpec | None = None,
) -> tuple[str, AugmentedPrompt]:
    """retrieve -> augment -> complete; returns the answer and the prompt
    actually used, as an audit trail."""
    if answerer is None:
        raise InvalidInput("answer needs an answerer backend")
    req = request or RetrievalRequest(query=query)
    req.query = query
    subgraph = retrieve(req, graph, embedder=embedder, extractor=keyword_extractor)
    prompt = augment_prompt(query, subgraph, graph)
    reply = complete(prompt.full_text, answerer)
    return reply, prompt
