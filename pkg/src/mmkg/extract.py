"""Extraction prompt construction and the delimiter-based record parser.

The extractor LLM is asked to emit a flat record stream:

* fields inside a record are separated by ``<|>``
* records are parenthesized and separated by ``##``
* the stream ends with ``<|COMPLETE|>``
* entity record: ``("entity"<|>name<|>type<|>description)``
* relationship record:
  ``("relationship"<|>source<|>target<|>description<|>keywords<|>weight)``

Parsing is total: malformed records are skipped with one diagnostic each
and never abort the stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidInput

FIELD_DELIMITER = "<|>"
RECORD_DELIMITER = "##"
COMPLETION_DELIMITER = "<|COMPLETE|>"

CHUNK_BEGIN = "---TEXT BEGIN---"
CHUNK_END = "---TEXT END---"

_PROMPT_TEMPLATE = f"""Identify the entities and relationships in the text below.

Output one record per entity or relationship:
- An entity record has 4 fields: ("entity"{FIELD_DELIMITER}<name>{FIELD_DELIMITER}<type>{FIELD_DELIMITER}<description>)
- A relationship record has 6 fields: ("relationship"{FIELD_DELIMITER}<source entity>{FIELD_DELIMITER}<target entity>{FIELD_DELIMITER}<description>{FIELD_DELIMITER}<comma-separated keywords>{FIELD_DELIMITER}<numeric strength>)
- Fields are separated by the delimiter {FIELD_DELIMITER}
- Records are separated by the delimiter {RECORD_DELIMITER}
- When you are done, end the output with {COMPLETION_DELIMITER}

{CHUNK_BEGIN}
{{chunk_text}}
{CHUNK_END}
"""


@dataclass
class RawEntity:
    name: str
    type_label: str
    description: str


@dataclass
class RawRelation:
    source: str
    target: str
    description: str
    keywords: list[str] = field(default_factory=list)
    weight: float = 1.0


def build_extraction_prompt(chunk_text: str) -> str:
    """Instantiate the extraction prompt around the chunk text."""
    if not chunk_text.strip():
        raise InvalidInput("cannot build an extraction prompt for an empty chunk")
    return _PROMPT_TEMPLATE.format(chunk_text=chunk_text)


def parse_extraction_output(
    raw: str,
) -> tuple[list[RawEntity], list[RawRelation], list[str]]:
    """Parse a record stream into entities and relations.

    Total over arbitrary input: returns (entities, relations, diagnostics)
    and never raises.
    """
    entities: list[RawEntity] = []
    relations: list[RawRelation] = []
    diagnostics: list[str] = []

    stream = raw.split(COMPLETION_DELIMITER, 1)[0]
    for index, segment in enumerate(stream.split(RECORD_DELIMITER)):
        segment = segment.strip()
        if not segment:
            continue
        if not (segment.startswith("(") and segment.endswith(")")):
            diagnostics.append(f"record {index}: not parenthesized, skipped")
            continue
        fields = [f.strip() for f in segment[1:-1].split(FIELD_DELIMITER)]
        record_type = fields[0].strip("\"'").casefold()
        if record_type == "entity":
            if len(fields) != 4:
                diagnostics.append(
                    f"record {index}: entity record needs 4 fields, got {len(fields)}"
                )
                continue
            if not fields[1]:
                diagnostics.append(f"record {index}: entity with empty name, skipped")
                continue
            entities.append(RawEntity(name=fields[1], type_label=fields[2],
                                      description=fields[3]))
        elif record_type == "relationship":
            if len(fields) != 6:
                diagnostics.append(
                    f"record {index}: relationship record needs 6 fields, got {len(fields)}"
                )
                continue
            if not fields[1] or not fields[2]:
                diagnostics.append(
                    f"record {index}: relationship with empty endpoint, skipped"
                )
                continue
            try:
                weight = float(fields[5])
            except ValueError:
                weight = 1.0
                diagnostics.append(
                    f"record {index}: unparsable weight {fields[5]!r}, defaulting to 1.0"
                )
            if weight < 0:
                weight = 1.0
                diagnostics.append(
                    f"record {index}: negative weight {fields[5]!r}, defaulting to 1.0"
                )
            keywords = [k.strip() for k in fields[4].split(",") if k.strip()]
            relations.append(RawRelation(source=fields[1], target=fields[2],
                                         description=fields[3], keywords=keywords,
                                         weight=weight))
        else:
            diagnostics.append(
                f"record {index}: unknown record type {fields[0]!r}, skipped"
            )
    return entities, relations, diagnostics


def serialize_records(entities: list[RawEntity], relations: list[RawRelation]) -> str:
    """Canonical printer for a record stream; parse(serialize(x)) == x for
    streams whose field values avoid the delimiters."""
    records = [
        f'("entity"{FIELD_DELIMITER}{e.name}{FIELD_DELIMITER}{e.type_label}'
        f"{FIELD_DELIMITER}{e.description})"
        for e in entities
    ]
    records.extend(
        f'("relationship"{FIELD_DELIMITER}{r.source}{FIELD_DELIMITER}{r.target}'
        f"{FIELD_DELIMITER}{r.description}{FIELD_DELIMITER}{','.join(r.keywords)}"
        f"{FIELD_DELIMITER}{r.weight})"
        for r in relations
    )
    records.append(COMPLETION_DELIMITER)
    return RECORD_DELIMITER.join(records)
