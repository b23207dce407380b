"""Corpus items and manifest ingestion.

A manifest is a line-delimited JSON file: one header line carrying the
schema name/version, then one record per corpus item.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError

MANIFEST_SCHEMA = "mmkg/corpus-manifest"
MANIFEST_VERSION = 1


@dataclass
class ImageRecord:
    """One corpus item: an image plus optional paired text and label.

    ``stub_tags`` are tag words used by stub backends in place of real
    image content, so tests can steer cross-modal scores exactly.
    """

    id: str
    image_path: str
    text: str | None = None
    label: str | None = None
    stub_tags: list[str] = field(default_factory=list)

    def is_resolvable(self) -> bool:
        # Stub backends treat declared tag words as the image content.
        return bool(self.stub_tags) or Path(self.image_path).is_file()


@dataclass
class CorpusManifest:
    dataset_name: str
    items: list[ImageRecord]


def ingest(manifest_path: str | Path) -> CorpusManifest:
    """Load and validate a corpus manifest.

    Raises FormatError (with the offending line number) on schema
    violations, including duplicate item ids.
    """
    path = Path(manifest_path)
    if not path.is_file():
        raise FormatError(f"manifest not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FormatError(f"{path}: empty file, missing header line")

    header = _parse_line(path, 1, lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise FormatError(f"{path}:1: unexpected schema {header.get('schema')!r}")
    if header.get("version") != MANIFEST_VERSION:
        raise FormatError(
            f"{path}:1: unsupported manifest version {header.get('version')!r}"
        )
    dataset = str(header.get("dataset", ""))

    items: list[ImageRecord] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        rec = _parse_line(path, lineno, raw)
        item_id = rec.get("id")
        if not item_id or not isinstance(item_id, str):
            raise FormatError(f"{path}:{lineno}: item is missing a string 'id'")
        if item_id in seen:
            raise FormatError(f"{path}:{lineno}: duplicate item id {item_id!r}")
        seen.add(item_id)
        image_path = rec.get("image_path")
        if not image_path or not isinstance(image_path, str):
            raise FormatError(f"{path}:{lineno}: item {item_id!r} is missing 'image_path'")
        tags = rec.get("stub_tags") or []
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise FormatError(f"{path}:{lineno}: stub_tags must be a list of strings")
        items.append(
            ImageRecord(
                id=item_id,
                image_path=image_path,
                text=rec.get("text"),
                label=rec.get("label"),
                stub_tags=list(tags),
            )
        )
    return CorpusManifest(dataset_name=dataset, items=items)


def write_manifest(manifest: CorpusManifest, path: str | Path) -> None:
    """Serialize a manifest back to its line-delimited form."""
    out = [json.dumps({"schema": MANIFEST_SCHEMA, "version": MANIFEST_VERSION,
                       "dataset": manifest.dataset_name}, sort_keys=True)]
    for item in manifest.items:
        rec: dict = {"id": item.id, "image_path": item.image_path}
        if item.text is not None:
            rec["text"] = item.text
        if item.label is not None:
            rec["label"] = item.label
        if item.stub_tags:
            rec["stub_tags"] = item.stub_tags
        out.append(json.dumps(rec, sort_keys=True))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def _parse_line(path: Path, lineno: int, raw: str) -> dict:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(value, dict):
        raise FormatError(f"{path}:{lineno}: expected a JSON object")
    return value
