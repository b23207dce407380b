import json
import random

import pytest

from mmkg.backends import BackendSpec, EmbeddingVector
from mmkg.corpus import ImageRecord
from mmkg.graph import Chunk, Entity, KnowledgeGraph, Relation


@pytest.fixture
def stub_embedder():
    return BackendSpec(kind="embedder", transport="stub", model_name="stub",
                       stub_seed=7, dimension=64)


@pytest.fixture
def stub_extractor():
    return BackendSpec(kind="extractor", transport="stub", model_name="synth-kg",
                       stub_seed=7)


def make_expert(behavior: str) -> BackendSpec:
    return BackendSpec(kind="expert", transport="stub", model_name=behavior)


def make_image(item_id="i1", tags=("map", "us"), path="/no/such/image.png",
               text=None, label=None) -> ImageRecord:
    return ImageRecord(id=item_id, image_path=path, text=text, label=label,
                       stub_tags=list(tags))


def make_entity(name, **kw) -> Entity:
    key = " ".join(name.split()).casefold()
    return Entity(key=key, display_name=name, **kw)


def make_graph(entities=(), relations=(), chunks=()) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    for e in entities:
        graph.entities[e.key] = e
    graph.relations.extend(relations)
    for c in chunks:
        graph.chunks[c.chunk_id] = c
    graph.check_integrity()
    return graph


WORDS = [
    "flood", "water", "bridge", "storm", "house", "road", "river", "field",
    "tree", "crowd", "smoke", "fire", "truck", "map", "cloud", "boat",
    "debris", "rescue", "coast", "hill",
]

LABELS = ["near", "damages", "part of", "causes", "covers", "blocks"]


def random_graph(rng: random.Random, max_relations: int = 50,
                 dimension: int = 64) -> KnowledgeGraph:
    """Random but integrity-preserving graph for oracle comparisons."""
    graph = KnowledgeGraph()
    n_entities = rng.randint(0, 12)
    names = rng.sample(WORDS, min(n_entities, len(WORDS)))
    for name in names:
        graph.entities[name] = Entity(
            key=name,
            display_name=name.capitalize(),
            type_label=rng.choice(["thing", "place", "event"]),
            description=" ".join(rng.sample(WORDS, rng.randint(0, 3))),
            image_links={f"/img/{name}.png"} if rng.random() < 0.5 else set(),
        )
    n_relations = rng.randint(0, max_relations) if names else 0
    seen = set()
    for _ in range(n_relations):
        head, tail = rng.choice(names), rng.choice(names)
        label = rng.choice(LABELS)
        if (head, label, tail) in seen:
            continue
        seen.add((head, label, tail))
        graph.relations.append(
            Relation(
                head_key=head,
                tail_key=tail,
                label=label,
                description=label,
                keywords=rng.sample(WORDS, rng.randint(0, 2)),
                weight=round(rng.uniform(0, 5), 3),
                source_chunk_ids={f"c{rng.randint(0, 5)}"},
            )
        )
    for i in range(rng.randint(0, 5)):
        values = [rng.uniform(-1, 1) for _ in range(dimension)]
        if all(v == 0 for v in values):
            values[0] = 1.0
        graph.chunks[f"c{i}"] = Chunk(
            chunk_id=f"c{i}",
            text=" ".join(rng.sample(WORDS, 3)),
            embedding=EmbeddingVector(tuple(values)),
        )
    return graph


def write_manifest(path, items, dataset="testset"):
    lines = [json.dumps({"schema": "mmkg/corpus-manifest", "version": 1,
                         "dataset": dataset})]
    lines.extend(json.dumps(item) for item in items)
    path.write_text("\n".join(lines) + "\n")
    return path


DEFAULT_CONFIG = {
    "deterministic": True,
    "workers": 1,
    "on_error": "abort",
    "kg_mode": "image-only",
    "backends": {
        "expert1": {"kind": "expert", "transport": "stub",
                    "model_name": "describe-tags"},
        "embedder": {"kind": "embedder", "transport": "stub",
                     "model_name": "stub", "stub_seed": 7, "dimension": 64},
        "extractor": {"kind": "extractor", "transport": "stub",
                      "model_name": "synth-kg"},
    },
    "chain": {"stages": ["expert1"], "steps": 1},
    "verifier": {"tau": 0.25, "segmentation": "sentence", "fixed_m": 8,
                 "max_window_tokens": 64},
    "retrieval": {"mode": "hybrid", "top_k_triplets": 10, "top_k_chunks": 5},
    "eval": {"question_template": "{label}"},
}


def write_config(path, overrides=None):
    import copy

    import yaml

    data = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in (overrides or {}).items():
        if isinstance(value, dict) and isinstance(data.get(key), dict):
            data[key].update(value)
        else:
            data[key] = value
    path.write_text(yaml.safe_dump(data))
    return path
