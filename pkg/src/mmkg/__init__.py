"""Multimodal knowledge graph pipeline: cascaded image description,
cross-modal pruning, LLM triplet extraction, and graph-augmented answering."""

from .backends import BackendSpec, Description, EmbeddingVector
from .chain import ExpertChainSpec, run_chain, validate_chain_spec
from .corpus import CorpusManifest, ImageRecord, ingest
from .graph import KnowledgeGraph, load_graph, save_graph
from .pipeline import PipelineConfig, evaluate, load_config, run_pipeline, stats
from .retrieve import RetrievalRequest, RetrievedSubgraph, retrieve
from .verify import VerifierConfig, prune, segment

__version__ = "0.1.0"

__all__ = [
    "BackendSpec",
    "CorpusManifest",
    "Description",
    "EmbeddingVector",
    "ExpertChainSpec",
    "ImageRecord",
    "KnowledgeGraph",
    "PipelineConfig",
    "RetrievalRequest",
    "RetrievedSubgraph",
    "VerifierConfig",
    "evaluate",
    "ingest",
    "load_config",
    "load_graph",
    "prune",
    "retrieve",
    "run_chain",
    "run_pipeline",
    "save_graph",
    "segment",
    "stats",
    "validate_chain_spec",
]
