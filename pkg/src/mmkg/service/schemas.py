"""Pydantic request/response models for the HTTP service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str = "ok"
    version: str


class ErrorResponse(BaseModel):
    error_type: str
    message: str


class DescribeRequest(BaseModel):
    config_path: str
    manifest_path: str


class DescribedItem(BaseModel):
    id: str
    text: str
    provenance: list[list[str]]


class DescribeResponse(BaseModel):
    items: list[DescribedItem]


class VerifyItem(BaseModel):
    id: str
    text: str


class VerifyRequest(BaseModel):
    config_path: str
    manifest_path: str
    descriptions: list[VerifyItem]
    emit_scores: bool = False


class WindowScore(BaseModel):
    window_index: int
    text: str
    score: float
    kept: bool


class VerifiedItem(BaseModel):
    id: str
    text: str
    diagnostics: list[str] = Field(default_factory=list)
    scores: list[WindowScore] = Field(default_factory=list)


class VerifyResponse(BaseModel):
    items: list[VerifiedItem]


class BuildRequest(BaseModel):
    config_path: str
    manifest_path: str
    graph_dir: str
    emit_scores: bool = False


class BuildResponse(BaseModel):
    items_total: int
    items_processed: int
    items_skipped: int
    windows_kept: int
    windows_pruned: int
    entities: int
    relations: int
    chunks: int
    errors: list[str]


class QueryRequest(BaseModel):
    config_path: str
    graph_dir: str
    query: str
    mode: str | None = None
    top_k_triplets: int | None = None
    top_k_chunks: int | None = None


class TripletResult(BaseModel):
    head: str
    label: str
    tail: str
    rendered: str
    overlap: int
    weight: float


class ChunkResult(BaseModel):
    chunk_id: str
    score: float
    text: str


class QueryResponse(BaseModel):
    triplets: list[TripletResult]
    chunks: list[ChunkResult]
    low_level_keywords: list[str]
    high_level_keywords: list[str]


class AnswerRequest(BaseModel):
    config_path: str
    graph_dir: str
    query: str
    mode: str | None = None
    top_k_triplets: int | None = None
    top_k_chunks: int | None = None
    show_prompt: bool = False


class AnswerResponse(BaseModel):
    answer: str
    prompt: str | None = None


class EvalRequest(BaseModel):
    config_path: str
    manifest_path: str
    graph_dir: str


class EvalResponse(BaseModel):
    accuracy: float
    items: int
    correct: int
    confusion: dict[str, dict[str, int]]


class StatsResponse(BaseModel):
    entities: int
    relations: int
    chunks: int
    disk_bytes: int
