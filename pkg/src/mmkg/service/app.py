"""FastAPI service wrapping the pipeline.

Paths in requests (config, manifest, graph directory) refer to the
server's filesystem; the CLI mounts this app in-process by default, so
for local use they are simply local paths.

Error mapping: invalid input and format/corruption problems return 400,
wire-protocol violations from model backends return 502, and exhausted
backends return 503.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..augment import answer as run_answer
from ..augment import render_triplet
from ..backends import Description
from ..errors import (
    CorpusError,
    CorruptGraph,
    DegenerateEmbedding,
    FormatError,
    InvalidInput,
    MmkgError,
    ProtocolError,
    RetriableBackendError,
)
from ..graph import load_graph
from ..pipeline import (
    describe_corpus,
    evaluate,
    load_config,
    load_manifest,
    run_pipeline,
    stats,
)
from ..retrieve import RetrievalRequest, retrieve
from ..verify import prune
from . import schemas

_STATUS_BY_ERROR = {
    InvalidInput: 400,
    FormatError: 400,
    CorpusError: 400,
    CorruptGraph: 400,
    DegenerateEmbedding: 400,
    ProtocolError: 502,
    RetriableBackendError: 503,
}


def create_app() -> FastAPI:
    app = FastAPI(title="mmkg", version=__version__)

    @app.exception_handler(MmkgError)
    async def handle_mmkg_error(_request: Request, exc: MmkgError) -> JSONResponse:
        status = 500
        for error_type, code in _STATUS_BY_ERROR.items():
            if isinstance(exc, error_type):
                status = code
                break
        return JSONResponse(
            status_code=status,
            content=schemas.ErrorResponse(
                error_type=type(exc).__name__, message=str(exc)
            ).model_dump(),
        )

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(version=__version__)

    @app.post("/describe", response_model=schemas.DescribeResponse)
    def describe(req: schemas.DescribeRequest) -> schemas.DescribeResponse:
        config = load_config(req.config_path)
        manifest = load_manifest(req.manifest_path)
        pairs = describe_corpus(manifest, config)
        return schemas.DescribeResponse(
            items=[
                schemas.DescribedItem(
                    id=item.id,
                    text=description.text,
                    provenance=[
                        [str(p.stage_index), str(p.step_index), p.model_name]
                        for p in description.provenance
                    ],
                )
                for item, description in pairs
            ]
        )

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify(req: schemas.VerifyRequest) -> schemas.VerifyResponse:
        config = load_config(req.config_path)
        manifest = load_manifest(req.manifest_path)
        by_id = {item.id: item for item in manifest.items}
        out = []
        for entry in req.descriptions:
            if entry.id not in by_id:
                raise InvalidInput(f"description id {entry.id!r} not in manifest")
            item = by_id[entry.id]
            result = prune(
                item,
                Description(text=entry.text, source_image=item),
                config.verifier,
                config.backend("embedder"),
            )
            out.append(
                schemas.VerifiedItem(
                    id=entry.id,
                    text=result.description.text,
                    diagnostics=result.diagnostics,
                    scores=[
                        schemas.WindowScore(
                            window_index=w.window_index, text=w.text,
                            score=w.score, kept=w.kept,
                        )
                        for w in result.report
                    ] if req.emit_scores else [],
                )
            )
        return schemas.VerifyResponse(items=out)

    @app.post("/build", response_model=schemas.BuildResponse)
    def build(req: schemas.BuildRequest) -> schemas.BuildResponse:
        config = load_config(req.config_path)
        manifest = load_manifest(req.manifest_path)
        report = run_pipeline(manifest, config, req.graph_dir,
                              emit_scores=req.emit_scores)
        return schemas.BuildResponse(
            items_total=report.items_total,
            items_processed=report.items_processed,
            items_skipped=report.items_skipped,
            windows_kept=report.windows_kept,
            windows_pruned=report.windows_pruned,
            entities=report.entities,
            relations=report.relations,
            chunks=report.chunks,
            errors=report.errors,
        )

    def _request_from(req, config) -> RetrievalRequest:
        return RetrievalRequest(
            query=req.query,
            mode=req.mode or config.retrieval.mode,
            top_k_triplets=(
                req.top_k_triplets
                if req.top_k_triplets is not None
                else config.retrieval.top_k_triplets
            ),
            top_k_chunks=(
                req.top_k_chunks
                if req.top_k_chunks is not None
                else config.retrieval.top_k_chunks
            ),
        )

    @app.post("/query", response_model=schemas.QueryResponse)
    def query(req: schemas.QueryRequest) -> schemas.QueryResponse:
        config = load_config(req.config_path)
        graph = load_graph(req.graph_dir)
        subgraph = retrieve(
            _request_from(req, config), graph, embedder=config.backend("embedder")
        )
        return schemas.QueryResponse(
            triplets=[
                schemas.TripletResult(
                    head=graph.entities[rel.head_key].display_name,
                    label=rel.label,
                    tail=graph.entities[rel.tail_key].display_name,
                    rendered=render_triplet(rel, graph),
                    overlap=score[0],
                    weight=score[1],
                )
                for rel, score in subgraph.triplets
            ],
            chunks=[
                schemas.ChunkResult(chunk_id=chunk.chunk_id, score=score,
                                    text=chunk.text)
                for chunk, score in subgraph.chunks
            ],
            low_level_keywords=subgraph.low_level_keywords,
            high_level_keywords=subgraph.high_level_keywords,
        )

    @app.post("/answer", response_model=schemas.AnswerResponse)
    def answer(req: schemas.AnswerRequest) -> schemas.AnswerResponse:
        config = load_config(req.config_path)
        graph = load_graph(req.graph_dir)
        reply, prompt = run_answer(
            req.query,
            graph,
            request=_request_from(req, config),
            answerer=config.answerer(),
            embedder=config.backend("embedder"),
        )
        return schemas.AnswerResponse(
            answer=reply, prompt=prompt.full_text if req.show_prompt else None
        )

    @app.post("/eval", response_model=schemas.EvalResponse)
    def eval_endpoint(req: schemas.EvalRequest) -> schemas.EvalResponse:
        config = load_config(req.config_path)
        manifest = load_manifest(req.manifest_path)
        graph = load_graph(req.graph_dir)
        report = evaluate(manifest, graph, config)
        return schemas.EvalResponse(
            accuracy=report.accuracy,
            items=report.items,
            correct=report.correct,
            confusion=report.confusion,
        )

    @app.get("/stats", response_model=schemas.StatsResponse)
    def stats_endpoint(graph_dir: str) -> schemas.StatsResponse:
        summary = stats(graph_dir)
        return schemas.StatsResponse(
            entities=summary.entities,
            relations=summary.relations,
            chunks=summary.chunks,
            disk_bytes=summary.disk_bytes,
        )

    return app


app = create_app()
