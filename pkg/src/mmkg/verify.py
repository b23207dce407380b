"""Cross-modal similarity verification.

Segment a generated description into windows (sentence-bounded by
default), score each window against the image embedding with clamped
cosine similarity, prune windows below the threshold tau, and concatenate
the survivors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .backends import BackendSpec, Description, EmbeddingVector, embed_image, embed_text
from .corpus import ImageRecord
from .errors import DegenerateEmbedding, InvalidInput

SENTENCE_TERMINATORS = (".", "!", "?")


@dataclass
class Window:
    """Contiguous token span of a description."""

    text: str
    start_token_index: int
    token_count: int
    score: float | None = None


@dataclass
class VerifierConfig:
    tau: float = 0.25
    segmentation: str = "sentence"  # sentence | fixed-m
    fixed_m: int = 8
    max_window_tokens: int = 64

    def validate(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise InvalidInput("tau must lie in [0, 1]")
        if self.segmentation not in ("sentence", "fixed-m"):
            raise InvalidInput(f"unknown segmentation mode {self.segmentation!r}")
        if self.fixed_m < 1:
            raise InvalidInput("fixed_m must be >= 1")
        if self.max_window_tokens < 1:
            raise InvalidInput("max_window_tokens must be >= 1")


@dataclass
class WindowReport:
    window_index: int
    text: str
    score: float
    kept: bool


@dataclass
class PruneResult:
    description: Description
    report: list[WindowReport] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)


def segment(description: Description | str, config: VerifierConfig) -> list[Window]:
    """Partition the description's token sequence into windows.

    Sentence mode closes a window after any token ending in '.', '!' or
    '?'; a sentence longer than max_window_tokens is re-chunked into
    fixed_m-sized pieces.
    """
    config.validate()
    text = description.text if isinstance(description, Description) else description
    if not text.strip():
        raise InvalidInput("cannot segment empty text")
    tokens = text.split()

    if config.segmentation == "fixed-m":
        groups = _chunk(list(range(len(tokens))), config.fixed_m)
    else:
        sentences: list[list[int]] = []
        current: list[int] = []
        for i, tok in enumerate(tokens):
            current.append(i)
            if tok.endswith(SENTENCE_TERMINATORS):
                sentences.append(current)
                current = []
        if current:
            sentences.append(current)
        groups = []
        for sent in sentences:
            if len(sent) > config.max_window_tokens:
                groups.extend(_chunk(sent, config.fixed_m))
            else:
                groups.append(sent)

    return [
        Window(
            text=" ".join(tokens[i] for i in group),
            start_token_index=group[0],
            token_count=len(group),
        )
        for group in groups
    ]


def _chunk(indices: list[int], size: int) -> list[list[int]]:
    return [indices[i:i + size] for i in range(0, len(indices), size)]


def clamped_cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    """Cosine similarity clamped below at 0, so the score lies in [0, 1]."""
    if a.dimension != b.dimension:
        raise InvalidInput(
            f"dimension mismatch: {a.dimension} vs {b.dimension}"
        )
    if a.is_zero() or b.is_zero():
        raise DegenerateEmbedding("cannot score an all-zeros vector")
    dot = sum(x * y for x, y in zip(a.values, b.values))
    na = sum(x * x for x in a.values) ** 0.5
    nb = sum(y * y for y in b.values) ** 0.5
    return max(0.0, min(1.0, dot / (na * nb)))


def score_window(image_emb: EmbeddingVector, window: Window,
                 embedder: BackendSpec) -> float:
    """Cross-modal score of one window against the image embedding."""
    window_emb = embed_text(window.text, embedder)
    score = clamped_cosine(image_emb, window_emb)
    window.score = score
    return score


def prune(image: ImageRecord, description: Description, config: VerifierConfig,
          embedder: BackendSpec) -> PruneResult:
    """Keep exactly the windows scoring >= tau, joined with single spaces.

    Returns the verified description plus a per-window score report. An
    empty result is not an error; it carries a WarnAllPruned diagnostic.
    """
    config.validate()
    if not description.text.strip():
        # Already fully pruned; pruning is idempotent on the empty text.
        empty = Description(text="", provenance=list(description.provenance),
                            verified=True,
                            source_image=description.source_image or image)
        return PruneResult(description=empty, report=[],
                           diagnostics=["WarnAllPruned: no window scored at or above tau"])
    windows = segment(description, config)
    image_emb = embed_image(image, embedder)

    report: list[WindowReport] = []
    survivors: list[str] = []
    for idx, window in enumerate(windows):
        score = score_window(image_emb, window, embedder)
        kept = score >= config.tau
        report.append(WindowReport(idx, window.text, score, kept))
        if kept:
            survivors.append(window.text)

    diagnostics: list[str] = []
    if not survivors:
        diagnostics.append("WarnAllPruned: no window scored at or above tau")
    verified = Description(
        text=" ".join(survivors),
        provenance=list(description.provenance),
        verified=True,
        source_image=description.source_image or image,
    )
    return PruneResult(description=verified, report=report, diagnostics=diagnostics)


def threshold_sweep(image: ImageRecord, description: Description,
                    taus: list[float], embedder: BackendSpec,
                    config: VerifierConfig | None = None) -> list[tuple[float, int]]:
    """Retained-token-count table for a sorted list of candidate taus."""
    if sorted(taus) != list(taus):
        raise InvalidInput("taus must be sorted ascending")
    cfg = config or VerifierConfig()
    windows = segment(description, cfg)
    image_emb = embed_image(image, embedder)
    scored = [(score_window(image_emb, w, embedder), w.token_count) for w in windows]
    table = []
    for tau in taus:
        tau_c = max(0.0, min(1.0, tau))
        table.append((tau, sum(count for score, count in scored if score >= tau_c)))
    return table
