"""Cascaded expert description: route an image through N experts for C
steps, each expert refining the previous expert's text.

A single chain execution is strictly sequential (each invocation depends
on the previous output); distinct images may run concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .backends import BackendSpec, Description, describe_image
from .corpus import ImageRecord
from .errors import MmkgError

DEFAULT_PROMPT_TEMPLATE = (
    "Image description so far: {prior_description}. "
    "Refine and extend it with details you observe."
)


@dataclass
class ExpertChainSpec:
    """Ordered expert stages, iterated for a number of steps."""

    stages: list[BackendSpec]
    steps: int = 1
    prompt_templates: list[str] = field(default_factory=list)

    def template_for(self, stage_index: int) -> str:
        if stage_index < len(self.prompt_templates):
            return self.prompt_templates[stage_index]
        return DEFAULT_PROMPT_TEMPLATE


class ChainStageError(MmkgError):
    """Wraps a backend failure with the stage/step it occurred at."""

    def __init__(self, stage_index: int, step_index: int, cause: Exception):
        super().__init__(f"stage {stage_index} step {step_index} failed: {cause}")
        self.stage_index = stage_index
        self.step_index = step_index
        self.cause = cause


def validate_chain_spec(spec: ExpertChainSpec) -> list[str]:
    """Return one diagnostic per invariant violation; empty list if valid."""
    diagnostics: list[str] = []
    if not spec.stages:
        diagnostics.append("stages: stages must be non-empty")
    for i, stage in enumerate(spec.stages):
        if stage.kind != "expert":
            diagnostics.append(f"stages[{i}].kind: must be 'expert', got {stage.kind!r}")
    if spec.steps < 1:
        diagnostics.append("steps: must be >= 1")
    return diagnostics


def run_chain(image: ImageRecord, spec: ExpertChainSpec) -> Description:
    """Run all stages for all steps, threading each output into the next
    invocation. Returns the final description with one provenance entry
    per invocation (stages x steps)."""
    diagnostics = validate_chain_spec(spec)
    if diagnostics:
        raise MmkgError("invalid chain spec: " + "; ".join(diagnostics))

    current = Description(text="", provenance=[], source_image=image)
    for step in range(spec.steps):
        for stage_index, stage in enumerate(spec.stages):
            prompt = spec.template_for(stage_index).format(
                prior_description=current.text
            )
            try:
                current = describe_image(
                    image,
                    current,
                    stage,
                    prompt=prompt,
                    stage_index=stage_index,
                    step_index=step,
                )
            except MmkgError as exc:
                raise ChainStageError(stage_index, step, exc) from exc
    return current
