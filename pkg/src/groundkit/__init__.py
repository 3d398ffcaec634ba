"""groundkit: refine, evaluate, and curate visual-grounding annotations."""

__version__ = "0.1.0"

from .core import (
    AlignmentError,
    AnnotationRecord,
    Box,
    GroundkitError,
    Proposal,
    Region,
    Token,
    TokenizedPrompt,
    ValidationError,
    box_from_center_format,
    box_to_center_format,
    containment,
    iou,
    tokenize,
)
from .matchers import MatchPolicy, build_class_prompt, normalize_phrase, phrases_match
from .refine import RefineConfig, extract_phrase_groups, refine_pipeline
from .evaluation import EvalConfig, EvalReport, evaluate

__all__ = [
    "__version__",
    "AlignmentError",
    "AnnotationRecord",
    "Box",
    "GroundkitError",
    "Proposal",
    "Region",
    "Token",
    "TokenizedPrompt",
    "ValidationError",
    "box_from_center_format",
    "box_to_center_format",
    "containment",
    "iou",
    "tokenize",
    "MatchPolicy",
    "build_class_prompt",
    "normalize_phrase",
    "phrases_match",
    "RefineConfig",
    "extract_phrase_groups",
    "refine_pipeline",
    "EvalConfig",
    "EvalReport",
    "evaluate",
]
