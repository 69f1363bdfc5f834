"""Data engineering toolkit for code-switched task-oriented semantic parsing."""
from .seqlogical import (
    ParseSkeleton,
    SemanticParse,
    SlotAnnotation,
    Utterance,
    compute_skeleton,
    from_bio,
    parse_seqlogical,
    serialize_seqlogical,
    to_bio,
    validate_tree,
)

__version__ = "0.1.0"
