"""Annotation projection from a source example onto its translation."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

from .alignment import AlignmentSet, DimensionMismatch, ParallelPair
from .dataset import Dataset, Example
from .seqlogical import SemanticParse, SlotAnnotation, Utterance

PROJECTED = "projected"
EMPTY_SLOT_PROJECTION = "EmptySlotProjection"
OVERLAPPING_PROJECTION = "OverlappingProjection"


@dataclass(frozen=True)
class ProjectionOutcome:
    status: str
    example: Example | None = None
    fragments_created: int = 0
    reason: str | None = None

    @property
    def projected(self) -> bool:
        return self.status == PROJECTED


def _runs(indices: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal contiguous runs of sorted indices as half-open ranges."""
    runs = []
    for j in indices:
        if runs and runs[-1][1] == j:
            runs[-1][1] = j + 1
        else:
            runs.append([j, j + 1])
    return [tuple(r) for r in runs]


def project_annotations(source: Example, target_tokens: Sequence[str], links: AlignmentSet,
                        language_tag: str | None = None) -> ProjectionOutcome:
    """Copy intent and slots to the target side through `links`.

    A slot's target tokens are everything linked to a token inside it; each
    contiguous run becomes its own slot with the same label. Rejects the whole
    example if a slot projects to nothing or two projected slots overlap.
    """
    n_src, n_tgt = len(source.utterance), len(target_tokens)
    if (links.source_len, links.target_len) != (n_src, n_tgt):
        raise DimensionMismatch(
            f"{source.id}: links are {links.source_len}x{links.target_len}, "
            f"tokens are {n_src}x{n_tgt}")
    by_source: dict[int, list[int]] = {}
    for i, j in links.links:
        by_source.setdefault(i, []).append(j)

    new_slots = []
    fragments = 0
    for slot in source.parse.slots:
        targets = sorted({j for i in range(slot.start, slot.end) for j in by_source.get(i, ())})
        if not targets:
            return ProjectionOutcome("rejected", reason=EMPTY_SLOT_PROJECTION)
        runs = _runs(targets)
        if len(runs) > 1:
            fragments += len(runs)
        new_slots.extend(SlotAnnotation(a, b, slot.label) for a, b in runs)

    new_slots.sort()
    for a, b in zip(new_slots, new_slots[1:]):
        if b.start < a.end:
            return ProjectionOutcome("rejected", reason=OVERLAPPING_PROJECTION)

    example = Example(
        source.id,
        source.domain,
        Utterance(tuple(target_tokens)),
        SemanticParse(source.parse.intent, tuple(new_slots)),
        language_tag,
        {"source_id": source.id},
    )
    return ProjectionOutcome(PROJECTED, example, fragments)


@dataclass
class ProjectionReport:
    dataset: Dataset
    rejections: list[dict]
    fragments_created: int

    def write_rejections(self, path) -> int:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.rejections:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
        return len(self.rejections)


def project_corpus(source: Dataset, pairs: Sequence[ParallelPair],
                   alignments: Mapping[str, AlignmentSet], language_tag: str | None = "es"
                   ) -> ProjectionReport:
    """Project every source example that has a translation and an alignment.

    Pairs are matched to examples by id; the pair's source side must equal the
    example's tokens.
    """
    examples = source.by_id()
    projected, rejections = [], []
    fragments = 0
    for pair in pairs:
        ex = examples.get(pair.pair_id)
        if ex is None:
            rejections.append({"id": pair.pair_id, "reason": "MissingSource"})
            continue
        if tuple(pair.source_tokens) != ex.utterance.tokens:
            raise DimensionMismatch(f"{pair.pair_id}: parallel source side differs from the dataset tokens")
        links = alignments.get(pair.pair_id)
        if links is None:
            rejections.append({"id": pair.pair_id, "reason": "MissingAlignment"})
            continue
        outcome = project_annotations(ex, pair.target_tokens, links, language_tag)
        if outcome.projected:
            projected.append(outcome.example)
            fragments += outcome.fragments_created
        else:
            rejections.append({"id": pair.pair_id, "reason": outcome.reason})
    return ProjectionReport(Dataset(projected, source.split), rejections, fragments)
