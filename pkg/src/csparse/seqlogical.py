"""Semantic-parse data model and the bracketed seqlogical text format.

A seqlogical string looks like::

    [IN:GET_WEATHER Dime el clima [SL:DATE_TIME para next Friday ] ]

Tokens are whitespace separated; a closing bracket is always its own token.
Labels are stored without their ``IN:``/``SL:`` prefixes.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

INTENT_PREFIX = "[IN:"
SLOT_PREFIX = "[SL:"
CLOSE = "]"
OUTSIDE = "O"
DEFAULT_MAX_DEPTH = 2


class SeqlogicalError(ValueError):
    """Base class for malformed seqlogical input."""

    kind = "SeqlogicalError"


class UnbalancedBrackets(SeqlogicalError):
    kind = "UnbalancedBrackets"


class MultipleRoots(SeqlogicalError):
    kind = "MultipleRoots"


class NestedSlot(SeqlogicalError):
    kind = "NestedSlot"


class EmptySlot(SeqlogicalError):
    kind = "EmptySlot"


class MissingRoot(SeqlogicalError):
    kind = "MissingRoot"


class InvalidSpan(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    tokens: tuple[str, ...]
    raw_text: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.raw_text:
            object.__setattr__(self, "raw_text", " ".join(self.tokens))

    def __len__(self):
        return len(self.tokens)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True, order=True)
class SlotAnnotation:
    start: int
    end: int
    label: str

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class SemanticParse:
    intent: str
    slots: tuple[SlotAnnotation, ...] = ()

    def __post_init__(self):
        slots = tuple(sorted(self.slots))
        for s in slots:
            if s.start < 0 or s.end <= s.start:
                raise InvalidSpan(f"bad span [{s.start},{s.end}) for slot {s.label}")
        for a, b in zip(slots, slots[1:]):
            if b.start < a.end:
                raise InvalidSpan(f"overlapping slots {a} and {b}")
        object.__setattr__(self, "slots", slots)

    def check_against(self, n_tokens: int) -> None:
        for s in self.slots:
            if s.end > n_tokens:
                raise InvalidSpan(
                    f"slot {s.label} span [{s.start},{s.end}) exceeds {n_tokens} tokens")


@dataclass(frozen=True)
class ParseSkeleton:
    intent: str
    slot_labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        # sorted tuple is the canonical form of the multiset
        object.__setattr__(self, "slot_labels", tuple(sorted(self.slot_labels)))

    @property
    def label_counts(self) -> Counter:
        return Counter(self.slot_labels)


def _bracket_label(token: str, prefix: str) -> str | None:
    if token.startswith(prefix) and len(token) > len(prefix):
        return token[len(prefix):]
    return None


def _scan(text: str) -> tuple[Utterance, SemanticParse, int]:
    """Parse `text`, returning the utterance, parse, and bracket depth reached."""
    tokens = text.split()
    words: list[str] = []
    slots: list[SlotAnnotation] = []
    intent = None
    # stack entries: (kind, label, start word index)
    stack: list[tuple[str, str, int]] = []
    max_depth = 0
    root_closed = False
    for tok in tokens:
        label = _bracket_label(tok, INTENT_PREFIX)
        if label is not None:
            if intent is not None:
                raise MultipleRoots(f"second root bracket {tok!r}")
            if stack:
                raise MultipleRoots(f"intent bracket {tok!r} inside another bracket")
            intent = label
            stack.append(("IN", label, len(words)))
            max_depth = max(max_depth, len(stack))
            continue
        label = _bracket_label(tok, SLOT_PREFIX)
        if label is not None:
            if not stack:
                raise MissingRoot(f"slot bracket {tok!r} outside the intent root")
            stack.append(("SL", label, len(words)))
            max_depth = max(max_depth, len(stack))
            continue
        if tok == CLOSE:
            if not stack:
                raise UnbalancedBrackets("closing bracket without an open bracket")
            kind, label, start = stack.pop()
            if kind == "SL":
                if start == len(words):
                    raise EmptySlot(f"slot {label} encloses no tokens")
                slots.append(SlotAnnotation(start, len(words), label))
            else:
                root_closed = True
            continue
        if "[" in tok or "]" in tok:
            raise UnbalancedBrackets(f"stray bracket character in token {tok!r}")
        if root_closed or not stack:
            if intent is None:
                raise MissingRoot(f"token {tok!r} before the intent root")
            raise MultipleRoots(f"token {tok!r} after the root closed")
        words.append(tok)
    if intent is None:
        raise MissingRoot("no [IN:<LABEL> root bracket")
    if stack:
        raise UnbalancedBrackets(f"{len(stack)} bracket(s) left open")
    if not words:
        raise EmptySlot("intent root encloses no tokens")
    utt = Utterance(tuple(words))
    slots.sort()
    # overlap is impossible for well-bracketed input except via nesting
    try:
        parse = SemanticParse(intent, tuple(slots))
    except InvalidSpan as exc:
        raise NestedSlot(str(exc)) from None
    return utt, parse, max_depth


def parse_seqlogical(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> tuple[Utterance, SemanticParse]:
    """Parse a seqlogical string into its utterance and semantic parse.

    Raises a SeqlogicalError subclass on malformed input; a slot inside a slot
    raises NestedSlot.
    """
    utt, parse, depth = _scan(text)
    if depth > max_depth:
        raise NestedSlot(f"bracket depth {depth} exceeds {max_depth}")
    return utt, parse


def serialize_seqlogical(utterance: Utterance, parse: SemanticParse) -> str:
    parse.check_against(len(utterance.tokens))
    out = [INTENT_PREFIX + parse.intent]
    pos = 0
    for slot in parse.slots:
        out.extend(utterance.tokens[pos:slot.start])
        out.append(SLOT_PREFIX + slot.label)
        out.extend(utterance.tokens[slot.start:slot.end])
        out.append(CLOSE)
        pos = slot.end
    out.extend(utterance.tokens[pos:])
    out.append(CLOSE)
    return " ".join(out)


def canonicalize(text: str) -> str:
    """Re-serialize a seqlogical string in canonical spacing."""
    return serialize_seqlogical(*parse_seqlogical(text))


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str


@dataclass(frozen=True)
class TreeVerdict:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_tree(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> TreeVerdict:
    """Check a seqlogical string; never raises, violations are returned."""
    try:
        _, _, depth = _scan(text)
    except SeqlogicalError as exc:
        return TreeVerdict((Violation(exc.kind, str(exc)),))
    if depth > max_depth:
        return TreeVerdict((Violation(NestedSlot.kind, f"depth {depth} exceeds {max_depth}"),))
    return TreeVerdict()


def compute_skeleton(parse: SemanticParse) -> ParseSkeleton:
    return ParseSkeleton(parse.intent, tuple(s.label for s in parse.slots))


def to_bio(parse: SemanticParse, n_tokens: int) -> list[str]:
    parse.check_against(n_tokens)
    tags = [OUTSIDE] * n_tokens
    for s in parse.slots:
        tags[s.start] = "B-" + s.label
        for i in range(s.start + 1, s.end):
            tags[i] = "I-" + s.label
    return tags


def from_bio(tags: Sequence[str], intent: str = "") -> SemanticParse:
    """Decode a BIO tag sequence; an I-X that cannot continue a span opens one."""
    slots = []
    start = label = None
    for i, tag in enumerate(list(tags) + [OUTSIDE]):
        if tag == OUTSIDE:
            prefix, lab = OUTSIDE, None
        elif tag[:2] in ("B-", "I-") and len(tag) > 2:
            prefix, lab = tag[0], tag[2:]
        else:
            raise ValueError(f"not a BIO tag: {tag!r}")
        continues = prefix == "I" and label == lab
        if label is not None and not continues:
            slots.append(SlotAnnotation(start, i, label))
            start = label = None
        if prefix in ("B", "I") and not continues:
            start, label = i, lab
    return SemanticParse(intent, tuple(slots))


def bio_tags_for(labels: Iterable[str]) -> list[str]:
    """The closed BIO tag set over `labels`, sorted lexicographically."""
    tags = {OUTSIDE}
    for lab in labels:
        tags.add("B-" + lab)
        tags.add("I-" + lab)
    return sorted(tags)
