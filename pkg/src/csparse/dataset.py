"""Annotated corpora: loading, writing, statistics, language ratio, few-shot sampling."""
from __future__ import annotations

import json
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .seqlogical import (
    SemanticParse,
    SeqlogicalError,
    Utterance,
    parse_seqlogical,
    serialize_seqlogical,
)

SPLITS = ("train", "valid", "test", "unsplit")


class ParseError(ValueError):
    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


class DuplicateId(ValueError):
    pass


class InfeasibleCoverage(ValueError):
    pass


@dataclass(frozen=True)
class Example:
    id: str
    domain: str
    utterance: Utterance
    parse: SemanticParse
    language_tag: str | None = None
    extra: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.parse.check_against(len(self.utterance))

    @property
    def seqlogical(self) -> str:
        return serialize_seqlogical(self.utterance, self.parse)

    @classmethod
    def from_seqlogical(cls, id, domain, text, language_tag=None, **extra):
        utt, parse = parse_seqlogical(text)
        return cls(id, domain, utt, parse, language_tag, extra)

    def to_record(self) -> dict:
        rec = {"id": self.id, "domain": self.domain, "seqlogical": self.seqlogical}
        if self.language_tag is not None:
            rec["language"] = self.language_tag
        rec.update(self.extra)
        return rec


@dataclass
class Dataset:
    examples: list[Example] = field(default_factory=list)
    split: str = "unsplit"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        seen = set()
        for ex in self.examples:
            if ex.id in seen:
                raise DuplicateId(f"duplicate example id {ex.id!r}")
            seen.add(ex.id)

    def __len__(self):
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    def __getitem__(self, i):
        return self.examples[i]

    def by_id(self) -> dict[str, Example]:
        return {ex.id: ex for ex in self.examples}

    def intents(self) -> set[str]:
        return {ex.parse.intent for ex in self.examples}

    def slot_labels(self) -> set[str]:
        return {s.label for ex in self.examples for s in ex.parse.slots}


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt:
        return fmt
    return "tsv" if path.suffix.lower() == ".tsv" else "jsonl"


def load_dataset(path, format: str | None = None, split: str = "unsplit") -> Dataset:
    """Read a JSONL or TSV corpus; every seqlogical field is validated at depth 2."""
    path = Path(path)
    fmt = _infer_format(path, format)
    examples = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if fmt == "jsonl":
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(path, lineno, f"bad JSON: {exc}") from None
                missing = [k for k in ("id", "domain", "seqlogical") if k not in rec]
                if missing:
                    raise ParseError(path, lineno, f"missing field(s) {missing}")
                rid, domain, text = str(rec.pop("id")), rec.pop("domain"), rec.pop("seqlogical")
                lang = rec.pop("language", None)
                extra = rec
            elif fmt == "tsv":
                cols = line.split("\t")
                if len(cols) != 3:
                    raise ParseError(path, lineno, f"expected 3 tab-separated columns, got {len(cols)}")
                rid, domain, text = cols
                lang, extra = None, {}
            else:
                raise ValueError(f"unknown dataset format {fmt!r}")
            if rid in seen:
                raise DuplicateId(f"{path}:{lineno}: duplicate example id {rid!r}")
            seen.add(rid)
            try:
                ex = Example.from_seqlogical(rid, domain, text, lang, **extra)
            except SeqlogicalError as exc:
                raise ParseError(path, lineno, f"{exc.kind}: {exc}") from None
            examples.append(ex)
    return Dataset(examples, split)


def dump_dataset(ds: Iterable[Example], path, format: str | None = None) -> int:
    """Write examples; returns the number of records written."""
    path = Path(path)
    fmt = _infer_format(path, format)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in ds:
            if fmt == "jsonl":
                fh.write(json.dumps(ex.to_record(), ensure_ascii=False) + "\n")
            else:
                fh.write(f"{ex.id}\t{ex.domain}\t{ex.seqlogical}\n")
            n += 1
    return n


@dataclass(frozen=True)
class DomainStats:
    n_intents: int
    n_slot_labels: int
    n_utterances: int
    mean_slots: float


def dataset_stats(ds: Iterable[Example]) -> dict[str, DomainStats]:
    intents = defaultdict(set)
    labels = defaultdict(set)
    n_utts = Counter()
    n_slots = Counter()
    for ex in ds:
        d = ex.domain
        intents[d].add(ex.parse.intent)
        labels[d].update(s.label for s in ex.parse.slots)
        n_utts[d] += 1
        n_slots[d] += len(ex.parse.slots)
    return {
        d: DomainStats(len(intents[d]), len(labels[d]), n_utts[d], n_slots[d] / n_utts[d])
        for d in sorted(n_utts)
    }


class VocabRankTable:
    """Token -> frequency rank (0 = most frequent)."""

    def __init__(self, tokens: Sequence[str]):
        self.ranks: dict[str, int] = {}
        for tok in tokens:
            if tok in self.ranks:
                raise ValueError(f"token {tok!r} listed twice")
            self.ranks[tok] = len(self.ranks)

    @classmethod
    def from_file(cls, path, limit: int | None = None) -> "VocabRankTable":
        tokens = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                tok = line.strip()
                if not tok:
                    continue
                # tolerate "word count" frequency lists
                tokens.append(tok.split()[0])
                if limit is not None and len(tokens) >= limit:
                    break
        return cls(tokens)

    @classmethod
    def from_ranks(cls, ranks: Mapping[str, int]) -> "VocabRankTable":
        """Build from explicit ranks, which need not be dense."""
        table = cls([])
        table.ranks = dict(ranks)
        return table

    @property
    def size(self) -> int:
        return len(self.ranks)

    def rank(self, token: str) -> int | None:
        return self.ranks.get(token)

    def __contains__(self, token):
        return token in self.ranks


@dataclass
class LanguageRatio:
    ratio: float | None
    count_a: int
    count_b: int
    ties: int
    unknown: int
    assignments: list[tuple[str, str]]

    @property
    def defined(self) -> bool:
        return self.ratio is not None


def assign_language(token: str, vocab_a: VocabRankTable, vocab_b: VocabRankTable) -> str:
    ra, rb = vocab_a.rank(token), vocab_b.rank(token)
    if ra is None and rb is None:
        return "unknown"
    if rb is None or (ra is not None and ra < rb):
        return "a"
    if ra is None or rb < ra:
        return "b"
    return "tie"


def language_ratio(
    ds: Iterable[Example] | Iterable[Sequence[str]],
    vocab_a: VocabRankTable,
    vocab_b: VocabRankTable,
    lowercase: bool = True,
) -> LanguageRatio:
    """Ratio of a-assigned to b-assigned tokens; a token goes to the lower-rank vocabulary.

    Ties and out-of-vocabulary tokens are counted but left out of the ratio.
    Accepts examples or bare token sequences.
    """
    if not vocab_a.size or not vocab_b.size:
        raise ValueError("vocabularies must be non-empty")
    counts = Counter()
    assignments = []
    for item in ds:
        tokens = item.utterance.tokens if isinstance(item, Example) else item
        for tok in tokens:
            key = tok.lower() if lowercase else tok
            lang = assign_language(key, vocab_a, vocab_b)
            counts[lang] += 1
            assignments.append((tok, lang))
    ratio = counts["a"] / counts["b"] if counts["b"] else None
    return LanguageRatio(ratio, counts["a"], counts["b"], counts["tie"], counts["unknown"], assignments)


def _labels_of(ex: Example) -> set[str]:
    return {"IN:" + ex.parse.intent} | {"SL:" + s.label for s in ex.parse.slots}


def sample_fewshot(ds: Dataset, n: int, seed: int, intents=None, slot_labels=None) -> Dataset:
    """Sample `n` examples covering every intent and slot label at least once.

    Rarest label first, one random example per still-uncovered label; the
    remainder is drawn uniformly without replacement. Output keeps corpus order.
    `intents`/`slot_labels` name labels that must be covered in addition to
    those present in `ds`.
    """
    rng = random.Random(seed)
    label_count = Counter()
    holders = defaultdict(list)
    for idx, ex in enumerate(ds.examples):
        for lab in _labels_of(ex):
            label_count[lab] += 1
            holders[lab].append(idx)
    required = {"IN:" + i for i in intents or ()} | {"SL:" + s for s in slot_labels or ()}
    missing = sorted(required - set(label_count))
    if missing:
        raise InfeasibleCoverage(f"no example carries label(s) {missing}")
    if n >= len(ds):
        return Dataset(list(ds.examples), ds.split)
    chosen: set[int] = set()
    covered: set[str] = set()
    for lab in sorted(label_count, key=lambda l: (label_count[l], l)):
        if lab in covered:
            continue
        idx = rng.choice(holders[lab])
        chosen.add(idx)
        covered |= _labels_of(ds.examples[idx])
    if len(chosen) > n:
        raise InfeasibleCoverage(
            f"covering {len(label_count)} labels needs {len(chosen)} examples, n={n}")
    rest = [i for i in range(len(ds)) if i not in chosen]
    chosen.update(rng.sample(rest, n - len(chosen)))
    return Dataset([ds.examples[i] for i in sorted(chosen)], ds.split)


def check_coverage(sample: Iterable[Example], required_intents, required_slots) -> bool:
    intents = {ex.parse.intent for ex in sample}
    slots = {s.label for ex in sample for s in ex.parse.slots}
    return set(required_intents) <= intents and set(required_slots) <= slots
